use dcs_core::analysis::{ensemble_mse, node_errors};
use dcs_core::model::{
    gen_ensemble, EnsembleParams, JsmModel, NormPolicy, SignalEnsemble, SupportPolicy,
};
use dcs_core::recovery::{
    recover_doi, recover_separate, recover_tecc, recover_texas_doi, recover_texas_holdem,
    SideInformation,
};
use dcs_core::sensing::{gen_matrix, MeasurementSet, SensingMatrix};
use dcs_core::solver::{BpdnSolver, SolverConfig};
use dcs_core::{rng, DcsError};
use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn ensemble(n: usize, nodes: usize, k_c: usize, k_i: usize, seed: u64) -> SignalEnsemble {
    gen_ensemble(&EnsembleParams {
        n,
        nodes,
        model: JsmModel::Jsm1 {
            common_sparsity: k_c,
        },
        innovation_sparsity: k_i,
        support_policy: SupportPolicy::DisjointInnovations,
        norm_policy: NormPolicy::GaussianAmplitudes,
        seed,
    })
    .unwrap()
}

fn measure_all(a: &SensingMatrix, signals: &[DVector<f64>]) -> MeasurementSet {
    MeasurementSet::unquantized(signals.iter().map(|x| &a.entries * x).collect()).unwrap()
}

fn gaussian(n: usize, seed: u64) -> DVector<f64> {
    let mut r = rng::seeded(seed);
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

#[test]
fn separate_zero_measurements_give_zero() {
    let a = gen_matrix(10, 20, 1).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let set = MeasurementSet::unquantized(vec![DVector::zeros(10); 3]).unwrap();
    let rec = recover_separate(&solver, &set, 0.0, &SolverConfig::default()).unwrap();
    assert!(rec.theta_hat.iter().all(|t| t.iter().all(|&v| v == 0.0)));
    assert_eq!(rec.per_node_converged(), vec![true; 3]);
}

#[test]
fn side_information_node_passes_through() {
    let e = ensemble(48, 5, 6, 2, 3);
    let a = gen_matrix(24, 48, 4).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let signals = e.node_signals();
    let set = measure_all(&a, &signals);
    let si = SideInformation::exact(&solver, signals[0].clone()).unwrap();
    assert!((&si.y_1 - &set.y[0]).norm() <= 1e-12 * set.y[0].norm());
    let cfg = SolverConfig::default();
    for rec in [
        recover_doi(&solver, &set, &si, 0.0, &cfg).unwrap(),
        recover_texas_doi(&solver, &set, &si, 0.05, &cfg).unwrap(),
    ] {
        assert_eq!(rec.theta_hat[0], signals[0]);
        assert_eq!(rec.theta_hat.len(), 5);
        assert_eq!(rec.per_node.len(), 5);
    }
}

#[test]
fn doi_identical_nodes_return_side_information() {
    let a = gen_matrix(12, 30, 8).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let theta = gaussian(30, 9);
    let si = SideInformation::exact(&solver, theta.clone()).unwrap();
    let set = MeasurementSet::unquantized(vec![si.y_1.clone(); 4]).unwrap();
    let rec = recover_doi(&solver, &set, &si, 0.0, &SolverConfig::default()).unwrap();
    for t in &rec.theta_hat {
        assert_eq!(t, &theta);
    }
}

#[test]
fn doi_recovers_exactly_when_differences_are_sparse() {
    let e = ensemble(64, 6, 10, 2, 21);
    let a = gen_matrix(32, 64, 22).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let signals = e.node_signals();
    let set = measure_all(&a, &signals);
    let si = SideInformation::exact(&solver, signals[0].clone()).unwrap();
    let rec = recover_doi(&solver, &set, &si, 0.0, &SolverConfig::default()).unwrap();
    for (j, err) in node_errors(&rec, &e).unwrap().into_iter().enumerate() {
        assert!(err <= 1e-5 * signals[j].norm(), "node {j}: {err}");
    }
}

#[test]
fn doi_ignores_any_common_component() {
    let e = ensemble(64, 4, 0, 2, 31);
    let a = gen_matrix(32, 64, 32).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let cfg = SolverConfig::default();
    let signals = e.node_signals();
    let v = gaussian(64, 33) * 5.0;
    let shifted: Vec<DVector<f64>> = signals.iter().map(|x| x + &v).collect();

    let run = |xs: &[DVector<f64>]| {
        let si = SideInformation::exact(&solver, xs[0].clone()).unwrap();
        let rec = recover_doi(&solver, &measure_all(&a, xs), &si, 0.0, &cfg).unwrap();
        rec.theta_hat
            .iter()
            .zip(xs)
            .map(|(h, x)| h - x)
            .collect::<Vec<_>>()
    };
    for (d0, d1) in run(&signals).iter().zip(run(&shifted).iter()) {
        assert!((d0 - d1).amax() <= 1e-10, "{}", (d0 - d1).amax());
    }
}

#[test]
fn texas_doi_pure_common_component() {
    let e = ensemble(40, 6, 5, 0, 41);
    let a = gen_matrix(20, 40, 42).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let signals = e.node_signals();
    let set = measure_all(&a, &signals);
    let si = SideInformation::exact(&solver, signals[0].clone()).unwrap();
    let rec = recover_texas_doi(&solver, &set, &si, 0.0, &SolverConfig::default()).unwrap();
    for t in &rec.theta_hat {
        assert!((t - &signals[0]).amax() <= 1e-12);
    }
    assert!(rec.shared.unwrap().converged);
}

#[test]
fn texas_doi_needs_two_nodes() {
    let a = gen_matrix(8, 16, 1).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let si = SideInformation::exact(&solver, DVector::zeros(16)).unwrap();
    let set = MeasurementSet::unquantized(vec![DVector::zeros(8)]).unwrap();
    assert!(matches!(
        recover_texas_doi(&solver, &set, &si, 0.0, &SolverConfig::default()),
        Err(DcsError::TooFewNodes { .. })
    ));
}

#[test]
fn doi_rejects_mismatched_side_information() {
    let a = gen_matrix(8, 16, 1).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let si = SideInformation {
        theta_1: DVector::zeros(15),
        y_1: DVector::zeros(8),
    };
    let set = MeasurementSet::unquantized(vec![DVector::zeros(8); 2]).unwrap();
    assert!(matches!(
        recover_doi(&solver, &set, &si, 0.0, &SolverConfig::default()),
        Err(DcsError::MissingSideInformation(_))
    ));
}

#[test]
fn holdem_without_innovations_recovers_common() {
    let e = ensemble(64, 5, 4, 0, 51);
    let a = gen_matrix(24, 64, 52).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let set = measure_all(&a, &e.node_signals());
    let rec = recover_texas_holdem(&solver, &set, 0.0, &SolverConfig::default()).unwrap();
    for t in &rec.theta_hat {
        assert!((t - &e.theta_c).norm() <= 1e-5 * e.theta_c.norm());
    }
}

#[test]
fn separate_agrees_with_doi_without_common_component() {
    let e = ensemble(64, 4, 0, 3, 61);
    let a = gen_matrix(32, 64, 62).unwrap();
    let solver = BpdnSolver::new(&a.entries).unwrap();
    let cfg = SolverConfig::default();
    let signals = e.node_signals();
    let set = measure_all(&a, &signals);
    let si = SideInformation::exact(&solver, signals[0].clone()).unwrap();
    let sep = recover_separate(&solver, &set, 0.0, &cfg).unwrap();
    let doi = recover_doi(&solver, &set, &si, 0.0, &cfg).unwrap();
    for (s, d) in sep.theta_hat.iter().zip(&doi.theta_hat) {
        assert!((s - d).norm() <= 1e-5, "{}", (s - d).norm());
    }
}

#[test]
fn separate_is_worse_than_doi_at_low_m() {
    let cfg = SolverConfig::default();
    let (mut sep_total, mut doi_total) = (0.0, 0.0);
    for t in 0..20u64 {
        let e = gen_ensemble(&EnsembleParams {
            n: 256,
            nodes: 3,
            model: JsmModel::Jsm1 {
                common_sparsity: 20,
            },
            innovation_sparsity: 5,
            support_policy: SupportPolicy::IndependentUniform,
            norm_policy: NormPolicy::GaussianAmplitudes,
            seed: rng::derive(70, &[t, 0]),
        })
        .unwrap();
        let a = gen_matrix(40, 256, rng::derive(70, &[t, 1])).unwrap();
        let solver = BpdnSolver::new(&a.entries).unwrap();
        let signals = e.node_signals();
        let set = measure_all(&a, &signals);
        let si = SideInformation::exact(&solver, signals[0].clone()).unwrap();
        sep_total +=
            ensemble_mse(&recover_separate(&solver, &set, 0.0, &cfg).unwrap(), &e).unwrap();
        doi_total +=
            ensemble_mse(&recover_doi(&solver, &set, &si, 0.0, &cfg).unwrap(), &e).unwrap();
    }
    assert!(
        doi_total < sep_total,
        "doi {doi_total} separate {sep_total}"
    );
}

fn tecc_inputs(
    nodes: usize,
    m: usize,
    n: usize,
    x_c: &DVector<f64>,
    seed: u64,
) -> (Vec<SensingMatrix>, MeasurementSet) {
    let mats: Vec<SensingMatrix> = (0..nodes)
        .map(|j| gen_matrix(m, n, rng::derive(seed, &[j as u64])).unwrap())
        .collect();
    let y = mats.iter().map(|a| &a.entries * x_c).collect();
    (mats, MeasurementSet::unquantized(y).unwrap())
}

#[test]
fn tecc_common_estimate_improves_with_nodes() {
    let (n, m) = (64, 32);
    let cfg = SolverConfig::default();
    let mut means = Vec::new();
    for nodes in [10, 50, 200] {
        let mut total = 0.0;
        for t in 0..20u64 {
            let x_c = gaussian(n, rng::derive(80, &[t]));
            let (mats, set) = tecc_inputs(nodes, m, n, &x_c, rng::derive(81, &[nodes as u64, t]));
            // a radius covering every residual skips the inner solves, so the
            // output is the transpose estimate itself
            let rec = recover_tecc(&mats, &set, 1e6, &cfg).unwrap();
            total += (&rec.theta_hat[0] - &x_c).norm() / x_c.norm();
        }
        means.push(total / 20.0);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

#[test]
fn tecc_rejects_degenerate_inputs() {
    let x = gaussian(16, 1);
    let cfg = SolverConfig::default();
    let (mats, set) = tecc_inputs(1, 8, 16, &x, 2);
    assert!(matches!(
        recover_tecc(&mats, &set, 0.0, &cfg),
        Err(DcsError::TooFewNodes { .. })
    ));

    let a = gen_matrix(8, 16, 3).unwrap();
    let shared = vec![a.clone(), a.clone(), a];
    let set = MeasurementSet::unquantized(vec![DVector::zeros(8); 3]).unwrap();
    assert!(matches!(
        recover_tecc(&shared, &set, 0.0, &cfg),
        Err(DcsError::SharedMatrix)
    ));

    let (mats, set) = tecc_inputs(3, 8, 16, &x, 4);
    assert!(recover_tecc(&mats[..2], &set, 0.0, &cfg).is_err());
}
