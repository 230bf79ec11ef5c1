//! Joint-sparse signal ensembles.
//!
//! Every node observes `theta_j = theta_C + theta_I[j]`: a component shared by
//! the whole ensemble plus a sparse per-node innovation. Under JSM-1 the common
//! part is itself sparse; under JSM-3 it is dense. Node 0 plays the role of the
//! side-information node in the recovery module.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DcsError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JsmModel {
    /// Sparse common component with exactly `common_sparsity` nonzeros.
    Jsm1 { common_sparsity: usize },
    /// Dense i.i.d. Gaussian common component.
    Jsm3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportPolicy {
    /// Each support drawn uniformly without replacement, independently of
    /// every other support (overlaps allowed).
    #[default]
    IndependentUniform,
    /// Innovation supports are pairwise disjoint, which makes the
    /// innovations mutually orthogonal. Needs `nodes * k_I <= n`.
    DisjointInnovations,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPolicy {
    /// Nonzero amplitudes are i.i.d. standard Gaussian.
    #[default]
    GaussianAmplitudes,
    /// Gaussian amplitudes, then each innovation rescaled to l2 norm `eta`.
    EqualNorm { eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    /// Signal length.
    pub n: usize,
    /// Number of nodes.
    pub nodes: usize,
    pub model: JsmModel,
    /// Innovation sparsity, shared by all nodes.
    pub innovation_sparsity: usize,
    pub support_policy: SupportPolicy,
    pub norm_policy: NormPolicy,
    pub seed: u64,
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DcsError::InvalidParams(msg));
        if self.n == 0 {
            return bad("signal length must be positive".into());
        }
        if self.nodes < 2 {
            return bad(format!("need at least 2 nodes, got {}", self.nodes));
        }
        if let JsmModel::Jsm1 { common_sparsity } = self.model {
            if common_sparsity > self.n {
                return bad(format!(
                    "common sparsity {common_sparsity} exceeds n={}",
                    self.n
                ));
            }
        }
        let k = self.innovation_sparsity;
        if k > self.n {
            return bad(format!("innovation sparsity {k} exceeds n={}", self.n));
        }
        if self.support_policy == SupportPolicy::DisjointInnovations
            && self.nodes.saturating_mul(k) > self.n
        {
            return bad(format!(
                "disjoint innovations infeasible: {} nodes x {k} > n={}",
                self.nodes, self.n
            ));
        }
        if let NormPolicy::EqualNorm { eta } = self.norm_policy {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad(format!("equal-norm eta must be positive, got {eta}"));
            }
            if k == 0 {
                return bad("equal-norm needs a nonzero innovation sparsity".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalEnsemble {
    pub params: EnsembleParams,
    pub theta_c: DVector<f64>,
    pub theta_i: Vec<DVector<f64>>,
}

impl SignalEnsemble {
    pub fn nodes(&self) -> usize {
        self.theta_i.len()
    }

    pub fn len(&self) -> usize {
        self.theta_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_c.is_empty()
    }

    /// Composed signal `theta_C + theta_I[j]` of node `j` (zero-based).
    pub fn node_signal(&self, j: usize) -> Result<DVector<f64>> {
        let innovation = self.theta_i.get(j).ok_or(DcsError::IndexOutOfRange {
            index: j,
            len: self.nodes(),
        })?;
        Ok(&self.theta_c + innovation)
    }

    pub fn node_signals(&self) -> Vec<DVector<f64>> {
        self.theta_i.iter().map(|ti| &self.theta_c + ti).collect()
    }
}

/// Nonzero standard Gaussian draw; an exact zero would break the sparsity count.
fn nonzero_gaussian(rng: &mut rng::Rng) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v != 0.0 {
            return v;
        }
    }
}

fn sparse_vector(n: usize, support: &[usize], rng: &mut rng::Rng) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for &i in support {
        v[i] = nonzero_gaussian(rng);
    }
    v
}

/// Draws an ensemble. Deterministic in `params` (seed included).
pub fn gen_ensemble(params: &EnsembleParams) -> Result<SignalEnsemble> {
    params.validate()?;
    let n = params.n;
    let k = params.innovation_sparsity;
    let mut rng = rng::seeded(params.seed);

    let theta_c = match params.model {
        JsmModel::Jsm1 { common_sparsity } => {
            let support = sample(&mut rng, n, common_sparsity).into_vec();
            sparse_vector(n, &support, &mut rng)
        }
        JsmModel::Jsm3 => DVector::from_fn(n, |_, _| rng.sample(StandardNormal)),
    };

    let supports: Vec<Vec<usize>> = match params.support_policy {
        SupportPolicy::IndependentUniform => (0..params.nodes)
            .map(|_| sample(&mut rng, n, k).into_vec())
            .collect(),
        SupportPolicy::DisjointInnovations if k == 0 => vec![Vec::new(); params.nodes],
        SupportPolicy::DisjointInnovations => sample(&mut rng, n, params.nodes * k)
            .into_vec()
            .chunks(k)
            .map(<[usize]>::to_vec)
            .collect(),
    };

    let theta_i = supports
        .iter()
        .map(|support| {
            let mut v = sparse_vector(n, support, &mut rng);
            if let NormPolicy::EqualNorm { eta } = params.norm_policy {
                let norm = v.norm();
                v *= eta / norm;
            }
            v
        })
        .collect();

    Ok(SignalEnsemble {
        params: params.clone(),
        theta_c,
        theta_i,
    })
}

pub fn l0_norm(v: &DVector<f64>) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: usize, nodes: usize, kc: usize, ki: usize) -> EnsembleParams {
        EnsembleParams {
            n,
            nodes,
            model: JsmModel::Jsm1 {
                common_sparsity: kc,
            },
            innovation_sparsity: ki,
            support_policy: SupportPolicy::IndependentUniform,
            norm_policy: NormPolicy::GaussianAmplitudes,
            seed: 11,
        }
    }

    #[test]
    fn fig2_regime_sparsity_counts() {
        let e = gen_ensemble(&params(256, 100, 20, 5)).unwrap();
        assert_eq!(l0_norm(&e.theta_c), 20);
        assert_eq!(e.nodes(), 100);
        assert!(e.theta_i.iter().all(|t| l0_norm(t) == 5));
    }

    #[test]
    fn empty_supports_give_zero_signals() {
        let e = gen_ensemble(&params(16, 3, 0, 0)).unwrap();
        assert!(e.theta_c.iter().all(|x| *x == 0.0));
        assert!(e.theta_i.iter().all(|t| t.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn same_params_same_ensemble() {
        let p = params(64, 5, 8, 3);
        let a = gen_ensemble(&p).unwrap();
        let b = gen_ensemble(&p).unwrap();
        assert_eq!(a, b);
        let mut q = p.clone();
        q.seed += 1;
        assert_ne!(a, gen_ensemble(&q).unwrap());
    }

    #[test]
    fn node_signal_adds_components() {
        let mut e = gen_ensemble(&params(4, 2, 0, 0)).unwrap();
        e.theta_c = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        e.theta_i[1] = DVector::from_vec(vec![0.0, 2.0, 0.0, 0.0]);
        assert_eq!(e.node_signal(1).unwrap().as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        // zero innovation
        assert_eq!(e.node_signal(0).unwrap(), e.theta_c);
        // zero common
        e.theta_c.fill(0.0);
        assert_eq!(e.node_signal(1).unwrap(), e.theta_i[1]);
        assert!(matches!(
            e.node_signal(2),
            Err(DcsError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn rejects_infeasible_params() {
        assert!(gen_ensemble(&params(10, 2, 11, 1)).is_err());
        assert!(gen_ensemble(&params(10, 2, 1, 11)).is_err());
        let mut p = params(10, 4, 1, 3);
        p.support_policy = SupportPolicy::DisjointInnovations;
        assert!(matches!(gen_ensemble(&p), Err(DcsError::InvalidParams(_))));
        let mut p = params(10, 2, 1, 1);
        p.norm_policy = NormPolicy::EqualNorm { eta: 0.0 };
        assert!(gen_ensemble(&p).is_err());
        assert!(gen_ensemble(&params(10, 1, 1, 1)).is_err());
    }

    #[test]
    fn jsm3_common_is_dense() {
        let mut p = params(32, 3, 0, 2);
        p.model = JsmModel::Jsm3;
        let e = gen_ensemble(&p).unwrap();
        assert_eq!(l0_norm(&e.theta_c), 32);
    }

    #[test]
    fn amplitude_distribution_is_standard_normal() {
        let mut p = params(256, 200, 0, 64);
        p.seed = 2024;
        let e = gen_ensemble(&p).unwrap();
        let amps: Vec<f64> = e
            .theta_i
            .iter()
            .flat_map(|t| t.iter().copied().filter(|x| *x != 0.0).collect::<Vec<_>>())
            .collect();
        let n = amps.len() as f64;
        assert!(n >= 1e4);
        let mean = amps.iter().sum::<f64>() / n;
        let var = amps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 4.0 / n.sqrt(), "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "variance {var}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ensemble_invariants(
            n in 8usize..96,
            nodes in 2usize..8,
            kc_frac in 0.0f64..0.5,
            ki_frac in 0.0f64..1.0,
            disjoint in any::<bool>(),
            eta in prop::option::of(0.1f64..10.0),
            seed in any::<u64>(),
        ) {
            let kc = (kc_frac * n as f64) as usize;
            let max_ki = if disjoint { n / nodes } else { n };
            let ki = ((ki_frac * max_ki as f64) as usize).max(usize::from(eta.is_some()));
            let p = EnsembleParams {
                n,
                nodes,
                model: JsmModel::Jsm1 { common_sparsity: kc },
                innovation_sparsity: ki,
                support_policy: if disjoint {
                    SupportPolicy::DisjointInnovations
                } else {
                    SupportPolicy::IndependentUniform
                },
                norm_policy: eta.map_or(NormPolicy::GaussianAmplitudes, |eta| NormPolicy::EqualNorm { eta }),
                seed,
            };
            let e = gen_ensemble(&p).unwrap();
            prop_assert_eq!(l0_norm(&e.theta_c), kc);
            for j in 0..nodes {
                prop_assert_eq!(l0_norm(&e.theta_i[j]), ki);
                prop_assert!(l0_norm(&e.node_signal(j).unwrap()) <= kc + ki);
                if let Some(eta) = eta {
                    prop_assert!((e.theta_i[j].norm() - eta).abs() <= 1e-12 * eta);
                }
                if disjoint {
                    for l in (j + 1)..nodes {
                        prop_assert_eq!(e.theta_i[j].dot(&e.theta_i[l]), 0.0);
                    }
                }
            }
        }
    }
}
