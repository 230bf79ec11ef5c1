//! Joint reconstruction of a whole ensemble.
//!
//! The two side-information decoders assume node 0's signal is known exactly
//! at the decoder:
//!
//! * [`recover_doi`] subtracts node 0's measurements from every other node,
//!   which cancels any common component (sparse or dense) and leaves the
//!   measurements of a difference of innovations.
//! * [`recover_texas_doi`] averages all measurements to isolate the
//!   innovation measurements of node 0, then combines differencing with that
//!   estimate so each solve targets a single innovation.
//!
//! Baselines: [`recover_separate`], [`recover_texas_holdem`] and
//! [`recover_tecc`]. Within one call, shared quantities are computed once and
//! the per-node solves then run in parallel.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{DcsError, Result};
use crate::sensing::{MeasurementSet, SensingMatrix};
use crate::solver::{BpdnSolver, SolveResult, SolverConfig};

/// The exactly known signal of node 0 and the measurements the decoder
/// associates with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInformation {
    pub theta_1: DVector<f64>,
    pub y_1: DVector<f64>,
}

impl SideInformation {
    /// Side information with noiseless measurements `A theta_1`.
    pub fn exact(solver: &BpdnSolver, theta_1: DVector<f64>) -> Result<Self> {
        let a = solver.matrix();
        if theta_1.len() != a.ncols() {
            return Err(DcsError::DimensionMismatch {
                context: "side information signal",
                expected: a.ncols(),
                found: theta_1.len(),
            });
        }
        let y_1 = a * &theta_1;
        Ok(Self { theta_1, y_1 })
    }

    fn check(&self, n: usize, m: usize) -> Result<()> {
        if self.theta_1.len() != n || self.y_1.len() != m {
            return Err(DcsError::MissingSideInformation(format!(
                "expected signal of length {n} and {m} measurements, got {} and {}",
                self.theta_1.len(),
                self.y_1.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

impl SolveDiagnostics {
    /// Entry for a node that needed no solve.
    pub const EXACT: Self = Self {
        converged: true,
        iterations: 0,
        residual_norm: 0.0,
    };
}

impl From<&SolveResult> for SolveDiagnostics {
    fn from(r: &SolveResult) -> Self {
        Self {
            converged: r.converged,
            iterations: r.iterations,
            residual_norm: r.residual_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRecovery {
    pub theta_hat: Vec<DVector<f64>>,
    /// Diagnostics of each node's own solve.
    pub per_node: Vec<SolveDiagnostics>,
    /// Solve shared by all nodes (Texas DOI's node-0 innovation, Texas
    /// Hold 'Em's common component).
    pub shared: Option<SolveDiagnostics>,
}

impl EnsembleRecovery {
    /// Recovery that returns `signals` unchanged.
    pub fn passthrough(signals: Vec<DVector<f64>>) -> Self {
        let per_node = vec![SolveDiagnostics::EXACT; signals.len()];
        Self {
            theta_hat: signals,
            per_node,
            shared: None,
        }
    }

    pub fn per_node_converged(&self) -> Vec<bool> {
        self.per_node.iter().map(|d| d.converged).collect()
    }

    /// Fraction of all solves (shared one included) that converged.
    pub fn converged_fraction(&self) -> f64 {
        let all: Vec<bool> = self
            .per_node
            .iter()
            .chain(self.shared.iter())
            .map(|d| d.converged)
            .collect();
        all.iter().filter(|c| **c).count() as f64 / all.len() as f64
    }
}

/// Default inner ball radius: a bound on the averaging residual,
/// `sqrt(1 + delta) * eta_hat / sqrt(J)`, plus the quantization noise bound.
pub fn default_inner_eps(delta: f64, eta_hat: f64, nodes: usize, quant_bound: f64) -> f64 {
    (1.0 + delta).sqrt() * eta_hat / (nodes as f64).sqrt() + quant_bound
}

fn check_set(solver: &BpdnSolver, measurements: &MeasurementSet, min_nodes: usize) -> Result<()> {
    let m = solver.matrix().nrows();
    if measurements.nodes() < min_nodes {
        return Err(DcsError::TooFewNodes {
            required: min_nodes,
            found: measurements.nodes(),
        });
    }
    if let Some(y) = measurements.y.iter().find(|y| y.len() != m) {
        return Err(DcsError::DimensionMismatch {
            context: "node measurements",
            expected: m,
            found: y.len(),
        });
    }
    Ok(())
}

fn solve_all(
    solver: &BpdnSolver,
    targets: Vec<DVector<f64>>,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<Vec<SolveResult>> {
    targets
        .into_par_iter()
        .map(|y| solver.solve(&y, eps, cfg))
        .collect()
}

fn mean(vectors: impl Iterator<Item = DVector<f64>>, len: usize) -> DVector<f64> {
    let mut count = 0usize;
    let sum = vectors.fold(DVector::zeros(len), |acc, v| {
        count += 1;
        acc + v
    });
    sum / count as f64
}

/// Independent BPDN per node.
pub fn recover_separate(
    solver: &BpdnSolver,
    measurements: &MeasurementSet,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<EnsembleRecovery> {
    check_set(solver, measurements, 1)?;
    let results = solve_all(solver, measurements.y.clone(), eps, cfg)?;
    Ok(EnsembleRecovery {
        per_node: results.iter().map(SolveDiagnostics::from).collect(),
        theta_hat: results.into_iter().map(|r| r.theta_hat).collect(),
        shared: None,
    })
}

/// Difference-of-innovations decoding: for `j >= 1`,
/// `theta_hat_j = theta_1 + bpdn(y_j - y_1)`.
pub fn recover_doi(
    solver: &BpdnSolver,
    measurements: &MeasurementSet,
    si: &SideInformation,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<EnsembleRecovery> {
    let (m, n) = solver.matrix().shape();
    check_set(solver, measurements, 1)?;
    si.check(n, m)?;

    let diffs = measurements.y[1..].iter().map(|y| y - &si.y_1).collect();
    let results = solve_all(solver, diffs, eps, cfg)?;

    let mut out = EnsembleRecovery::passthrough(vec![si.theta_1.clone()]);
    for r in results {
        out.per_node.push(SolveDiagnostics::from(&r));
        out.theta_hat.push(&si.theta_1 + r.theta_hat);
    }
    Ok(out)
}

/// Texas DOI decoding. With `y_C = mean_j y_j` and
/// `theta_I1 = bpdn(y_1 - y_C)`, every other node solves for its own
/// innovation from `(y_j - y_1) + (y_1 - y_C)` and outputs
/// `theta_1 - theta_I1 + theta_Ij`. The common component is never estimated.
pub fn recover_texas_doi(
    solver: &BpdnSolver,
    measurements: &MeasurementSet,
    si: &SideInformation,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<EnsembleRecovery> {
    let (m, n) = solver.matrix().shape();
    check_set(solver, measurements, 2)?;
    si.check(n, m)?;

    let y_c = mean(
        std::iter::once(si.y_1.clone()).chain(measurements.y[1..].iter().cloned()),
        m,
    );
    let y_i1 = &si.y_1 - &y_c;
    let shared = solver.solve(&y_i1, eps, cfg)?;
    let base = &si.theta_1 - &shared.theta_hat;

    let targets = measurements.y[1..]
        .iter()
        .map(|y| (y - &si.y_1) + &y_i1)
        .collect();
    let results = solve_all(solver, targets, eps, cfg)?;

    let mut out = EnsembleRecovery::passthrough(vec![si.theta_1.clone()]);
    out.shared = Some(SolveDiagnostics::from(&shared));
    for r in results {
        out.per_node.push(SolveDiagnostics::from(&r));
        out.theta_hat.push(&base + r.theta_hat);
    }
    Ok(out)
}

/// Texas Hold 'Em with every measurement treated as a community measurement:
/// `theta_C = bpdn(mean_j y_j)`, `theta_hat_j = theta_C + bpdn(y_j - mean)`.
pub fn recover_texas_holdem(
    solver: &BpdnSolver,
    measurements: &MeasurementSet,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<EnsembleRecovery> {
    let m = solver.matrix().nrows();
    check_set(solver, measurements, 2)?;

    let y_c = mean(measurements.y.iter().cloned(), m);
    let common = solver.solve(&y_c, eps, cfg)?;
    let targets = measurements.y.iter().map(|y| y - &y_c).collect();
    let results = solve_all(solver, targets, eps, cfg)?;

    Ok(EnsembleRecovery {
        per_node: results.iter().map(SolveDiagnostics::from).collect(),
        theta_hat: results
            .into_iter()
            .map(|r| &common.theta_hat + r.theta_hat)
            .collect(),
        shared: Some(SolveDiagnostics::from(&common)),
    })
}

/// Transpose estimation of a (possibly dense) common component from
/// per-node matrices: `x_C = mean_j Phi_j^T y_j`, then each innovation is
/// recovered from `y_j - Phi_j x_C`.
pub fn recover_tecc(
    matrices: &[SensingMatrix],
    measurements: &MeasurementSet,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<EnsembleRecovery> {
    let nodes = measurements.nodes();
    if nodes < 2 {
        return Err(DcsError::TooFewNodes {
            required: 2,
            found: nodes,
        });
    }
    if matrices.len() != nodes {
        return Err(DcsError::DimensionMismatch {
            context: "TECC matrix count",
            expected: nodes,
            found: matrices.len(),
        });
    }
    for (i, a) in matrices.iter().enumerate() {
        if matrices[i + 1..]
            .iter()
            .any(|b| a.seed == b.seed || a.entries == b.entries)
        {
            return Err(DcsError::SharedMatrix);
        }
    }
    let (m, n) = matrices[0].entries.shape();
    for (a, y) in matrices.iter().zip(&measurements.y) {
        if a.entries.shape() != (m, n) {
            return Err(DcsError::DimensionMismatch {
                context: "TECC matrix shape",
                expected: m * n,
                found: a.rows() * a.cols(),
            });
        }
        if y.len() != m {
            return Err(DcsError::DimensionMismatch {
                context: "node measurements",
                expected: m,
                found: y.len(),
            });
        }
    }

    let x_c = mean(
        matrices
            .iter()
            .zip(&measurements.y)
            .map(|(a, y)| a.entries.tr_mul(y)),
        n,
    );

    let results: Vec<SolveResult> = matrices
        .par_iter()
        .zip(measurements.y.par_iter())
        .map(|(a, y)| {
            let solver = BpdnSolver::new(&a.entries)?;
            solver.solve(&(y - &a.entries * &x_c), eps, cfg)
        })
        .collect::<Result<_>>()?;

    Ok(EnsembleRecovery {
        per_node: results.iter().map(SolveDiagnostics::from).collect(),
        theta_hat: results.into_iter().map(|r| &x_c + r.theta_hat).collect(),
        shared: None,
    })
}
