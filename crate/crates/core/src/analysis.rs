//! Error metrics, recovery-error bounds and bit-rate accounting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DcsError, Result};
use crate::model::SignalEnsemble;
use crate::recovery::EnsembleRecovery;

/// Upper end (exclusive) of the RIP regime in which BPDN is stable.
pub const STABLE_RIP_LIMIT: f64 = std::f64::consts::SQRT_2 - 1.0;

/// Mean squared error per entry over every node except the side-information
/// node 0: `sum_{j>=1} ||theta_hat_j - theta_j||^2 / ((J - 1) n)`.
pub fn ensemble_mse(recovered: &EnsembleRecovery, truth: &SignalEnsemble) -> Result<f64> {
    let errors = node_errors(recovered, truth)?;
    let n = truth.len();
    let others = &errors[1..];
    Ok(others.iter().map(|e| e * e).sum::<f64>() / (others.len() * n) as f64)
}

/// `||theta_hat_j - theta_j||_2` for every node, node 0 included.
pub fn node_errors(recovered: &EnsembleRecovery, truth: &SignalEnsemble) -> Result<Vec<f64>> {
    let nodes = truth.nodes();
    if recovered.theta_hat.len() != nodes {
        return Err(DcsError::DimensionMismatch {
            context: "recovered node count",
            expected: nodes,
            found: recovered.theta_hat.len(),
        });
    }
    recovered
        .theta_hat
        .iter()
        .zip(truth.node_signals())
        .map(|(hat, x)| {
            if hat.len() != x.len() {
                return Err(DcsError::DimensionMismatch {
                    context: "recovered signal length",
                    expected: x.len(),
                    found: hat.len(),
                });
            }
            Ok((hat - x).norm())
        })
        .collect()
}

/// Mean of `||theta_hat_j - theta_j|| / ||theta_j||` over nodes `j >= 1`.
/// Nodes whose true signal is zero contribute their absolute error.
pub fn mean_relative_error(recovered: &EnsembleRecovery, truth: &SignalEnsemble) -> Result<f64> {
    let errors = node_errors(recovered, truth)?;
    let signals = truth.node_signals();
    let rel: Vec<f64> = errors[1..]
        .iter()
        .zip(&signals[1..])
        .map(|(e, x)| {
            let norm = x.norm();
            if norm > 0.0 {
                e / norm
            } else {
                *e
            }
        })
        .collect();
    Ok(rel.iter().sum::<f64>() / rel.len() as f64)
}

/// Stability constant of BPDN, `4 sqrt(1+delta) / (1 - (1+sqrt 2) delta)`,
/// valid for `0 <= delta < sqrt(2) - 1`.
pub fn bpdn_constant(delta: f64) -> Result<f64> {
    if !(0.0..STABLE_RIP_LIMIT).contains(&delta) {
        return Err(DcsError::InvalidRegime { delta });
    }
    Ok(4.0 * (1.0 + delta).sqrt() / (1.0 - (1.0 + std::f64::consts::SQRT_2) * delta))
}

/// DOI reconstruction error bound `C * eps`.
pub fn doi_bound(c: f64, eps: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(DcsError::Domain(format!("C must be positive, got {c}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(DcsError::Domain(format!("eps must be >= 0, got {eps}")));
    }
    Ok(c * eps)
}

/// Texas DOI error floor `2 C sqrt(1 + delta_k) eta / sqrt(J)`.
pub fn texas_doi_bound(c: f64, delta_k: f64, nodes: usize, eta: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(DcsError::Domain(format!("C must be positive, got {c}")));
    }
    if !(0.0..1.0).contains(&delta_k) {
        return Err(DcsError::Domain(format!(
            "delta_k must lie in [0, 1), got {delta_k}"
        )));
    }
    if nodes == 0 {
        return Err(DcsError::Domain("node count must be positive".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(DcsError::Domain(format!("eta must be >= 0, got {eta}")));
    }
    Ok(2.0 * c * (1.0 + delta_k).sqrt() * eta / (nodes as f64).sqrt())
}

/// Norm of the common-component estimation error left by averaging,
/// `|| (1/J) sum_l A theta_I[l] ||_2`.
pub fn averaging_noise(a: &DMatrix<f64>, theta_i: &[DVector<f64>]) -> Result<f64> {
    if theta_i.is_empty() {
        return Err(DcsError::EmptyInput("innovation components"));
    }
    let mut sum = DVector::zeros(a.ncols());
    for t in theta_i {
        if t.len() != a.ncols() {
            return Err(DcsError::DimensionMismatch {
                context: "averaging_noise innovation length",
                expected: a.ncols(),
                found: t.len(),
            });
        }
        sum += t;
    }
    Ok((a * sum).norm() / theta_i.len() as f64)
}

/// Inputs of the recovery bounds, carried together so reports can show them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub c: f64,
    pub delta_k: f64,
    pub nodes: usize,
    pub eta: f64,
    pub eps: f64,
}

impl BoundInputs {
    /// `C` from [`bpdn_constant`]; fails outside the stable regime.
    pub fn from_rip(delta_k: f64, nodes: usize, eta: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            c: bpdn_constant(delta_k)?,
            delta_k,
            nodes,
            eta,
            eps,
        })
    }

    pub fn in_stable_regime(&self) -> bool {
        (0.0..STABLE_RIP_LIMIT).contains(&self.delta_k)
    }

    pub fn doi(&self) -> Result<f64> {
        doi_bound(self.c, self.eps)
    }

    pub fn texas_doi(&self) -> Result<f64> {
        texas_doi_bound(self.c, self.delta_k, self.nodes, self.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateBudget {
    pub nodes: u64,
    /// Measurements per non-side-information node.
    pub m: u64,
    /// Bits per measurement.
    pub bits: u64,
    /// Side-information measurements.
    pub m1: u64,
    /// Side-information bits per measurement.
    pub bits1: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateReport {
    /// `(J-1) m R + m1 R1`.
    pub total_bits: u64,
    /// Measurements per node a side-information-free scheme can afford on
    /// the same budget, `total_bits / (J R)`.
    pub m_prime: f64,
    /// `m' - m`, evaluated as `(m1 R1 - m R) / (J R)`.
    pub delta_m: f64,
}

pub fn rate_accounting(b: &RateBudget) -> Result<RateReport> {
    if [b.nodes, b.m, b.bits, b.m1, b.bits1].contains(&0) {
        return Err(DcsError::Domain(format!(
            "rate budget entries must be positive: {b:?}"
        )));
    }
    let overflow = || DcsError::Domain(format!("rate budget overflows: {b:?}"));
    let total_bits = (b.nodes - 1)
        .checked_mul(b.m)
        .and_then(|v| v.checked_mul(b.bits))
        .and_then(|v| v.checked_add(b.m1.checked_mul(b.bits1)?))
        .ok_or_else(overflow)?;
    let jr = (b.nodes * b.bits) as f64;
    let si_excess = (b.m1 * b.bits1) as f64 - (b.m * b.bits) as f64;
    Ok(RateReport {
        total_bits,
        m_prime: total_bits as f64 / jr,
        delta_m: si_excess / jr,
    })
}
