//! Sparse recovery by l1 minimization.
//!
//! [`BpdnSolver`] solves basis pursuit denoising
//!
//! ```text
//! minimize ||theta||_1  subject to  ||A theta - y||_2 <= eps
//! ```
//!
//! with ADMM on the split `theta = z`, `A theta = w`: `z` carries the l1 term
//! (soft thresholding) and `w` is projected onto the ball of radius `eps`
//! around `y`. With `eps = 0` the ball is the point `y` and the problem is
//! equality-constrained basis pursuit.
//!
//! Both constraint blocks share the same penalty, so the theta-update operator
//! `(I + A^T A)^{-1}` is independent of `rho`. It is formed once per matrix
//! (through the m x m system `I + A A^T` when `m < n`) and shared by every
//! solve, and `rho` can be rebalanced during a solve for free.

use nalgebra::{DMatrix, DVector};

use crate::error::{DcsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial ADMM penalty.
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            abs_tol: 1e-7,
            rel_tol: 1e-5,
            max_iter: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.rho) || !positive(self.abs_tol) || !positive(self.rel_tol) {
            return Err(DcsError::InvalidConfig(format!(
                "solver penalty and tolerances must be positive: {self:?}"
            )));
        }
        if self.max_iter == 0 {
            return Err(DcsError::InvalidConfig(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub theta_hat: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||A theta_hat - y||_2`.
    pub residual_norm: f64,
}

// Residual balancing: rescale rho by TAU whenever one residual exceeds the
// other by a factor MU, checked every BALANCE_EVERY iterations.
const BALANCE_EVERY: usize = 10;
const MU: f64 = 10.0;
const TAU: f64 = 2.0;
// Over-relaxation factor.
const ALPHA: f64 = 1.6;

enum ThetaUpdate {
    /// m < n: `theta = c + A^T (d - s)` with `s = M A c + M G d`,
    /// `M = (I + A A^T)^{-1}`, `G = A A^T`, `c = z - u`, `d = w - v`.
    /// `s` is also `A theta`.
    Dual { ma: DMatrix<f64>, mg: DMatrix<f64> },
    /// m >= n: `theta = N c + N A^T d` with `N = (I + A^T A)^{-1}`.
    Primal {
        n_inv: DMatrix<f64>,
        n_inv_at: DMatrix<f64>,
    },
}

/// Solver bound to one matrix. Cheap to share across threads.
pub struct BpdnSolver {
    a: DMatrix<f64>,
    update: ThetaUpdate,
}

impl BpdnSolver {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || n == 0 {
            return Err(DcsError::ZeroDimension { rows: m, cols: n });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(DcsError::NonFiniteInput("sensing matrix"));
        }
        let update = if m < n {
            let g = a * a.transpose();
            let shifted = &g + DMatrix::identity(m, m);
            // I + A A^T has all eigenvalues >= 1, so Cholesky cannot fail.
            let chol = shifted.cholesky().expect("I + AA^T is positive definite");
            ThetaUpdate::Dual {
                ma: chol.solve(a),
                mg: chol.solve(&g),
            }
        } else {
            let shifted = a.transpose() * a + DMatrix::identity(n, n);
            let chol = shifted.cholesky().expect("I + A^T A is positive definite");
            ThetaUpdate::Primal {
                n_inv: chol.inverse(),
                n_inv_at: chol.solve(&a.transpose()),
            }
        };
        Ok(Self {
            a: a.clone(),
            update,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn solve(&self, y: &DVector<f64>, eps: f64, cfg: &SolverConfig) -> Result<SolveResult> {
        cfg.validate()?;
        let (m, n) = self.a.shape();
        if y.len() != m {
            return Err(DcsError::DimensionMismatch {
                context: "solve_bpdn measurements",
                expected: m,
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DcsError::NonFiniteInput("measurements"));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(DcsError::Domain(format!(
                "ball radius must be >= 0, got {eps}"
            )));
        }

        let y_norm = y.norm();
        if y_norm <= eps {
            // zero is feasible and has the smallest possible l1 norm
            return Ok(SolveResult {
                theta_hat: DVector::zeros(n),
                iterations: 0,
                converged: true,
                residual_norm: y_norm,
            });
        }

        let mut rho = cfg.rho;
        let mut theta;
        let mut a_theta;
        let mut z = DVector::<f64>::zeros(n);
        let mut w = y.clone();
        let mut u = DVector::<f64>::zeros(n);
        let mut v = DVector::<f64>::zeros(m);
        let mut z_prev = z.clone();
        let mut w_prev = w.clone();

        let sqrt_nm = ((n + m) as f64).sqrt();
        let sqrt_n = (n as f64).sqrt();
        let feas_tol = eps + cfg.abs_tol * (m as f64).sqrt();

        let mut converged = false;
        let mut iterations = 0;
        for k in 1..=cfg.max_iter {
            iterations = k;
            let c = &z - &u;
            let d = &w - &v;
            match &self.update {
                ThetaUpdate::Dual { ma, mg } => {
                    let s = ma * &c + mg * &d;
                    theta = c + self.a.tr_mul(&(&d - &s));
                    a_theta = s;
                }
                ThetaUpdate::Primal { n_inv, n_inv_at } => {
                    theta = n_inv * &c + n_inv_at * &d;
                    a_theta = &self.a * &theta;
                }
            }

            std::mem::swap(&mut z_prev, &mut z);
            std::mem::swap(&mut w_prev, &mut w);
            let theta_rel = &theta * ALPHA + &z_prev * (1.0 - ALPHA);
            let a_theta_rel = &a_theta * ALPHA + &w_prev * (1.0 - ALPHA);

            z = soft_threshold(&(&theta_rel + &u), 1.0 / rho);
            w = project_ball(&(&a_theta_rel + &v), y, eps);
            u += &theta_rel - &z;
            v += &a_theta_rel - &w;

            let r_pri = ((&theta - &z).norm_squared() + (&a_theta - &w).norm_squared()).sqrt();
            let eps_pri = sqrt_nm * cfg.abs_tol
                + cfg.rel_tol
                    * (theta.norm_squared() + a_theta.norm_squared())
                        .sqrt()
                        .max((z.norm_squared() + w.norm_squared()).sqrt());

            let balance = k % BALANCE_EVERY == 0;
            if r_pri > eps_pri && !balance {
                continue;
            }

            let dz = &z - &z_prev;
            let dw = &w - &w_prev;
            let r_dual = rho * (dz + self.a.tr_mul(&dw)).norm();
            let eps_dual =
                sqrt_n * cfg.abs_tol + cfg.rel_tol * rho * (&u + self.a.tr_mul(&v)).norm();

            if r_pri <= eps_pri && r_dual <= eps_dual {
                let residual = (&self.a * &z - y).norm();
                if residual <= feas_tol {
                    converged = true;
                    break;
                }
            }

            if balance {
                if r_pri > MU * r_dual {
                    rho *= TAU;
                    u /= TAU;
                    v /= TAU;
                } else if r_dual > MU * r_pri {
                    rho /= TAU;
                    u *= TAU;
                    v *= TAU;
                }
            }
        }

        let mut theta_hat = z;
        if converged && eps == 0.0 {
            if let Some(polished) = polish_on_support(&self.a, y, &theta_hat, cfg.abs_tol) {
                theta_hat = polished;
            }
        }
        let residual_norm = (&self.a * &theta_hat - y).norm();
        Ok(SolveResult {
            theta_hat,
            iterations,
            converged,
            residual_norm,
        })
    }
}

/// One-shot convenience wrapper; prefer [`BpdnSolver`] when solving
/// repeatedly with the same matrix.
pub fn solve_bpdn(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    BpdnSolver::new(a)?.solve(y, eps, cfg)
}

pub fn soft_threshold(x: &DVector<f64>, t: f64) -> DVector<f64> {
    x.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

/// Euclidean projection onto `{w : ||w - center|| <= radius}`.
pub fn project_ball(p: &DVector<f64>, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let offset = p - center;
    let dist = offset.norm();
    if dist <= radius {
        p.clone()
    } else {
        center + offset * (radius / dist)
    }
}

/// Equality-constrained refinement: least squares restricted to the support
/// of `theta`. Accepted only if it fits `y` exactly (to `abs_tol`) with the
/// same sign pattern, in which case it is the basis pursuit solution on that
/// support.
fn polish_on_support(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    abs_tol: f64,
) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..theta.len()).filter(|&i| theta[i] != 0.0).collect();
    if support.is_empty() || support.len() > a.nrows() {
        return None;
    }
    let coef = least_squares_on(a, y, &support)?;
    let mut out = DVector::zeros(theta.len());
    for (&i, &c) in support.iter().zip(coef.iter()) {
        if c.signum() != theta[i].signum() {
            return None;
        }
        out[i] = c;
    }
    let residual = (a * &out - y).norm();
    (residual <= abs_tol * (a.nrows() as f64).sqrt()).then_some(out)
}

/// Least squares on the columns `support` of `a`. `None` when those columns
/// are numerically rank deficient.
fn least_squares_on(a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let sub = a.select_columns(support);
    if support.len() > a.nrows() {
        return sub.svd(true, true).solve(y, 1e-12).ok();
    }
    let gram = sub.transpose() * &sub;
    let chol = gram.cholesky()?;
    Some(chol.solve(&sub.tr_mul(y)))
}

/// Largest total number of supports [`l0_oracle`] will enumerate.
pub const L0_MAX_SUPPORTS: u128 = 1_000_000;
/// Largest signal length [`l0_oracle`] accepts.
pub const L0_MAX_N: usize = 20;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Exhaustive l0 search: the least-squares fit of smallest residual over all
/// supports of size at most `k_max`. Residuals within a relative `1e-10` of
/// each other count as ties, resolved by smaller support and then by the
/// lexicographically smallest support.
pub fn l0_oracle(a: &DMatrix<f64>, y: &DVector<f64>, k_max: usize) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(DcsError::DimensionMismatch {
            context: "l0_oracle measurements",
            expected: m,
            found: y.len(),
        });
    }
    let k_max = k_max.min(n);
    let supports: u128 = (0..=k_max).map(|s| binomial(n, s)).sum();
    if n > L0_MAX_N || supports > L0_MAX_SUPPORTS {
        return Err(DcsError::InstanceTooLarge { n, supports });
    }

    let tie_tol = 1e-10 * y.norm().max(1.0);
    let mut best = DVector::zeros(n);
    let mut best_residual = y.norm();

    for size in 1..=k_max {
        let mut support: Vec<usize> = (0..size).collect();
        loop {
            if let Some(coef) = least_squares_on(a, y, &support) {
                let fit = a.select_columns(&support) * &coef;
                let residual = (y - fit).norm();
                // strict improvement beyond the tie band; enumeration order
                // already visits smaller and lexicographically earlier
                // supports first
                if residual < best_residual - tie_tol {
                    best_residual = residual;
                    best = DVector::zeros(n);
                    for (&i, &c) in support.iter().zip(coef.iter()) {
                        best[i] = c;
                    }
                }
            }
            if !next_combination(&mut support, n) {
                break;
            }
        }
    }
    Ok(best)
}

/// Advances `c` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let Some(i) = (0..k).rev().find(|&i| c[i] < n - k + i) else {
        return false;
    };
    c[i] += 1;
    for j in i + 1..k {
        c[j] = c[j - 1] + 1;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::bpdn_constant;
    use crate::model::l0_norm;
    use crate::rng;
    use crate::sensing::{estimate_rip, gen_matrix};
    use rand::seq::index::sample;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn sparse(n: usize, k: usize, seed: u64) -> DVector<f64> {
        let mut rng = rng::seeded(seed);
        let mut x = DVector::zeros(n);
        for i in sample(&mut rng, n, k) {
            x[i] = rng.sample(StandardNormal);
        }
        x
    }

    #[test]
    fn zero_measurements_give_zero() {
        let a = gen_matrix(6, 10, 1).unwrap();
        let r = solve_bpdn(
            &a.entries,
            &DVector::zeros(6),
            0.0,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.theta_hat.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = gen_matrix(6, 10, 1).unwrap();
        let cfg = SolverConfig::default();
        assert!(matches!(
            solve_bpdn(&a.entries, &DVector::zeros(5), 0.0, &cfg),
            Err(DcsError::DimensionMismatch { .. })
        ));
        let mut y = DVector::zeros(6);
        y[2] = f64::NAN;
        assert!(matches!(
            solve_bpdn(&a.entries, &y, 0.0, &cfg),
            Err(DcsError::NonFiniteInput(_))
        ));
        assert!(solve_bpdn(&a.entries, &DVector::zeros(6), -1.0, &cfg).is_err());
        let bad = SolverConfig { max_iter: 0, ..cfg };
        assert!(solve_bpdn(&a.entries, &DVector::zeros(6), 0.0, &bad).is_err());
    }

    #[test]
    fn one_sparse_matches_l0_oracle() {
        let a = gen_matrix(6, 8, 21).unwrap();
        let x = sparse(8, 1, 5);
        let y = &a.entries * &x;
        let bp = solve_bpdn(&a.entries, &y, 0.0, &SolverConfig::default()).unwrap();
        let l0 = l0_oracle(&a.entries, &y, 1).unwrap();
        assert!(bp.converged);
        assert!((&bp.theta_hat - &l0).amax() <= 1e-5, "{bp:?} vs {l0}");
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = gen_matrix(20, 60, 2).unwrap();
        let y = &a.entries * sparse(60, 6, 3);
        let cfg = SolverConfig {
            max_iter: 3,
            ..SolverConfig::default()
        };
        let r = solve_bpdn(&a.entries, &y, 0.0, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn noisy_recovery_is_feasible_and_stable() {
        // n=16, m=12, k=2 with noise of norm exactly eps
        let (m, n, k) = (12, 16, 2);
        let eps = 0.05;
        let cfg = SolverConfig::default();
        let a = gen_matrix(m, n, 4).unwrap();
        let x = sparse(n, k, 8);
        let mut rng = rng::seeded(77);
        let noise = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = noise.normalize() * eps;
        let y = &a.entries * &x + &noise;
        let r = solve_bpdn(&a.entries, &y, eps, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.residual_norm <= eps + cfg.abs_tol * (m as f64).sqrt());
        // The stability constant needs a RIP estimate below sqrt(2)-1, which a
        // 12x16 Gaussian matrix only reaches at order 1.
        let delta = estimate_rip(&a, 1, 1_000, 1).unwrap();
        let c = bpdn_constant(delta).unwrap();
        assert!((&r.theta_hat - &x).norm() <= c * eps);
    }

    #[test]
    fn l1_optimality_spot_check() {
        // Moving along a null-space direction keeps feasibility; no such move
        // of a single-coordinate seed should reduce the l1 norm.
        let (m, n) = (10, 24);
        let a = gen_matrix(m, n, 12).unwrap();
        let y = &a.entries * sparse(n, 3, 13);
        let cfg = SolverConfig::default();
        let r = solve_bpdn(&a.entries, &y, 0.0, &cfg).unwrap();
        let base = r.theta_hat.lp_norm(1);
        let pinv = a.entries.clone().pseudo_inverse(1e-12).unwrap();
        for coord in [0, 5, 11, 17, 23] {
            for step in [1e-3, -1e-3] {
                let mut e = DVector::zeros(n);
                e[coord] = step;
                // re-project: remove the component that leaves the affine set
                let dir = &e - &pinv * (&a.entries * &e);
                let moved = &r.theta_hat + dir;
                assert!(moved.lp_norm(1) >= base - 1e-6, "coord {coord} step {step}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = gen_matrix(15, 40, 6).unwrap();
        let y = &a.entries * sparse(40, 4, 2);
        let cfg = SolverConfig::default();
        let s = BpdnSolver::new(&a.entries).unwrap();
        assert_eq!(
            s.solve(&y, 0.01, &cfg).unwrap(),
            s.solve(&y, 0.01, &cfg).unwrap()
        );
    }

    #[test]
    fn tall_matrices_use_the_primal_update() {
        let a = gen_matrix(30, 20, 6).unwrap();
        let x = sparse(20, 3, 4);
        let y = &a.entries * &x;
        let r = solve_bpdn(&a.entries, &y, 0.0, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!((&r.theta_hat - &x).amax() <= 1e-6);
    }

    #[test]
    fn oracle_zero_and_single_column() {
        let a = gen_matrix(4, 6, 3).unwrap();
        let zero = l0_oracle(&a.entries, &DVector::zeros(4), 2).unwrap();
        assert_eq!(l0_norm(&zero), 0);
        let y = a.entries.column(2) * 3.0;
        let r = l0_oracle(&a.entries, &y, 1).unwrap();
        assert_eq!(l0_norm(&r), 1);
        assert!((r[2] - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn oracle_exact_two_sparse() {
        let a = gen_matrix(7, 10, 9).unwrap();
        let x = sparse(10, 2, 31);
        let y = &a.entries * &x;
        let r = l0_oracle(&a.entries, &y, 2).unwrap();
        assert!((&a.entries * &r - &y).norm() <= 1e-10);
        assert!((&r - &x).amax() <= 1e-9);
    }

    #[test]
    fn oracle_guards_size() {
        let a = DMatrix::from_element(3, 21, 1.0);
        assert!(matches!(
            l0_oracle(&a, &DVector::zeros(3), 1),
            Err(DcsError::InstanceTooLarge { .. })
        ));
        let a = DMatrix::from_element(3, 20, 1.0);
        // sum_{s<=13} C(20, s) = 988116, sum_{s<=14} C(20, s) = 1026876
        assert!(l0_oracle(&a, &DVector::zeros(3), 14).is_err());
        assert!(l0_oracle(&a, &DVector::zeros(3), 2).is_ok());
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_combination(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(binomial(20, 10), 184_756);
        assert_eq!(binomial(5, 0), 1);
    }

    #[test]
    fn soft_threshold_and_projection() {
        let x = DVector::from_vec(vec![-3.0, -0.5, 0.0, 0.5, 3.0]);
        assert_eq!(
            soft_threshold(&x, 1.0).as_slice(),
            &[-2.0, 0.0, 0.0, 0.0, 2.0]
        );
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let p = project_ball(&DVector::from_vec(vec![4.0, 5.0]), &c, 1.0);
        assert!(((&p - &c).norm() - 1.0).abs() < 1e-15);
        let inside = DVector::from_vec(vec![1.5, 1.0]);
        assert_eq!(project_ball(&inside, &c, 1.0), inside);
        assert_eq!(project_ball(&inside, &c, 0.0), c);
    }
}
