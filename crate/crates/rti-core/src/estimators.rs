//! Image estimators: regularized least squares, MAP variants, and the
//! negative-data policies (truncation, iterative column removal, projected
//! gradient, and a brute-force nonnegative oracle for testing).
//!
//! Every solver minimizes the same cost
//!
//! > f(x) = ||Wx - y||^2 + alpha * x^T Q x - 2 beta * 1^T x
//!
//! whose unconstrained stationary point is
//! x = (W^T W + alpha Q)^{-1} (W^T y + beta 1). Negative beta acts as a
//! sparsifying bias (the exponential-prior term beta = -sigma_n^2 / mean).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::priors::{CovariancePrior, RegularizerQ};

/// Hard cap for the brute-force oracle's 2^N support enumeration.
pub const ORACLE_MAX_VOXELS: usize = 12;

/// Default re-solve rounds for the column-removal method, counting the
/// initial unconstrained estimate.
pub const DEFAULT_ITERATIVE_ROUNDS: usize = 3;

/// Default projected-gradient iteration budget.
pub const DEFAULT_PGM_ITERS: usize = 50;

fn default_tolerance() -> f64 {
    1e-9
}

/// How negative estimate or measurement entries are handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NegPolicy {
    /// Solve the unconstrained system and return it as-is.
    None,
    /// Solve, then clamp negative image entries to zero.
    TruncateX,
    /// Clamp negative measurements to zero, then solve.
    TruncateY,
    /// Repeatedly drop voxels that come back negative (removing their
    /// columns from W and from each difference operator) and re-solve.
    Iterative { max_rounds: usize },
    /// Projected gradient on the nonnegative orthant. `mu = None` picks a
    /// step from the row-sum norm bound with halving on non-descent.
    Pgm { mu: Option<f64>, iters: usize },
}

/// Solver settings shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: f64,
    pub beta: f64,
    pub neg_policy: NegPolicy,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 1.0,
            beta: 0.0,
            neg_policy: NegPolicy::Iterative {
                max_rounds: DEFAULT_ITERATIVE_ROUNDS,
            },
            tolerance: default_tolerance(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(RtiError::InvalidSolverConfig(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() {
            return Err(RtiError::InvalidSolverConfig("beta must be finite".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(RtiError::InvalidSolverConfig(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        match self.neg_policy {
            NegPolicy::Iterative { max_rounds } if max_rounds < 1 => Err(
                RtiError::InvalidSolverConfig("iterative rounds must be >= 1".into()),
            ),
            NegPolicy::Pgm { iters, .. } if iters < 1 => Err(RtiError::InvalidSolverConfig(
                "pgm iterations must be >= 1".into(),
            )),
            NegPolicy::Pgm { mu: Some(mu), .. } if !(mu > 0.0) => Err(
                RtiError::InvalidSolverConfig(format!("pgm step must be > 0, got {mu}")),
            ),
            _ => Ok(()),
        }
    }
}

/// A reconstructed voxel image with solve provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEstimate {
    /// Attenuation density per voxel (dB/m).
    pub x: DVector<f64>,
    /// ||Wx - y|| against the measurement vector the solver actually used.
    pub residual_norm: f64,
    /// Value of the shared cost f at x.
    pub cost: f64,
    /// Voxels pinned to zero by the policy (dropped or clamped).
    pub active_set: Vec<usize>,
    /// Human-readable description of how x was produced.
    pub policy: String,
    /// Solve rounds or gradient iterations actually performed.
    pub iterations: usize,
    /// Cost after each iteration, where the policy iterates.
    pub trajectory: Vec<f64>,
}

/// The shared cost f(x) = ||Wx - y||^2 + alpha x^T Q x - 2 beta 1^T x.
pub fn evaluate_cost(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    q: &DMatrix<f64>,
    beta: f64,
    x: &DVector<f64>,
) -> f64 {
    let r = w * x - y;
    let mut cost = r.norm_squared();
    if alpha != 0.0 {
        cost += alpha * (x.transpose() * q * x)[(0, 0)];
    }
    if beta != 0.0 {
        cost -= 2.0 * beta * x.sum();
    }
    cost
}

fn check_dims(w: &DMatrix<f64>, y: &DVector<f64>, q: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != y.len() {
        return Err(RtiError::DimensionMismatch(format!(
            "W has {} rows but y has {} entries",
            w.nrows(),
            y.len()
        )));
    }
    if q.nrows() != w.ncols() || q.ncols() != w.ncols() {
        return Err(RtiError::DimensionMismatch(format!(
            "Q is {}x{} but W has {} columns",
            q.nrows(),
            q.ncols(),
            w.ncols()
        )));
    }
    Ok(())
}

/// Solve (W^T W + alpha Q) x = W^T y + beta 1.
///
/// The system is factorized as symmetric positive definite; when that fails
/// at alpha = 0 and beta = 0, the minimum-norm least-squares solution is
/// returned instead (with a logged rank estimate).
fn solve_normal_equations(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    q: &DMatrix<f64>,
    beta: f64,
) -> Result<DVector<f64>> {
    check_dims(w, y, q)?;
    let n = w.ncols();
    let mut a = w.transpose() * w;
    if alpha != 0.0 {
        a += q * alpha;
    }
    let mut rhs = w.transpose() * y;
    if beta != 0.0 {
        rhs += DVector::from_element(n, beta);
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    if alpha == 0.0 && beta == 0.0 {
        let svd = w.clone().svd(true, true);
        let rank = svd.rank(1e-12 * w.amax().max(1.0));
        log::warn!(
            "normal equations singular (rank {rank} of {n}); returning the minimum-norm solution"
        );
        return svd
            .solve(y, 1e-12 * w.amax().max(1.0))
            .map_err(|_| RtiError::SingularSystem {
                context: "minimum-norm least squares".into(),
                rank,
                dim: n,
            });
    }
    let rank = a.svd(false, false).rank(1e-10);
    Err(RtiError::SingularSystem {
        context: "regularized normal equations".into(),
        rank,
        dim: n,
    })
}

fn finish(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    q: &DMatrix<f64>,
    beta: f64,
    x: DVector<f64>,
    active_set: Vec<usize>,
    policy: String,
    iterations: usize,
    trajectory: Vec<f64>,
) -> SceneEstimate {
    let residual_norm = (w * &x - y).norm();
    let cost = evaluate_cost(w, y, alpha, q, beta, &x);
    SceneEstimate {
        x,
        residual_norm,
        cost,
        active_set,
        policy,
        iterations,
        trajectory,
    }
}

/// Tikhonov-regularized least squares: x = (W^T W + alpha Q)^{-1} W^T y.
pub fn solve_regularized_ls(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    q: &RegularizerQ,
) -> Result<SceneEstimate> {
    solve_generic(w, y, alpha, q, 0.0)
}

/// Generic biased form: x = (W^T W + alpha Q)^{-1} (W^T y + beta 1).
pub fn solve_generic(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    q: &RegularizerQ,
    beta: f64,
) -> Result<SceneEstimate> {
    let x = solve_normal_equations(w, y, alpha, &q.q, beta)?;
    Ok(finish(
        w,
        y,
        alpha,
        &q.q,
        beta,
        x,
        Vec::new(),
        "generic".into(),
        1,
        Vec::new(),
    ))
}

/// Gaussian-prior MAP estimate:
/// x = (W^T W + sigma_n^2 C_x^{-1})^{-1} (W^T y + m sigma_n^2 C_x^{-1} 1).
pub fn solve_map_gaussian(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &CovariancePrior,
    sigma_n_sq: f64,
) -> Result<SceneEstimate> {
    check_dims(w, y, &prior.c_x)?;
    let n = w.ncols();
    let c_inv = prior
        .c_x
        .clone()
        .cholesky()
        .ok_or(RtiError::NonPositiveDefinitePrior)?
        .inverse();
    let reg = &c_inv * sigma_n_sq;
    let a = w.transpose() * w + &reg;
    let rhs = w.transpose() * y + &reg * DVector::from_element(n, prior.mean);
    let x = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| RtiError::SingularSystem {
            context: "Gaussian MAP system".into(),
            rank: a.svd(false, false).rank(1e-10),
            dim: n,
        })?;
    // Report cost in the equivalent Tikhonov parameterization (alpha = 1,
    // Q = sigma_n^2 C_x^{-1}) so estimates are comparable across solvers.
    Ok(finish(
        w,
        y,
        1.0,
        &reg,
        0.0,
        x,
        Vec::new(),
        "map_gaussian".into(),
        1,
        Vec::new(),
    ))
}

/// Exponential-prior MAP estimate: x = (W^T W)^{-1} (W^T y - (sigma_n^2/m) 1).
/// Entries may be negative; callers apply a negative-data policy.
pub fn solve_map_exponential(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_n_sq: f64,
    mean: f64,
) -> Result<SceneEstimate> {
    if !(mean > 0.0) {
        return Err(RtiError::InvalidSolverConfig(format!(
            "exponential prior mean must be > 0, got {mean}"
        )));
    }
    let n = w.ncols();
    let beta = -sigma_n_sq / mean;
    let a = w.transpose() * w;
    let rhs = w.transpose() * y + DVector::from_element(n, beta);
    let x = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| RtiError::SingularSystem {
            context: "exponential MAP without regularization".into(),
            rank: a.svd(false, false).rank(1e-10),
            dim: n,
        })?;
    let zero_q = DMatrix::zeros(n, n);
    Ok(finish(
        w,
        y,
        0.0,
        &zero_q,
        beta,
        x,
        Vec::new(),
        "map_exponential".into(),
        1,
        Vec::new(),
    ))
}

/// Truncation policies: clamp the image after solving (TruncateX) or clamp
/// the measurements before solving (TruncateY).
pub fn apply_negative_policy(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    q: &RegularizerQ,
    config: &SolverConfig,
) -> Result<SceneEstimate> {
    config.validate()?;
    match config.neg_policy {
        NegPolicy::TruncateX => {
            let base = solve_generic(w, y, config.alpha, q, config.beta)?;
            let active: Vec<usize> = base
                .x
                .iter()
                .enumerate()
                .filter(|(_, v)| **v < 0.0)
                .map(|(i, _)| i)
                .collect();
            let clamped = base.x.map(|v| v.max(0.0));
            Ok(finish(
                w,
                y,
                config.alpha,
                &q.q,
                config.beta,
                clamped,
                active,
                "truncate_x".into(),
                1,
                Vec::new(),
            ))
        }
        NegPolicy::TruncateY => {
            let y_clamped = y.map(|v| v.max(0.0));
            let x = solve_normal_equations(w, &y_clamped, config.alpha, &q.q, config.beta)?;
            Ok(finish(
                w,
                &y_clamped,
                config.alpha,
                &q.q,
                config.beta,
                x,
                Vec::new(),
                "truncate_y".into(),
                1,
                Vec::new(),
            ))
        }
        _ => Err(RtiError::InvalidSolverConfig(
            "apply_negative_policy requires TruncateX or TruncateY".into(),
        )),
    }
}

/// Column-removal method: solve, drop voxels that came back negative from W
/// and from every difference operator behind Q, re-solve on the reduced
/// support, repeat. Negatives remaining after the final round are clamped.
///
/// Returns the lowest-cost feasible iterate; the first candidate is exactly
/// the TruncateX solution, so this never does worse than truncation.
pub fn solve_constrained_iterative(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    q: &RegularizerQ,
    config: &SolverConfig,
) -> Result<SceneEstimate> {
    config.validate()?;
    let max_rounds = match config.neg_policy {
        NegPolicy::Iterative { max_rounds } => max_rounds,
        _ => DEFAULT_ITERATIVE_ROUNDS,
    };
    let n = w.ncols();
    let mut support: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, DVector<f64>, Vec<usize>, usize)> = None;
    let mut trajectory = Vec::new();
    let mut rounds = 0;

    for round in 1..=max_rounds {
        rounds = round;
        let (x_full, solved_support) = if support.len() == n {
            (
                solve_normal_equations(w, y, config.alpha, &q.q, config.beta)?,
                support.clone(),
            )
        } else {
            let w_red = w.select_columns(support.iter());
            let q_red = q.restrict(&support);
            let x_red = solve_normal_equations(&w_red, y, config.alpha, &q_red.q, config.beta)
                .map_err(|e| match e {
                    RtiError::SingularSystem { .. } => {
                        RtiError::ReducedSystemSingular { iteration: round }
                    }
                    other => other,
                })?;
            let mut x_full = DVector::zeros(n);
            for (k, &idx) in support.iter().enumerate() {
                x_full[idx] = x_red[k];
            }
            (x_full, support.clone())
        };
        trajectory.push(evaluate_cost(w, y, config.alpha, &q.q, config.beta, &x_full));

        let clamped = x_full.map(|v| v.max(0.0));
        let clamped_cost = evaluate_cost(w, y, config.alpha, &q.q, config.beta, &clamped);
        trajectory.push(clamped_cost);
        let active: Vec<usize> = (0..n)
            .filter(|i| !solved_support.contains(i) || x_full[*i] < 0.0)
            .collect();
        if best.as_ref().map_or(true, |(c, ..)| clamped_cost < *c) {
            best = Some((clamped_cost, clamped, active, round));
        }

        let negatives: Vec<usize> = solved_support
            .iter()
            .copied()
            .filter(|&i| x_full[i] < 0.0)
            .collect();
        if negatives.is_empty() {
            break;
        }
        support.retain(|i| !negatives.contains(i));
        if support.is_empty() {
            let zero = DVector::zeros(n);
            let zero_cost = evaluate_cost(w, y, config.alpha, &q.q, config.beta, &zero);
            if best.as_ref().map_or(true, |(c, ..)| zero_cost < *c) {
                best = Some((zero_cost, zero, (0..n).collect(), round));
            }
            break;
        }
    }

    let (_, x, active, _) = best.expect("at least one round always runs");
    Ok(finish(
        w,
        y,
        config.alpha,
        &q.q,
        config.beta,
        x,
        active,
        format!("iterative(rounds={rounds})"),
        rounds,
        trajectory,
    ))
}

/// Projected gradient from an explicit start point.
pub fn solve_pgm_from(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    q: &RegularizerQ,
    config: &SolverConfig,
    start: &DVector<f64>,
) -> Result<SceneEstimate> {
    config.validate()?;
    let (mu_explicit, iters) = match config.neg_policy {
        NegPolicy::Pgm { mu, iters } => (mu, iters),
        _ => (None, DEFAULT_PGM_ITERS),
    };
    check_dims(w, y, &q.q)?;
    let n = w.ncols();
    if start.len() != n {
        return Err(RtiError::DimensionMismatch(format!(
            "start point has {} entries, expected {n}",
            start.len()
        )));
    }
    let mut a = w.transpose() * w;
    if config.alpha != 0.0 {
        a += &q.q * config.alpha;
    }
    let mut b = w.transpose() * y;
    if config.beta != 0.0 {
        b += DVector::from_element(n, config.beta);
    }
    // Row-sum norm bounds the spectral norm for symmetric A, so 1/(2 |A|_inf)
    // guarantees descent; halving below is a safety net for explicit steps.
    let row_sum_norm = (0..a.nrows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let auto = mu_explicit.is_none();
    let mut mu = mu_explicit.unwrap_or_else(|| {
        if row_sum_norm > 0.0 {
            1.0 / (2.0 * row_sum_norm)
        } else {
            1.0
        }
    });

    let mut x = start.map(|v| v.max(0.0));
    let mut cost = evaluate_cost(w, y, config.alpha, &q.q, config.beta, &x);
    let mut trajectory = vec![cost];
    let mut performed = 0;
    for k in 1..=iters {
        let grad = (&a * &x - &b) * 2.0;
        let mut next = (&x - &grad * mu).map(|v| v.max(0.0));
        let mut next_cost = evaluate_cost(w, y, config.alpha, &q.q, config.beta, &next);
        if auto {
            let mut halvings = 0;
            while next_cost > cost && halvings < 60 {
                mu *= 0.5;
                next = (&x - &grad * mu).map(|v| v.max(0.0));
                next_cost = evaluate_cost(w, y, config.alpha, &q.q, config.beta, &next);
                halvings += 1;
            }
        } else if next_cost > cost + config.tolerance * (1.0 + cost.abs()) {
            return Err(RtiError::PgmDiverged { iteration: k, mu });
        }
        let step = (&next - &x).norm();
        x = next;
        cost = next_cost;
        trajectory.push(cost);
        performed = k;
        if step <= config.tolerance * (1.0 + x.norm()) {
            break;
        }
    }
    let active: Vec<usize> = x
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(finish(
        w,
        y,
        config.alpha,
        &q.q,
        config.beta,
        x,
        active,
        format!("pgm(mu={mu:.3e},iters={performed})"),
        performed,
        trajectory,
    ))
}

/// Projected gradient started from the TruncateX solution.
pub fn solve_pgm(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    q: &RegularizerQ,
    config: &SolverConfig,
) -> Result<SceneEstimate> {
    let start_cfg = SolverConfig {
        neg_policy: NegPolicy::TruncateX,
        ..config.clone()
    };
    let start = apply_negative_policy(w, y, q, &start_cfg)?;
    solve_pgm_from(w, y, q, config, &start.x)
}

/// Exact nonnegativity-constrained minimizer by support enumeration.
/// Exponential in N; fine for the toy sizes it exists for.
pub fn nnls_bruteforce_oracle(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    q: &RegularizerQ,
    beta: f64,
) -> Result<SceneEstimate> {
    check_dims(w, y, &q.q)?;
    let n = w.ncols();
    if n > ORACLE_MAX_VOXELS {
        return Err(RtiError::OracleTooLarge {
            n,
            max: ORACLE_MAX_VOXELS,
        });
    }
    let mut a = w.transpose() * w;
    if alpha != 0.0 {
        a += &q.q * alpha;
    }
    let mut b = w.transpose() * y;
    if beta != 0.0 {
        b += DVector::from_element(n, beta);
    }

    let zero = DVector::zeros(n);
    let mut best_x = zero.clone();
    let mut best_cost = evaluate_cost(w, y, alpha, &q.q, beta, &zero);

    for mask in 1u64..(1u64 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let a_sub = a.select_rows(support.iter()).select_columns(support.iter());
        let b_sub = b.select_rows(support.iter());
        let x_sub = match a_sub.clone().cholesky() {
            Some(c) => c.solve(&b_sub),
            None => {
                let svd = a_sub.clone().svd(true, true);
                match svd.solve(&b_sub, 1e-12) {
                    Ok(x) => {
                        // No stationary point on this face if the system is
                        // inconsistent.
                        if (&a_sub * &x - &b_sub).amax() > 1e-8 * (b_sub.amax().max(1.0)) {
                            continue;
                        }
                        x
                    }
                    Err(_) => continue,
                }
            }
        };
        if x_sub.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let mut x = DVector::zeros(n);
        for (k, &i) in support.iter().enumerate() {
            x[i] = x_sub[k].max(0.0);
        }
        let cost = evaluate_cost(w, y, alpha, &q.q, beta, &x);
        if cost < best_cost {
            best_cost = cost;
            best_x = x;
        }
    }
    let active: Vec<usize> = best_x
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(finish(
        w,
        y,
        alpha,
        &q.q,
        beta,
        best_x,
        active,
        "nnls_oracle".into(),
        1,
        Vec::new(),
    ))
}

/// Dispatch on the configured negative-data policy.
pub fn solve_with_policy(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    q: &RegularizerQ,
    config: &SolverConfig,
) -> Result<SceneEstimate> {
    config.validate()?;
    match config.neg_policy {
        NegPolicy::None => solve_generic(w, y, config.alpha, q, config.beta),
        NegPolicy::TruncateX | NegPolicy::TruncateY => apply_negative_policy(w, y, q, config),
        NegPolicy::Iterative { .. } => solve_constrained_iterative(w, y, q, config),
        NegPolicy::Pgm { .. } => solve_pgm(w, y, q, config),
    }
}
