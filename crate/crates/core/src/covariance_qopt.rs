//! Data-dependent error estimates for the optimal Q-function.
//!
//! Only the diagonal of the one-step covariance is estimated, from the same
//! batch that produced `Q̂`. The resolvent factor is replaced by its crude
//! bound `1 / (1-γ)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance_pe::{row_variances, ErrorEstimate, Precondition};
use crate::error::{mismatch, Error, Result};
use crate::sampling::{RewardModel, Samples};
use crate::solvers::SolverGuarantee;
use crate::tabular::{
    bfun, diag_norm, policy_q_values, q_to_rows, reduce_to_mrp, resolvent, solve_value_exact, state_max, Mdp, Policy,
    QFn,
};

/// Largest number of deterministic policies the exact oracle enumerates.
pub const POLICY_LIMIT: u128 = 10_000;

pub type QErrorEstimate = ErrorEstimate;

/// Diagonal covariance, one entry per `(x, u)` in row order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QDiagCov {
    pub diag: Vec<f64>,
}

impl QDiagCov {
    pub fn max_entry(&self) -> f64 {
        self.diag.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Per-entry V-statistic of `T̂_i(q̂)(x, u)` across draws.
pub fn q_diag_cov(q_hat: &QFn, data: Samples<'_>, discount: f64) -> Result<QDiagCov> {
    if q_hat.shape() != (data.states(), data.actions()) {
        return Err(mismatch(
            format!("{}x{}", data.states(), data.actions()),
            format!("{:?}", q_hat.shape()),
        ));
    }
    Ok(QDiagCov {
        diag: row_variances(&state_max(q_hat), data, discount)?,
    })
}

/// Minimum batch size for the Q bound, `φ_f(δ)² · 32 ln(4D/δ) / (1-γ)²`.
pub fn q_min_samples(guarantee: &SolverGuarantee, dims: usize, delta: f64, discount: f64) -> usize {
    let phi = guarantee.phi_f(delta);
    (phi * phi * 32.0 * (4.0 * dims as f64 / delta).ln() / (1.0 - discount).powi(2)).ceil() as usize
}

/// The three terms of the Q error estimate given the largest diagonal
/// covariance entry and `b(q̂)`.
pub fn q_error_terms(
    max_var: f64,
    b_hat: f64,
    n: usize,
    dims: usize,
    delta: f64,
    guarantee: &SolverGuarantee,
    discount: f64,
) -> QErrorEstimate {
    let nf = n as f64;
    let h = 1.0 - discount;
    let phi = guarantee.phi_f(delta);
    let leading = 2.0 * 2f64.sqrt() * phi / nf.sqrt() * max_var.max(0.0).sqrt() / h;
    let slow = 2.0 * guarantee.phi_s(delta) / nf;
    let bernstein = 8.0 * b_hat / h * phi * (2.0 * (dims as f64 / delta).ln()).sqrt() / (nf - 1.0);
    ErrorEstimate {
        total: leading + slow + bernstein,
        leading,
        slow,
        bernstein,
        delta,
        n,
    }
}

/// Empirical `ℓ∞` error estimate for `q_hat`, computed on the batch that
/// produced it.
pub fn q_error_estimate(
    q_hat: &QFn,
    data: Samples<'_>,
    delta: f64,
    guarantee: &SolverGuarantee,
    reward_bound: f64,
    discount: f64,
    precondition: Precondition,
) -> Result<QErrorEstimate> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta {delta} outside (0, 1)")));
    }
    let n = data.len();
    let dims = data.rows();
    let required = q_min_samples(guarantee, dims, delta, discount).max(2);
    if n < required {
        match precondition {
            Precondition::Enforce => return Err(Error::InsufficientSamples { required, available: n }),
            Precondition::Force => {
                log::warn!("Q error estimate forced with {n} samples, below the required {required}")
            }
        }
    }
    let cov = q_diag_cov(q_hat, data, discount)?;
    Ok(q_error_terms(
        cov.max_entry(),
        bfun(&q_to_rows(q_hat), reward_bound, discount),
        n,
        dims,
        delta,
        guarantee,
        discount,
    ))
}

/// `max_entry^{1/2} / (1-γ)`.
pub fn q_conservative_bound(diag: &[f64], discount: f64) -> Result<f64> {
    if let Some(v) = diag.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("negative variance {v}")));
    }
    Ok(diag.iter().fold(0.0f64, |a, &b| a.max(b)).sqrt() / (1.0 - discount))
}

/// Exact per-`(x, u)` variance of `T̂(q)` under the generative model, in row
/// order.
pub fn exact_q_diag_cov(mdp: &Mdp, q: &QFn, rewards: &RewardModel) -> Result<Vec<f64>> {
    if q.shape() != (mdp.states(), mdp.actions()) {
        return Err(mismatch(
            format!("{}x{}", mdp.states(), mdp.actions()),
            format!("{:?}", q.shape()),
        ));
    }
    let vmax = state_max(q);
    let gamma = mdp.discount();
    let n = mdp.states();
    let mut out = Vec::with_capacity(n * mdp.actions());
    for x in 0..n {
        for u in 0..mdp.actions() {
            let p = mdp.transition(u);
            let mean: f64 = (0..n).map(|y| p[(x, y)] * vmax[y]).sum();
            let var: f64 = (0..n).map(|y| p[(x, y)] * (vmax[y] - mean).powi(2)).sum();
            out.push(gamma * gamma * var + rewards.variance());
        }
    }
    Ok(out)
}

fn enumerate_policies(states: usize, actions: usize) -> Result<Vec<Policy>> {
    let total = (actions as u128).checked_pow(states as u32).unwrap_or(u128::MAX);
    if total > POLICY_LIMIT {
        return Err(Error::EnumerationBudget {
            required: total,
            limit: POLICY_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(total as usize);
    for mut code in 0..total {
        let mut acts = vec![0; states];
        for a in acts.iter_mut() {
            *a = (code % actions as u128) as usize;
            code /= actions as u128;
        }
        out.push(Policy::new(acts, actions)?);
    }
    Ok(out)
}

/// Deterministic policies whose value is within `tol` of the best value in
/// every state.
pub fn optimal_policies(mdp: &Mdp, tol: f64) -> Result<Vec<Policy>> {
    let policies = enumerate_policies(mdp.states(), mdp.actions())?;
    let values = policies
        .iter()
        .map(|pi| solve_value_exact(&reduce_to_mrp(mdp, pi)?))
        .collect::<Result<Vec<_>>>()?;
    let n = mdp.states();
    let best: Vec<f64> = (0..n)
        .map(|x| values.iter().map(|v| v[x]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(policies
        .into_iter()
        .zip(&values)
        .filter(|(_, v)| (0..n).all(|x| best[x] - v[x] <= tol))
        .map(|(pi, _)| pi)
        .collect())
}

/// Default optimal-set tolerance `1e-9 / (1-γ)`.
pub fn default_policy_tol(discount: f64) -> f64 {
    1e-9 / (1.0 - discount)
}

/// Exact complexity of estimating `Q*`: the largest, over optimal policies
/// `π`, of `diag_norm((I - γP^π)^{-1} Cov(T̂(Q*)) (I - γP^π)^{-ᵀ})^{1/2}`,
/// with `P^π` the state-action chain under `π`.
pub fn exact_q_complexity(mdp: &Mdp, rewards: &RewardModel, tol: f64) -> Result<f64> {
    let optimal = optimal_policies(mdp, tol)?;
    let q_star = policy_q_values(mdp, &optimal[0])?;
    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(exact_q_diag_cov(mdp, &q_star, rewards)?));
    let (n, m) = (mdp.states(), mdp.actions());
    let d = n * m;
    let mut worst = 0.0f64;
    for pi in &optimal {
        // (x, u) -> (x', π(x'))
        let chain = DMatrix::from_fn(d, d, |row, col| {
            let (x, u) = (row / m, row % m);
            let (y, v) = (col / m, col % m);
            if pi.action(y) == v {
                mdp.transition(u)[(x, y)]
            } else {
                0.0
            }
        });
        let r = resolvent(&chain, mdp.discount())?;
        worst = worst.max(diag_norm(&(&r * &cov * r.transpose()))?.sqrt());
    }
    Ok(worst)
}

/// `[q̂(x, u) - E, q̂(x, u) + E]` in row order.
pub fn q_confidence_region(q_hat: &QFn, err: &QErrorEstimate) -> Vec<(f64, f64)> {
    q_to_rows(q_hat)
        .into_iter()
        .map(|q| (q - err.total, q + err.total))
        .collect()
}
