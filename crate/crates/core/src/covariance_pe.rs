//! Data-dependent error estimates for policy evaluation.
//!
//! The main batch gives the value estimate and a V-statistic estimate of the
//! one-step covariance; two disjoint holdout batches estimate the resolvent
//! factors on either side of it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::sampling::{RewardModel, Samples};
use crate::solvers::SolverGuarantee;
use crate::tabular::{bfun, diag_norm, resolvent, solve_value_exact, Mrp, ValueFn};

/// Main batch plus two holdout batches, all over the same single-action model.
#[derive(Clone, Copy, Debug)]
pub struct PeDataSplit<'a> {
    pub main: Samples<'a>,
    pub holdout_left: Samples<'a>,
    pub holdout_right: Samples<'a>,
}

impl<'a> PeDataSplit<'a> {
    pub fn new(main: Samples<'a>, holdout_left: Samples<'a>, holdout_right: Samples<'a>) -> Result<Self> {
        for part in [&holdout_left, &holdout_right] {
            if (part.states(), part.actions()) != (main.states(), main.actions()) {
                return Err(mismatch(
                    format!("{}x{}", main.states(), main.actions()),
                    format!("{}x{}", part.states(), part.actions()),
                ));
            }
        }
        if main.actions() != 1 {
            return Err(mismatch("1 action", main.actions()));
        }
        Ok(Self {
            main,
            holdout_left,
            holdout_right,
        })
    }

    /// Splits consecutive draws into `[main n | left h | right h]`.
    pub fn from_contiguous(data: Samples<'a>, n: usize, h: usize) -> Result<Self> {
        if data.len() < n + 2 * h {
            return Err(Error::InsufficientSamples {
                required: n + 2 * h,
                available: data.len(),
            });
        }
        Self::new(data.range(0..n), data.range(n..n + h), data.range(n + h..n + 2 * h))
    }

    /// Experimental: uses one holdout batch for both resolvent factors.
    pub fn single_holdout(main: Samples<'a>, holdout: Samples<'a>) -> Result<Self> {
        Self::new(main, holdout, holdout)
    }

    pub fn states(&self) -> usize {
        self.main.states()
    }
}

/// Holdout size per side, `2 ⌈32 ln(8|X|²/δ) / (1-γ)²⌉`.
pub fn holdout_size(states: usize, delta: f64, discount: f64) -> usize {
    let s = states as f64;
    2 * (32.0 * (8.0 * s * s / delta).ln() / (1.0 - discount).powi(2)).ceil() as usize
}

/// Average of the one-hot transition matrices of `samples` (single action).
pub fn mean_transition(samples: Samples<'_>) -> Result<DMatrix<f64>> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples {
            required: 1,
            available: 0,
        });
    }
    if samples.actions() != 1 {
        return Err(mismatch("1 action", samples.actions()));
    }
    let n = samples.states();
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for s in samples.iter() {
        for x in 0..n {
            counts[(x, s.next_state(x))] += 1.0;
        }
    }
    Ok(counts / samples.len() as f64)
}

/// Per-side holdout means `(Z̄_1, Z̄_2)`.
pub fn holdout_means(split: &PeDataSplit<'_>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok((
        mean_transition(split.holdout_left)?,
        mean_transition(split.holdout_right)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovProvenance {
    VStatistic,
    Sandwich,
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    pub provenance: CovProvenance,
}

/// Full sample covariance of `z_j = R_j + γ vmax(next_j)` across draws,
/// `D × D` with `D` the number of rows per draw.
///
/// This equals the pairwise V-statistic
/// `1/(n(n-1)) Σ_{j<k} (z_j - z_k)(z_j - z_k)ᵀ`, computed in one centred pass.
pub fn row_covariance(vmax: &[f64], samples: Samples<'_>, discount: f64) -> Result<DMatrix<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            available: n,
        });
    }
    let d = samples.rows();
    let mut z = DMatrix::<f64>::zeros(d, n);
    let mut buf = vec![0.0; d];
    for (j, s) in samples.iter().enumerate() {
        s.bellman_into(vmax, discount, &mut buf);
        z.column_mut(j).copy_from_slice(&buf);
    }
    let mean = z.column_mean();
    for mut col in z.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = &z * z.transpose() / (n - 1) as f64;
    // exact symmetry regardless of summation order
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(cov)
}

/// Per-row sample variances of `z_j`; the diagonal of [`row_covariance`]
/// in `O(n D)` time.
pub fn row_variances(vmax: &[f64], samples: Samples<'_>, discount: f64) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            available: n,
        });
    }
    let d = samples.rows();
    let mut buf = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    // Welford updates
    for (j, s) in samples.iter().enumerate() {
        s.bellman_into(vmax, discount, &mut buf);
        let k = (j + 1) as f64;
        for r in 0..d {
            let delta = buf[r] - mean[r];
            mean[r] += delta / k;
            m2[r] += delta * (buf[r] - mean[r]);
        }
    }
    Ok(m2.into_iter().map(|v| (v / (n - 1) as f64).max(0.0)).collect())
}

/// V-statistic estimate of `Cov(T̂(v̂))` from the main batch.
pub fn v_statistic_cov(v_hat: &ValueFn, main: Samples<'_>, discount: f64) -> Result<CovEstimate> {
    if main.actions() != 1 || v_hat.len() != main.states() {
        return Err(mismatch(
            format!("{} states, 1 action", v_hat.len()),
            format!("{}x{}", main.states(), main.actions()),
        ));
    }
    Ok(CovEstimate {
        matrix: row_covariance(v_hat.as_slice(), main, discount)?,
        provenance: CovProvenance::VStatistic,
    })
}

/// `(I - γZ̄_1)^{-1} Σ̂ (I - γZ̄_2)^{-ᵀ}`.
pub fn sandwich_estimate(
    cov: &CovEstimate,
    z_left: &DMatrix<f64>,
    z_right: &DMatrix<f64>,
    discount: f64,
) -> Result<CovEstimate> {
    let n = cov.matrix.nrows();
    for z in [z_left, z_right] {
        if z.shape() != (n, n) {
            return Err(mismatch(format!("{n}x{n}"), format!("{:?}", z.shape())));
        }
    }
    let left = resolvent(z_left, discount)?;
    let right = resolvent(z_right, discount)?;
    Ok(CovEstimate {
        matrix: left * &cov.matrix * right.transpose(),
        provenance: CovProvenance::Sandwich,
    })
}

/// An empirical error bound split into its three summands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub total: f64,
    pub leading: f64,
    pub slow: f64,
    pub bernstein: f64,
    pub delta: f64,
    pub n: usize,
}

impl ErrorEstimate {
    fn from_parts(leading: f64, slow: f64, bernstein: f64, delta: f64, n: usize) -> Self {
        Self {
            total: leading + slow + bernstein,
            leading,
            slow,
            bernstein,
            delta,
            n,
        }
    }
}

/// Whether a violated sample-size precondition is an error or a warning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precondition {
    #[default]
    Enforce,
    Force,
}

/// Minimum main-batch size for the evaluation bound,
/// `φ_f(δ)² · 192 ln(8|X|²/δ) / (1-γ)²`.
pub fn pe_min_samples(guarantee: &SolverGuarantee, states: usize, delta: f64, discount: f64) -> usize {
    let s = states as f64;
    let phi = guarantee.phi_f(delta);
    (phi * phi * 24.0 * 8.0 * (8.0 * s * s / delta).ln() / (1.0 - discount).powi(2)).ceil() as usize
}

/// The three terms of the evaluation error estimate given
/// `diag_norm(Σ̂_n)` and `b(v̂)`.
#[allow(clippy::too_many_arguments)]
pub fn pe_error_terms(
    sandwich_diag_norm: f64,
    b_hat: f64,
    n: usize,
    states: usize,
    delta: f64,
    guarantee: &SolverGuarantee,
    discount: f64,
) -> ErrorEstimate {
    let nf = n as f64;
    let leading = 2.0 * 6f64.sqrt() * guarantee.phi_f(delta) / nf.sqrt() * sandwich_diag_norm.max(0.0).sqrt();
    let slow = 2.0 * guarantee.phi_s(delta) / nf;
    let bernstein = 6.0 * b_hat / (1.0 - discount) * (8.0 * states as f64 / delta).ln().sqrt() / (nf - 1.0);
    ErrorEstimate::from_parts(leading, slow, bernstein, delta, n)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("delta {delta} outside (0, 1)")))
    }
}

/// Sandwiched covariance estimate `Σ̂_n` for a value estimate.
pub fn pe_covariance(v_hat: &ValueFn, split: &PeDataSplit<'_>, discount: f64) -> Result<CovEstimate> {
    let (z1, z2) = holdout_means(split)?;
    sandwich_estimate(&v_statistic_cov(v_hat, split.main, discount)?, &z1, &z2, discount)
}

/// Empirical `ℓ∞` error estimate for `v_hat` computed from `split.main`.
pub fn pe_error_estimate(
    v_hat: &ValueFn,
    split: &PeDataSplit<'_>,
    delta: f64,
    guarantee: &SolverGuarantee,
    reward_bound: f64,
    discount: f64,
    precondition: Precondition,
) -> Result<ErrorEstimate> {
    check_delta(delta)?;
    let n = split.main.len();
    let required = pe_min_samples(guarantee, split.states(), delta, discount).max(2);
    if n < required {
        match precondition {
            Precondition::Enforce => return Err(Error::InsufficientSamples { required, available: n }),
            Precondition::Force => {
                log::warn!("evaluation error estimate forced with {n} samples, below the required {required}");
                if n < 2 {
                    return Err(Error::InsufficientSamples {
                        required: 2,
                        available: n,
                    });
                }
            }
        }
    }
    let sandwich = pe_covariance(v_hat, split, discount)?;
    Ok(pe_error_terms(
        diag_norm(&sandwich.matrix)?,
        bfun(v_hat.as_slice(), reward_bound, discount),
        n,
        split.states(),
        delta,
        guarantee,
        discount,
    ))
}

/// `[v̂(x) - E, v̂(x) + E]` for every state.
pub fn pe_confidence_region(v_hat: &ValueFn, err: &ErrorEstimate) -> Vec<(f64, f64)> {
    v_hat.iter().map(|&v| (v - err.total, v + err.total)).collect()
}

/// Exact `Cov(T̂(v))` under the generative model. Rows are independent, so
/// the matrix is diagonal: `γ² Var_{P(x,·)}(v) + Var(reward noise)`.
pub fn bellman_eval_covariance(mrp: &Mrp, v: &ValueFn, rewards: &RewardModel) -> Result<DMatrix<f64>> {
    let n = mrp.states();
    if v.len() != n {
        return Err(mismatch(n, v.len()));
    }
    let gamma = mrp.discount();
    let p = mrp.transition();
    Ok(DMatrix::from_fn(n, n, |x, y| {
        if x != y {
            return 0.0;
        }
        let mean: f64 = (0..n).map(|j| p[(x, j)] * v[j]).sum();
        let var: f64 = (0..n).map(|j| p[(x, j)] * (v[j] - mean).powi(2)).sum();
        gamma * gamma * var + rewards.variance()
    }))
}

/// `(I - γP)^{-1} Cov(T̂(V*)) (I - γP)^{-ᵀ}`.
pub fn exact_pe_sandwich(mrp: &Mrp, rewards: &RewardModel) -> Result<CovEstimate> {
    let v = solve_value_exact(mrp)?;
    let cov = bellman_eval_covariance(mrp, &v, rewards)?;
    let r = resolvent(mrp.transition(), mrp.discount())?;
    Ok(CovEstimate {
        matrix: &r * cov * r.transpose(),
        provenance: CovProvenance::Exact,
    })
}

/// `diag_norm` of the exact sandwich, square-rooted.
pub fn exact_pe_complexity(mrp: &Mrp, rewards: &RewardModel) -> Result<f64> {
    Ok(diag_norm(&exact_pe_sandwich(mrp, rewards)?.matrix)?.sqrt())
}

/// Deviation radius `√(2 ln(1/δ) / (n-1))` for empirical standard deviations
/// of `[0, 1]`-valued variables.
pub fn bernstein_radius(n: usize, delta: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            available: n,
        });
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta {delta} outside (0, 1]")));
    }
    Ok((2.0 * (1.0 / delta).ln() / (n - 1) as f64).sqrt())
}
