//! Dyadic-epoch early stopping.
//!
//! Each epoch halves the failure probability, roughly doubles the main batch,
//! refits the base solver on the enlarged batch and stops as soon as the
//! empirical error estimate drops below the target accuracy. Batches are
//! only ever extended with fresh draws, never resampled.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::covariance_pe::{pe_covariance, pe_error_terms, ErrorEstimate, PeDataSplit};
use crate::covariance_qopt::{q_diag_cov, q_error_terms};
use crate::error::{Error, Result};
use crate::sampling::{Dataset, SampleSource};
use crate::solvers::{plugin_q, BaseSolver, SolverGuarantee};
use crate::tabular::{bfun, diag_norm, q_to_rows, QFn, ValueFn};

/// Default cap on the number of draws one run may consume.
pub const DEFAULT_MAX_SAMPLES: usize = 100_000_000;

/// `32 / (1-γ)²`.
pub fn base_size(discount: f64) -> f64 {
    32.0 / (1.0 - discount).powi(2)
}

/// Sizes for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch: usize,
    pub delta: f64,
    /// Per-side holdout size (zero for Q estimation).
    pub holdout: usize,
    pub batch: usize,
}

fn check_epoch(m: usize) {
    assert!(m >= 1, "epochs are numbered from 1");
}

/// Evaluation schedule: `δ_m = δ0 / 2^m`, `h_m = ⌈n0 ln(4|X|²/δ_m)⌉`,
/// `N_m = ⌈2^m n0 φ_f(δ_m)² ln(4|X|/δ_m)⌉`.
pub fn epoch_schedule(m: usize, delta0: f64, discount: f64, states: usize, guarantee: &SolverGuarantee) -> EpochPlan {
    check_epoch(m);
    let n0 = base_size(discount);
    let delta = delta0 / 2f64.powi(m as i32);
    let s = states as f64;
    let phi = guarantee.phi_f(delta);
    EpochPlan {
        epoch: m,
        delta,
        holdout: (n0 * (4.0 * s * s / delta).ln()).ceil() as usize,
        batch: (2f64.powi(m as i32) * n0 * phi * phi * (4.0 * s / delta).ln()).ceil() as usize,
    }
}

/// Q schedule: as for evaluation with `|X|` replaced by `D = |X||U|` in the
/// batch size and no holdout.
pub fn q_epoch_schedule(m: usize, delta0: f64, discount: f64, dims: usize, guarantee: &SolverGuarantee) -> EpochPlan {
    let plan = epoch_schedule(m, delta0, discount, dims, guarantee);
    EpochPlan { holdout: 0, ..plan }
}

/// One row of the per-epoch trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub delta_m: f64,
    #[serde(rename = "N_m")]
    pub n_m: usize,
    pub h_m: usize,
    pub eps_fast: f64,
    pub eps_slow: f64,
    pub cumulative_samples: usize,
    pub terminated: bool,
}

/// Appends trace rows, writing the header first if `header` is set.
pub fn write_trace<W: Write>(out: W, trial_id: u64, trace: &[EpochTrace], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record([
            "trial_id",
            "epoch",
            "delta_m",
            "N_m",
            "h_m",
            "eps_fast",
            "eps_slow",
            "cumulative_samples",
            "terminated",
        ])?;
    }
    for t in trace {
        w.serialize((
            trial_id,
            t.epoch,
            t.delta_m,
            t.n_m,
            t.h_m,
            t.eps_fast,
            t.eps_slow,
            t.cumulative_samples,
            t.terminated,
        ))?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one early-stopping run.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpireResult<T> {
    pub estimate: T,
    pub epochs_run: usize,
    /// Draws held by the final batches, `N_M + 2 h_M` (or `N_M` for Q).
    pub samples_used: usize,
    /// Draws spent on the plug-in initializer.
    pub init_samples: usize,
    pub predicted_error: ErrorEstimate,
    pub trace: Vec<EpochTrace>,
    pub terminated: bool,
}

impl<T> EmpireResult<T> {
    pub fn total_samples(&self) -> usize {
        self.samples_used + self.init_samples
    }
}

/// How the base solver is started in every epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// Plug-in estimate from `⌈2/(1-γ)²⌉` extra draws.
    #[default]
    PlugIn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpireConfig {
    pub epsilon: f64,
    pub delta_target: f64,
    pub max_samples: usize,
    pub init: Init,
}

impl EmpireConfig {
    pub fn new(epsilon: f64, delta_target: f64) -> Self {
        Self {
            epsilon,
            delta_target,
            max_samples: DEFAULT_MAX_SAMPLES,
            init: Init::PlugIn,
        }
    }

    pub fn delta0(&self) -> f64 {
        self.delta_target / 3.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if !(self.delta_target > 0.0 && self.delta_target < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta {} outside (0, 1)",
                self.delta_target
            )));
        }
        Ok(())
    }
}

/// `⌈2/(1-γ)²⌉`.
pub fn plugin_init_size(discount: f64) -> usize {
    (2.0 / (1.0 - discount).powi(2)).ceil() as usize
}

fn initial_q<S: SampleSource>(sampler: &mut S, init: Init, seed: u64) -> Result<(QFn, usize)> {
    let (n, m) = (sampler.states(), sampler.actions());
    match init {
        Init::Zero => Ok((QFn::zeros(n, m), 0)),
        Init::PlugIn => {
            let count = plugin_init_size(sampler.discount());
            let mut data = Dataset::new(n, m, seed);
            sampler.fill(&mut data, count);
            Ok((plugin_q(data.view(), sampler.discount())?, count))
        }
    }
}

fn grow<S: SampleSource>(sampler: &mut S, data: &mut Dataset, target: usize) {
    let have = data.len();
    if target > have {
        sampler.fill(data, target - have);
    }
}

struct EpochOutcome<T> {
    estimate: T,
    error: ErrorEstimate,
}

fn run_epochs<S, T, F>(
    sampler: &mut S,
    config: &EmpireConfig,
    init_samples: usize,
    plan: impl Fn(usize) -> EpochPlan,
    accept: fn(f64, f64) -> bool,
    mut epoch: F,
) -> Result<EmpireResult<T>>
where
    S: SampleSource,
    F: FnMut(&mut S, &EpochPlan) -> Result<EpochOutcome<T>>,
{
    let mut trace = Vec::new();
    let mut last: Option<EpochOutcome<T>> = None;
    let mut union = 0.0;
    for m in 1.. {
        let p = plan(m);
        let needed = init_samples + p.batch + 2 * p.holdout;
        if needed > config.max_samples {
            let Some(done) = last else {
                return Err(Error::BudgetExhausted {
                    budget: config.max_samples,
                    required: needed,
                });
            };
            log::warn!(
                "sample budget {} reached after {} epochs without termination",
                config.max_samples,
                m - 1
            );
            let prev = trace.last().map(|t: &EpochTrace| t.cumulative_samples).unwrap_or(0);
            return Ok(EmpireResult {
                estimate: done.estimate,
                epochs_run: m - 1,
                samples_used: prev - init_samples,
                init_samples,
                predicted_error: done.error,
                trace,
                terminated: false,
            });
        }
        union += 3.0 * p.delta;
        assert!(union <= config.delta_target * (1.0 + 1e-12), "union bound exceeded");

        let out = epoch(sampler, &p)?;
        let terminated = accept(out.error.total, config.epsilon);
        trace.push(EpochTrace {
            epoch: m,
            delta_m: p.delta,
            n_m: p.batch,
            h_m: p.holdout,
            eps_fast: out.error.leading,
            eps_slow: out.error.slow + out.error.bernstein,
            cumulative_samples: needed,
            terminated,
        });
        log::debug!(
            "epoch {m}: N={} h={} estimate={:.4e}",
            p.batch,
            p.holdout,
            out.error.total
        );
        if terminated {
            return Ok(EmpireResult {
                estimate: out.estimate,
                epochs_run: m,
                samples_used: p.batch + 2 * p.holdout,
                init_samples,
                predicted_error: out.error,
                trace,
                terminated: true,
            });
        }
        last = Some(out);
    }
    unreachable!("epoch loop only exits by returning")
}

/// Early-stopped policy evaluation on a single-action sampler.
pub fn empire_pe<S: SampleSource>(
    sampler: &mut S,
    solver: &dyn BaseSolver,
    guarantee: &SolverGuarantee,
    config: &EmpireConfig,
) -> Result<EmpireResult<ValueFn>> {
    config.validate()?;
    if sampler.actions() != 1 {
        return Err(crate::error::mismatch("1 action", sampler.actions()));
    }
    let (states, discount, bound) = (sampler.states(), sampler.discount(), sampler.reward_bound());
    let (init, init_samples) = initial_q(sampler, config.init, 0)?;
    let mut left = Dataset::new(states, 1, 0);
    let mut main = Dataset::new(states, 1, 0);
    let mut right = Dataset::new(states, 1, 0);
    let delta0 = config.delta0();
    run_epochs(
        sampler,
        config,
        init_samples,
        |m| epoch_schedule(m, delta0, discount, states, guarantee),
        |total, eps| total < eps,
        |sampler, p| {
            grow(sampler, &mut left, p.holdout);
            grow(sampler, &mut main, p.batch);
            grow(sampler, &mut right, p.holdout);
            let q = solver.solve(main.view(), discount, p.delta, &init)?;
            let v_hat = ValueFn::from_column_slice(q.as_slice());
            let split = PeDataSplit::new(main.view(), left.view(), right.view())?;
            let sandwich = pe_covariance(&v_hat, &split, discount)?;
            let error = pe_error_terms(
                diag_norm(&sandwich.matrix)?,
                bfun(v_hat.as_slice(), bound, discount),
                p.batch,
                states,
                p.delta,
                guarantee,
                discount,
            );
            Ok(EpochOutcome { estimate: v_hat, error })
        },
    )
}

/// Early-stopped estimation of the optimal Q-function.
pub fn empire_q<S: SampleSource>(
    sampler: &mut S,
    solver: &dyn BaseSolver,
    guarantee: &SolverGuarantee,
    config: &EmpireConfig,
) -> Result<EmpireResult<QFn>> {
    config.validate()?;
    let (states, actions, discount, bound) = (
        sampler.states(),
        sampler.actions(),
        sampler.discount(),
        sampler.reward_bound(),
    );
    let dims = states * actions;
    let (init, init_samples) = initial_q(sampler, config.init, 0)?;
    let mut main = Dataset::new(states, actions, 0);
    let delta0 = config.delta0();
    run_epochs(
        sampler,
        config,
        init_samples,
        |m| q_epoch_schedule(m, delta0, discount, dims, guarantee),
        |total, eps| total <= eps,
        |sampler, p| {
            grow(sampler, &mut main, p.batch);
            let q_hat = solver.solve(main.view(), discount, p.delta, &init)?;
            let cov = q_diag_cov(&q_hat, main.view(), discount)?;
            let error = q_error_terms(
                cov.max_entry(),
                bfun(&q_to_rows(&q_hat), bound, discount),
                p.batch,
                dims,
                p.delta,
                guarantee,
                discount,
            );
            Ok(EpochOutcome { estimate: q_hat, error })
        },
    )
}

/// Everything the epoch bound depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochBoundInputs {
    /// `diag_norm` of the exact sandwiched covariance (not its square root).
    pub complexity: f64,
    pub b_star: f64,
    pub epsilon: f64,
    pub delta0: f64,
    pub discount: f64,
    pub c0: f64,
    pub states: usize,
}

/// `log2 max{(1-γ)² ν / ε², c0 (1-γ)² / (4ε) + (1-γ) b(V*) / ε · √ln(8|X|/δ0)}`.
pub fn epoch_bound(inputs: &EpochBoundInputs) -> f64 {
    let h = 1.0 - inputs.discount;
    let e = inputs.epsilon;
    let first = h * h * inputs.complexity / (e * e);
    let second = inputs.c0 * h * h / (4.0 * e)
        + h * inputs.b_star / e * (8.0 * inputs.states as f64 / inputs.delta0).ln().sqrt();
    first.max(second).log2()
}

/// `max{φ_f²/ε² · ν, (1/ε)[φ_s + b(V*)/(1-γ) √ln(4|X|/δ_M)]}` with the caller
/// supplying `φ_f(δ_M)` and `φ_s(2δ_M)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_bound_shape(
    phi_f: f64,
    phi_s: f64,
    complexity: f64,
    b_star: f64,
    discount: f64,
    epsilon: f64,
    states: usize,
    delta_m: f64,
) -> f64 {
    let first = phi_f * phi_f / (epsilon * epsilon) * complexity;
    let second = (phi_s + b_star / (1.0 - discount) * (4.0 * states as f64 / delta_m).ln().sqrt()) / epsilon;
    first.max(second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{GenerativeSampler, RewardModel};
    use crate::solvers::{PlugIn, Vrql};
    use crate::tabular::{solve_q_exact, solve_value_exact, Mdp, Mrp};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn deterministic_mrp(gamma: f64) -> Mrp {
        Mrp::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn schedule_examples() {
        assert_relative_eq!(base_size(0.9), 3200.0, epsilon = 1e-9);
        let g = SolverGuarantee::vrql_default(2, 0.9, 8).unwrap();
        let p = epoch_schedule(1, 0.3 / 3.0, 0.9, 2, &g);
        assert_relative_eq!(p.delta, 0.05, epsilon = 1e-15);
        // ⌈3200 ln 320⌉ = ⌈18458.3…⌉
        assert_eq!(p.holdout, 18459);
        let mut prev = p;
        for m in 2..12 {
            let next = epoch_schedule(m, 0.1, 0.9, 2, &g);
            assert!(next.batch > prev.batch);
            assert_relative_eq!(next.delta, prev.delta / 2.0, epsilon = 1e-18);
            prev = next;
        }
        let total: f64 = (1..60).map(|m| epoch_schedule(m, 0.1, 0.9, 2, &g).delta).sum();
        assert!(total <= 0.1);
    }

    proptest! {
        #[test]
        fn epoch_bound_monotone_in_epsilon(eps in 0.001f64..1.0, nu in 0.0f64..100.0, b in 0.0f64..10.0) {
            let base = EpochBoundInputs { complexity: nu, b_star: b, epsilon: eps, delta0: 0.05, discount: 0.9, c0: 10.0, states: 2 };
            let wider = EpochBoundInputs { epsilon: eps * 1.5, ..base };
            prop_assert!(epoch_bound(&wider) <= epoch_bound(&base));
        }
    }

    #[test]
    fn epoch_bound_examples() {
        let base = EpochBoundInputs {
            complexity: 1e4,
            b_star: 1.0,
            epsilon: 0.01,
            delta0: 0.1,
            discount: 0.9,
            c0: 10.0,
            states: 2,
        };
        let doubled = EpochBoundInputs { epsilon: 0.02, ..base };
        assert!(epoch_bound(&base) - epoch_bound(&doubled) >= 1.0);
        assert!(epoch_bound(&base).is_finite());
    }

    #[test]
    fn deterministic_instance_stops_once_slow_terms_clear() {
        let gamma = 0.8;
        let mrp = deterministic_mrp(gamma);
        let v_star = solve_value_exact(&mrp).unwrap();
        let g = SolverGuarantee::vrql_default(2, gamma, 8).unwrap();
        let mut sampler = GenerativeSampler::for_mrp(&mrp, RewardModel::deterministic(), 4);
        let cfg = EmpireConfig::new(0.01, 0.1);
        let res = empire_pe(&mut sampler, &PlugIn, &g, &cfg).unwrap();
        assert!(res.terminated);
        assert!(res.predicted_error.total < 0.01);
        assert!(res.trace.iter().all(|t| t.eps_fast < 1e-9));
        for t in &res.trace[..res.trace.len() - 1] {
            assert!(t.eps_slow >= 0.01);
        }
        assert!((&res.estimate - &v_star).amax() < 1e-8);
        assert_eq!(
            res.samples_used,
            res.trace.last().unwrap().n_m + 2 * res.trace.last().unwrap().h_m
        );
    }

    #[test]
    fn budget_handling() {
        let gamma = 0.8;
        let mrp = deterministic_mrp(gamma);
        let g = SolverGuarantee::vrql_default(2, gamma, 8).unwrap();
        let mut sampler = GenerativeSampler::for_mrp(&mrp, RewardModel::deterministic(), 4);
        let cfg = EmpireConfig {
            max_samples: 100,
            ..EmpireConfig::new(0.01, 0.1)
        };
        assert!(matches!(
            empire_pe(&mut sampler, &PlugIn, &g, &cfg),
            Err(Error::BudgetExhausted { .. })
        ));

        let first = epoch_schedule(1, 0.1 / 3.0, gamma, 2, &g);
        let cfg = EmpireConfig {
            max_samples: plugin_init_size(gamma) + first.batch + 2 * first.holdout,
            ..EmpireConfig::new(1e-6, 0.1)
        };
        let res = empire_pe(&mut sampler, &PlugIn, &g, &cfg).unwrap();
        assert!(!res.terminated);
        assert_eq!(res.epochs_run, 1);
    }

    #[test]
    fn deterministic_q_instance() {
        let gamma = 0.8;
        let mdp = Mdp::new(
            vec![
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]),
            ],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            gamma,
        )
        .unwrap();
        let q_star = solve_q_exact(&mdp, 1e-13).unwrap();
        let g = SolverGuarantee::vrql_default(4, gamma, 8).unwrap();
        let mut sampler = GenerativeSampler::for_mdp(&mdp, RewardModel::deterministic(), 9);
        let res = empire_q(&mut sampler, &Vrql::default(), &g, &EmpireConfig::new(0.05, 0.1)).unwrap();
        assert!(res.terminated);
        assert!(res.trace.iter().all(|t| t.eps_fast < 1e-6 && t.h_m == 0));
        assert!((&res.estimate - &q_star).amax() < 1e-6);
    }

    #[test]
    fn batches_are_augmented_not_resampled() {
        let mdp = Mdp::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.3, 0.7])],
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            0.5,
        )
        .unwrap();
        let mut a = GenerativeSampler::for_mdp(&mdp, RewardModel::uniform(0.5).unwrap(), 1);
        let mut d = Dataset::new(2, 1, 1);
        grow(&mut a, &mut d, 10);
        let prefix = d.clone();
        grow(&mut a, &mut d, 25);
        assert_eq!(d.len(), 25);
        assert_eq!(
            d.view().range(0..10).get(3).next_state(1),
            prefix.view().get(3).next_state(1)
        );
        grow(&mut a, &mut d, 5);
        assert_eq!(d.len(), 25);
    }

    #[test]
    fn trace_csv_layout() {
        let t = EpochTrace {
            epoch: 1,
            delta_m: 0.05,
            n_m: 10,
            h_m: 3,
            eps_fast: 0.5,
            eps_slow: 0.25,
            cumulative_samples: 16,
            terminated: false,
        };
        let mut out = Vec::new();
        write_trace(&mut out, 7, &[t], true).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "trial_id,epoch,delta_m,N_m,h_m,eps_fast,eps_slow,cumulative_samples,terminated\n7,1,0.05,10,3,0.5,0.25,16,false\n"
        );
    }
}
