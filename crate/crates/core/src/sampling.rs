//! Generative observation model.
//!
//! One draw gives, for every state (or state-action pair), a noisy reward and
//! a single next state sampled from the corresponding transition row. Next
//! states are stored as indices; the one-hot matrices are only built on
//! request.
//!
//! Rows are ordered `x * |U| + u`, matching the row-major layout of a
//! `|X| × |U|` Q-function.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::tabular::{Mdp, Mrp, QFn, ValueFn};

/// Per-trial RNG substream seed.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Deterministic,
    UniformBounded,
}

/// Reward observation model. `bound` is the declared half-width `r̄` of the
/// noise support; it also enters the error estimates through `b(·)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub kind: NoiseKind,
    pub bound: f64,
}

impl RewardModel {
    pub fn deterministic() -> Self {
        Self {
            kind: NoiseKind::Deterministic,
            bound: 0.0,
        }
    }

    /// Zero-mean noise uniform on `[-bound, bound]`.
    pub fn uniform(bound: f64) -> Result<Self> {
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reward bound {bound} must be finite and >= 0"
            )));
        }
        Ok(Self {
            kind: NoiseKind::UniformBounded,
            bound,
        })
    }

    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Deterministic => 0.0,
            NoiseKind::UniformBounded if self.bound == 0.0 => 0.0,
            NoiseKind::UniformBounded => {
                let e = rng.gen_range(-self.bound..=self.bound);
                assert!(e.abs() <= self.bound, "reward noise escaped its bound");
                e
            }
        }
    }

    /// Variance of a single reward observation.
    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::Deterministic => 0.0,
            NoiseKind::UniformBounded => self.bound * self.bound / 3.0,
        }
    }
}

/// Picks the first index whose running probability mass exceeds `u`.
fn pick<'a>(probs: impl Iterator<Item = &'a f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last_positive = j;
        }
        if u < acc {
            return j;
        }
    }
    last_positive
}

/// One generative draw from an MRP.
#[derive(Clone, Debug, PartialEq)]
pub struct MrpSample {
    pub noisy_reward: ValueFn,
    pub next_state: Vec<usize>,
}

impl MrpSample {
    /// The `|X| × |X|` 0/1 matrix with a single one per row.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let n = self.next_state.len();
        let mut z = DMatrix::zeros(n, n);
        for (x, &y) in self.next_state.iter().enumerate() {
            z[(x, y)] = 1.0;
        }
        z
    }
}

/// One generative draw from an MDP. `next_state` is indexed `x * |U| + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpSample {
    pub noisy_reward: QFn,
    pub next_state: Vec<usize>,
}

impl MdpSample {
    pub fn actions(&self) -> usize {
        self.noisy_reward.ncols()
    }

    /// One-hot transition layer for `action`.
    pub fn one_hot(&self, action: usize) -> DMatrix<f64> {
        let (n, m) = (self.noisy_reward.nrows(), self.noisy_reward.ncols());
        let mut z = DMatrix::zeros(n, n);
        for x in 0..n {
            z[(x, self.next_state[x * m + action])] = 1.0;
        }
        z
    }
}

pub fn draw_mrp_sample<R: Rng + ?Sized>(mrp: &Mrp, rewards: &RewardModel, rng: &mut R) -> MrpSample {
    let n = mrp.states();
    let mut next_state = Vec::with_capacity(n);
    let mut noisy_reward = DVector::zeros(n);
    for x in 0..n {
        next_state.push(pick(mrp.transition().row(x).iter(), rng.gen()));
        noisy_reward[x] = mrp.reward()[x] + rewards.noise(rng);
    }
    MrpSample {
        noisy_reward,
        next_state,
    }
}

pub fn draw_mdp_sample<R: Rng + ?Sized>(mdp: &Mdp, rewards: &RewardModel, rng: &mut R) -> MdpSample {
    let (n, m) = (mdp.states(), mdp.actions());
    let mut next_state = Vec::with_capacity(n * m);
    let mut noisy_reward = QFn::zeros(n, m);
    for x in 0..n {
        for u in 0..m {
            next_state.push(pick(mdp.transition(u).row(x).iter(), rng.gen()));
            noisy_reward[(x, u)] = mdp.reward()[(x, u)] + rewards.noise(rng);
        }
    }
    MdpSample {
        noisy_reward,
        next_state,
    }
}

/// `R(x) + γ Σ Z(x'|x) v(x')`.
pub fn empirical_bellman_eval(sample: &MrpSample, v: &ValueFn, discount: f64) -> Result<ValueFn> {
    if v.len() != sample.next_state.len() {
        return Err(mismatch(sample.next_state.len(), v.len()));
    }
    Ok(DVector::from_fn(v.len(), |x, _| {
        sample.noisy_reward[x] + discount * v[sample.next_state[x]]
    }))
}

/// `R(x, u) + γ max_u' q(next(x, u), u')`.
pub fn empirical_bellman_opt(sample: &MdpSample, q: &QFn, discount: f64) -> Result<QFn> {
    if q.shape() != sample.noisy_reward.shape() {
        return Err(mismatch(
            format!("{:?}", sample.noisy_reward.shape()),
            format!("{:?}", q.shape()),
        ));
    }
    let vmax = crate::tabular::state_max(q);
    let m = q.ncols();
    Ok(QFn::from_fn(q.nrows(), m, |x, u| {
        sample.noisy_reward[(x, u)] + discount * vmax[sample.next_state[x * m + u]]
    }))
}

/// An ordered collection of generative draws.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    states: usize,
    actions: usize,
    next: Vec<u16>,
    reward: Vec<f64>,
    seed: u64,
}

impl Dataset {
    pub fn new(states: usize, actions: usize, seed: u64) -> Self {
        assert!(states <= u16::MAX as usize + 1, "state index must fit in 16 bits");
        Self {
            states,
            actions,
            next: Vec::new(),
            reward: Vec::new(),
            seed,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn rows(&self) -> usize {
        self.states * self.actions
    }

    pub fn len(&self) -> usize {
        self.next.len() / self.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    /// Seed of the RNG substream that produced the draws.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn reserve(&mut self, additional: usize) {
        self.next.reserve(additional * self.rows());
        self.reward.reserve(additional * self.rows());
    }

    pub fn push_mrp(&mut self, sample: &MrpSample) -> Result<()> {
        if self.actions != 1 || sample.next_state.len() != self.states {
            return Err(mismatch(
                format!("{} states, 1 action", self.states),
                format!("{} states", sample.next_state.len()),
            ));
        }
        self.next.extend(sample.next_state.iter().map(|&y| y as u16));
        self.reward.extend(sample.noisy_reward.iter());
        Ok(())
    }

    pub fn push_mdp(&mut self, sample: &MdpSample) -> Result<()> {
        if sample.noisy_reward.shape() != (self.states, self.actions) {
            return Err(mismatch(
                format!("{}x{}", self.states, self.actions),
                format!("{:?}", sample.noisy_reward.shape()),
            ));
        }
        self.next.extend(sample.next_state.iter().map(|&y| y as u16));
        for x in 0..self.states {
            for u in 0..self.actions {
                self.reward.push(sample.noisy_reward[(x, u)]);
            }
        }
        Ok(())
    }

    pub fn view(&self) -> Samples<'_> {
        Samples {
            states: self.states,
            actions: self.actions,
            next: &self.next,
            reward: &self.reward,
        }
    }

    /// Writes `sample,state,action,next_state,reward` rows after a seed comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "sample,state,action,next_state,reward")?;
        let view = self.view();
        for i in 0..view.len() {
            let s = view.get(i);
            for x in 0..self.states {
                for u in 0..self.actions {
                    let row = x * self.actions + u;
                    writeln!(out, "{i},{x},{u},{},{}", s.next_state(row), s.reward(row))?;
                }
            }
        }
        Ok(())
    }
}

/// Borrowed, contiguous run of draws.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    states: usize,
    actions: usize,
    next: &'a [u16],
    reward: &'a [f64],
}

impl<'a> Samples<'a> {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn rows(&self) -> usize {
        self.states * self.actions
    }

    pub fn len(&self) -> usize {
        self.next.len() / self.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    pub fn get(&self, i: usize) -> SampleRef<'a> {
        let d = self.rows();
        SampleRef {
            next: &self.next[i * d..(i + 1) * d],
            reward: &self.reward[i * d..(i + 1) * d],
        }
    }

    pub fn range(&self, r: Range<usize>) -> Samples<'a> {
        let d = self.rows();
        Samples {
            next: &self.next[r.start * d..r.end * d],
            reward: &self.reward[r.start * d..r.end * d],
            ..*self
        }
    }

    pub fn split_at(&self, k: usize) -> (Samples<'a>, Samples<'a>) {
        (self.range(0..k), self.range(k..self.len()))
    }

    pub fn iter(&self) -> impl Iterator<Item = SampleRef<'a>> + 'a {
        let d = self.rows();
        self.next
            .chunks_exact(d)
            .zip(self.reward.chunks_exact(d))
            .map(|(next, reward)| SampleRef { next, reward })
    }
}

/// A single draw inside a [`Samples`] view.
#[derive(Clone, Copy, Debug)]
pub struct SampleRef<'a> {
    next: &'a [u16],
    reward: &'a [f64],
}

impl SampleRef<'_> {
    pub fn next_state(&self, row: usize) -> usize {
        self.next[row] as usize
    }

    pub fn reward(&self, row: usize) -> f64 {
        self.reward[row]
    }

    /// Writes `R(row) + γ vmax(next(row))` for every row. For an MRP `vmax`
    /// is the value function; for an MDP it is the per-state max of `Q`.
    #[inline]
    pub fn bellman_into(&self, vmax: &[f64], discount: f64, out: &mut [f64]) {
        for ((o, &r), &y) in out.iter_mut().zip(self.reward).zip(self.next) {
            *o = r + discount * vmax[y as usize];
        }
    }
}

/// Anything that hands out fresh i.i.d. generative draws.
///
/// Callers see the problem dimensions, the discount and the declared reward
/// bound, never the kernel itself.
pub trait SampleSource {
    fn states(&self) -> usize;
    fn actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn reward_bound(&self) -> f64;
    /// Appends `count` fresh draws.
    fn fill(&mut self, data: &mut Dataset, count: usize);
}

/// Seeded generative sampler over a known model.
#[derive(Clone, Debug)]
pub struct GenerativeSampler {
    states: usize,
    actions: usize,
    /// Row-major per-(x, u) cumulative distribution.
    cdf: Vec<f64>,
    last_positive: Vec<usize>,
    mean_reward: Vec<f64>,
    rewards: RewardModel,
    discount: f64,
    rng: ChaCha8Rng,
    seed: u64,
}

impl GenerativeSampler {
    pub fn for_mdp(mdp: &Mdp, rewards: RewardModel, seed: u64) -> Self {
        let (n, m) = (mdp.states(), mdp.actions());
        let mut cdf = Vec::with_capacity(n * m * n);
        let mut last_positive = Vec::with_capacity(n * m);
        let mut mean_reward = Vec::with_capacity(n * m);
        for x in 0..n {
            for u in 0..m {
                let mut acc = 0.0;
                let mut last = 0;
                for (y, &p) in mdp.transition(u).row(x).iter().enumerate() {
                    acc += p;
                    if p > 0.0 {
                        last = y;
                    }
                    cdf.push(acc);
                }
                last_positive.push(last);
                mean_reward.push(mdp.reward()[(x, u)]);
            }
        }
        Self {
            states: n,
            actions: m,
            cdf,
            last_positive,
            mean_reward,
            rewards,
            discount: mdp.discount(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn for_mrp(mrp: &Mrp, rewards: RewardModel, seed: u64) -> Self {
        Self::for_mdp(&Mdp::from_mrp(mrp), rewards, seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn empty_dataset(&self) -> Dataset {
        Dataset::new(self.states, self.actions, self.seed)
    }

    /// A new dataset with `count` draws.
    pub fn draw(&mut self, count: usize) -> Dataset {
        let mut data = self.empty_dataset();
        self.fill(&mut data, count);
        data
    }
}

impl SampleSource for GenerativeSampler {
    fn states(&self) -> usize {
        self.states
    }

    fn actions(&self) -> usize {
        self.actions
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn reward_bound(&self) -> f64 {
        self.rewards.bound
    }

    fn fill(&mut self, data: &mut Dataset, count: usize) {
        assert_eq!((data.states, data.actions), (self.states, self.actions));
        let n = self.states;
        data.reserve(count);
        for _ in 0..count {
            for row in 0..self.mean_reward.len() {
                let u: f64 = self.rng.gen();
                let cdf = &self.cdf[row * n..(row + 1) * n];
                let y = cdf.iter().position(|&c| u < c).unwrap_or(self.last_positive[row]);
                data.next.push(y as u16);
                data.reward
                    .push(self.mean_reward[row] + self.rewards.noise(&mut self.rng));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{bellman_eval_apply, bellman_opt_apply, Policy};
    use approx::assert_relative_eq;

    fn two_state(gamma: f64) -> Mrp {
        let p = (4.0 * gamma - 1.0) / (3.0 * gamma);
        Mrp::new(
            DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 0.0, 1.0]),
            DVector::from_vec(vec![1.0, gamma]),
            gamma,
        )
        .unwrap()
    }

    fn example_mdp(gamma: f64) -> Mdp {
        let p = (4.0 * gamma - 1.0) / (3.0 * gamma);
        Mdp::new(
            vec![
                DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 0.0, 1.0]),
                DMatrix::identity(2, 2),
            ],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, gamma, 0.0]),
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_kernel_and_rewards() {
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let mrp = Mrp::new(p.clone(), DVector::from_vec(vec![1.0, 2.0, 3.0]), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = draw_mrp_sample(&mrp, &RewardModel::deterministic(), &mut rng);
            assert_eq!(s.one_hot(), p);
            assert_eq!(s.noisy_reward, *mrp.reward());
        }
    }

    #[test]
    fn identity_action_layer_is_identity() {
        let mdp = example_mdp(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = draw_mdp_sample(&mdp, &RewardModel::deterministic(), &mut rng);
            assert_eq!(s.one_hot(1), DMatrix::identity(2, 2));
            assert_eq!(s.noisy_reward, *mdp.reward());
            for row in s.one_hot(0).row_iter() {
                assert_eq!(row.iter().sum::<f64>(), 1.0);
            }
        }
    }

    fn binomial_check(hits: usize, n: usize, p: f64) {
        let freq = hits as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq} vs p {p} (σ {sigma})");
    }

    #[test]
    fn transition_frequencies_match_kernel() {
        let mrp = two_state(0.9);
        let p = 26.0 / 27.0;
        let mut sampler = GenerativeSampler::for_mrp(&mrp, RewardModel::deterministic(), 17);
        let data = sampler.draw(100_000);
        let hits = data.view().iter().filter(|s| s.next_state(0) == 0).count();
        binomial_check(hits, 100_000, p);

        let mdp = example_mdp(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let hits = (0..100_000)
            .filter(|_| draw_mdp_sample(&mdp, &RewardModel::deterministic(), &mut rng).next_state[0] == 0)
            .count();
        binomial_check(hits, 100_000, p);
    }

    #[test]
    fn reward_noise_stays_in_bound() {
        let mrp = two_state(0.9);
        let rm = RewardModel::uniform(0.25).unwrap();
        let mut sampler = GenerativeSampler::for_mrp(&mrp, rm, 1);
        let data = sampler.draw(10_000);
        for s in data.view().iter() {
            assert!((s.reward(0) - 1.0).abs() <= 0.25);
            assert!((s.reward(1) - 0.9).abs() <= 0.25);
        }
        assert_relative_eq!(rm.variance(), 0.0625 / 3.0);
        assert!(RewardModel::uniform(-1.0).is_err());
    }

    #[test]
    fn empirical_eval_examples() {
        let sample = MrpSample {
            noisy_reward: DVector::from_vec(vec![0.5, -1.0]),
            next_state: vec![1, 1],
        };
        let zero = empirical_bellman_eval(&sample, &DVector::zeros(2), 0.9).unwrap();
        assert_eq!(zero, sample.noisy_reward);
        let out = empirical_bellman_eval(&sample, &DVector::from_vec(vec![1.0, 2.0]), 0.9).unwrap();
        assert_relative_eq!(out[0], 2.3, epsilon = 1e-15);
        assert!(empirical_bellman_eval(&sample, &DVector::zeros(3), 0.9).is_err());
    }

    #[test]
    fn empirical_opt_examples() {
        let mdp = example_mdp(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = draw_mdp_sample(&mdp, &RewardModel::uniform(0.1).unwrap(), &mut rng);
        assert_eq!(
            empirical_bellman_opt(&s, &QFn::zeros(2, 2), 0.9).unwrap(),
            s.noisy_reward
        );

        // single action agrees with the evaluation operator
        let mrp = two_state(0.9);
        let single = draw_mdp_sample(&Mdp::from_mrp(&mrp), &RewardModel::deterministic(), &mut rng);
        let as_mrp = MrpSample {
            noisy_reward: single.noisy_reward.column(0).into_owned(),
            next_state: single.next_state.clone(),
        };
        let v = DVector::from_vec(vec![1.5, -0.5]);
        let q = QFn::from_column_slice(2, 1, v.as_slice());
        let a = empirical_bellman_opt(&single, &q, 0.9).unwrap();
        let b = empirical_bellman_eval(&as_mrp, &v, 0.9).unwrap();
        assert_eq!(a.column(0).into_owned(), b);

        // γ-Lipschitz in sup-norm
        for _ in 0..500 {
            let q1 = QFn::from_fn(2, 2, |_, _| rng.gen_range(-5.0..5.0));
            let q2 = QFn::from_fn(2, 2, |_, _| rng.gen_range(-5.0..5.0));
            let gap =
                (empirical_bellman_opt(&s, &q1, 0.9).unwrap() - empirical_bellman_opt(&s, &q2, 0.9).unwrap()).amax();
            assert!(gap <= 0.9 * (&q1 - &q2).amax() + 1e-12);
        }
    }

    #[test]
    fn empirical_operators_are_unbiased() {
        let mrp = two_state(0.9);
        let rm = RewardModel::uniform(0.5).unwrap();
        let v = DVector::from_vec(vec![3.0, -2.0]);
        let n = 100_000;
        let mut sampler = GenerativeSampler::for_mrp(&mrp, rm, 23);
        let data = sampler.draw(n);
        let mut mean = [0.0; 2];
        let mut buf = [0.0; 2];
        for s in data.view().iter() {
            s.bellman_into(v.as_slice(), 0.9, &mut buf);
            mean[0] += buf[0] / n as f64;
            mean[1] += buf[1] / n as f64;
        }
        let pop = bellman_eval_apply(&mrp, &v).unwrap();
        let tol = 5.0 / (n as f64).sqrt() * crate::tabular::bfun(v.as_slice(), rm.bound, 0.9);
        assert!((mean[0] - pop[0]).abs() <= tol);
        assert!((mean[1] - pop[1]).abs() <= tol);

        let mdp = example_mdp(0.9);
        let q = QFn::from_row_slice(2, 2, &[1.0, 4.0, -1.0, 2.0]);
        let mut sampler = GenerativeSampler::for_mdp(&mdp, rm, 29);
        let data = sampler.draw(n);
        let vmax = crate::tabular::state_max(&q);
        let mut mean = [0.0; 4];
        let mut buf = [0.0; 4];
        for s in data.view().iter() {
            s.bellman_into(&vmax, 0.9, &mut buf);
            for (m, b) in mean.iter_mut().zip(&buf) {
                *m += b / n as f64;
            }
        }
        let pop = bellman_opt_apply(&mdp, &q).unwrap();
        let tol = 5.0 / (n as f64).sqrt() * crate::tabular::bfun(q.as_slice(), rm.bound, 0.9);
        for x in 0..2 {
            for u in 0..2 {
                assert!((mean[x * 2 + u] - pop[(x, u)]).abs() <= tol);
            }
        }
        let _ = Policy::constant(2, 0);
    }

    #[test]
    fn same_seed_same_dataset() {
        let mdp = example_mdp(0.93);
        let rm = RewardModel::uniform(0.2).unwrap();
        let a = GenerativeSampler::for_mdp(&mdp, rm, 99).draw(500);
        let b = GenerativeSampler::for_mdp(&mdp, rm, 99).draw(500);
        let c = GenerativeSampler::for_mdp(&mdp, rm, 100).draw(500);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(String::from_utf8(ca)
            .unwrap()
            .starts_with("# seed=99\nsample,state,action,next_state,reward\n0,0,0,"));
    }

    #[test]
    fn sampler_matches_single_draw_functions() {
        let mdp = example_mdp(0.9);
        let rm = RewardModel::uniform(0.3).unwrap();
        let mut sampler = GenerativeSampler::for_mdp(&mdp, rm, 7);
        let data = sampler.draw(50);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut manual = Dataset::new(2, 2, 7);
        for _ in 0..50 {
            manual.push_mdp(&draw_mdp_sample(&mdp, &rm, &mut rng)).unwrap();
        }
        assert_eq!(data, manual);
    }

    #[test]
    fn views_partition_without_overlap() {
        let mut sampler = GenerativeSampler::for_mrp(&two_state(0.9), RewardModel::deterministic(), 0);
        let data = sampler.draw(10);
        let (a, b) = data.view().split_at(4);
        assert_eq!((a.len(), b.len()), (4, 6));
        assert_eq!(data.view().range(4..10).get(0).next_state(0), b.get(0).next_state(0));
        assert!(Dataset::new(2, 2, 0)
            .push_mrp(&MrpSample {
                noisy_reward: DVector::zeros(2),
                next_state: vec![0, 1]
            })
            .is_err());
    }
}
