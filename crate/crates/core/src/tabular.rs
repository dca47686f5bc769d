//! Finite Markov reward processes and decision processes.
//!
//! Transition matrices are stored with one row per *current* state, so the
//! Bellman evaluation operator reads `r + γ P v` as an ordinary
//! matrix-vector product. Q-functions are `|X| × |U|` matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// State-value function, one entry per state.
pub type ValueFn = DVector<f64>;

/// State-action value function, `|X|` rows by `|U|` columns.
pub type QFn = DMatrix<f64>;

/// Row sums of a transition matrix must be within this distance of one.
pub const STOCHASTIC_TOL: f64 = 1e-12;

fn check_discount(discount: f64) -> Result<()> {
    if discount.is_finite() && (0.0..1.0).contains(&discount) {
        Ok(())
    } else {
        Err(Error::InvalidDiscount(discount))
    }
}

/// Validates that `p` is square and row-stochastic.
pub fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() {
        return Err(mismatch("square matrix", format!("{}x{}", p.nrows(), p.ncols())));
    }
    for (i, row) in p.row_iter().enumerate() {
        if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "row {i} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidKernel(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// A Markov reward process `(r, P, γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mrp {
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    discount: f64,
}

impl Mrp {
    pub fn new(transition: DMatrix<f64>, reward: DVector<f64>, discount: f64) -> Result<Self> {
        check_discount(discount)?;
        check_stochastic(&transition)?;
        if reward.len() != transition.nrows() {
            return Err(mismatch(transition.nrows(), reward.len()));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter("reward entries must be finite".into()));
        }
        Ok(Self {
            transition,
            reward,
            discount,
        })
    }

    pub fn states(&self) -> usize {
        self.reward.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }
}

/// A finite MDP: one transition matrix per action and a reward matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    transitions: Vec<DMatrix<f64>>,
    reward: DMatrix<f64>,
    discount: f64,
}

impl Mdp {
    pub fn new(transitions: Vec<DMatrix<f64>>, reward: DMatrix<f64>, discount: f64) -> Result<Self> {
        check_discount(discount)?;
        if transitions.is_empty() {
            return Err(Error::InvalidParameter("an MDP needs at least one action".into()));
        }
        let states = reward.nrows();
        if reward.ncols() != transitions.len() {
            return Err(mismatch(
                format!("reward with {} columns", transitions.len()),
                reward.ncols(),
            ));
        }
        for p in &transitions {
            check_stochastic(p)?;
            if p.nrows() != states {
                return Err(mismatch(states, p.nrows()));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter("reward entries must be finite".into()));
        }
        Ok(Self {
            transitions,
            reward,
            discount,
        })
    }

    /// Embeds an MRP as a single-action MDP.
    pub fn from_mrp(mrp: &Mrp) -> Self {
        Self {
            transitions: vec![mrp.transition.clone()],
            reward: DMatrix::from_column_slice(mrp.states(), 1, mrp.reward.as_slice()),
            discount: mrp.discount,
        }
    }

    pub fn states(&self) -> usize {
        self.reward.nrows()
    }

    pub fn actions(&self) -> usize {
        self.transitions.len()
    }

    /// Number of state-action pairs.
    pub fn dims(&self) -> usize {
        self.states() * self.actions()
    }

    pub fn transition(&self, action: usize) -> &DMatrix<f64> {
        &self.transitions[action]
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            discount: self.discount,
            states: self.states(),
            actions: self.actions(),
            reward: self
                .reward
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
            transitions: self
                .transitions
                .iter()
                .map(|p| p.row_iter().map(|row| row.iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        let (n, m) = (doc.states, doc.actions);
        if doc.reward.len() != n || doc.reward.iter().any(|row| row.len() != m) {
            return Err(mismatch(format!("reward {n}x{m}"), "ragged or mis-sized reward"));
        }
        if doc.transitions.len() != m {
            return Err(mismatch(format!("{m} transition layers"), doc.transitions.len()));
        }
        let reward = DMatrix::from_fn(n, m, |x, u| doc.reward[x][u]);
        let mut transitions = Vec::with_capacity(m);
        for layer in &doc.transitions {
            if layer.len() != n || layer.iter().any(|row| row.len() != n) {
                return Err(mismatch(format!("transition layer {n}x{n}"), "mis-sized layer"));
            }
            transitions.push(DMatrix::from_fn(n, n, |x, y| layer[x][y]));
        }
        Self::new(transitions, reward, doc.discount)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }
}

/// JSON interchange form of a model. `transitions` is indexed
/// `[action][state][next_state]`; `reward` is `[state][action]`.
/// An MRP is a document with `actions = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub discount: f64,
    pub states: usize,
    pub actions: usize,
    pub reward: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
}

/// A deterministic policy, one action index per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::InvalidParameter(format!(
                "action {bad} out of range for {num_actions} actions"
            )));
        }
        Ok(Self(actions))
    }

    pub fn constant(states: usize, action: usize) -> Self {
        Self(vec![action; states])
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `r + γ P v`.
pub fn bellman_eval_apply(mrp: &Mrp, v: &ValueFn) -> Result<ValueFn> {
    if v.len() != mrp.states() {
        return Err(mismatch(mrp.states(), v.len()));
    }
    Ok(&mrp.reward + mrp.discount * (&mrp.transition * v))
}

/// Value of an MRP by solving `(I - γP) V = r` directly.
pub fn solve_value_exact(mrp: &Mrp) -> Result<ValueFn> {
    let n = mrp.states();
    let system = DMatrix::identity(n, n) - mrp.discount * &mrp.transition;
    system
        .lu()
        .solve(&mrp.reward)
        .ok_or_else(|| Error::Singular("I - γP".into()))
}

/// Per-state maximum over actions.
pub fn state_max(q: &QFn) -> Vec<f64> {
    q.row_iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// The Bellman optimality operator.
pub fn bellman_opt_apply(mdp: &Mdp, q: &QFn) -> Result<QFn> {
    if q.nrows() != mdp.states() || q.ncols() != mdp.actions() {
        return Err(mismatch(
            format!("{}x{}", mdp.states(), mdp.actions()),
            format!("{}x{}", q.nrows(), q.ncols()),
        ));
    }
    let vmax = DVector::from_vec(state_max(q));
    let mut out = mdp.reward.clone();
    for (u, p) in mdp.transitions.iter().enumerate() {
        let next = p * &vmax;
        for x in 0..mdp.states() {
            out[(x, u)] += mdp.discount * next[x];
        }
    }
    Ok(out)
}

/// Optimal Q-function by value iteration from zero.
///
/// Stops once successive iterates differ by at most `tol (1-γ) / (2γ)` in
/// sup-norm, so the returned `Q` has Bellman residual at most `tol (1-γ)`
/// and lies within `tol` of `Q*`.
pub fn solve_q_exact(mdp: &Mdp, tol: f64) -> Result<QFn> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let gamma = mdp.discount;
    let mut q = QFn::zeros(mdp.states(), mdp.actions());
    loop {
        let next = bellman_opt_apply(mdp, &q)?;
        let step = (&next - &q).amax();
        q = next;
        if gamma == 0.0 || step <= tol * (1.0 - gamma) / (2.0 * gamma) {
            return Ok(q);
        }
    }
}

/// The MRP obtained by following `policy` in `mdp`.
pub fn reduce_to_mrp(mdp: &Mdp, policy: &Policy) -> Result<Mrp> {
    let n = mdp.states();
    if policy.len() != n {
        return Err(mismatch(n, policy.len()));
    }
    if policy.actions().iter().any(|&a| a >= mdp.actions()) {
        return Err(Error::InvalidParameter("policy action out of range".into()));
    }
    let transition = DMatrix::from_fn(n, n, |x, y| mdp.transitions[policy.action(x)][(x, y)]);
    let reward = DVector::from_fn(n, |x, _| mdp.reward[(x, policy.action(x))]);
    Mrp::new(transition, reward, mdp.discount)
}

/// `Q^π(x, u) = r(x, u) + γ Σ P_u(x'|x) V^π(x')`.
pub fn policy_q_values(mdp: &Mdp, policy: &Policy) -> Result<QFn> {
    let v = solve_value_exact(&reduce_to_mrp(mdp, policy)?)?;
    let mut q = mdp.reward.clone();
    for (u, p) in mdp.transitions.iter().enumerate() {
        let next = p * &v;
        for x in 0..mdp.states() {
            q[(x, u)] += mdp.discount * next[x];
        }
    }
    Ok(q)
}

/// Dense `(I - γP)^{-1}`.
pub fn resolvent(p: &DMatrix<f64>, discount: f64) -> Result<DMatrix<f64>> {
    if !p.is_square() {
        return Err(mismatch("square matrix", format!("{}x{}", p.nrows(), p.ncols())));
    }
    let n = p.nrows();
    (DMatrix::identity(n, n) - discount * p)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - γP".into()))
}

/// Largest absolute diagonal entry of a square matrix.
pub fn diag_norm(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(mismatch("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(m.diagonal().iter().fold(0.0, |acc, d| acc.max(d.abs())))
}

/// Greedy policy; ties go to the smallest action index.
pub fn greedy_policy(q: &QFn) -> Policy {
    let actions = q
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (u, &val) in row.iter().enumerate() {
                if val > row[best] {
                    best = u;
                }
            }
            best
        })
        .collect();
    Policy(actions)
}

pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `b(V) = r̄ + γ ‖V‖∞`, the range bound on a single empirical Bellman update.
pub fn bfun(values: &[f64], reward_bound: f64, discount: f64) -> f64 {
    reward_bound + discount * sup_norm(values)
}

/// Flattens `q` in row order `x * |U| + u`, the layout used by sample rows.
pub fn q_to_rows(q: &QFn) -> Vec<f64> {
    q.transpose().as_slice().to_vec()
}

pub fn q_from_rows(states: usize, actions: usize, rows: &[f64]) -> QFn {
    QFn::from_row_slice(states, actions, rows)
}
