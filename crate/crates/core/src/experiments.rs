//! Seeded trial batteries on the two-state example family.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::empire::{
    empire_pe, empire_q, write_trace, EmpireConfig, EmpireResult, EpochTrace, Init, DEFAULT_MAX_SAMPLES,
};
use crate::error::{Error, Result};
use crate::sampling::{substream_seed, GenerativeSampler, RewardModel};
use crate::solvers::{BaseSolver, PlugIn, SolverGuarantee, Vrql};
use crate::tabular::{solve_q_exact, solve_value_exact, sup_norm, Mdp, Mrp};

/// Tolerance for the ground-truth Q solve.
const TRUTH_TOL: f64 = 1e-12;

/// Two states, two actions: `u1` moves `x1 → x1` w.p. `p` and `x1 → x2`
/// otherwise, `x2` is absorbing under `u1`, and `u2` stays put. Rewards are
/// `r(x1, u1) = 1`, `r(x2, u1) = τ`, zero for `u2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleFamily {
    pub gamma: f64,
    pub lambda: f64,
}

impl ExampleFamily {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if !(gamma > 0.25 && gamma < 1.0) {
            return Err(Error::InvalidDiscount(gamma));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda {lambda} must be finite and >= 0"
            )));
        }
        Ok(Self { gamma, lambda })
    }

    /// `(4γ - 1) / (3γ)`.
    pub fn p(&self) -> f64 {
        (4.0 * self.gamma - 1.0) / (3.0 * self.gamma)
    }

    /// `1 - (1-γ)^λ`.
    pub fn tau(&self) -> f64 {
        1.0 - (1.0 - self.gamma).powf(self.lambda)
    }

    pub fn mdp(&self) -> Mdp {
        let p = self.p();
        Mdp::new(
            vec![
                DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 0.0, 1.0]),
                DMatrix::identity(2, 2),
            ],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, self.tau(), 0.0]),
            self.gamma,
        )
        .expect("example family is a valid MDP")
    }

    /// The MRP obtained by always taking `u1`.
    pub fn mrp(&self) -> Mrp {
        let p = self.p();
        Mrp::new(
            DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 0.0, 1.0]),
            DVector::from_vec(vec![1.0, self.tau()]),
            self.gamma,
        )
        .expect("example family is a valid MRP")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pe,
    Q,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Vrql,
    PlugIn,
}

/// Everything that determines a battery's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    pub mode: Mode,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    /// Half-width of uniform reward noise; zero means deterministic rewards.
    #[serde(default)]
    pub reward_noise: f64,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default = "default_c1")]
    pub c1: f64,
    /// Reference epoch count inside the default `φ_f`, `φ_s`.
    #[serde(default = "default_m_ref")]
    pub m_ref: usize,
    #[serde(default)]
    pub init: Init,
}

fn default_max_samples() -> usize {
    DEFAULT_MAX_SAMPLES
}

fn default_c1() -> f64 {
    1.0
}

fn default_m_ref() -> usize {
    2
}

/// `γ` values whose `ln(1/(1-γ))` is evenly spaced from `γ = lo` to `γ = hi`.
pub fn log_spaced_gammas(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (-(1.0 - lo).ln(), -(1.0 - hi).ln());
    (0..count)
        .map(|i| {
            let t = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            1.0 - (-(a + t * (b - a))).exp()
        })
        .collect()
}

impl BatteryConfig {
    /// The desk-scale grid: `γ ∈ {0.90, 0.92, 0.95}`, `λ ∈ {1.0, 1.5}`,
    /// `ε = 0.1` for evaluation and `0.05` for Q.
    pub fn desk(mode: Mode) -> Self {
        Self {
            mode,
            gammas: vec![0.90, 0.92, 0.95],
            lambdas: vec![1.0, 1.5],
            epsilon: match mode {
                Mode::Pe => 0.1,
                Mode::Q => 0.05,
            },
            delta: 0.1,
            trials: 100,
            seed: 0,
            max_samples: DEFAULT_MAX_SAMPLES,
            reward_noise: 0.0,
            solver: SolverKind::Vrql,
            c1: default_c1(),
            m_ref: default_m_ref(),
            init: Init::PlugIn,
        }
    }

    /// Ten discounts log-spaced between 0.9 and 0.99.
    pub fn full(mode: Mode) -> Self {
        Self {
            gammas: log_spaced_gammas(0.9, 0.99, 10),
            ..Self::desk(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.lambdas.is_empty() {
            return Err(Error::InvalidParameter("empty gamma or lambda grid".into()));
        }
        for &g in &self.gammas {
            for &l in &self.lambdas {
                ExampleFamily::new(g, l)?;
            }
        }
        if !(self.reward_noise >= 0.0) {
            return Err(Error::InvalidParameter("reward noise must be >= 0".into()));
        }
        if self.m_ref == 0 || !(self.c1 > 0.0) {
            return Err(Error::InvalidParameter("m_ref and c1 must be positive".into()));
        }
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {} / delta {} out of range",
                self.epsilon, self.delta
            )));
        }
        Ok(())
    }

    pub fn reward_model(&self) -> RewardModel {
        if self.reward_noise == 0.0 {
            RewardModel::deterministic()
        } else {
            RewardModel::uniform(self.reward_noise).expect("validated noise")
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// `(γ, λ, trial index within the cell)` for every global trial id.
    pub fn cells(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.total_trials());
        for &g in &self.gammas {
            for &l in &self.lambdas {
                for t in 0..self.trials {
                    out.push((g, l, t));
                }
            }
        }
        out
    }

    pub fn total_trials(&self) -> usize {
        self.gammas.len() * self.lambdas.len() * self.trials
    }

    fn solver(&self) -> Box<dyn BaseSolver> {
        match self.solver {
            SolverKind::Vrql => Box::new(Vrql { c1: self.c1 }),
            SolverKind::PlugIn => Box::new(PlugIn),
        }
    }
}

/// One early-stopping run and its evaluation against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub seed: u64,
    pub mode: Mode,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub delta_target: f64,
    /// Every draw consumed, including the initializer.
    pub samples_used: usize,
    pub epochs: usize,
    pub predicted_error: f64,
    pub true_error: f64,
    pub worst_case_n: f64,
    pub factor_savings: f64,
    pub terminated: bool,
}

/// `1 / (ε² (1-γ)³)`.
pub fn worst_case_samples(epsilon: f64, gamma: f64) -> f64 {
    1.0 / (epsilon * epsilon * (1.0 - gamma).powi(3))
}

fn record_from<T>(
    base: TrialRecord,
    res: std::result::Result<EmpireResult<T>, Error>,
    truth: impl Fn(&T) -> f64,
) -> Result<(TrialRecord, Vec<EpochTrace>)> {
    match res {
        Ok(r) => {
            let used = r.total_samples();
            Ok((
                TrialRecord {
                    samples_used: used,
                    epochs: r.epochs_run,
                    predicted_error: r.predicted_error.total,
                    true_error: truth(&r.estimate),
                    factor_savings: base.worst_case_n / used as f64,
                    terminated: r.terminated,
                    ..base
                },
                r.trace,
            ))
        }
        Err(Error::BudgetExhausted { .. }) => Ok((base, Vec::new())),
        Err(e) => Err(e),
    }
}

/// Runs global trial `trial_id` of `config`.
pub fn run_trial(config: &BatteryConfig, trial_id: u64) -> Result<(TrialRecord, Vec<EpochTrace>)> {
    let cells = config.cells();
    let &(gamma, lambda, _) = cells
        .get(trial_id as usize)
        .ok_or_else(|| Error::InvalidParameter(format!("trial {trial_id} outside the battery")))?;
    let family = ExampleFamily::new(gamma, lambda)?;
    let seed = substream_seed(config.seed, trial_id);
    let empire = EmpireConfig {
        epsilon: config.epsilon,
        delta_target: config.delta,
        max_samples: config.max_samples,
        init: config.init,
    };
    let solver = config.solver();
    let rewards = config.reward_model();
    let base = TrialRecord {
        trial_id,
        seed,
        mode: config.mode,
        gamma,
        lambda,
        epsilon: config.epsilon,
        delta_target: config.delta,
        samples_used: 0,
        epochs: 0,
        predicted_error: f64::INFINITY,
        true_error: f64::NAN,
        worst_case_n: worst_case_samples(config.epsilon, gamma),
        factor_savings: f64::NAN,
        terminated: false,
    };
    match config.mode {
        Mode::Pe => {
            let mrp = family.mrp();
            let guarantee = SolverGuarantee::vrql_default(2, gamma, config.m_ref)?;
            let mut sampler = GenerativeSampler::for_mrp(&mrp, rewards, seed);
            let v_star = solve_value_exact(&mrp)?;
            let res = empire_pe(&mut sampler, solver.as_ref(), &guarantee, &empire);
            record_from(base, res, |v| sup_norm((v - &v_star).as_slice()))
        }
        Mode::Q => {
            let mdp = family.mdp();
            let guarantee = SolverGuarantee::vrql_default(4, gamma, config.m_ref)?;
            let mut sampler = GenerativeSampler::for_mdp(&mdp, rewards, seed);
            let q_star = solve_q_exact(&mdp, TRUTH_TOL)?;
            let res = empire_q(&mut sampler, solver.as_ref(), &guarantee, &empire);
            record_from(base, res, |q| (q - &q_star).amax())
        }
    }
}

/// Outcome of [`run_trials`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatterySummary {
    pub records: Vec<TrialRecord>,
    /// Trials that stopped on the sample budget rather than the accuracy test.
    pub budget_exhausted: usize,
    /// Trials already on disk when the run started.
    pub resumed: usize,
}

pub const RECORDS_FILE: &str = "trials.csv";
pub const TRACES_FILE: &str = "traces.csv";
const CHUNK: usize = 16;

fn header_line(config: &BatteryConfig) -> String {
    format!("# config={} hash={}\n", config.to_json(), config.hash())
}

/// Parses the `# config=… hash=…` line.
fn parse_header(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix("# config=")?;
    let (json, hash) = rest.rsplit_once(" hash=")?;
    Some((json.to_string(), hash.trim().to_string()))
}

const RECORD_FIELDS: [&str; 14] = [
    "trial_id",
    "seed",
    "mode",
    "gamma",
    "lambda",
    "epsilon",
    "delta_target",
    "samples_used",
    "epochs",
    "predicted_error",
    "true_error",
    "worst_case_n",
    "factor_savings",
    "terminated",
];

fn write_records<W: Write>(out: W, records: &[TrialRecord], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(RECORD_FIELDS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a records file: config JSON, hash and rows.
pub fn read_records(path: &Path) -> Result<(String, String, Vec<TrialRecord>)> {
    let file = BufReader::new(File::open(path)?);
    let mut lines = file.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let (json, hash) = parse_header(&first)
        .ok_or_else(|| Error::ResumeMismatch(format!("{} has no config header", path.display())))?;
    let rest: String = lines.collect::<std::io::Result<Vec<_>>>()?.join("\n");
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let records = reader
        .deserialize()
        .collect::<std::result::Result<Vec<TrialRecord>, _>>()?;
    Ok((json, hash, records))
}

/// Drops a trailing partial line left by an interrupted append.
fn truncate_partial(path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    if let Some(last) = bytes.iter().rposition(|&b| b == b'\n') {
        if last + 1 != bytes.len() {
            OpenOptions::new().write(true).open(path)?.set_len((last + 1) as u64)?;
        }
    }
    Ok(())
}

/// Rewrites the trace file keeping only rows for the first `done` trials.
fn trim_traces(path: &Path, done: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    truncate_partial(path)?;
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|id| id.parse::<u64>().ok()) {
            Some(id) => id < done,
            None => true,
        };
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

/// Runs (or resumes) the battery, persisting records and traces under `out`
/// in trial order.
pub fn run_trials(config: &BatteryConfig, out: &Path) -> Result<BatterySummary> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let records_path = out.join(RECORDS_FILE);
    let traces_path = out.join(TRACES_FILE);
    let mut records = Vec::new();
    if records_path.exists() {
        truncate_partial(&records_path)?;
        let (_, hash, existing) = read_records(&records_path)?;
        if hash != config.hash() {
            return Err(Error::ResumeMismatch(format!(
                "{} was written by config {hash}, current config is {}",
                records_path.display(),
                config.hash()
            )));
        }
        records = existing;
        trim_traces(&traces_path, records.len() as u64)?;
    } else {
        fs::write(&records_path, header_line(config))?;
        write_records(OpenOptions::new().append(true).open(&records_path)?, &[], true)?;
        fs::write(&traces_path, header_line(config))?;
        write_trace(OpenOptions::new().append(true).open(&traces_path)?, 0, &[], true)?;
    }
    let resumed = records.len();
    let total = config.total_trials();
    if resumed > 0 {
        log::info!("resuming battery at trial {resumed} of {total}");
    }
    let ids: Vec<u64> = (resumed as u64..total as u64).collect();
    for chunk in ids.chunks(CHUNK) {
        let results = chunk
            .par_iter()
            .map(|&id| run_trial(config, id))
            .collect::<Result<Vec<_>>>()?;
        let mut traces = OpenOptions::new().append(true).open(&traces_path)?;
        for (r, t) in &results {
            write_trace(&mut traces, r.trial_id, t, false)?;
        }
        let batch: Vec<TrialRecord> = results.into_iter().map(|(r, _)| r).collect();
        write_records(OpenOptions::new().append(true).open(&records_path)?, &batch, false)?;
        records.extend(batch);
        log::info!("{} / {total} trials done", records.len());
    }
    let budget_exhausted = records.iter().filter(|r| !r.terminated).count();
    Ok(BatterySummary {
        records,
        budget_exhausted,
        resumed,
    })
}

/// Per-`(γ, λ)` summary statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub gamma: f64,
    pub lambda: f64,
    pub trials: usize,
    pub savings_mean: f64,
    pub savings_std: f64,
    pub true_err_mean: f64,
    pub true_err_std: f64,
    pub pred_err_mean: f64,
    pub pred_err_std: f64,
    pub max_epochs: usize,
    /// Fraction of trials with `true_error ≤ predicted_error`.
    pub coverage: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by `(γ, λ)` in order of first appearance.
pub fn factor_savings_table(records: &[TrialRecord]) -> Vec<SavingsRow> {
    let mut order: Vec<(u64, u64)> = Vec::new();
    let mut groups: BTreeMap<(u64, u64), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.gamma.to_bits(), r.lambda.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let col = |f: fn(&TrialRecord) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (savings_mean, savings_std) = mean_std(&col(|r| r.factor_savings));
            let (true_err_mean, true_err_std) = mean_std(&col(|r| r.true_error));
            let (pred_err_mean, pred_err_std) = mean_std(&col(|r| r.predicted_error));
            SavingsRow {
                gamma: g[0].gamma,
                lambda: g[0].lambda,
                trials: g.len(),
                savings_mean,
                savings_std,
                true_err_mean,
                true_err_std,
                pred_err_mean,
                pred_err_std,
                max_epochs: g.iter().map(|r| r.epochs).max().unwrap_or(0),
                coverage: g.iter().filter(|r| r.true_error <= r.predicted_error).count() as f64 / g.len() as f64,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig1b,
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    pub fn name(&self) -> &'static str {
        match self {
            Figure::Fig1b => "fig1b",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Figure::Fig1b | Figure::Fig2 => Mode::Pe,
            Figure::Fig3 | Figure::Fig4 => Mode::Q,
        }
    }

    pub fn all() -> [Figure; 4] {
        [Figure::Fig1b, Figure::Fig2, Figure::Fig3, Figure::Fig4]
    }
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::all()
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown figure {s}")))
    }
}

/// Writes `<dir>/<figure>.csv`. Savings figures have columns
/// `lambda,gamma,log_discount_complexity,savings_mean,savings_std`; error
/// figures have `lambda,gamma,true_err_mean,true_err_std,pred_err_mean,pred_err_std`.
pub fn emit_plotdata(records: &[TrialRecord], figure: Figure, dir: &Path, hash: &str) -> Result<PathBuf> {
    let relevant: Vec<TrialRecord> = records.iter().filter(|r| r.mode == figure.mode()).cloned().collect();
    if relevant.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} needs {:?} records, none found",
            figure.name(),
            figure.mode()
        )));
    }
    let mut table = factor_savings_table(&relevant);
    table.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.gamma.total_cmp(&b.gamma)));
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.csv", figure.name()));
    let mut file = File::create(&path)?;
    writeln!(file, "# figure={} hash={hash}", figure.name())?;
    let mut w = csv::Writer::from_writer(file);
    match figure {
        Figure::Fig1b | Figure::Fig3 => {
            w.write_record([
                "lambda",
                "gamma",
                "log_discount_complexity",
                "savings_mean",
                "savings_std",
            ])?;
            for row in &table {
                w.serialize((
                    row.lambda,
                    row.gamma,
                    -(1.0 - row.gamma).ln(),
                    row.savings_mean,
                    row.savings_std,
                ))?;
            }
        }
        Figure::Fig2 | Figure::Fig4 => {
            w.write_record([
                "lambda",
                "gamma",
                "true_err_mean",
                "true_err_std",
                "pred_err_mean",
                "pred_err_std",
            ])?;
            for row in &table {
                w.serialize((
                    row.lambda,
                    row.gamma,
                    row.true_err_mean,
                    row.true_err_std,
                    row.pred_err_mean,
                    row.pred_err_std,
                ))?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}
