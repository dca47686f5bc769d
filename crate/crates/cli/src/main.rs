use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use empire_core::covariance_pe::exact_pe_complexity;
use empire_core::covariance_qopt::{default_policy_tol, exact_q_complexity, exact_q_diag_cov, q_conservative_bound};
use empire_core::empire::write_trace;
use empire_core::experiments::{self, BatteryConfig, ExampleFamily, Figure, Mode, RECORDS_FILE};
use empire_core::tabular::{greedy_policy, q_to_rows, reduce_to_mrp, solve_q_exact, Mdp, Policy};
use empire_core::RewardModel;
use serde_json::json;

/// Exit code for a battery that hit its sample budget in some trial.
const BUDGET_EXIT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "empire",
    version,
    about = "Instance-dependent early stopping for tabular evaluation and Q-estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact V*/Q* and greedy policy for a model.
    Solve(ModelArgs),
    /// Exact instance complexities of a model.
    Complexity(ModelArgs),
    /// One early-stopped evaluation run on the two-state family; prints the epoch trace.
    EmpirePe(RunArgs),
    /// One early-stopped Q-estimation run on the two-state family; prints the epoch trace.
    EmpireQ(RunArgs),
    /// Seeded trial battery with resumable CSV output.
    Battery(BatteryArgs),
    /// Per-figure summary CSVs from a battery's records.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// JSON model file; defaults to the two-state family at --gamma/--lambda.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Reward noise half-width (uniform).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pe,
    Q,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pe => Mode::Pe,
            ModeArg::Q => Mode::Q,
        }
    }
}

#[derive(Args)]
struct BatteryArgs {
    /// JSON battery config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Pe)]
    mode: ModeArg,
    /// Discount grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    /// Hardness grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_samples: Option<usize>,
    /// Ten discounts log-spaced in [0.9, 0.99] instead of the desk grid.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Battery output directory holding the records file.
    #[arg(long)]
    out: PathBuf,
    /// Figures to emit; defaults to all matching the records' mode.
    #[arg(long, value_delimiter = ',')]
    figure: Vec<Figure>,
}

fn load_model(args: &ModelArgs) -> anyhow::Result<Mdp> {
    match &args.model {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(Mdp::from_json(&text)?)
        }
        None => Ok(ExampleFamily::new(args.gamma, args.lambda)?.mdp()),
    }
}

fn rewards(noise: f64) -> anyhow::Result<RewardModel> {
    Ok(if noise == 0.0 {
        RewardModel::deterministic()
    } else {
        RewardModel::uniform(noise)?
    })
}

fn solve(args: &ModelArgs) -> anyhow::Result<()> {
    let mdp = load_model(args)?;
    let q = solve_q_exact(&mdp, 1e-12)?;
    let rows = q_to_rows(&q);
    let q_table: Vec<&[f64]> = rows.chunks(mdp.actions()).collect();
    let v: Vec<f64> = q_table
        .iter()
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let out = json!({
        "discount": mdp.discount(),
        "q": q_table,
        "v": v,
        "policy": greedy_policy(&q).actions(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn complexity(args: &ModelArgs) -> anyhow::Result<()> {
    let mdp = load_model(args)?;
    let rm = rewards(args.noise)?;
    let gamma = mdp.discount();
    let q_star = solve_q_exact(&mdp, 1e-12)?;
    let diag = exact_q_diag_cov(&mdp, &q_star, &rm)?;
    let pe = exact_pe_complexity(&reduce_to_mrp(&mdp, &Policy::constant(mdp.states(), 0))?, &rm)?;
    let out = json!({
        "discount": gamma,
        "evaluation_first_action": pe,
        "q_exact": exact_q_complexity(&mdp, &rm, default_policy_tol(gamma))?,
        "q_conservative": q_conservative_bound(&diag, gamma)?,
        "q_diag_cov": diag,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn single_run(mode: Mode, args: &RunArgs) -> anyhow::Result<ExitCode> {
    let desk = BatteryConfig::desk(mode);
    let config = BatteryConfig {
        gammas: vec![args.gamma],
        lambdas: vec![args.lambda],
        epsilon: args.eps.unwrap_or(desk.epsilon),
        delta: args.delta,
        trials: 1,
        seed: args.seed,
        max_samples: args.max_samples.unwrap_or(desk.max_samples),
        ..desk
    };
    config.validate()?;
    let (record, trace) = experiments::run_trial(&config, 0)?;
    let mut stdout = io::stdout().lock();
    write_trace(&mut stdout, 0, &trace, true)?;
    writeln!(stdout, "# {}", serde_json::to_string(&record)?)?;
    Ok(if record.terminated {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(BUDGET_EXIT)
    })
}

fn battery_config(args: &BatteryArgs) -> anyhow::Result<BatteryConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None if args.full => BatteryConfig::full(args.mode.into()),
        None => BatteryConfig::desk(args.mode.into()),
    };
    if args.full && args.config.is_some() {
        config.gammas = BatteryConfig::full(config.mode).gammas;
    }
    if let Some(g) = &args.gamma {
        config.gammas = g.clone();
    }
    if let Some(l) = &args.lambda {
        config.lambdas = l.clone();
    }
    config.epsilon = args.eps.unwrap_or(config.epsilon);
    config.delta = args.delta.unwrap_or(config.delta);
    config.trials = args.trials.unwrap_or(config.trials);
    config.seed = args.seed.unwrap_or(config.seed);
    config.max_samples = args.max_samples.unwrap_or(config.max_samples);
    config.validate()?;
    Ok(config)
}

fn battery(args: &BatteryArgs) -> anyhow::Result<ExitCode> {
    let config = battery_config(args)?;
    let summary = experiments::run_trials(&config, &args.out)?;
    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "gamma,lambda,trials,savings_mean,savings_std,true_err_mean,pred_err_mean,max_epochs,coverage"
    )?;
    for row in experiments::factor_savings_table(&summary.records) {
        writeln!(
            stdout,
            "{},{},{},{:.6},{:.6},{:.6e},{:.6e},{},{:.4}",
            row.gamma,
            row.lambda,
            row.trials,
            row.savings_mean,
            row.savings_std,
            row.true_err_mean,
            row.pred_err_mean,
            row.max_epochs,
            row.coverage
        )?;
    }
    if summary.budget_exhausted > 0 {
        eprintln!(
            "{} of {} trials stopped on the sample budget",
            summary.budget_exhausted,
            summary.records.len()
        );
        return Ok(ExitCode::from(BUDGET_EXIT));
    }
    Ok(ExitCode::SUCCESS)
}

fn plotdata(args: &PlotArgs) -> anyhow::Result<()> {
    let path = args.out.join(RECORDS_FILE);
    let (_, hash, records) = experiments::read_records(&path).with_context(|| format!("reading {}", path.display()))?;
    let Some(first) = records.first() else {
        bail!("{} holds no records", path.display());
    };
    let figures: Vec<Figure> = if args.figure.is_empty() {
        Figure::all().into_iter().filter(|f| f.mode() == first.mode).collect()
    } else {
        args.figure.clone()
    };
    for figure in figures {
        let written = experiments::emit_plotdata(&records, figure, &args.out, &hash)?;
        println!("{}", written.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Solve(a) => solve(a).map(|_| ExitCode::SUCCESS),
        Command::Complexity(a) => complexity(a).map(|_| ExitCode::SUCCESS),
        Command::EmpirePe(a) => single_run(Mode::Pe, a),
        Command::EmpireQ(a) => single_run(Mode::Q, a),
        Command::Battery(a) => battery(a),
        Command::Plotdata(a) => plotdata(a).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
