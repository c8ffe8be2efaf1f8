//! `hyperdisc` command-line tool.
//!
//! Every subcommand writes its report to `--out` (or stdout) and a run
//! manifest next to it. Exit codes: 0 success, 1 I/O, 2 validation,
//! 3 assumption violation, 4 non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyperdisc::estimation::{fit_mle, EstimationConfig};
use hyperdisc::identification::{
    check_assumptions, identify_exact, identify_exact_macro, identify_from_panel, Anchor, IdentifyOptions,
    SolveMode,
};
use hyperdisc::model::{solve_backward, EqualityPair, ModelSpec};
use hyperdisc::montecarlo::{records_to_csv, run_replications, summarize, McConfig};
use hyperdisc::simulation::{estimate_transitions, simulate_panel, PanelData};
use hyperdisc::Error;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "hyperdisc", version, about = "Dynamic discrete choice with quasi-hyperbolic discounting")]
struct Cli {
    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel from a model file.
    Simulate(SimulateArgs),
    /// Identify beta and delta from a model (exact CCPs) or a panel.
    Identify(IdentifyArgs),
    /// Maximum-likelihood estimation on a panel.
    Estimate(EstimateArgs),
    /// Monte Carlo study of the linear-utility design.
    Montecarlo(MontecarloArgs),
    /// Report which identification assumptions a model satisfies.
    Check(CheckArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; falls back to HYPERDISC_SEED.
    #[arg(long, env = "HYPERDISC_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of agents.
    #[arg(long, short = 'n')]
    agents: usize,
    /// Initial state distribution as a JSON array; uniform by default.
    #[arg(long)]
    initial: Option<String>,
    #[command(flatten)]
    seed: SeedArg,
    /// Panel CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    RightInverse,
    ConstrainedLs,
}

impl From<ModeArg> for SolveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::RightInverse => SolveMode::PaperRightInverse,
            ModeArg::ConstrainedLs => SolveMode::ConstrainedLs,
        }
    }
}

#[derive(Args)]
struct IdentifyArgs {
    /// Model file. Alone it selects exact mode; with --panel it only
    /// supplies dimensions and equality pairs.
    #[arg(long, required_unless_present = "panel")]
    model: Option<PathBuf>,
    /// Panel CSV; selects data mode.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Equality pairs as a JSON file of `[k, l, x1, x2]` entries; overrides the model's.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Utility anchor `action,state,value` for utility recovery.
    #[arg(long, value_parser = parse_anchor)]
    anchor: Option<Anchor>,
    /// JSON file with the M x M macro-state transition matrix, rows `h(. | w)`.
    #[arg(long = "macro")]
    macro_h: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "right-inverse")]
    mode: ModeArg,
    /// Relative singular-value threshold for rank decisions.
    #[arg(long)]
    rank_tol: Option<f64>,
    /// Number of states in data mode without a model file.
    #[arg(long)]
    states: Option<usize>,
    /// Number of actions in data mode without a model file.
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Estimation config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MontecarloArgs {
    /// Monte Carlo config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides the base seed.
    #[command(flatten)]
    seed: SeedArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "macro")]
    macro_h: Option<PathBuf>,
    #[arg(long)]
    rank_tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_anchor(s: &str) -> Result<Anchor, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, x, v] = parts[..] else {
        return Err("expected action,state,value".into());
    };
    Ok(Anchor {
        action: a.parse().map_err(|e| format!("action: {e}"))?,
        state: x.parse().map_err(|e| format!("state: {e}"))?,
        value: v.parse().map_err(|e| format!("value: {e}"))?,
    })
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: &'static str,
    status: String,
    config: Value,
    inputs: Value,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    version: &'static str,
    duration_seconds: f64,
}

/// What a subcommand produced, before the manifest is written.
struct Run {
    config: Value,
    inputs: Value,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    /// Set when the run completed its outputs but the verdict is a failure.
    failure: Option<Failure>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 1,
            Error::InvalidInput(_) | Error::Parse(_) => 2,
            Error::AssumptionViolation { .. } => 3,
            Error::InsufficientData { assumption, .. } => {
                if assumption.is_some() {
                    3
                } else {
                    2
                }
            }
            Error::NonConvergence { .. } | Error::EmptySummary => 4,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<Run, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text).map_err(|e| with_path(path)(e.into()))
}

fn load_model(path: &Path) -> Result<ModelSpec, Failure> {
    ModelSpec::load(path).map_err(with_path(path))
}

/// Writes `text` to `out`, or stdout when absent.
fn emit(out: Option<&Path>, text: &str) -> Result<Vec<PathBuf>, Failure> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| io_failure(path, e))?;
            Ok(vec![path.to_path_buf()])
        }
        None => {
            println!("{text}");
            Ok(vec![])
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn simulate(args: &SimulateArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let seed = args.seed.seed.unwrap_or(0);
    let initial = match &args.initial {
        Some(s) => serde_json::from_str::<Vec<f64>>(s).map_err(|e| Failure {
            code: 2,
            message: format!("--initial: {e}"),
        })?,
        None => vec![1.0 / model.num_states as f64; model.num_states],
    };
    let solution = solve_backward(&model)?;
    let panel = simulate_panel(&model, &solution, args.agents, &initial, seed)?;
    panel.save_csv(&args.out).map_err(with_path(&args.out))?;
    Ok(Run {
        config: json!({ "agents": args.agents, "initial_distribution": initial }),
        inputs: json!({ "model": args.model }),
        outputs: vec![args.out.clone()],
        seed: Some(seed),
        failure: None,
    })
}

fn identify(args: &IdentifyArgs) -> CmdResult {
    let model = args.model.as_deref().map(load_model).transpose()?;
    let pairs: Option<Vec<EqualityPair>> = args.pairs.as_deref().map(read_json).transpose()?;
    let h: Option<Vec<Vec<f64>>> = args.macro_h.as_deref().map(read_json).transpose()?;
    let options = IdentifyOptions {
        mode: args.mode.into(),
        rank_tol: args.rank_tol,
        anchor: args.anchor,
    };
    let result = match (&args.panel, model) {
        (None, Some(mut model)) => {
            if let Some(p) = pairs {
                model.equality_pairs = p;
            }
            match &h {
                Some(h) => identify_exact_macro(&model, h, &options)?,
                None => identify_exact(&model, &options)?,
            }
        }
        (Some(panel_path), model) => {
            let (j, k, model_pairs) = match &model {
                Some(m) => (Some(m.num_states), Some(m.num_actions), m.equality_pairs.clone()),
                None => (None, None, vec![]),
            };
            let j = args.states.or(j);
            let k = args.actions.or(k);
            let (j, k, panel) = load_panel(panel_path, j, k)?;
            let pairs = pairs.unwrap_or(model_pairs);
            identify_from_panel(&panel, j, k, &pairs, h.as_deref(), &options)?
        }
        (None, None) => unreachable!("clap requires --model or --panel"),
    };
    let outputs = emit(args.out.as_deref(), &to_json(&result))?;
    Ok(Run {
        config: json!({
            "mode": result.mode,
            "rank_tol": args.rank_tol,
            "anchor": args.anchor.map(|a| [a.action as f64, a.state as f64, a.value]),
            "macro": h,
        }),
        inputs: json!({ "model": args.model, "panel": args.panel, "pairs": args.pairs, "macro": args.macro_h }),
        outputs,
        seed: None,
        failure: None,
    })
}

/// Loads a panel, taking missing dimensions from the largest observed indices.
fn load_panel(path: &Path, j: Option<usize>, k: Option<usize>) -> Result<(usize, usize, PanelData), Failure> {
    let (j, k) = match (j, k) {
        (Some(j), Some(k)) => (j, k),
        _ => {
            let file = std::fs::File::open(path).map_err(|e| io_failure(path, e))?;
            let probe = PanelData::read_csv(file, usize::MAX, usize::MAX).map_err(with_path(path))?;
            let (oj, ok) = probe.observed_dimensions();
            (j.unwrap_or(oj), k.unwrap_or(ok))
        }
    };
    let panel = PanelData::load_csv(path, j, k).map_err(with_path(path))?;
    Ok((j, k, panel))
}

fn estimate(args: &EstimateArgs) -> CmdResult {
    let config = match &args.config {
        Some(path) => EstimationConfig::load(path).map_err(with_path(path))?,
        None => EstimationConfig::default(),
    };
    let (j, k, panel) = load_panel(
        &args.panel,
        args.states.or(config.num_states),
        args.actions.or(config.num_actions),
    )?;
    let f_hat = estimate_transitions(&panel, j, k)?;
    let result = fit_mle(&panel, &config, &f_hat)?;
    let outputs = emit(args.out.as_deref(), &to_json(&result))?;
    Ok(Run {
        config: serde_json::to_value(&config).expect("config serializes"),
        inputs: json!({ "panel": args.panel, "config": args.config, "num_states": j, "num_actions": k }),
        outputs,
        seed: None,
        failure: None,
    })
}

fn montecarlo(args: &MontecarloArgs, jobs: Option<usize>) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => McConfig::load(path).map_err(with_path(path))?,
        None => McConfig::default(),
    };
    if let Some(r) = args.reps {
        config.replications = r;
    }
    if let Some(s) = args.seed.seed {
        config.base_seed = s;
    }
    if jobs.is_some() {
        config.jobs = jobs;
    }
    config.validate()?;
    let records = run_replications(&config)?;
    let summary = summarize(&records, config.true_values())?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let table = summary.render_table();
    let files = [
        ("summary.csv", summary.to_csv()?),
        ("summary.txt", table.clone()),
        ("replications.csv", records_to_csv(&records)?),
    ];
    let mut outputs = Vec::new();
    for (name, text) in files {
        let path = args.out.join(name);
        std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        outputs.push(path);
    }
    print!("{table}");
    Ok(Run {
        config: serde_json::to_value(&config).expect("config serializes"),
        inputs: json!({ "config": args.config }),
        outputs,
        seed: Some(config.base_seed),
        failure: None,
    })
}

fn check(args: &CheckArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let h: Option<Vec<Vec<f64>>> = args.macro_h.as_deref().map(read_json).transpose()?;
    let report = check_assumptions(&model, h.as_deref(), args.rank_tol)?;
    let outputs = emit(args.out.as_deref(), &to_json(&report))?;
    let failed: Vec<&str> = report.iter().filter(|c| !c.passed).map(|c| c.assumption.as_str()).collect();
    let failure = (!failed.is_empty()).then(|| Failure {
        code: 3,
        message: format!("failed: {}", failed.join(", ")),
    });
    Ok(Run {
        config: json!({ "rank_tol": args.rank_tol, "macro": h }),
        inputs: json!({ "model": args.model, "macro": args.macro_h }),
        outputs,
        seed: None,
        failure,
    })
}

/// `<out>.manifest.json` for file outputs, `manifest.json` inside a directory output.
fn manifest_path(command: &Command) -> Option<PathBuf> {
    let file = |p: &Path| {
        let mut s = p.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    };
    match command {
        Command::Simulate(a) => Some(file(&a.out)),
        Command::Identify(a) => a.out.as_deref().map(file),
        Command::Estimate(a) => a.out.as_deref().map(file),
        Command::Check(a) => a.out.as_deref().map(file),
        Command::Montecarlo(a) => Some(a.out.join("manifest.json")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("global pool is configured once");
    }
    let start = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(a)),
        Command::Identify(a) => ("identify", identify(a)),
        Command::Estimate(a) => ("estimate", estimate(a)),
        Command::Montecarlo(a) => ("montecarlo", montecarlo(a, cli.jobs)),
        Command::Check(a) => ("check", check(a)),
    };
    let (run, failure) = match outcome {
        Ok(mut run) => {
            let failure = run.failure.take();
            (Some(run), failure)
        }
        Err(f) => (None, Some(f)),
    };
    if let Some(run) = run {
        let manifest = RunManifest {
            subcommand: name,
            status: failure.as_ref().map_or("ok".into(), |f| f.message.clone()),
            config: run.config,
            inputs: run.inputs,
            outputs: run.outputs,
            seed: run.seed,
            version: env!("CARGO_PKG_VERSION"),
            duration_seconds: start.elapsed().as_secs_f64(),
        };
        let text = to_json(&manifest);
        match manifest_path(&cli.command) {
            Some(path) => {
                if let Err(e) = std::fs::write(&path, text) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            None => eprintln!("{text}"),
        }
    }
    match failure {
        None => ExitCode::SUCCESS,
        Some(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

