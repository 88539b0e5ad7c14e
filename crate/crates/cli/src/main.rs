use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use conformal_sampling::calibration::{lambda_grid, CalibrationReport, DEFAULT_LEVELS};
use conformal_sampling::components::gamma_grid;
use conformal_sampling::evaluation::{component_sweep, run_trial, sweep, write_csv, TrialOptions};
use conformal_sampling::synthetic::{generate, ComponentModel, Difficulty, SynthSpec};
use conformal_sampling::{
    achievable_epsilon_band, calibrate_gamma, calibrate_lambda, load_dataset_with, save_dataset,
    split_pair, Dataset, Error, GammaSpec, LoadOptions, RiskSpec, ScorerKind, SplitFractions,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ABSTAINED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "conformal-sampling",
    version,
    about = "Risk-controlled sampling sets from recorded generations"
)]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate sampling thresholds (and optionally a component threshold) on a dataset.
    Calibrate(CalibrateArgs),
    /// One split-calibrate-test trial; reports test metrics.
    Evaluate(EvaluateArgs),
    /// Repeated trials over a list of epsilons; per-trial CSV.
    Sweep(SweepArgs),
    /// Repeated component-selection trials over a list of alphas; per-trial CSV.
    Components(ComponentsArgs),
    /// Write a synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Split sample texts into sentences, one JSON line per component.
    SplitText(SplitTextArgs),
    /// Print the achievable epsilon band.
    Band(BandArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Reject unknown keys in the input instead of warning.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct RiskArgs {
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long, default_value = "max")]
    scorer: ScorerKind,
    #[arg(long, default_value_t = 0.5)]
    rho1: f64,
    #[arg(long, default_value_t = 0.5)]
    rho2: f64,
    /// Quantile levels per threshold in the search grid.
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    grid_size: usize,
    /// Optimization, calibration and test fractions.
    #[arg(long, default_value = "0.1,0.2,0.7", value_parser = parse_split)]
    split: SplitFractions,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RiskArgs {
    fn spec(&self, epsilon: f64) -> RiskSpec {
        RiskSpec {
            epsilon,
            delta: self.delta,
            k_max: self.k_max,
            rho1: self.rho1,
            rho2: self.rho2,
        }
    }

    fn options(&self) -> TrialOptions {
        TrialOptions {
            fractions: self.split,
            grid_levels: self.grid_size,
        }
    }
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    risk: RiskArgs,
    #[arg(long)]
    epsilon: f64,
    /// Also calibrate a component threshold at this level.
    #[arg(long)]
    alpha: Option<f64>,
    /// JSON report path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    risk: RiskArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    risk: RiskArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// CSV path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the aggregated JSON summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ComponentsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long, default_value_t = DEFAULT_LEVELS)]
    grid_size: usize,
    #[arg(long, default_value = "0.1,0.2,0.7", value_parser = parse_split)]
    split: SplitFractions,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    /// Per-sample admission probability shared by all prompts.
    #[arg(long, conflicts_with = "beta")]
    p: Option<f64>,
    /// Per-prompt admission probability drawn from Beta(a, b), given as "a,b".
    #[arg(long, value_delimiter = ',', num_args = 2)]
    beta: Option<Vec<f64>>,
    /// Copula correlation between quality and admission, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    informativeness: f64,
    /// Components per sample; 0 for none.
    #[arg(long, default_value_t = 0)]
    components: usize,
    #[arg(long, default_value_t = 0.7)]
    component_p: f64,
    #[arg(long, default_value_t = 0.8)]
    coupling: f64,
    #[arg(long, default_value_t = 0.0)]
    duplicate_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitTextArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BandArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A flag combination rejected before any work is done.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn parse_split(text: &str) -> std::result::Result<SplitFractions, String> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [opt, cal, test] => SplitFractions::new(*opt, *cal, *test).map_err(|e| e.to_string()),
        _ => Err(format!(
            "expected three comma-separated fractions, got {}",
            parts.len()
        )),
    }
}

fn load(args: &DataArgs, require_components: bool) -> Result<Dataset> {
    let options = LoadOptions {
        require_components,
        strict: args.strict,
    };
    let data = load_dataset_with(&args.data, options)?;
    info!("loaded {} records from {}", data.len(), args.data.display());
    Ok(data)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CalibrateOutput {
    #[serde(flatten)]
    report: CalibrationReport,
    n_opt: usize,
    n_cal: usize,
}

fn calibrate(args: &CalibrateArgs) -> Result<bool> {
    let spec = args.risk.spec(args.epsilon);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let gamma_spec = args
        .alpha
        .map(|alpha| {
            let s = GammaSpec {
                alpha,
                delta: args.risk.delta,
                k_max: args.risk.k_max,
            };
            s.validate().map(|_| s).map_err(|e| usage(e.to_string()))
        })
        .transpose()?;
    let data = load(&args.data, gamma_spec.is_some())?;
    data.require_k_max(spec.k_max)?;
    let band = achievable_epsilon_band(&data, spec.k_max)?;

    let split = args.risk.split;
    let (opt, cal) = split_pair(&data, split.opt / (split.opt + split.cal), args.risk.seed)?;
    let grid = lambda_grid(&opt, args.risk.scorer, spec.k_max, args.risk.grid_size)?;
    info!(
        "testing {} configurations on {} calibration records",
        grid.len(),
        cal.len()
    );
    let result = calibrate_lambda(&opt, &cal, &grid, &spec)?;
    let components = match gamma_spec {
        Some(s) => {
            let gammas = gamma_grid(&opt, s.k_max, args.risk.grid_size)?;
            Some(calibrate_gamma(&cal, &gammas, &s)?)
        }
        None => None,
    };
    let abstained = result.abstained() || components.as_ref().is_some_and(|c| c.abstained());
    let report = CalibrationReport {
        spec,
        achievable_band: band,
        grid,
        result,
        components,
    };
    write_json(
        &CalibrateOutput {
            report,
            n_opt: opt.len(),
            n_cal: cal.len(),
        },
        args.out.as_deref(),
    )?;
    Ok(abstained)
}

fn evaluate(args: &EvaluateArgs) -> Result<bool> {
    let spec = args.risk.spec(args.epsilon);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let data = load(&args.data, false)?;
    let row = run_trial(
        &data,
        &spec,
        args.risk.scorer,
        args.risk.seed,
        &args.risk.options(),
    )?;
    write_json(&row, args.out.as_deref())?;
    Ok(row.abstained)
}

fn run_sweep(args: &SweepArgs) -> Result<bool> {
    for &e in &args.epsilons {
        args.risk
            .spec(e)
            .validate()
            .map_err(|err| usage(err.to_string()))?;
    }
    let data = load(&args.data, false)?;
    let template = args.risk.spec(args.epsilons[0]);
    info!(
        "{} trials over {} epsilons",
        args.trials,
        args.epsilons.len()
    );
    let report = sweep(
        &data,
        &args.epsilons,
        &template,
        args.risk.scorer,
        args.trials,
        args.risk.seed,
        &args.risk.options(),
    )?;
    let mut out = output(args.out.as_deref())?;
    write_csv(&report.rows, &mut out)?;
    out.flush()?;
    if let Some(path) = &args.summary {
        write_json(&report, Some(path))?;
    }
    Ok(false)
}

fn run_components(args: &ComponentsArgs) -> Result<bool> {
    let template = GammaSpec {
        alpha: args.alphas[0],
        delta: args.delta,
        k_max: args.k_max,
    };
    for &alpha in &args.alphas {
        GammaSpec { alpha, ..template }
            .validate()
            .map_err(|e| usage(e.to_string()))?;
    }
    let data = load(&args.data, true)?;
    let options = TrialOptions {
        fractions: args.split,
        grid_levels: args.grid_size,
    };
    let report = component_sweep(
        &data,
        &args.alphas,
        &template,
        args.trials,
        args.seed,
        &options,
    )?;
    let mut out = output(args.out.as_deref())?;
    write_csv(&report.rows, &mut out)?;
    out.flush()?;
    if let Some(path) = &args.summary {
        write_json(&report, Some(path))?;
    }
    Ok(false)
}

fn gen_synth(args: &GenSynthArgs) -> Result<bool> {
    let difficulty = match (args.p, args.beta.as_deref()) {
        (Some(p), None) => Difficulty::FixedP { p },
        (None, Some([a, b])) => Difficulty::PerPromptBeta { a: *a, b: *b },
        (None, None) => return Err(usage("one of --p or --beta is required")),
        _ => return Err(usage("--p and --beta are mutually exclusive")),
    };
    let spec = SynthSpec {
        n_prompts: args.n,
        k_max: args.k_max,
        difficulty,
        quality_informativeness: args.informativeness,
        components: (args.components > 0).then_some(ComponentModel {
            per_sample: args.components,
            admission_p: args.component_p,
            coupling: args.coupling,
        }),
        duplicate_rate: args.duplicate_rate,
        seed: args.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let data = generate(&spec)?;
    save_dataset(&data, &args.out)?;
    info!("wrote {} records to {}", data.len(), args.out.display());
    Ok(false)
}

#[derive(Serialize)]
struct ComponentLine<'a> {
    id: &'a str,
    sample: usize,
    component: usize,
    text: &'a str,
}

/// Sentences of `text`: split after each period and at line breaks, trimmed, empties dropped.
fn sentences(text: &str) -> Vec<&str> {
    text.split_inclusive('.')
        .flat_map(|s| s.split('\n'))
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != ".")
        .collect()
}

fn split_text(args: &SplitTextArgs) -> Result<bool> {
    let data = load(&args.data, false)?;
    let mut out = output(args.out.as_deref())?;
    for record in data.iter() {
        for (s, sample) in record.samples.iter().enumerate() {
            let Some(text) = sample.text.as_deref() else {
                return Err(Error::MissingText {
                    id: record.id.clone(),
                    sample: s,
                }
                .into());
            };
            for (c, sentence) in sentences(text).into_iter().enumerate() {
                let line = ComponentLine {
                    id: &record.id,
                    sample: s,
                    component: c,
                    text: sentence,
                };
                serde_json::to_writer(&mut out, &line)?;
                writeln!(out)?;
            }
        }
    }
    out.flush()?;
    Ok(false)
}

#[derive(Serialize)]
struct BandOutput {
    k_max: usize,
    lower: f64,
    upper: f64,
}

fn band(args: &BandArgs) -> Result<bool> {
    let data = load(&args.data, false)?;
    let (lower, upper) = achievable_epsilon_band(&data, args.k_max)?;
    write_json(
        &BandOutput {
            k_max: args.k_max,
            lower,
            upper,
        },
        args.out.as_deref(),
    )?;
    Ok(false)
}

fn dispatch(command: &Command) -> Result<bool> {
    match command {
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Components(a) => run_components(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::SplitText(a) => split_text(a),
        Command::Band(a) => band(a),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let threads = match cli.jobs {
        Some(0) => return Err(usage("--jobs must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    pool.install(|| dispatch(&cli.command))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// The error chain, skipping causes already quoted by the message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut message = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !message.contains(&text) {
            message.push_str(": ");
            message.push_str(&text);
        }
    }
    message
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("abstained: no configuration passed testing");
            ExitCode::from(EXIT_ABSTAINED)
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
