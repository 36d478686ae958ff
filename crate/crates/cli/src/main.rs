use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Scale-aware crowd localization: synthesize, fit, plan, train, evaluate and report.
#[derive(Debug, Parser)]
#[command(name = "gmscope", version)]
struct Cli {
    /// Log filter for standard error (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic benchmark directory.
    Synth(SynthArgs),
    /// Fit a scale mixture to every scene's annotations.
    Fit(FitArgs),
    /// Build per-scene scope plans.
    Plan(PlanArgs),
    /// Train one ablation arm.
    Train(TrainArgs),
    /// Evaluate a trained run on a split.
    Eval(EvalArgs),
    /// Summarize runs as a markdown ablation table and optimal-scale sweep.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    StrongShift,
    Perspective,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n_train: usize,
    #[arg(long, default_value_t = 5)]
    n_val: usize,
    #[arg(long, default_value_t = 10)]
    n_test: usize,
    #[arg(long, value_enum, default_value_t = Preset::StrongShift)]
    preset: Preset,
    /// Full generator config as JSON; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the pixel noise level.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct SceneSelection {
    /// Dataset directory written by `synth` (or laid out the same way).
    #[arg(long)]
    data: PathBuf,
    /// Which split to process: train, val, test or all.
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct MixtureArgs {
    /// Pin the component count instead of selecting it by BIC.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long, default_value_t = 6)]
    c_max: usize,
    /// Fit raw box areas instead of log areas.
    #[arg(long)]
    raw_alpha: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    scenes: SceneSelection,
    #[command(flatten)]
    mixture: MixtureArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    scenes: SceneSelection,
    #[command(flatten)]
    mixture: MixtureArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 250.0)]
    optimal_scale: f64,
    /// Use the literal sum / (optimal * (N - 1)) factor instead of sqrt(optimal / mean).
    #[arg(long)]
    verbatim_factor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArmArg {
    Baseline,
    PlainTeacher,
    GmsInference,
    Scoped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WhichParams {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoints, history and the resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    arm: ArmArg,
    /// Training config JSON; explicit flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_conf: Option<f64>,
    #[arg(long)]
    lr_thr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    ema_m: Option<f64>,
    #[arg(long)]
    optimal_scale: Option<f64>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    c_max: Option<usize>,
    #[arg(long)]
    consistency_weight: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    eval_with: Option<WhichParams>,
    /// Write student/teacher checkpoints every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Predict through per-scene scope plans built from the split's annotations.
    #[arg(long)]
    with_gms: bool,
    /// Defaults to the run's own optimal scale.
    #[arg(long)]
    optimal_scale: Option<f64>,
    /// Defaults to the run's configured parameter set.
    #[arg(long, value_enum)]
    eval_with: Option<WhichParams>,
    /// Maximum-cardinality assignment instead of greedy matching.
    #[arg(long)]
    optimal_assignment: bool,
    #[arg(long)]
    min_area: Option<usize>,
    /// Report JSON path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-scene CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directories to tabulate.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Optimal scales for the sweep table, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![60.0, 250.0, 1000.0, 4000.0])]
    sweep: Vec<f64>,
    /// Run whose model is re-planned in the sweep; defaults to the first baseline-trained run.
    #[arg(long)]
    sweep_run: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `gmscope --help` for usage");
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
