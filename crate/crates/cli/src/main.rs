//! Command-line driver: dataset generation, training, sampling, evaluation
//! and the chart/OT ablation.

// `!(x > 0.0)` rejects NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sphereflow::Chart;

use commands::{AblateArgs, EvalArgs, SampleArgs, TrainArgs};
use config::{Kind, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input; exit code 2.
    Usage(String),
    /// Floating-point failure during training or sampling; exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<sphereflow::Error> for CliError {
    fn from(e: sphereflow::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sphereflow", version, about = "Fisher-Rao flow matching on categorical data")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// Flat key=value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every source of randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for sampling and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Override any config key, e.g. --set learning_rate=3e-4.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a toy dataset and write its truth sidecar.
    MakeData {
        #[arg(long)]
        kind: Option<Kind>,
        /// Categories per position.
        #[arg(long = "K")]
        classes: Option<usize>,
        /// Sequence length.
        #[arg(long = "k")]
        length: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a flow model on a dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        chart: Option<Chart>,
        /// Minibatch optimal-transport pairing on or off.
        #[arg(long)]
        ot: Option<OnOff>,
        #[arg(long)]
        eval_samples: Option<usize>,
        /// Continue from a checkpoint up to the configured step count.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw sequences from a trained model.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        sampler_steps: Option<usize>,
        /// Also write final sphere coordinates.
        #[arg(long)]
        keep_continuous: bool,
        #[arg(long = "K")]
        classes: Option<usize>,
        #[arg(long = "k")]
        length: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score samples against a truth sidecar.
    Eval {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train and score every chart × OT combination over several seeds.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "sphere,simplex")]
        charts: Vec<Chart>,
        #[arg(long, value_delimiter = ',', default_value = "on,off")]
        ot: Vec<OnOff>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum OnOff {
    On,
    Off,
}

fn resolve(shared: &Shared, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &shared.config {
        cfg.load_file(path)?;
    }
    for pair in &shared.set {
        cfg.set_pair(pair)?;
    }
    let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
    set("seed", shared.seed.map(|v| v.to_string()))?;
    set("out_dir", shared.out_dir.as_ref().map(|p| p.display().to_string()))?;
    match command {
        Command::MakeData { kind, classes, length, n, .. } => {
            set("kind", kind.map(|v| v.to_string()))?;
            set("classes", classes.map(|v| v.to_string()))?;
            set("length", length.map(|v| v.to_string()))?;
            set("n", n.map(|v| v.to_string()))?;
        }
        Command::Train { steps, chart, ot, eval_samples, .. } => {
            set("steps", steps.map(|v| v.to_string()))?;
            set("chart", chart.map(|v| v.to_string()))?;
            set("ot", ot.map(|v| (v == OnOff::On).to_string()))?;
            set("eval_samples", eval_samples.map(|v| v.to_string()))?;
        }
        Command::Sample { scheme, sampler_steps, .. } => {
            set("scheme", scheme.clone())?;
            set("sampler_steps", sampler_steps.map(|v| v.to_string()))?;
        }
        Command::Eval { .. } | Command::Ablate { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.shared, &cli.command)?;
    cfg.validate()?;
    if cli.shared.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    if let Some(n) = cli.shared.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::MakeData { out, .. } => commands::make_data(&cfg, out),
        Command::Train { data, resume, .. } => commands::train(&cfg, TrainArgs { data, resume }),
        Command::Sample { checkpoint, n, keep_continuous, classes, length, out, .. } => {
            commands::sample(&cfg, SampleArgs { checkpoint, n, keep_continuous, classes, length, out })
        }
        Command::Eval { samples, truth } => commands::eval(&cfg, EvalArgs { samples, truth }),
        Command::Ablate { data, charts, ot, seeds } => commands::ablate(
            &cfg,
            AblateArgs { data, charts, ot: ot.into_iter().map(|v| v == OnOff::On).collect(), seeds },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
