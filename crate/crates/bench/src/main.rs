use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gandetect_bench::commands::{cmd_eval, cmd_inspect, cmd_sweep, cmd_synth, cmd_train, InspectWhat};
use gandetect_bench::{BenchConfig, BenchError, BenchResult};

#[derive(Parser, Debug)]
#[command(name = "gandetect", version, about = "Synthetic-image detector benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Benchmark configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides the configuration; 0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus described by the configuration.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one configured detector on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: String,
        /// Model file (default: <out_dir>/models/<id>.model).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a split with a trained detector.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every detector under the JPEG and resize grids.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the averaged spectrum or fingerprint of one source as PGM.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: String,
        /// avg-spectrum or fingerprint.
        #[arg(long)]
        what: String,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> BenchResult<BenchConfig> {
    let mut cfg = BenchConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> BenchResult<T> + Send) -> BenchResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::usage(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

fn run(cli: Cli) -> BenchResult<()> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load(&common)?;
            for path in in_pool(cfg.workers, || cmd_synth(&cfg))? {
                println!("{}", path.display());
            }
        }
        Command::Train { common, detector, out } => {
            let cfg = load(&common)?;
            let path = in_pool(cfg.workers, || cmd_train(&cfg, &detector, out.as_deref()))?;
            println!("{}", path.display());
        }
        Command::Eval {
            common,
            detector,
            model,
            split,
            out,
        } => {
            let cfg = load(&common)?;
            let (row, path) = in_pool(cfg.workers, || {
                cmd_eval(&cfg, &detector, model.as_deref(), split.as_deref(), out.as_deref())
            })?;
            println!("{}", row.summary());
            println!("{}", path.display());
        }
        Command::Sweep { common, out } => {
            let cfg = load(&common)?;
            let path = in_pool(cfg.workers, || cmd_sweep(&cfg, out.as_deref()))?;
            println!("{}", path.display());
        }
        Command::Inspect {
            common,
            source,
            what,
            split,
            out,
        } => {
            let cfg = load(&common)?;
            let what: InspectWhat = what.parse()?;
            let path = in_pool(cfg.workers, || {
                cmd_inspect(&cfg, split.as_deref(), &source, what, out.as_deref())
            })?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
