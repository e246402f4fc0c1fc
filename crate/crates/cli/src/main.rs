use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use liveness_core::io::{self, Config, Split, SEED_ENV};
use liveness_core::Error;

/// Reflection-based face liveness on synthetic data.
#[derive(Parser)]
#[command(name = "liveness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; omitted keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed. Overrides AG_SEED, which overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Videos per subject kind.
        #[arg(long)]
        per_kind: Option<usize>,
        #[arg(long)]
        val_per_kind: Option<usize>,
        #[arg(long)]
        test_per_kind: Option<usize>,
        /// Frames per video.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a model on the train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-epoch losses and validation EER, as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lambda_dep: Option<f64>,
        #[arg(long)]
        lambda_mat: Option<f64>,
    },
    /// Pick τ_cls at the validation EER and report error rates on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Per-video outcomes then the summary, as JSON lines.
        #[arg(long)]
        outcomes: Option<PathBuf>,
        #[arg(long)]
        tau_reg: Option<f64>,
    },
    /// Verify one video against the challenge stored with it. Exits 0 when
    /// live, 1 when spoof.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau_cls: f64,
        #[arg(long, default_value_t = liveness_core::DEFAULT_TAU_REG)]
        tau_reg: f64,
    },
    /// Mean and standard deviation of validation EER over a grid of
    /// depth and material loss weights.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Cells as JSON lines.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Runs per cell.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?}, expected train, val or test"))
}

fn load_config(common: &Common) -> Result<Config, Error> {
    let mut config = Config::load(common.config.as_deref())?;
    let env = std::env::var(SEED_ENV).ok();
    config.resolve_seed(common.seed, env.as_deref())?;
    Ok(config)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_)
        | Error::Alignment(_)
        | Error::DegeneratePair { .. }
        | Error::Config(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::Checkpoint(_) => 3,
        Error::Diverged { .. } => 4,
    }
}

fn opt(p: &Option<PathBuf>) -> Option<&Path> {
    p.as_deref()
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::GenData {
            common,
            out,
            per_kind,
            val_per_kind,
            test_per_kind,
            frames,
        } => {
            let mut c = load_config(&common)?;
            set(&mut c.dataset.per_kind, per_kind);
            set(&mut c.dataset.val_per_kind, val_per_kind);
            set(&mut c.dataset.test_per_kind, test_per_kind);
            set(&mut c.dataset.frames, frames);
            let m = io::gen_data(&c, &out)?;
            println!(
                "wrote {} videos ({} live, {} spoof) to {}",
                m.records.len(),
                m.live_count,
                m.spoof_count,
                out.display()
            );
        }
        Command::Train {
            common,
            data,
            checkpoint,
            log,
            epochs,
            batch_size,
            lambda_dep,
            lambda_mat,
        } => {
            let mut c = load_config(&common)?;
            set(&mut c.train.epochs, epochs);
            set(&mut c.train.batch_size, batch_size);
            set(&mut c.train.weights.lambda_dep, lambda_dep);
            set(&mut c.train.weights.lambda_mat, lambda_mat);
            let out = io::train_model(&c, &data, &checkpoint, opt(&log))?;
            let last = out.log.last().expect("at least one epoch");
            match last.val_eer {
                Some(eer) => println!("final validation EER: {eer:.4}"),
                None => println!("final validation EER: n/a (empty validation split)"),
            }
            println!("loss: {:.6}", last.total);
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            split,
            outcomes,
            tau_reg,
        } => {
            let mut c = load_config(&common)?;
            set(&mut c.eval.tau_reg, tau_reg);
            let e = io::eval_model(&c, &checkpoint, &data, split, opt(&outcomes))?;
            let text = serde_json::to_string_pretty(&e.summary)
                .map_err(|e| Error::Format(e.to_string()))?;
            println!("{text}");
        }
        Command::Verify {
            checkpoint,
            video,
            tau_cls,
            tau_reg,
        } => {
            let v = io::verify_file(&checkpoint, &video, tau_cls, tau_reg)?;
            println!(
                "{} cnt={} m={} snr_db={:.2}",
                if v.live { "live" } else { "spoof" },
                v.consensus_count,
                v.m,
                v.snr_db
            );
            return Ok(if v.live { 0 } else { 1 });
        }
        Command::Ablate {
            common,
            data,
            report,
            runs,
            epochs,
        } => {
            let mut c = load_config(&common)?;
            set(&mut c.ablate.runs, runs);
            set(&mut c.train.epochs, epochs);
            let cells = io::ablate(&c, &data, opt(&report))?;
            println!("lambda_dep lambda_mat  mean_eer  std_eer");
            for cell in &cells {
                println!(
                    "{:>10} {:>10}  {:.4}    {:.4}",
                    cell.lambda_dep, cell.lambda_mat, cell.mean, cell.std
                );
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
