use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use handact_core::config::RunConfig;
use handact_core::harness::{self, HarnessError, TrainTarget};
use handact_core::pipeline::CurvatureVariant;

/// Hand-action recognition toolkit: curvature fields, synthetic corpora,
/// staged training, evaluation, ablation and label statistics.
#[derive(Debug, Parser)]
#[command(name = "handact", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for corpus generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-vertex curvature of an OFF or OBJ mesh as CSV.
    Curvature {
        /// Mesh file.
        mesh: PathBuf,
        #[arg(long, value_parser = ["mean", "gaussian", "max", "min", "none"])]
        kind: String,
        /// CSV file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one stage (local, object, joint, temporal) or all of them.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "all", value_parser = ["local", "object", "joint", "temporal", "all"])]
        stage: String,
        /// Curvature field regressed by the local network.
        #[arg(long, value_parser = ["mean", "gaussian", "max", "min", "none"])]
        kind: Option<String>,
    },
    /// Evaluate a trained run on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Run directory or generator checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare the four curvature fields against no curvature.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Grasp-type distribution tables of a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn usage(e: String) -> HarnessError {
    HarnessError::Usage(e)
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Curvature { mesh, kind, out } => {
            if kind == "none" {
                return Err(usage("curvature needs a field kind, not `none`".into()));
            }
            let field = harness::cmd_curvature(&mesh, kind.parse().map_err(usage)?, &out)?;
            println!("wrote {} {} values to {}", field.len(), field.kind, out.display());
        }
        Command::Synth { common } => {
            let cfg = common.resolve()?;
            let (corpus, digest) = harness::cmd_synth(&cfg, &common.out)?;
            println!(
                "wrote {} episodes ({} train, {} test) to {}\ndigest {digest}",
                corpus.episodes.len(),
                corpus.train.len(),
                corpus.test.len(),
                common.out.display()
            );
        }
        Command::Train {
            common,
            corpus,
            stage,
            kind,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(k) = kind {
                cfg.train.model.curvature = k.parse::<CurvatureVariant>().map_err(usage)?;
            }
            let target: TrainTarget = stage.parse().map_err(usage)?;
            let o = harness::cmd_train(&corpus, target, &cfg, &common.out)?;
            let done: Vec<&str> = o.completed.iter().map(|s| s.as_str()).collect();
            println!("completed stages: {} in {:.1}s", done.join(", "), o.seconds);
            if let Some(last) = o.log.rows.last() {
                println!("last epoch: {}", last.to_csv());
            }
        }
        Command::Eval {
            common,
            corpus,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let r = harness::cmd_eval(&corpus, &checkpoint, &cfg, &common.out)?;
            if let Some(v) = r.video_accuracy {
                println!("video accuracy        {}", pct(v));
            }
            println!("frame action accuracy {}", pct(r.frame_action_accuracy));
            println!("grasp accuracy        {}", pct(r.grasp_accuracy));
            println!("object accuracy       {}", pct(r.object_accuracy));
            if let (Some(mse), Some(r2)) = (r.curvature_mse, r.curvature_r2) {
                println!("curvature mse {mse:.5}, r2 {r2:.4}");
            }
        }
        Command::Ablate { common, corpus } => {
            let cfg = common.resolve()?;
            let table = harness::cmd_ablate(&corpus, &cfg, &common.out)?;
            print!("{}", table.to_csv());
        }
        Command::Stats { corpus, out } => {
            let r = harness::cmd_stats(&corpus, &out)?;
            println!(
                "{} frames over {} episodes; tables in {}",
                r.total_frames(),
                r.n_episodes,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
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
