use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use droptrack::config::RunConfig;
use droptrack::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "droptrack", version, about = "Simulate, track, stitch and score droplets in a constriction flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to absent keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene: ground_truth.csv, detections.txt, optional frames/.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Track a MOT detection file: trajectories.csv and counts.csv.
    Track {
        /// Detection file, rows `frame,id,x,y,w,h,conf`.
        detections: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Link fragmented trajectories after tracking.
        #[arg(long)]
        stitch: bool,
    },
    /// Score a track output directory against a ground-truth CSV.
    Score {
        /// Directory written by `track`.
        pred: PathBuf,
        /// ground_truth.csv written by `simulate`.
        gt: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Where score.json and score.txt go; defaults to the prediction directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Build the eleven mixed real/synthetic training sets.
    Datagen {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Worker threads for image generation.
        #[arg(long, value_name = "N", default_value_t = 1)]
        jobs: usize,
        /// Only the all-synthetic set; no real pool needed.
        #[arg(long)]
        synthetic_only: bool,
    },
    /// Time the tracking half on a synthetic scene.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Also write bench.json into this directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = pipeline::load_config_file(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))
        .and_then(|_| std::fs::write(path, text))
        .map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { common, out } => {
            let cfg = config(&common)?;
            let s = pipeline::cmd_simulate(&cfg, &out)?;
            println!("{}", json(&s));
        }
        Command::Track { detections, common, out, stitch } => {
            let cfg = config(&common)?;
            let s = pipeline::cmd_track(&detections, &cfg, &out, stitch)?;
            println!("{}", json(&s));
        }
        Command::Score { pred, gt, common, out } => {
            let cfg = config(&common)?;
            let out = out.unwrap_or_else(|| pred.clone());
            let r = pipeline::cmd_score(&pred, &gt, &cfg, &out)?;
            print!("{}", r.to_json());
        }
        Command::Datagen { common, out, jobs, synthetic_only } => {
            if jobs == 0 {
                return Err(PipelineError::Usage("--jobs must be at least 1".into()));
            }
            let mut cfg = config(&common)?;
            cfg.datagen.synthetic_only |= synthetic_only;
            let entries = pipeline::cmd_datagen(&cfg, &out, jobs)?;
            println!("{}", json(&entries));
        }
        Command::Bench { common, out } => {
            let cfg = config(&common)?;
            let r = pipeline::cmd_bench(&cfg)?;
            print!("{}", r.to_json());
            eprint!("{}", r.to_table());
            if let Some(dir) = out {
                write(&dir.join("bench.json"), &r.to_json())?;
                write(&dir.join("bench.txt"), &r.to_table())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
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
