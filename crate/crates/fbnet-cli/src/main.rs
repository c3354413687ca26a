//! `fbnet` command line: train, eval, ablate, dump-fmaps, graph, gen-data.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation or a run errors,
//! 2 on usage errors (malformed flags; clap's default).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fbnet::checkpoint::Checkpoint;
use fbnet::config::Config;
use fbnet::graph::{parse_graph, DegreeProfile};
use fbnet::harness::{
    self, dump_feature_maps, ensure_datasets, evaluate, test_dir, train, train_dir, AblationAxis,
    EvalSpec,
};
use fbnet::metrics::PckfSpec;

#[derive(Parser)]
#[command(name = "fbnet", version, about = "Feature-boosted 3D pose estimation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints and a log under --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// PCK thresholds in heatmap pixels, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        pck: Vec<f64>,
        /// Width-normalized PCK threshold, in reference widths.
        #[arg(long, requires = "pckf_pair")]
        pckf: Option<f64>,
        /// Ground-truth joint pair whose distance is the reference width.
        #[arg(long, value_delimiter = ',', num_args = 2, requires = "pckf")]
        pckf_pair: Option<Vec<usize>>,
    },
    /// Train and score every variant along one ablation axis.
    Ablate {
        #[arg(long, value_parser = ["connections", "cells", "stacks"])]
        axis: String,
        #[arg(long)]
        config: PathBuf,
        /// Seed replicas per variant.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// PCK threshold the table reports, in heatmap pixels.
        #[arg(long, default_value_t = 1.5)]
        threshold: f64,
        /// Where per-variant runs store their checkpoints and logs.
        #[arg(long, default_value = "ablation")]
        work: PathBuf,
    },
    /// Write per-joint grayscale maps (pre-boost, gate, post-boost).
    DumpFmaps {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Joint indices, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        joints: Vec<usize>,
        #[arg(long, default_value = "fmaps")]
        out: PathBuf,
    },
    /// Skeleton graph utilities.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Generate the synthetic train/test splits a config describes.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Parse a graph file and report structure violations.
    Validate {
        file: PathBuf,
        #[arg(long, value_parser = ["default", "extended"], default_value = "default")]
        profile: String,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train { config, out, resume } => {
            let config = Config::from_path(&config)?;
            let outcome = train(&config, &out, resume.as_deref())?;
            if outcome.initial_loss.is_nan() {
                println!("nothing to do: checkpoint already at step {}", outcome.steps);
            } else {
                println!(
                    "trained to step {}: loss {:.6e} -> {:.6e}",
                    outcome.steps, outcome.initial_loss, outcome.final_loss
                );
            }
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("log: {}", outcome.log.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { ckpt, data, pck, pckf, pckf_pair } => {
            let spec = EvalSpec {
                thresholds: pck,
                pckf: pckf.map(|threshold| PckfSpec {
                    reference: {
                        let pair = pckf_pair.expect("clap pairs the flags");
                        (pair[0], pair[1])
                    },
                    threshold,
                }),
            };
            let report = evaluate(&Checkpoint::load(&ckpt)?, &data, &spec)?;
            for (t, f) in report.thresholds.iter().zip(&report.pck) {
                println!("pck@{t:<8} {f:.4}");
            }
            println!("mean_error   {:.4}", report.mean_error);
            if let Some(f) = report.pckf {
                println!("pckf         {f:.4}");
            }
            println!("{}", serde_json::to_string(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate { axis, config, seeds, threshold, work } => {
            let axis = AblationAxis::parse(&axis).expect("clap restricts the values");
            let config = Config::from_path(&config)?;
            let table = harness::ablate(&config, axis, seeds, threshold, &work)?;
            print!("{table}");
            for row in &table.rows {
                println!("{}", serde_json::to_string(row)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpFmaps { ckpt, image, joints, out } => {
            let written = dump_feature_maps(&Checkpoint::load(&ckpt)?, &image, &joints, &out)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Graph { command } => match command {
            GraphCommand::Validate { file, profile } => {
                let profile = match profile.as_str() {
                    "extended" => DegreeProfile::Extended,
                    _ => DegreeProfile::Default,
                };
                validate_graph(&file, profile)
            }
        },
        Command::GenData { config } => {
            let config = Config::from_path(&config)?;
            let (built_train, built_test) = ensure_datasets(&config)?;
            let describe = |built| if built { "generated" } else { "up to date" };
            println!(
                "train: {} ({} samples) {}",
                train_dir(&config).display(),
                config.data.train,
                describe(built_train)
            );
            println!(
                "test: {} ({} samples) {}",
                test_dir(&config).display(),
                config.data.test,
                describe(built_test)
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn validate_graph(
    file: &Path,
    profile: DegreeProfile,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(file)?;
    let graph = match parse_graph(&text) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("parse error: {e}");
            return Ok(ExitCode::FAILURE);
        }
    };
    let report = graph.validate(profile);
    println!("{report}");
    Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
