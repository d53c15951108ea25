use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use sblu_cli::bench::{figure_preset, run_benchmark, run_log, to_csv, BenchNets, BenchOptions};
use sblu_cli::checkpoint::{content_hash, load_checkpoint, save_checkpoint};
use sblu_cli::config::{EstimatorKind, ExperimentSpec};
use sblu_cli::dataset::{generate_dataset, load_dataset};
use sblu_cli::flops::{flops, parse_approach};
use sblu_cli::sweep::{default_hyper_grid, hyper_sweep};
use sblu_cli::{CliError, Result};
use sblu_core::sbl::SblVariant;
use sblu_core::sblnet::train::{train_multi_block, train_single_block};

/// Wideband hybrid-array channel estimation: simulation, SBL estimators,
/// and the unfolded network, end to end.
#[derive(Parser)]
#[command(name = "sblu", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Single,
    Multi,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a channel dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Sample count (defaults to the config's dataset_count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the unfolded network on a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset produced by `gen`.
        #[arg(long)]
        dataset: PathBuf,
        /// Where the trained checkpoint goes.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "single")]
        mode: TrainMode,
        /// Single-block checkpoint to warm-start multi-block training.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over fresh Monte-Carlo trials.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run the Monte-Carlo benchmark and write results.csv + run_log.txt.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads for the trial loop.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Record wall time per estimator (makes the CSV non-reproducible).
        #[arg(long, default_value_t = false)]
        timing: bool,
        /// Single-block checkpoint for the sblnet estimator.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Multi-block checkpoint for the sblnet-multi estimator.
        #[arg(long)]
        multi_checkpoint: Option<PathBuf>,
        /// Sweep preset (fig6a, fig6b, fig7); overrides the config sweep
        /// and names the CSV accordingly.
        #[arg(long)]
        figure: Option<String>,
    },
    /// Search pattern-coupling hyperparameters by validation NMSE.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// pc-sbl or m-pc-sbl.
        #[arg(long, default_value = "pc-sbl")]
        variant: String,
        /// Optional CSV output for the full table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the FLOPs formulas for an approach.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        /// sbl, m-sbl, pc-sbl, m-pc-sbl, sblnet, or sblnet-multi.
        #[arg(long)]
        approach: String,
        /// Iteration count (defaults: max_iters for the SBL family, the
        /// layer count for the networks).
        #[arg(long)]
        iters: Option<usize>,
    },
}

fn load_spec(config: &Option<PathBuf>, seed: Option<u64>, trials: Option<usize>) -> Result<ExperimentSpec> {
    let mut spec = match config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(trials) = trials {
        spec.trials = trials;
    }
    Ok(spec)
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            config,
            seed,
            out,
            count,
        } => {
            let spec = load_spec(&config, seed, None)?;
            let count = count.unwrap_or(spec.dataset_count);
            generate_dataset(&spec, count, &out)?;
            println!("wrote {count} samples ({} block(s) each) to {}", spec.blocks, out.display());
        }
        Command::Train {
            config,
            seed,
            dataset,
            out,
            mode,
            from,
        } => {
            let spec = load_spec(&config, seed, None)?;
            let (_, samples) = load_dataset(&dataset)?;
            match mode {
                TrainMode::Single => {
                    let (net, report) =
                        train_single_block(&samples, &spec.sys, spec.arch, &spec.train, spec.seed)?;
                    for (i, stage) in report.stages.iter().enumerate() {
                        println!(
                            "stage {}: {} epochs, final val loss {:.6e}",
                            i + 1,
                            stage.val_loss.len(),
                            stage.val_loss.last().copied().unwrap_or(f64::NAN)
                        );
                    }
                    save_checkpoint(&out, &net, &spec.sys, "single-block")?;
                }
                TrainMode::Multi => {
                    let from = from.ok_or_else(|| {
                        CliError::Config(
                            "multi-block training needs --from <single-block checkpoint>".into(),
                        )
                    })?;
                    let (single, _) = load_checkpoint(&from)?;
                    let (net, report) =
                        train_multi_block(&samples, &spec.sys, &single, &spec.train, spec.seed)?;
                    for (i, stage) in report.stages.iter().enumerate() {
                        println!(
                            "stage {}: {} epochs, final val loss {:.6e}",
                            i + 1,
                            stage.val_loss.len(),
                            stage.val_loss.last().copied().unwrap_or(f64::NAN)
                        );
                    }
                    save_checkpoint(&out, &net, &spec.sys, "multi-block")?;
                }
            }
            println!("checkpoint written to {}", out.display());
        }
        Command::Eval {
            config,
            seed,
            checkpoint,
            trials,
        } => {
            let mut spec = load_spec(&config, seed, trials)?;
            let (net, stage) = load_checkpoint(&checkpoint)?;
            let mut nets = BenchNets::default();
            if net.arch.multi_block {
                spec.estimators = vec![EstimatorKind::SblNetMulti];
                nets.multi = Some(net);
            } else {
                spec.estimators = vec![EstimatorKind::SblNet];
                nets.single = Some(net);
            }
            let rows = run_benchmark(&spec, &nets, &BenchOptions::default())?;
            for row in rows {
                println!(
                    "{} ({stage}): mean NMSE {:.6} over {} trials",
                    row.estimator, row.nmse_mean, row.trials
                );
            }
        }
        Command::Bench {
            config,
            seed,
            out,
            trials,
            workers,
            timing,
            checkpoint,
            multi_checkpoint,
            figure,
        } => {
            let mut spec = load_spec(&config, seed, trials)?;
            let mut csv_name = "results.csv".to_string();
            if let Some(figure) = figure {
                let (sweep, name) = figure_preset(&figure).ok_or_else(|| {
                    CliError::Config(format!(
                        "unknown figure preset {figure:?} (try fig6a, fig6b, fig7)"
                    ))
                })?;
                spec.sweep = Some(sweep);
                csv_name = name.to_string();
            }
            let mut nets = BenchNets::default();
            let mut hashes = BTreeMap::new();
            if let Some(path) = &checkpoint {
                let (net, _) = load_checkpoint(path)?;
                hashes.insert("sblnet".to_string(), content_hash(path)?);
                nets.single = Some(net);
            }
            if let Some(path) = &multi_checkpoint {
                let (net, _) = load_checkpoint(path)?;
                hashes.insert("sblnet-multi".to_string(), content_hash(path)?);
                nets.multi = Some(net);
            }
            let rows = run_benchmark(&spec, &nets, &BenchOptions { workers, timing })?;
            std::fs::create_dir_all(&out)?;
            let csv_path = out.join(&csv_name);
            std::fs::write(&csv_path, to_csv(&rows))?;
            std::fs::write(out.join("run_log.txt"), run_log(&spec, &hashes, &rows))?;
            for row in &rows {
                println!(
                    "{} @ {}={}: NMSE {:.6}",
                    row.estimator, row.sweep_param, row.sweep_value, row.nmse_mean
                );
            }
            println!("results in {}", csv_path.display());
        }
        Command::Sweep {
            config,
            seed,
            trials,
            variant,
            out,
        } => {
            let spec = load_spec(&config, seed, trials)?;
            let variant = match variant.as_str() {
                "pc-sbl" => SblVariant::PcSbl,
                "m-pc-sbl" => SblVariant::MPcSbl,
                other => {
                    return Err(CliError::Config(format!(
                        "sweep variant must be pc-sbl or m-pc-sbl, got {other:?}"
                    )))
                }
            };
            let grid = default_hyper_grid();
            let (best, table) = hyper_sweep(variant, &spec, &grid)?;
            println!("beta,a,b,nmse_mean");
            for (h, score) in &table {
                println!("{},{},{},{}", h.beta, h.a, h.b, score);
            }
            println!(
                "best: beta={} a={} b={} (NMSE {:.6})",
                best.beta,
                best.a,
                best.b,
                table
                    .iter()
                    .find(|(h, _)| *h == best)
                    .map(|(_, s)| *s)
                    .unwrap_or(f64::NAN)
            );
            if let Some(path) = out {
                let mut csv = String::from("beta,a,b,nmse_mean\n");
                for (h, score) in &table {
                    csv.push_str(&format!("{},{},{},{}\n", h.beta, h.a, h.b, score));
                }
                std::fs::write(&path, csv)?;
                println!("table written to {}", path.display());
            }
        }
        Command::Flops {
            config,
            approach,
            iters,
        } => {
            let spec = load_spec(&config, None, None)?;
            let kind = parse_approach(&approach)?;
            let iters = iters.unwrap_or(match kind {
                EstimatorKind::Classical(_) => spec.max_iters,
                _ => spec.arch.layers,
            });
            let total = flops(kind, &spec.sys, &spec.arch, iters)?;
            println!("{approach}: {total:.4e} real FLOPs over {iters} iterations");
            println!("note: {}", sblu_cli::flops::REPORT_FORMULA_NOTE);
        }
    }
    Ok(())
}
