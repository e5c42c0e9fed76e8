//! Experiment driver for bounding-box annotation dialog policies.
//!
//! Subcommands: `gen-scenes`, `verify-optimality`, `train-prob`, `train-rl`,
//! `run`, `retrain`, `report`. Every run is deterministic given its
//! configuration and seed, and writes the resolved configuration next to its
//! outputs. Exit codes: 0 success, 1 usage or configuration error, 2
//! certification failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use boxdialog::certify::{certify_planner, SweepConfig};
use boxdialog::classifier::{self, build_training_set};
use boxdialog::cost::{threshold_plan, PlanOrdering};
use boxdialog::episode::{kfold_evaluate, KfoldConfig, RunReport};
use boxdialog::report as report_fmt;
use boxdialog::retrain::{
    run_drawing_baseline, run_horizontal_retraining, run_vertical_retraining, RetrainConfig,
};
use boxdialog::rl::train_agent;
use boxdialog::scene::{
    generate_layouts, generate_scenes, load_detections, num_classes_in, save_detections, Scene,
};

use config::{resolve, FileConfig, Resolved};

#[derive(Parser)]
#[command(
    name = "boxdialog",
    version,
    about = "Cost-optimal bounding-box annotation dialog experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Required box quality alpha in (0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// "slow", "fast", or "verify_s,draw_s".
    #[arg(long)]
    timings: Option<String>,
    /// Strategy to evaluate (repeatable): D, V<m>D, V*D, prob, rl, lower-bound.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Verification order for the probability planner: "score" or "sorted-p".
    #[arg(long)]
    ordering: Option<String>,
    /// Episode-level parallelism; 0 means all available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario and write it as a detection dump.
    GenScenes(CommonArgs),
    /// Certify the threshold planner against the exhaustive oracle.
    VerifyOptimality {
        #[command(flatten)]
        common: CommonArgs,
        /// Exhaustive probability-grid sweep up to this many proposals.
        #[arg(long, default_value_t = 5)]
        grid_max_n: usize,
        /// Random vectors per length.
        #[arg(long, default_value_t = 1000)]
        random_per_n: usize,
        /// Random vectors go up to this many proposals.
        #[arg(long, default_value_t = 6)]
        random_max_n: usize,
        /// Adjacent-swap property cases.
        #[arg(long, default_value_t = 10_000)]
        swap_cases: usize,
    },
    /// Train the acceptance classifier and write its checkpoint.
    TrainProb {
        #[command(flatten)]
        common: CommonArgs,
        /// Search the small architecture grid instead of the default net.
        #[arg(long)]
        grid_search: bool,
    },
    /// Train the Q-learning agent and write its checkpoint.
    TrainRl(CommonArgs),
    /// K-fold strategy evaluation; writes report and composition CSVs.
    Run(CommonArgs),
    /// Iterative retraining experiment; writes the trace CSV triplet.
    Retrain {
        #[command(flatten)]
        common: CommonArgs,
        /// "vertical", "horizontal", or "drawing".
        #[arg(long)]
        regime: Option<String>,
    },
    /// Re-print the summary table of a previous run directory.
    Report {
        #[arg(long)]
        from: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.exit_code() == 0 { 0 } else { 1 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn load_file_config(common: &CommonArgs) -> Result<FileConfig> {
    match &common.config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::default()),
    }
}

fn resolve_common(common: &CommonArgs) -> Result<Resolved> {
    let file = load_file_config(common)?;
    resolve(
        &file,
        common.seed,
        common.alpha,
        common.timings.as_deref(),
        &common.strategies,
        common.folds,
        common.ordering.as_deref(),
        common.workers,
    )
}

fn init_workers(workers: usize) {
    if workers > 0 {
        // Results are independent of the worker count; this only bounds
        // parallelism.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn out_dir(common: &CommonArgs) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--out <dir> is required for this command"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_resolved(dir: &Path, resolved: &Resolved) -> Result<()> {
    fs::write(dir.join("config.toml"), config::resolved_to_toml(resolved))?;
    Ok(())
}

/// Scenes for training/evaluation: a detection dump when configured, the
/// synthetic scenario otherwise. Returns loader warnings for the run report.
fn obtain_scenes(resolved: &Resolved) -> Result<(Vec<Scene>, Vec<String>)> {
    match &resolved.scenes_file {
        Some(path) => {
            let loaded = load_detections(
                Path::new(path),
                resolved.scenario.proposals.nms_threshold,
            )?;
            Ok((loaded.scenes, loaded.warnings))
        }
        None => Ok((
            generate_scenes(&resolved.scenario, &resolved.detector)?,
            Vec::new(),
        )),
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenScenes(common) => {
            let resolved = resolve_common(&common)?;
            init_workers(resolved.workers);
            let dir = out_dir(&common)?;
            let path = dir.join("scenes.jsonl");
            if resolved.scenario.num_scenes == 0 {
                fs::write(&path, "")?;
                eprintln!("warning: zero scenes requested, wrote an empty file");
            } else {
                let scenes = generate_scenes(&resolved.scenario, &resolved.detector)?;
                save_detections(&path, &scenes)?;
                println!("wrote {} scenes to {}", scenes.len(), path.display());
            }
            write_resolved(&dir, &resolved)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::VerifyOptimality {
            common,
            grid_max_n,
            random_per_n,
            random_max_n,
            swap_cases,
        } => {
            if grid_max_n > boxdialog::cost::EXHAUSTIVE_MAX_PROPOSALS
                || random_max_n > boxdialog::cost::EXHAUSTIVE_MAX_PROPOSALS
            {
                bail!(
                    "the exhaustive oracle supports at most {} proposals",
                    boxdialog::cost::EXHAUSTIVE_MAX_PROPOSALS
                );
            }
            let resolved = resolve_common(&common)?;
            init_workers(resolved.workers);
            let sweep = SweepConfig {
                grid_max_n,
                random_per_n,
                random_max_n,
                swap_cases,
                seed: resolved.seed,
                ..SweepConfig::default()
            };
            let report = certify_planner(&sweep, |estimate, timings| {
                threshold_plan(estimate, timings, PlanOrdering::SortedByProb)
            })?;
            let summary = report.summary();
            println!("{summary}");
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                report_fmt::write_text(&dir.join("certification.txt"), &summary)?;
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }

        Command::TrainProb {
            common,
            grid_search,
        } => {
            let resolved = resolve_common(&common)?;
            init_workers(resolved.workers);
            let dir = out_dir(&common)?;
            let (scenes, warnings) = obtain_scenes(&resolved)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let num_classes = num_classes_in(&scenes);
            let data = build_training_set(&scenes, resolved.quality, num_classes)?;

            let model = if grid_search {
                let mut best: Option<(f64, Vec<usize>, classifier::ClassifierModel)> = None;
                for depth in 2..=5 {
                    for units in [5, 15, 30, 50] {
                        let mut cfg = resolved.classifier.clone();
                        cfg.hidden_layers = vec![units; depth];
                        let candidate = classifier::train(&data, &cfg)?;
                        let brier = candidate.metadata.holdout_brier;
                        if best.as_ref().is_none_or(|(b, _, _)| brier < *b) {
                            best = Some((brier, cfg.hidden_layers.clone(), candidate));
                        }
                    }
                }
                let (brier, layers, model) = best.expect("grid searched at least one candidate");
                println!("grid search chose hidden layers {layers:?} (holdout Brier {brier:.4})");
                model
            } else {
                classifier::train(&data, &resolved.classifier)?
            };

            println!(
                "trained on {} boxes, holdout Brier {:.4}{}",
                data.len(),
                model.metadata.holdout_brier,
                if model.metadata.degenerate {
                    " (single-class data, constant model)"
                } else {
                    ""
                }
            );
            model.save(&dir.join("classifier.json"))?;
            write_resolved(&dir, &resolved)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::TrainRl(common) => {
            let resolved = resolve_common(&common)?;
            init_workers(resolved.workers);
            let dir = out_dir(&common)?;
            let (scenes, warnings) = obtain_scenes(&resolved)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let num_classes = num_classes_in(&scenes);
            let qnet = train_agent(
                &scenes,
                num_classes,
                resolved.quality,
                &resolved.timings,
                &resolved.rl,
            )?;
            qnet.save(&dir.join("qnet.json"))?;
            println!("trained agent on {} scenes", scenes.len());
            write_resolved(&dir, &resolved)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Run(common) => {
            let resolved = resolve_common(&common)?;
            init_workers(resolved.workers);
            let dir = out_dir(&common)?;
            let (scenes, warnings) = obtain_scenes(&resolved)?;
            let kfold = KfoldConfig {
                folds: resolved.folds,
                seed: resolved.seed,
                classifier: resolved.classifier.clone(),
                rl: resolved.rl.clone(),
            };
            let reports = kfold_evaluate(
                &scenes,
                &resolved.strategies,
                resolved.quality,
                &resolved.timings,
                &kfold,
            )?;
            fs::write(dir.join("report.csv"), report_fmt::run_reports_csv(&reports))?;
            fs::write(
                dir.join("composition.csv"),
                report_fmt::composition_csv(&reports),
            )?;
            let mut summary = report_fmt::run_summary_table(&reports);
            if !warnings.is_empty() {
                summary.push_str("\nloader warnings:\n");
                for w in &warnings {
                    summary.push_str(&format!("  {w}\n"));
                }
            }
            report_fmt::write_text(&dir.join("summary.txt"), &summary)?;
            write_resolved(&dir, &resolved)?;
            print!("{summary}");
            Ok(ExitCode::SUCCESS)
        }

        Command::Retrain { common, regime } => {
            let resolved = resolve_common(&common)?;
            init_workers(resolved.workers);
            let dir = out_dir(&common)?;
            let regime = regime.unwrap_or_else(|| resolved.regime.clone());
            let layouts = generate_layouts(&resolved.scenario)?;
            let retrain_cfg = RetrainConfig {
                schedule: resolved.schedule.clone(),
                quality: resolved.quality,
                timings: resolved.timings,
                seed: resolved.seed,
                classifier: resolved.classifier.clone(),
                horizontal_iterations: resolved.horizontal_iterations,
                accumulate_training_batches: resolved.accumulate,
            };
            let trace = match regime.as_str() {
                "vertical" => run_vertical_retraining(
                    &layouts,
                    &resolved.detector,
                    &resolved.scenario.proposals,
                    &retrain_cfg,
                )?,
                "horizontal" => run_horizontal_retraining(
                    &layouts,
                    &resolved.detector,
                    &resolved.scenario.proposals,
                    &retrain_cfg,
                )?,
                "drawing" => run_drawing_baseline(&layouts, &retrain_cfg)?,
                other => bail!("unknown retrain regime {other:?}"),
            };
            fs::write(dir.join("curve.csv"), report_fmt::trace_curve_csv(&trace))?;
            fs::write(
                dir.join("batches.csv"),
                report_fmt::trace_batches_csv(&trace),
            )?;
            fs::write(
                dir.join("composition.csv"),
                report_fmt::trace_composition_csv(&trace),
            )?;
            write_resolved(&dir, &resolved)?;
            println!(
                "{regime}: {} boxes in {:.1} s total",
                trace.total_boxes, trace.total_time_s
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Report { from } => {
            let path = from.join("report.csv");
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let reports = parse_report_csv(&text)?;
            print!("{}", report_fmt::run_summary_table(&reports));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_report_csv(text: &str) -> Result<Vec<RunReport>> {
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 7 {
            bail!("malformed report row at line {}", i + 1);
        }
        let n_episodes: usize = fields[4].parse()?;
        let frac_drawn: f64 = fields[5].parse()?;
        let drawn = (frac_drawn * n_episodes as f64).round() as usize;
        reports.push(RunReport {
            strategy: fields[0].to_string(),
            fold: fields[1].parse()?,
            mean_time_s: fields[2].parse()?,
            stderr_s: fields[3].parse()?,
            n_episodes,
            drawn_boxes: drawn,
            verified_boxes: n_episodes - drawn,
            mean_iou_verified: if fields[6].is_empty() {
                None
            } else {
                Some(fields[6].parse()?)
            },
            composition: Vec::new(),
        });
    }
    Ok(reports)
}
