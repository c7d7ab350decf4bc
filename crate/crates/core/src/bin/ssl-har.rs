use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use ssl_har::engine::{
    finetune, hyperparameter_search, train_pretext, Checkpoint, FinetuneConfig, FinetuneMode, LabelBudget,
    PretextRunConfig, SearchSpace, SearchStage,
};
use ssl_har::harness::{
    aggregate_and_render, label_budget_sweep, load_windowed, render_stopping_table, run_matrix, stopping_point_study,
    ExperimentPlan, Ledger,
};
use ssl_har::ingest::{build_fold_plan, ingest, split_capture_style, IngestOptions};
use ssl_har::objectives::PretextKind;
use ssl_har::synth::{generate_to_dir, SyntheticSpec};

#[derive(Parser)]
#[command(name = "ssl-har", version, about = "Self-supervised pretraining benchmark for accelerometer HAR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample and window a dataset into a window cache.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        target_hz: f64,
    },
    /// Pretrain an encoder on an unlabelled corpus and save its checkpoint triplet.
    Pretrain {
        #[arg(long)]
        task: PretextKind,
        /// Window cache or manifest of the pretraining corpus.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON run configuration; defaults for the task otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        val_users: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_early_stop: bool,
    },
    /// Train a classifier on one fold and report validation and test macro-F1.
    Finetune {
        #[arg(long)]
        mode: FinetuneMode,
        /// Encoder archive (`best.bin`), or `none` for the baseline.
        #[arg(long, default_value = "none")]
        checkpoint: String,
        #[arg(long, default_value = "all")]
        budget: LabelBudget,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        fold_seed: u64,
    },
    /// Random hyperparameter search for a pretext or for the classifier.
    Search {
        #[arg(long)]
        stage: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pretext task (pretext stage).
        #[arg(long)]
        task: Option<PretextKind>,
        /// Fine-tuning mode (classifier stage).
        #[arg(long, default_value = "baseline")]
        mode: FinetuneMode,
        #[arg(long, default_value = "none")]
        checkpoint: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        val_users: usize,
        #[arg(long, default_value_t = 5)]
        groups: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) every cell of a plan over all folds and seeds.
    Evaluate {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run the plan's cells at each label budget.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,50,100")]
        budgets: Vec<LabelBudget>,
    },
    /// Pretrain without early stopping and fine-tune from before, best and last.
    StoppingStudy {
        #[arg(long)]
        task: PretextKind,
        #[arg(long)]
        plan: PathBuf,
        /// Pretraining corpus (window cache or manifest).
        #[arg(long)]
        capture: PathBuf,
        #[arg(long, default_value_t = 16)]
        val_users: usize,
        #[arg(long, default_value = "all")]
        budget: LabelBudget,
    },
    /// Aggregate a ledger into tables and plots.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// JSON generator spec; a 10-user, 4-class corpus otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(arg: &str) -> Result<Option<Checkpoint>> {
    if arg == "none" {
        return Ok(None);
    }
    Ok(Some(Checkpoint::load(Path::new(arg))?))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { manifest, out, target_hz } => {
            let opts = IngestOptions {
                target_hz,
                ..IngestOptions::default()
            };
            let ds = ingest(&manifest, &opts)?;
            ds.save_cache(&out)?;
            let labelled = ds.windows.iter().filter(|w| w.label.is_some()).count();
            println!(
                "{}: {} users, {} windows ({labelled} labelled), {} classes -> {}",
                ds.dataset_id,
                ds.users().len(),
                ds.windows.len(),
                ds.n_classes(),
                out.display()
            );
        }
        Command::Pretrain {
            task,
            data,
            out,
            config,
            val_users,
            epochs,
            seed,
            no_early_stop,
        } => {
            let mut cfg = match config {
                Some(p) => read_json::<PretextRunConfig>(&p)?,
                None => PretextRunConfig::new(task),
            };
            cfg.task = task;
            if let Some(e) = epochs {
                cfg.max_epochs = e;
                cfg.patience = cfg.patience.min(e);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.early_stopping &= !no_early_stop;
            let ds = load_windowed(&data)?;
            let (train_users, val_set) = split_capture_style(&ds.users(), val_users, cfg.seed)?;
            let out_run = train_pretext(&cfg, &ds.windows_for(&train_users), &ds.windows_for(&val_set))?;
            out_run.triplet.save(&out)?;
            write_json(&out.join("history.json"), &out_run.history)?;
            write_json(&out.join("config.json"), &cfg)?;
            println!(
                "{task}: {} epochs, best epoch {} (val loss {:.5}) -> {}",
                out_run.epochs_run,
                out_run.best_epoch,
                out_run.triplet.best.meta.val_loss,
                out.display()
            );
        }
        Command::Finetune {
            mode,
            checkpoint,
            budget,
            fold,
            seed,
            data,
            config,
            groups,
            fold_seed,
        } => {
            let mut cfg = match config {
                Some(p) => read_json::<FinetuneConfig>(&p)?,
                None => FinetuneConfig::new(mode),
            };
            cfg.mode = mode;
            cfg.budget = budget;
            cfg.seed = seed;
            let ds = load_windowed(&data)?;
            let plan = build_fold_plan(&ds.users(), groups, fold_seed)?;
            if fold >= plan.n_folds() {
                bail!("fold {fold} outside 0..{}", plan.n_folds());
            }
            let init = load_checkpoint(&checkpoint)?;
            let out = finetune(
                &cfg,
                init.as_ref().map(|c| &c.params),
                &ds.windows_for(&plan.train_users(fold)),
                &ds.windows_for(&plan.val_users(fold)),
                ds.n_classes(),
            )?;
            let test = out.model.evaluate(&ds.labelled_for(&plan.test_users(fold)))?;
            println!(
                "{mode} budget {budget} fold {fold} seed {seed}: {} training windows, best epoch {}, val macro-F1 {:.4}, test macro-F1 {test:.4}",
                out.train_windows, out.best_epoch, out.best_val_macro_f1
            );
        }
        Command::Search {
            stage,
            data,
            trials,
            seed,
            task,
            mode,
            checkpoint,
            config,
            val_users,
            groups,
            out,
        } => {
            let ds = load_windowed(&data)?;
            let space = SearchSpace::default();
            let outcome = match stage.as_str() {
                "pretext" => {
                    let task = task.context("--task is required for the pretext stage")?;
                    let base = match &config {
                        Some(p) => read_json::<PretextRunConfig>(p)?,
                        None => PretextRunConfig::new(task),
                    };
                    let (train_users, val_set) = split_capture_style(&ds.users(), val_users, seed)?;
                    let (train, val) = (ds.windows_for(&train_users), ds.windows_for(&val_set));
                    hyperparameter_search(&space, SearchStage::Pretext, trials, seed, |_, t| {
                        let mut cfg = base.clone();
                        cfg.task = task;
                        cfg.optimizer = t.optimizer;
                        cfg.batch_size = t.batch_size;
                        Ok(train_pretext(&cfg, &train, &val)?.triplet.best.meta.val_loss)
                    })?
                }
                "classifier" => {
                    let base = match &config {
                        Some(p) => read_json::<FinetuneConfig>(p)?,
                        None => FinetuneConfig::new(mode),
                    };
                    let init = load_checkpoint(&checkpoint)?;
                    let plan = build_fold_plan(&ds.users(), groups, 0)?;
                    hyperparameter_search(&space, SearchStage::Classifier, trials, seed, |_, t| {
                        let mut cfg = base.clone();
                        cfg.mode = mode;
                        cfg.optimizer = t.optimizer;
                        cfg.batch_size = t.batch_size;
                        let mut total = 0.0;
                        for fold in 0..plan.n_folds() {
                            total += finetune(
                                &cfg,
                                init.as_ref().map(|c| &c.params),
                                &ds.windows_for(&plan.train_users(fold)),
                                &ds.windows_for(&plan.val_users(fold)),
                                ds.n_classes(),
                            )?
                            .best_val_macro_f1;
                        }
                        Ok(total / plan.n_folds() as f64)
                    })?
                }
                other => bail!("unknown search stage {other:?}; use pretext or classifier"),
            };
            println!(
                "best trial #{} score {:.5}: {:?}, batch {}",
                outcome.best_index, outcome.best_score, outcome.best.optimizer, outcome.best.batch_size
            );
            if let Some(p) = out {
                write_json(&p, &outcome)?;
            }
        }
        Command::Evaluate { plan } => {
            let plan = ExperimentPlan::load(&plan)?;
            let (ds, folds, mut store, ledger) = plan.open()?;
            let s = run_matrix(&ds, &folds, &plan.cells, &plan.matrix, &mut store, &ledger)?;
            println!(
                "{} runs executed, {} already in the ledger, {} failed",
                s.executed, s.skipped, s.failed
            );
        }
        Command::Sweep { plan, budgets } => {
            let plan = ExperimentPlan::load(&plan)?;
            let (ds, folds, mut store, ledger) = plan.open()?;
            let (curves, s) = label_budget_sweep(&ds, &folds, &plan.cells, &budgets, &plan.matrix, &mut store, &ledger)?;
            for c in curves {
                let pts: Vec<String> = c.points.iter().map(|p| format!("{}:{:.2}", p.budget, p.mean * 100.0)).collect();
                println!("{}: {}", c.label, pts.join(" "));
            }
            println!("{} runs executed, {} reused, {} failed", s.executed, s.skipped, s.failed);
        }
        Command::StoppingStudy {
            task,
            plan,
            capture,
            val_users,
            budget,
        } => {
            let plan = ExperimentPlan::load(&plan)?;
            let (ds, folds, _, ledger) = plan.open()?;
            let corpus = load_windowed(&capture)?;
            let mut pcfg = plan.matrix.target_pretext.clone();
            pcfg.task = task;
            pcfg.precompute_transforms = task == PretextKind::Multitask;
            let (train_users, val_set) = split_capture_style(&corpus.users(), val_users, pcfg.seed)?;
            let (study, _) = stopping_point_study(
                &ds,
                &folds,
                &pcfg,
                &corpus.windows_for(&train_users),
                &corpus.windows_for(&val_set),
                budget,
                &plan.matrix,
                &ledger,
            )?;
            for s in &study.stages {
                println!("{}: epoch {} val loss {:.5}", s.stage.name(), s.epoch, s.val_loss);
            }
            print!("{}", render_stopping_table(&study.rows));
        }
        Command::Report { ledger, out } => {
            let results = Ledger::open(&ledger)?.load()?;
            if results.is_empty() {
                bail!("ledger {} has no records", ledger.display());
            }
            for p in aggregate_and_render(&results, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Synth { spec, seed, out } => {
            let spec = match spec {
                Some(p) => read_json::<SyntheticSpec>(&p)?,
                None => SyntheticSpec::sinusoids("synthetic", 10, &[1.0, 3.0, 6.0, 12.0], 120.0),
            };
            let manifest = generate_to_dir(&spec, seed, &out)?;
            println!("{} users -> {}", spec.n_users, manifest.display());
        }
    }
    Ok(())
}
