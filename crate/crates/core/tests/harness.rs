mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::*;
use ssl_har::engine::{FinetuneMode, LabelBudget};
use ssl_har::harness::*;
use ssl_har::ingest::{build_fold_plan, FoldPlan, WindowedDataset};
use ssl_har::objectives::PretextKind;

fn setup() -> (WindowedDataset, FoldPlan, MatrixConfig) {
    let ds = dataset("toy", 10, &[1.0, 6.0], 30.0, 21);
    let plan = build_fold_plan(&ds.users(), 5, 0).unwrap();
    let cfg = MatrixConfig {
        finetune: small_finetune(FinetuneMode::Baseline, 1),
        target_pretext: small_pretext(PretextKind::Reconstruction, 1),
        ..MatrixConfig::default()
    };
    (ds, plan, cfg)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn one_cell_gives_25_runs_and_resumes() {
    let (ds, plan, cfg) = setup();
    let cells = [ExperimentCell::baseline("toy", LabelBudget::PerClass(5))];
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path()).unwrap();
    let mut store = EncoderStore::new();

    let first = run_matrix(&ds, &plan, &cells, &cfg, &mut store, &ledger).unwrap();
    assert_eq!((first.executed, first.skipped, first.failed), (25, 0, 0));
    assert_eq!(ledger.load().unwrap().len(), 25);
    assert!(first.results.iter().all(|r| r.test_macro_f1().is_some_and(|f| (0.0..=1.0).contains(&f))));

    let again = run_matrix(&ds, &plan, &cells, &cfg, &mut store, &ledger).unwrap();
    assert_eq!((again.executed, again.skipped), (0, 25));
    assert_eq!(again.results, first.results);

    // an interrupted run loses its unwritten records; resuming fills them in
    let clean = snapshot(dir.path());
    let interrupted = tempfile::tempdir().unwrap();
    let ledger2 = Ledger::open(interrupted.path()).unwrap();
    run_matrix(&ds, &plan, &cells, &cfg, &mut EncoderStore::new(), &ledger2).unwrap();
    for (i, name) in clean.keys().enumerate() {
        if i % 3 == 0 {
            fs::remove_file(interrupted.path().join(name)).unwrap();
        }
    }
    let resumed = run_matrix(&ds, &plan, &cells, &cfg, &mut EncoderStore::new(), &ledger2).unwrap();
    assert_eq!(resumed.executed, clean.len().div_ceil(3));
    assert_eq!(snapshot(interrupted.path()), clean);
}

#[test]
fn missing_checkpoint_is_recorded_per_run() {
    let (ds, plan, mut cfg) = setup();
    cfg.seeds = vec![0];
    let cells = [
        ExperimentCell::pretrained("toy", PretextKind::Cpc, Source::Capture, FinetuneMode::Frozen, LabelBudget::All),
        ExperimentCell::baseline("toy", LabelBudget::All),
    ];
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path()).unwrap();
    let s = run_matrix(&ds, &plan, &cells, &cfg, &mut EncoderStore::new(), &ledger).unwrap();
    assert_eq!((s.executed, s.failed), (10, 5));
    for r in &s.results[..5] {
        match &r.outcome {
            RunOutcome::Failed { error } => assert!(error.contains("missing checkpoint"), "{error}"),
            other => panic!("expected a failure, got {other:?}"),
        }
    }
    assert!(s.results[5..].iter().all(TrainRunResult::is_ok));
    // completeness counts failures too
    assert_eq!(ledger.load().unwrap().len(), cells.len() * 5);
}

#[test]
fn invalid_cells_are_rejected_up_front() {
    let (ds, plan, cfg) = setup();
    let mut bad = ExperimentCell::baseline("toy", LabelBudget::All);
    bad.source = Source::Target;
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path()).unwrap();
    assert!(run_matrix(&ds, &plan, &[bad], &cfg, &mut EncoderStore::new(), &ledger).is_err());
    let other = ExperimentCell::baseline("elsewhere", LabelBudget::All);
    assert!(run_matrix(&ds, &plan, &[other], &cfg, &mut EncoderStore::new(), &ledger).is_err());
    assert!(ledger.load().unwrap().is_empty());
}

#[test]
fn target_pretext_never_sees_test_users() {
    let (ds, plan, mut cfg) = setup();
    for fold in 0..plan.n_folds() {
        let test: Vec<&str> = plan.test_users(fold);
        let (train, val) = fold_windows(&ds, &plan, fold);
        assert!(!train.is_empty() && !val.is_empty());
        assert!(train.iter().chain(&val).all(|w| !test.contains(&w.user_id.as_ref())));
    }
    cfg.seeds = vec![0];
    cfg.folds = Some(vec![0, 3]);
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path().join("runs")).unwrap();
    let cell = ExperimentCell::pretrained("toy", PretextKind::Reconstruction, Source::Target, FinetuneMode::Tuned, LabelBudget::All);
    let mut store = EncoderStore::with_cache_dir(dir.path().join("ckpt"));
    let s = run_matrix(&ds, &plan, &[cell.clone()], &cfg, &mut store, &ledger).unwrap();
    assert_eq!((s.executed, s.failed), (2, 0));
    // one pretext per fold, cached for a later resume
    let cached: Vec<_> = fs::read_dir(dir.path().join("ckpt")).unwrap().collect();
    assert_eq!(cached.len(), 2);
    let frozen = ExperimentCell { mode: FinetuneMode::Frozen, ..cell };
    let mut fresh = EncoderStore::with_cache_dir(dir.path().join("ckpt"));
    let s = run_matrix(&ds, &plan, &[frozen], &cfg, &mut fresh, &ledger).unwrap();
    assert_eq!((s.executed, s.failed), (2, 0));
}

#[test]
fn stopping_study_rows() {
    let (ds, plan, mut cfg) = setup();
    cfg.seeds = vec![0, 1];
    cfg.folds = Some(vec![0]);
    let capture = dataset("capture", 6, &[1.0, 6.0], 30.0, 8);
    let users = capture.users();
    let mut pretext = small_pretext(PretextKind::Cpc, 3);
    pretext.patience = 1;
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path()).unwrap();
    let (study, summary) = stopping_point_study(
        &ds,
        &plan,
        &pretext,
        &capture.windows_for(&users[..5]),
        &capture.windows_for(&users[5..]),
        LabelBudget::All,
        &cfg,
        &ledger,
    )
    .unwrap();
    assert_eq!(summary.executed, 6);
    let stages: Vec<CheckpointStage> = study.rows.iter().map(|r| r.cell.stage).collect();
    assert_eq!(stages, CheckpointStage::ALL);
    assert_eq!(study.stages[0].epoch, 0);
    // early stopping is off, so the last checkpoint is the final epoch
    assert_eq!(study.stages[2].epoch, 3);
    assert!(study.stages[1].val_loss <= study.stages[2].val_loss);
    let table = render_stopping_table(&study.rows);
    assert!(table.starts_with("| Dataset | Pretext | Budget | Before pretext | Best validation | Last epoch |"));
    assert_eq!(table.lines().count(), 3);
    // a second call reuses the cached triplet and every record
    let (_, again) = stopping_point_study(&ds, &plan, &pretext, &[], &[], LabelBudget::All, &cfg, &ledger).unwrap();
    assert_eq!((again.executed, again.skipped), (0, 6));
}

#[test]
fn budget_sweep_curves_and_reports() {
    let (ds, plan, mut cfg) = setup();
    cfg.seeds = vec![0, 1];
    cfg.folds = Some(vec![0, 1]);
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path().join("ledger")).unwrap();
    let base = ExperimentCell::baseline("toy", LabelBudget::All);
    let mut budgets = LabelBudget::PAPER_SWEEP.to_vec();
    let (curves, _) = label_budget_sweep(&ds, &plan, &[base.clone()], &budgets, &cfg, &mut EncoderStore::new(), &ledger).unwrap();
    assert_eq!(curves.len(), 1);
    assert_eq!(curves[0].points.len(), 5);

    // the unlimited point is the main-table cell itself
    budgets.push(LabelBudget::All);
    let main = run_matrix(&ds, &plan, &[base.clone()], &cfg, &mut EncoderStore::new(), &ledger).unwrap();
    let (curves, s) = label_budget_sweep(&ds, &plan, &[base], &budgets, &cfg, &mut EncoderStore::new(), &ledger).unwrap();
    assert_eq!(s.executed, 0);
    let all = curves[0].points.last().unwrap();
    assert_eq!(all.budget, LabelBudget::All);
    let main_row = &aggregate(&main.results)[0];
    assert_eq!((all.mean, all.std, all.n), (main_row.mean, main_row.std, main_row.n));

    // reports are a pure function of the ledger
    let records = ledger.load().unwrap();
    assert_eq!(records.len(), 6 * 4);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    aggregate_and_render(&records, &a).unwrap();
    let mut shuffled = records.clone();
    shuffled.reverse();
    aggregate_and_render(&shuffled, &b).unwrap();
    assert_eq!(snapshot(&a), snapshot(&b));
    for f in ["aggregate.csv", "table.md", "deltas.svg", "budget_curves.svg", "budget_curves.json", "stopping.md"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let svg = fs::read_to_string(a.join("budget_curves.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 5);
}

#[test]
fn plan_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan {
        dataset: "data".into(),
        ledger: "ledger".into(),
        n_groups: 5,
        fold_seed: 0,
        cells: vec![ExperimentCell::baseline("toy", LabelBudget::PerClass(10))],
        matrix: MatrixConfig::default(),
        capture_checkpoints: [(PretextKind::Cpc, "ckpt/cpc".into())].into(),
    };
    let path = dir.path().join("plan.json");
    fs::write(&path, serde_json::to_string_pretty(&plan).unwrap()).unwrap();
    let back = ExperimentPlan::load(&path).unwrap();
    assert_eq!(back.dataset, dir.path().join("data"));
    assert_eq!(back.capture_checkpoints[&PretextKind::Cpc], dir.path().join("ckpt/cpc"));
    assert_eq!(back.cells, plan.cells);
}
