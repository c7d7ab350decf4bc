mod common;

use common::*;
use proptest::prelude::*;
use ssl_har::engine::{
    finetune, subsample_labels, train_pretext, BatchProvider, FinetuneMode, LabelBudget, PretextRunConfig,
};
use ssl_har::ingest::Window;
use ssl_har::metrics::macro_f1;
use ssl_har::models::{Encoder, ENCODER_PREFIX};
use ssl_har::objectives::{ObjectiveConfig, PretextKind};
use ssl_har::params::ParameterSet;

fn random_encoder(seed: u64) -> ParameterSet {
    Encoder::build(small_encoder(), seed).unwrap().1.subset(ENCODER_PREFIX)
}

fn split(ds: &ssl_har::ingest::WindowedDataset, n_train: usize) -> (Vec<Window>, Vec<Window>) {
    let users = ds.users();
    (ds.windows_for(&users[..n_train]), ds.windows_for(&users[n_train..]))
}

#[test]
fn frozen_encoder_is_bit_identical() {
    let ds = dataset("freeze", 4, &[1.0, 6.0], 40.0, 2);
    let (train, val) = split(&ds, 3);
    for seed in 0..3 {
        let init = random_encoder(100 + seed);
        let mut cfg = small_finetune(FinetuneMode::Frozen, 3);
        cfg.seed = seed;
        let out = finetune(&cfg, Some(&init), &train, &val, 2).unwrap();
        let after = out.model.params.subset(ENCODER_PREFIX);
        assert_eq!(after.len(), init.len());
        for (name, p) in init.iter() {
            let a = after.tensor(name).unwrap().data();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(p.value.data()), "{name} moved under a frozen encoder");
        }
    }
}

#[test]
fn tuned_encoder_moves() {
    let ds = dataset("tune", 4, &[1.0, 6.0], 40.0, 2);
    let (train, val) = split(&ds, 3);
    for seed in 0..3 {
        let init = random_encoder(200 + seed);
        let mut cfg = small_finetune(FinetuneMode::Tuned, 3);
        cfg.seed = seed;
        cfg.patience = 3;
        let out = finetune(&cfg, Some(&init), &train, &val, 2).unwrap();
        let after = out.model.params.subset(ENCODER_PREFIX);
        let changed = init.iter().filter(|(n, p)| after.tensor(n).unwrap() != &p.value).count();
        assert!(changed as f64 >= 0.99 * init.len() as f64, "only {changed}/{} encoder arrays changed", init.len());
    }
}

/// Mean absolute first difference over standard deviation: grows with
/// frequency and ignores gain.
fn roughness(w: &Window) -> f64 {
    (0..3)
        .map(|c| {
            let x: Vec<f64> = w.channel(c).collect();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            x.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (x.len() - 1) as f64 / sd.max(1e-9)
        })
        .sum()
}

#[test]
fn tuned_fits_separable_classes() {
    let ds = dataset("sep", 4, &[1.5, 8.0], 60.0, 5);
    // drop windows straddling two activity segments (10 s = 500 samples)
    let pure = |ws: Vec<Window>| -> Vec<Window> { ws.into_iter().filter(|w| w.start_index % 500 + w.len() <= 500).collect() };
    let (train, val) = split(&ds, 3);
    let (train, val) = (pure(train), pure(val));
    let labelled: Vec<&Window> = train.iter().filter(|w| w.label.is_some()).collect();

    // logistic regression on one hand-made feature confirms separability
    let xs: Vec<f64> = labelled.iter().map(|w| roughness(w)).collect();
    let ys: Vec<f64> = labelled.iter().map(|w| w.label.unwrap() as f64).collect();
    let (mu, sd) = {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
    };
    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..2000 {
        let (mut gw, mut gb) = (0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            let z = (x - mu) / sd;
            let p = 1.0 / (1.0 + (-(w * z + b)).exp());
            gw += (p - y) * z;
            gb += p - y;
        }
        w -= 0.5 * gw / xs.len() as f64;
        b -= 0.5 * gb / xs.len() as f64;
    }
    let lr_preds: Vec<usize> = xs.iter().map(|x| usize::from(w * (x - mu) / sd + b > 0.0)).collect();
    let labels: Vec<usize> = labelled.iter().map(|w| w.label.unwrap()).collect();
    let oracle = macro_f1(&lr_preds, &labels, 2).unwrap();
    assert!(oracle >= 0.99, "oracle macro-F1 {oracle}");

    let mut cfg = small_finetune(FinetuneMode::Tuned, 30);
    cfg.patience = 30;
    let out = finetune(&cfg, Some(&random_encoder(7)), &train, &val, 2).unwrap();
    let f1 = out.model.evaluate(&train).unwrap();
    assert!(f1 >= 0.99, "train macro-F1 {f1}");
}

#[test]
fn baseline_is_deterministic() {
    let ds = dataset("det", 4, &[1.0, 6.0], 30.0, 3);
    let (train, val) = split(&ds, 3);
    let cfg = small_finetune(FinetuneMode::Baseline, 3);
    let a = finetune(&cfg, None, &train, &val, 2).unwrap();
    let b = finetune(&cfg, None, &train, &val, 2).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params.digest(), b.model.params.digest());
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(finetune(&other, None, &train, &val, 2).unwrap().model.params.digest(), a.model.params.digest());
}

#[test]
fn mode_and_checkpoint_must_agree() {
    let ds = dataset("modes", 4, &[1.0, 6.0], 30.0, 3);
    let (train, val) = split(&ds, 3);
    let init = random_encoder(0);
    assert!(finetune(&small_finetune(FinetuneMode::Baseline, 1), Some(&init), &train, &val, 2).is_err());
    for mode in [FinetuneMode::Frozen, FinetuneMode::Tuned] {
        let err = finetune(&small_finetune(mode, 1), None, &train, &val, 2).unwrap_err();
        assert!(matches!(err, ssl_har::Error::MissingCheckpoint(_)));
    }
}

#[test]
fn reconstruction_error_halves() {
    let ds = dataset("recon", 5, &[1.0, 3.0, 6.0], 60.0, 9);
    let (train, _) = split(&ds, 4);
    for seed in 0..5 {
        let mut cfg = small_pretext(PretextKind::Reconstruction, 15);
        cfg.seed = seed;
        // scoring on the training windows makes the recorded loss the training MSE
        let out = train_pretext(&cfg, &train, &train).unwrap();
        let initial = out.triplet.before.meta.val_loss;
        let last = out.triplet.last.meta.val_loss;
        assert!(last < 0.5 * initial, "seed {seed}: {initial} -> {last}");
    }
}

#[test]
fn checkpoint_triplet_invariants() {
    let ds = dataset("trip", 4, &[1.0, 6.0], 40.0, 4);
    let (train, val) = split(&ds, 3);
    for task in PretextKind::ALL {
        let mut cfg = small_pretext(task, 3);
        cfg.early_stopping = false;
        let out = train_pretext(&cfg, &train, &val).unwrap();
        let t = &out.triplet;
        assert_eq!(t.before.meta.epoch, 0);
        assert_eq!(t.last.meta.epoch, 3);
        assert_eq!(out.history.len(), 3);
        let min = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(t.best.meta.val_loss, min, "{task}");
        assert!(t.best.meta.val_loss <= t.last.meta.val_loss);
        assert!(t.best.params.names().all(|n| n.starts_with(ENCODER_PREFIX)));
    }
}

#[test]
fn pretext_runs_are_reproducible() {
    let ds = dataset("rep", 4, &[1.0, 6.0], 30.0, 4);
    let (train, val) = split(&ds, 3);
    let cfg = small_pretext(PretextKind::Simclr, 2);
    let a = train_pretext(&cfg, &train, &val).unwrap();
    let b = train_pretext(&cfg, &train, &val).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.triplet.last.meta.digest, b.triplet.last.meta.digest);
}

#[test]
fn precomputed_examples_are_fixed_across_epochs() {
    let ds = dataset("prov", 2, &[1.0, 6.0], 20.0, 1);
    let cfg = ObjectiveConfig::default();
    let fixed = BatchProvider::new(PretextKind::Multitask, &cfg, &ds.windows, true, 3).unwrap();
    let online = BatchProvider::new(PretextKind::Multitask, &cfg, &ds.windows, false, 3).unwrap();
    assert!(fixed.is_precomputed() && !online.is_precomputed());
    let mut differing = 0;
    for i in 0..ds.windows.len() {
        assert_eq!(fixed.example(1, i).unwrap(), fixed.example(7, i).unwrap());
        assert_eq!(online.example(4, i).unwrap(), online.example(4, i).unwrap());
        if online.example(1, i).unwrap() != online.example(2, i).unwrap() {
            differing += 1;
        }
    }
    assert!(differing > ds.windows.len() * 9 / 10, "{differing} of {} examples redrawn", ds.windows.len());
}

#[test]
fn pretext_config_rejects_bad_values() {
    let mut cfg = PretextRunConfig::new(PretextKind::Cpc);
    cfg.patience = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = PretextRunConfig::new(PretextKind::Cpc);
    cfg.sample_fraction = 0.0;
    assert!(cfg.validate().is_err());
}

fn labelled_windows(counts: &[usize]) -> Vec<Window> {
    let user: std::sync::Arc<str> = "u".into();
    let ds: std::sync::Arc<str> = "d".into();
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
        .map(|(c, i)| Window::new(vec![i as f64; 300], Some(c), user.clone(), ds.clone(), i))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn budget_law(counts in prop::collection::vec(0usize..40, 2..6), k in 1usize..30, seed in any::<u64>()) {
        let windows = labelled_windows(&counts);
        let picked = subsample_labels(&windows, LabelBudget::PerClass(k), seed);
        prop_assert_eq!(picked.len(), counts.iter().map(|&n| n.min(k)).sum::<usize>());
        for (c, &n) in counts.iter().enumerate() {
            prop_assert_eq!(picked.iter().filter(|w| w.label == Some(c)).count(), n.min(k));
        }
        prop_assert_eq!(&picked, &subsample_labels(&windows, LabelBudget::PerClass(k), seed));
        prop_assert_eq!(subsample_labels(&windows, LabelBudget::All, seed).len(), windows.len());
    }
}
