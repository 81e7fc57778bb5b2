use std::fs;
use std::path::Path;

use meprop::checkpoint::{load, Model};
use meprop::harness::config::{ExperimentConfig, Mode, Task};
use meprop::harness::run::{run, sweep, METRICS_HEADER};
use meprop::layers::mlp::Selection;
use meprop::Error;

fn small(mode: Mode, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        task: Task::SynthTiming,
        mode,
        hidden: Some(vec![24, 16]),
        synth_features: 20,
        synth_classes: 4,
        synth_examples: 400,
        epochs: 3,
        batch_size: 8,
        out: out.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn baseline_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let s = run(&small(Mode::Baseline, dir.path())).unwrap();
    for f in ["metrics.csv", "timing.csv", "summary.json", "model.ckpt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 3 * 3);
    assert_eq!(s.backprop_ms_per_epoch.len(), 3);
    assert!(s.test_accuracy > 0.25);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["test_accuracy"].as_f64(), Some(s.test_accuracy));

    let ckpt = load(&dir.path().join("model.ckpt")).unwrap();
    let Model::Mlp(m) = ckpt.model else { panic!("expected mlp") };
    assert_eq!(m.hidden_sizes(), vec![24, 16]);
    assert!(ckpt.optimizer.is_some());
}

#[test]
fn same_seed_gives_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut c = small(Mode::Meprop, a.path());
    c.k = Some(5);
    c.dropout = Some(0.1);
    run(&c).unwrap();
    c.out = b.path().to_path_buf();
    run(&c).unwrap();
    let read = |d: &Path| fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        fs::read(a.path().join("model.ckpt")).unwrap(),
        fs::read(b.path().join("model.ckpt")).unwrap()
    );
}

#[test]
fn meprop_flop_ratio_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for selection in [Selection::PerExample, Selection::Unified] {
        let mut c = small(Mode::Meprop, dir.path());
        c.k = Some(4);
        c.selection = selection;
        let s = run(&c).unwrap();
        assert_eq!(s.hidden_flop_ratio, vec![4.0 / 24.0, 4.0 / 16.0]);
    }
}

#[test]
fn meprop_without_k_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(&small(Mode::Meprop, dir.path())).unwrap_err();
    assert!(matches!(err, Error::Config { field: "k", .. }));
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn mesimp_prunes_and_logs_events() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(Mode::Mesimp, dir.path());
    c.k = Some(3);
    c.prune_rate = Some(0.1);
    c.prune_interval = Some(200);
    c.cycle_epochs = 2;
    c.simplify_epochs = 1;
    c.epochs = 4;
    let s = run(&c).unwrap();
    assert!(s.prune_events >= 2);
    assert_eq!(s.prune_checks_ok, Some(true));
    assert!(s.max_prune_gap.unwrap() < 1e-12);
    assert!(s.final_hidden_sizes.iter().zip([24, 16]).all(|(&a, b)| a <= b && a >= 3));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",prune_l0,")));
    assert!(csv.lines().any(|l| l.contains(",normal,")));
}

#[test]
fn meact_reports_probe_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(Mode::Meact, dir.path());
    c.meact_p = Some(0.05);
    c.meact_e = Some(2);
    c.epochs = 3;
    let s = run(&c).unwrap();
    let m = s.meact.unwrap();
    assert_eq!(m.mean_unmasked.len(), 2);
    assert!(m.mean_unmasked.iter().all(|&u| u >= 1.0 && u <= 24.0));
    assert!(m.probe_masked > 0.0);
    assert!(m.probe_normal.unwrap() > 0.0);
    assert!(m.masked_test_accuracy > 0.0);
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",masked,")));
}

#[test]
fn lstm_runs_in_each_mode() {
    for mode in [Mode::Baseline, Mode::Meprop, Mode::Mesimp] {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            task: Task::SynthLstm,
            mode,
            hidden: Some(vec![12]),
            k: Some(4),
            prune_rate: Some(0.05),
            cycle_epochs: 2,
            simplify_epochs: 1,
            vocab: 9,
            seq_len: 6,
            embed: 6,
            train_limit: Some(120),
            epochs: 2,
            batch_size: 4,
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        let s = run(&c).unwrap();
        assert_eq!(s.final_hidden_sizes.len(), 2);
        if mode == Mode::Mesimp {
            assert_eq!(s.prune_events, 1);
            assert_eq!(s.prune_checks_ok, Some(true));
        }
        let ckpt = load(&dir.path().join("model.ckpt")).unwrap();
        assert!(matches!(ckpt.model, Model::Tagger(_)));
    }
}

#[test]
fn sweep_picks_best_dev() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(Mode::Baseline, dir.path());
    c.epochs = 1;
    let s = sweep(&c, 3).unwrap();
    assert_eq!(s.runs.len(), 3);
    let best = s.runs[s.best].dev_accuracy;
    assert!(s.runs.iter().all(|r| r.dev_accuracy <= best));
    assert_eq!(s.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(dir.path().join("seed_2/metrics.csv").exists());
    assert!(dir.path().join("sweep.json").exists());
}

#[test]
fn missing_mnist_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        mnist_dir: dir.path().join("nope"),
        out: dir.path().join("out"),
        ..Default::default()
    };
    assert_eq!(run(&c).unwrap_err().kind(), "io");
}
