//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,2,3` restricts the run; `MNIST_DIR` points at the IDX
//! files (default `<workspace>/data/mnist`). MNIST criteria take tens of
//! minutes on one core.

mod common;

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use meprop::dataio::{load_mnist_dir, split_dev, Dataset};
use meprop::harness::bench::{bench_backprop, BenchConfig};
use meprop::harness::config::{ExperimentConfig, Mode, Task};
use meprop::harness::run::{load_lstm_data, run_lstm, run_mlp, Summary};
use meprop::layers::activation::Activation;
use meprop::layers::mlp::{Mlp, Selection};
use meprop::numerics::{FlopCounter, IndexSet, Matrix};
use meprop::optimizer::{Adam, AdamConfig};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MNIST_EPOCHS: usize = 20;
/// One full simplify + normal cycle.
const MESIMP_EPOCHS: usize = 10;
const SEEDS: [u64; 3] = [1, 2, 3];
/// Examples between prune events for the MNIST meSimp run.
const MESIMP_INTERVAL: usize = 2000;

type Outcome = Result<(bool, String), String>;

struct Ctx {
    out: PathBuf,
    mnist: Option<Result<(Dataset, Dataset, Dataset), String>>,
    baseline: Option<Vec<Summary>>,
    mesimp: Option<Summary>,
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn best_by_dev(runs: &[Summary]) -> &Summary {
    runs.iter()
        .rev()
        .max_by(|a, b| a.dev_accuracy.total_cmp(&b.dev_accuracy))
        .expect("non-empty")
}

impl Ctx {
    fn mnist(&mut self) -> Result<&(Dataset, Dataset, Dataset), String> {
        if self.mnist.is_none() {
            let dir = std::env::var_os("MNIST_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist")));
            let loaded = load_mnist_dir(&dir)
                .and_then(|(train, test)| {
                    let (train, dev) = split_dev(&train)?;
                    Ok((train, dev, test))
                })
                .map_err(|e| format!("MNIST unavailable ({e})"));
            self.mnist = Some(loaded);
        }
        self.mnist.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }

    fn config(&self, name: &str, mode: Mode, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            name: Some(format!("{name}-s{seed}")),
            task: Task::MnistMlp,
            mode,
            hidden: Some(vec![500, 500]),
            epochs: MNIST_EPOCHS,
            batch_size: 10,
            seed,
            out: self.out.join(format!("{name}-s{seed}")),
            ..Default::default()
        }
    }

    fn train(&mut self, config: &ExperimentConfig) -> Result<Summary, String> {
        let (train, dev, test) = self.mnist()?;
        let s = run_mlp(config, train, dev, test).map_err(|e| e.to_string())?;
        println!(
            "      {}: best epoch {} dev {} test {} final {} sizes {:?} backprop {:.1}s",
            s.name,
            s.best_epoch + 1,
            pct(s.dev_accuracy),
            pct(s.test_accuracy),
            pct(s.final_test_accuracy),
            s.final_hidden_sizes,
            s.backprop_seconds
        );
        Ok(s)
    }

    fn baseline(&mut self) -> Result<Vec<Summary>, String> {
        if self.baseline.is_none() {
            let runs = SEEDS
                .iter()
                .map(|&s| {
                    let c = self.config("baseline", Mode::Baseline, s);
                    self.train(&c)
                })
                .collect::<Result<Vec<_>, _>>()?;
            self.baseline = Some(runs);
        }
        Ok(self.baseline.clone().unwrap())
    }

    /// The seed-1 baseline, matched to single-seed runs of other modes.
    fn matched_baseline(&mut self) -> Result<Summary, String> {
        Ok(self.baseline()?.into_iter().next().unwrap())
    }
}

fn c1_oracle(_: &mut Ctx) -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let (exact, gap, shape) = common::meprop_oracle_case(1000 + seed);
        if !exact {
            return Ok((false, format!("mismatch at n,m,k = {shape:?}")));
        }
        worst = worst.max(gap);
    }
    Ok((worst <= 1e-12, format!("50 shapes exact; k=n max diff {worst:e}")))
}

fn c2_gradcheck(_: &mut Ctx) -> Outcome {
    let mut mlp: f64 = 0.0;
    let mut lstm: f64 = 0.0;
    for seed in 0..10 {
        for act in [Activation::Relu, Activation::Tanh] {
            mlp = mlp.max(common::mlp_gradcheck(seed, act));
        }
        lstm = lstm.max(common::lstm_gradcheck(seed));
    }
    Ok((
        mlp < 1e-6 && lstm < 1e-6,
        format!("max relative error mlp {mlp:.2e}, lstm {lstm:.2e} over 10 seeds"),
    ))
}

fn c3_flops(_: &mut Ctx) -> Outcome {
    let configs = [
        (784, vec![500, 500], 80, 10, Selection::PerExample),
        (784, vec![500, 500], 20, 10, Selection::Unified),
        (50, vec![64, 32, 16], 5, 7, Selection::PerExample),
        (13, vec![9], 1, 1, Selection::PerExample),
        (30, vec![40, 40], 39, 4, Selection::Unified),
    ];
    let mut checked = 0;
    for (inputs, hidden, k, batch, selection) in configs {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let mut full = Mlp::new(inputs, &hidden, 10, Activation::Relu, None, &mut rng).map_err(|e| e.to_string())?;
        full.selection = selection;
        let mut sparse = full.clone();
        sparse.set_hidden_k(Some(k));
        let x = Matrix::from_fn(batch, inputs, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..10)).collect();
        let step = |m: &Mlp, rng: &mut ChaCha8Rng| {
            let t = m.forward_batch(&x, rng, None, &mut FlopCounter::new()).unwrap();
            m.backward_batch(&t, &y, &mut FlopCounter::new()).unwrap()
        };
        let gf = step(&full, &mut rng);
        let gs = step(&sparse, &mut rng);
        for (l, &n) in hidden.iter().enumerate() {
            let (fs, ss) = (gf.layers[l].flops, gs.layers[l].flops);
            if ss * n as u64 != fs * k as u64 {
                return Ok((false, format!("layer {l} of {hidden:?}: {ss} vs {fs} × {k}/{n}")));
            }
            checked += 1;
        }
    }
    let rows = bench_backprop(&BenchConfig {
        hidden: vec![64, 500],
        ks: vec![1, 7, 64, 80],
        repetitions: 1,
        batch_size: 3,
        seed: 1,
    })
    .map_err(|e| e.to_string())?;
    let bench_ok = rows
        .iter()
        .all(|r| r.meprop_flops * r.hidden as u64 == r.full_flops * r.k as u64);
    Ok((
        bench_ok,
        format!("{checked} hidden layers and {} bench rows at exactly k/n", rows.len()),
    ))
}

fn c4_speedup(_: &mut Ctx) -> Outcome {
    let small = bench_backprop(&BenchConfig {
        hidden: vec![500],
        ks: vec![80, 500],
        repetitions: 100,
        batch_size: 10,
        seed: 1,
    })
    .map_err(|e| e.to_string())?;
    let large = bench_backprop(&BenchConfig {
        hidden: vec![4096],
        ks: vec![64],
        repetitions: 15,
        batch_size: 10,
        seed: 1,
    })
    .map_err(|e| e.to_string())?;
    let (s80, s500, s64) = (small[0].speedup, small[1].speedup, large[0].speedup);
    Ok((
        s80 >= 2.0 && s64 >= 10.0 && (0.8..=1.2).contains(&s500),
        format!("h=500 k=80 {s80:.2}x (k=n {s500:.2}x), h=4096 k=64 {s64:.2}x"),
    ))
}

fn c5_baseline(ctx: &mut Ctx) -> Outcome {
    let runs = ctx.baseline()?;
    let best = best_by_dev(&runs);
    let all: Vec<String> = runs.iter().map(|r| pct(r.test_accuracy)).collect();
    Ok((
        best.test_accuracy >= 0.978,
        format!("best-of-3 test {} (seeds: {})", pct(best.test_accuracy), all.join(", ")),
    ))
}

fn c6_meprop(ctx: &mut Ctx) -> Outcome {
    let base = best_by_dev(&ctx.baseline()?).test_accuracy;
    let mut runs = Vec::new();
    for s in SEEDS {
        let mut c = ctx.config("meprop-k80", Mode::Meprop, s);
        c.k = Some(80);
        runs.push(ctx.train(&c)?);
    }
    let best = best_by_dev(&runs);
    let ratio_ok = runs.iter().all(|r| r.hidden_flop_ratio == vec![80.0 / 500.0; 2]);
    let gap = best.test_accuracy - base;
    Ok((
        gap.abs() <= 0.004 && best.test_accuracy >= 0.978 && ratio_ok,
        format!(
            "best-of-3 test {} vs baseline {} ({:+.2} points), flop ratio {:?}",
            pct(best.test_accuracy),
            pct(base),
            100.0 * gap,
            best.hidden_flop_ratio
        ),
    ))
}

fn c7_small_hidden(ctx: &mut Ctx) -> Outcome {
    let mut small = ctx.config("baseline-h20", Mode::Baseline, 1);
    small.hidden = Some(vec![20, 20]);
    let small = ctx.train(&small)?;
    let mut mp = ctx.config("meprop-k20", Mode::Meprop, 1);
    mp.k = Some(20);
    let mp = ctx.train(&mp)?;
    let gap = mp.test_accuracy - small.test_accuracy;
    Ok((
        gap >= 0.01,
        format!(
            "meProp k=20 on h=500 {} vs h=20 baseline {} ({:+.2} points)",
            pct(mp.test_accuracy),
            pct(small.test_accuracy),
            100.0 * gap
        ),
    ))
}

fn c8_mesimp(ctx: &mut Ctx) -> Outcome {
    let base = ctx.matched_baseline()?.test_accuracy;
    let mut c = ctx.config("mesimp-k160", Mode::Mesimp, 1);
    c.k = Some(160);
    c.prune_rate = Some(0.10);
    c.prune_interval = Some(MESIMP_INTERVAL);
    c.cycle_epochs = 10;
    c.simplify_epochs = 5;
    c.epochs = MESIMP_EPOCHS;
    let s = ctx.train(&c)?;
    ctx.mesimp = Some(s.clone());
    let ok = s.mean_hidden_size <= 250.0 && s.final_test_accuracy >= base - 0.003;
    Ok((
        ok,
        format!(
            "final sizes {:?} (mean {:.1}), final test {} vs matched baseline {}",
            s.final_hidden_sizes,
            s.mean_hidden_size,
            pct(s.final_test_accuracy),
            pct(base)
        ),
    ))
}

fn c9_structure(ctx: &mut Ctx) -> Outcome {
    let out = ctx.out.join("mesimp-synthetic");
    let c = ExperimentConfig {
        task: Task::SynthTiming,
        mode: Mode::Mesimp,
        hidden: Some(vec![64, 48]),
        k: Some(6),
        prune_rate: Some(0.08),
        prune_interval: Some(500),
        cycle_epochs: 4,
        simplify_epochs: 2,
        synth_features: 32,
        synth_classes: 6,
        synth_examples: 3000,
        epochs: 8,
        out,
        ..Default::default()
    };
    let (train, dev, test) = meprop::harness::run::load_mlp_data(&c).map_err(|e| e.to_string())?;
    let s = run_mlp(&c, &train, &dev, &test).map_err(|e| e.to_string())?;
    let mut ok = s.prune_events > 0 && s.prune_checks_ok == Some(true) && s.max_prune_gap.is_some_and(|g| g < 1e-12);
    let mut detail = format!(
        "synthetic: {} events, max gap {:e}, sizes {:?}",
        s.prune_events,
        s.max_prune_gap.unwrap_or(f64::NAN),
        s.final_hidden_sizes
    );
    if let Some(m) = &ctx.mesimp {
        ok &= m.prune_events > 0 && m.prune_checks_ok == Some(true) && m.max_prune_gap.is_some_and(|g| g < 1e-12);
        detail += &format!(
            "; MNIST: {} events, max gap {:e}",
            m.prune_events,
            m.max_prune_gap.unwrap_or(f64::NAN)
        );
    }
    Ok((ok, detail))
}

fn c10_meact(ctx: &mut Ctx) -> Outcome {
    let base = ctx.matched_baseline()?.test_accuracy;
    let mut c = ctx.config("meact", Mode::Meact, 1);
    c.meact_p = Some(0.004);
    c.meact_e = Some(10);
    c.epochs = 15;
    let s = ctx.train(&c)?;
    let m = s.meact.as_ref().ok_or("no meact summary")?;
    let probe_normal = m.probe_normal.ok_or("no comparison run")?;
    // One number per model, averaged over hidden layers.
    let avg = m.mean_unmasked.iter().sum::<f64>() / m.mean_unmasked.len() as f64;
    let ok = (50.0..=200.0).contains(&avg) && m.masked_test_accuracy >= base - 0.001 && m.probe_masked < probe_normal;
    Ok((
        ok,
        format!(
            "unmasked per example {avg:.1} (layers {:.1?}), masked-phase test {} vs matched baseline {}, update {:.3e} vs normal {:.3e}",
            m.mean_unmasked,
            pct(m.masked_test_accuracy),
            pct(base),
            m.probe_masked,
            probe_normal
        ),
    ))
}

fn c11_untouched(_: &mut Ctx) -> Outcome {
    let (rows, cols) = (60, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut adam = Adam::new(AdamConfig::default(), &[(rows, cols)]);
    let init: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut param = init.clone();
    let mut touched = vec![false; rows];
    for _ in 0..1000 {
        // Rows 45.. are never candidates; the rest are sampled sparsely.
        let k = rng.random_range(1..=4);
        let mut pick: Vec<usize> = sample(&mut rng, 45, k).into_vec();
        pick.retain(|&r| r % 7 != 3);
        if pick.is_empty() {
            continue;
        }
        let set = IndexSet::from_unsorted(pick, rows).map_err(|e| e.to_string())?;
        for &r in set.indices() {
            touched[r] = true;
        }
        let block: Vec<f64> = (0..set.len() * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        adam.step_rows(0, &mut param, rows, cols, &set, &block).map_err(|e| e.to_string())?;
    }
    let state = adam.slot(0);
    let mut never = 0;
    for r in (0..rows).filter(|&r| !touched[r]) {
        never += 1;
        let row = r * cols..(r + 1) * cols;
        let same = param[row.clone()].iter().zip(&init[row]).all(|(a, b)| a.to_bits() == b.to_bits());
        let clean = state.m.row(r).iter().chain(state.v.row(r)).all(|v| v.to_bits() == 0) && state.steps[r] == 0;
        if !same || !clean {
            return Ok((false, format!("row {r} changed")));
        }
    }
    let moved = (0..rows).filter(|&r| touched[r]).all(|r| {
        let row = r * cols..(r + 1) * cols;
        param[row.clone()] != init[row]
    });
    Ok((never > 10 && moved, format!("{never} never-selected rows byte-identical after 1000 steps")))
}

fn c12_lstm(ctx: &mut Ctx) -> Outcome {
    let h = 64;
    let base = ExperimentConfig {
        task: Task::SynthLstm,
        hidden: Some(vec![h]),
        k: Some(h / 10),
        epochs: 6,
        batch_size: 10,
        train_limit: Some(2000),
        ..Default::default()
    };
    let (train, dev, test) = load_lstm_data(&base).map_err(|e| e.to_string())?;
    let mp = ExperimentConfig {
        mode: Mode::Meprop,
        out: ctx.out.join("lstm-meprop"),
        ..base.clone()
    };
    let a = run_lstm(&mp, &train, &dev, &test).map_err(|e| e.to_string())?;
    let simp = ExperimentConfig {
        mode: Mode::Mesimp,
        prune_rate: Some(0.05),
        cycle_epochs: 2,
        simplify_epochs: 1,
        out: ctx.out.join("lstm-mesimp"),
        ..base
    };
    let b = run_lstm(&simp, &train, &dev, &test).map_err(|e| e.to_string())?;
    let ok = a.test_accuracy >= 0.95 && b.prune_events > 0 && b.prune_checks_ok == Some(true);
    Ok((
        ok,
        format!(
            "meProp k={} tag accuracy {}; joint pruning {} events, sizes fwd/bwd {:?}, test {}",
            h / 10,
            pct(a.test_accuracy),
            b.prune_events,
            b.final_hidden_sizes,
            pct(b.test_accuracy)
        ),
    ))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn(&mut Ctx) -> Outcome); 12] = [
        (1, "oracle equivalence", c1_oracle),
        (2, "gradient correctness", c2_gradcheck),
        (3, "flop reduction", c3_flops),
        (4, "wall-time speedup", c4_speedup),
        (11, "untouched parameters", c11_untouched),
        (12, "lstm path", c12_lstm),
        (5, "mnist baseline", c5_baseline),
        (6, "mnist meprop", c6_meprop),
        (7, "small-hidden contrast", c7_small_hidden),
        (8, "mesimp size reduction", c8_mesimp),
        (9, "mesimp structure", c9_structure),
        (10, "meact", c10_meact),
    ];
    let mut ctx = Ctx {
        out: PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"),
        mnist: None,
        baseline: None,
        mesimp: None,
    };
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (pass, detail) = match f(&mut ctx) {
            Ok(r) => r,
            Err(e) => (false, e),
        };
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} [{id:>2}] {name}: {detail} ({secs:.1}s)",
            if pass { "PASS" } else { "FAIL" }
        );
        let _ = std::io::stdout().flush();
        if !pass {
            failed.push(id);
        }
    }
    println!("acceptance: {}/{ran} passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
