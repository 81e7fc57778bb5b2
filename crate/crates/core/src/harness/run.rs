use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, Task};
use crate::activator::{build_masks, masked_train_epoch, pretrain_and_record, ActMask};
use crate::checkpoint::{encode, Checkpoint, Model};
use crate::dataio::{
    epoch_order, load_mnist_dir, split_dev, split_dev_at, synth_linear_timing,
    synth_sequence_task, Dataset, SequenceDataset, Split,
};
use crate::error::{Error, Result};
use crate::layers::activation::Activation;
use crate::layers::mlp::Mlp;
use crate::layers::tagger::BiLstmTagger;
use crate::numerics::{FlopCounter, Matrix};
use crate::optimizer::{Adam, AdamConfig};
use crate::simplifier::{
    prune_lstm_joint, stage_of, tagger_shapes_consistent, CycleOptions, CycledTrainer, PruneConfig, PruneReport, Stage,
    UpdateCounter,
};
use crate::trainer::{evaluate, run_epoch, EpochMeter, Evaluation};

/// Data seed of the synthetic tasks; fixed so seed sweeps share one dataset.
const SYNTH_DATA_SEED: u64 = 7;
const SYNTH_DEV: usize = 1000;
const SYNTH_TEST: usize = 1000;
const LSTM_DEV: usize = 200;
const LSTM_TEST: usize = 200;

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub stage: &'static str,
    pub split: String,
    pub accuracy: Option<f64>,
    pub loss: Option<f64>,
    pub backprop_flops: Option<u64>,
    pub hidden_sizes: Vec<usize>,
    pub mean_update: Option<f64>,
    pub removed: Option<usize>,
}

pub const METRICS_HEADER: &str =
    "epoch,stage,split,accuracy,loss,backprop_flops,hidden_sizes,mean_update,removed";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let sizes: Vec<String> = self.hidden_sizes.iter().map(usize::to_string).collect();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.stage,
            self.split,
            opt(self.accuracy.map(|a| format!("{a:.6}"))),
            opt(self.loss.map(|l| format!("{l:.6}"))),
            opt(self.backprop_flops),
            sizes.join("x"),
            opt(self.mean_update.map(|u| format!("{u:.6e}"))),
            opt(self.removed),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeactSummary {
    pub mean_unmasked: Vec<f64>,
    /// Average absolute parameter change per update while training masked.
    pub probe_masked: f64,
    /// The same over an unmasked continuation from the pretrained state.
    pub probe_normal: Option<f64>,
    /// Test accuracy at the best dev epoch of the masked phase alone.
    pub masked_test_accuracy: f64,
    pub normal_test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub task: Task,
    pub mode: Mode,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    /// Test accuracy of the model as it stands after the last epoch.
    pub final_test_accuracy: f64,
    pub best_hidden_sizes: Vec<usize>,
    pub final_hidden_sizes: Vec<usize>,
    pub mean_hidden_size: f64,
    pub backprop_seconds: f64,
    pub backprop_ms_per_epoch: Vec<f64>,
    pub backprop_flops: u64,
    /// Backward cost of each hidden layer relative to full back propagation,
    /// over the whole run.
    pub hidden_flop_ratio: Vec<f64>,
    pub mean_update_per_epoch: Vec<f64>,
    pub prune_events: usize,
    pub max_prune_gap: Option<f64>,
    pub prune_checks_ok: Option<bool>,
    pub meact: Option<MeactSummary>,
    pub config: ExperimentConfig,
}

/// Per-epoch bookkeeping and best-by-dev selection.
struct Tracker {
    rows: Vec<MetricsRow>,
    timing: Vec<(usize, f64)>,
    best: Option<(usize, Evaluation, Evaluation, Vec<usize>, Vec<u8>)>,
    last_test: f64,
    mean_updates: Vec<f64>,
    flops: u64,
    layer_flops: Vec<u64>,
    layer_full: Vec<u64>,
    backprop: Duration,
}

struct EpochResult<'a> {
    epoch: usize,
    stage: &'static str,
    meter: &'a EpochMeter,
    dev: Evaluation,
    test: Evaluation,
    sizes: Vec<usize>,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            rows: Vec::new(),
            timing: Vec::new(),
            best: None,
            last_test: 0.0,
            mean_updates: Vec::new(),
            flops: 0,
            layer_flops: Vec::new(),
            layer_full: Vec::new(),
            backprop: Duration::ZERO,
        }
    }

    fn observe(&mut self, r: EpochResult<'_>, snapshot: impl FnOnce() -> Vec<u8>) {
        let m = r.meter;
        let base = MetricsRow {
            epoch: r.epoch,
            stage: r.stage,
            split: "train".into(),
            accuracy: Some(m.accuracy()),
            loss: Some(m.loss()),
            backprop_flops: Some(m.backprop_flops),
            hidden_sizes: r.sizes.clone(),
            mean_update: Some(m.mean_update()),
            removed: None,
        };
        for (split, ev) in [("dev", r.dev), ("test", r.test)] {
            self.rows.push(MetricsRow {
                split: split.into(),
                accuracy: Some(ev.accuracy),
                loss: Some(ev.loss),
                backprop_flops: None,
                mean_update: None,
                ..base.clone()
            });
        }
        self.rows.insert(self.rows.len() - 2, base);
        self.last_test = r.test.accuracy;
        self.timing
            .push((r.epoch, m.backprop_time.as_secs_f64() * 1e3));
        self.backprop += m.backprop_time;
        self.mean_updates.push(m.mean_update());
        self.flops += m.backprop_flops;
        self.layer_flops.resize(m.layer_flops.len().max(self.layer_flops.len()), 0);
        self.layer_full.resize(self.layer_flops.len(), 0);
        for (l, (&a, &b)) in m.layer_flops.iter().zip(&m.layer_full_flops).enumerate() {
            self.layer_flops[l] += a;
            self.layer_full[l] += b;
        }
        let better = self.best.as_ref().is_none_or(|b| r.dev.accuracy > b.1.accuracy);
        if better {
            self.best = Some((r.epoch, r.dev, r.test, r.sizes, snapshot()));
        }
    }

    fn prune_rows(&mut self, epoch: usize, stage: &'static str, reports: &[PruneReport]) {
        for rep in reports {
            self.rows.push(MetricsRow {
                epoch,
                stage,
                split: format!("prune_l{}", rep.layer),
                accuracy: None,
                loss: None,
                backprop_flops: None,
                hidden_sizes: vec![rep.size_after],
                mean_update: None,
                removed: Some(rep.removed.len()),
            });
        }
    }
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Simplify => "simplify",
        Stage::Normal => "normal",
    }
}

fn rng_pair(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut train = ChaCha8Rng::seed_from_u64(seed);
    train.set_stream(1 << 32);
    (init, train)
}

/// Train, dev and test sets of an MLP task.
pub fn load_mlp_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let (mut train, dev, test) = match config.task {
        Task::MnistMlp => {
            let (full, test) = load_mnist_dir(&config.mnist_dir)?;
            let (train, dev) = split_dev(&full)?;
            (train, dev, test)
        }
        Task::SynthTiming => {
            let all = synth_linear_timing(
                config.synth_features,
                config.synth_classes,
                config.synth_examples + SYNTH_DEV + SYNTH_TEST,
                SYNTH_DATA_SEED,
            )?;
            let (rest, test) = split_dev_at(&all, SYNTH_TEST)?;
            let (train, dev) = split_dev_at(&rest, SYNTH_DEV)?;
            (train, dev, test)
        }
        Task::SynthLstm => {
            return Err(Error::Config {
                field: "task",
                reason: "synth_lstm has no fixed-width data".into(),
            })
        }
    };
    if let Some(limit) = config.train_limit {
        if limit < train.len() {
            train = train.slice(0..limit, Split::Train);
        }
    }
    Ok((train, dev, test))
}

pub fn load_lstm_data(config: &ExperimentConfig) -> Result<(SequenceDataset, SequenceDataset, SequenceDataset)> {
    let n = config.train_limit.unwrap_or(config.synth_examples);
    let all = synth_sequence_task(
        config.vocab,
        config.seq_len,
        n + LSTM_DEV + LSTM_TEST,
        SYNTH_DATA_SEED,
    )?;
    let (dev, rest) = all.split_at(LSTM_DEV);
    let (test, train) = rest.split_at(LSTM_TEST);
    Ok((train, dev, test))
}

/// Runs one experiment and writes `metrics.csv`, `timing.csv`,
/// `summary.json` and `model.ckpt` (the best-by-dev epoch) into `config.out`.
pub fn run(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let summary = match config.task {
        Task::SynthLstm => {
            let (train, dev, test) = load_lstm_data(config)?;
            run_lstm(config, &train, &dev, &test)?
        }
        _ => {
            let (train, dev, test) = load_mlp_data(config)?;
            run_mlp(config, &train, &dev, &test)?
        }
    };
    Ok(summary)
}

/// Runs an MLP experiment on already loaded data.
pub fn run_mlp(
    config: &ExperimentConfig,
    train: &Dataset,
    dev: &Dataset,
    test: &Dataset,
) -> Result<Summary> {
    config.validate()?;
    let hidden = config.hidden_sizes();
    let (mut init_rng, mut rng) = rng_pair(config.seed);
    let k = match config.mode {
        Mode::Meprop => config.k,
        _ => None,
    };
    let mut model = Mlp::new(train.dim(), &hidden, train.num_classes, Activation::Relu, k, &mut init_rng)?;
    model.dropout = config.dropout.unwrap_or(0.0);
    model.selection = config.selection;
    let mut adam = model.new_optimizer(AdamConfig::default());
    let mut tracker = Tracker::new();
    let mut prune_events = 0;
    let mut max_gap: Option<f64> = None;
    let mut checks_ok = None;
    let mut meact = None;

    let snapshot = |m: &Mlp, a: Option<&Adam>| {
        encode(&Checkpoint {
            model: Model::Mlp(m.clone()),
            optimizer: a.cloned(),
        })
    };

    match config.mode {
        Mode::Baseline | Mode::Meprop => {
            for epoch in 0..config.epochs {
                let meter = run_epoch(
                    &mut model,
                    &mut adam,
                    train,
                    config.batch_size,
                    config.seed,
                    epoch as u64,
                    &mut rng,
                    |_| None,
                    |_, _, _, _| Ok(()),
                )?;
                let (d, t) = (evaluate(&model, dev)?, evaluate(&model, test)?);
                let stage = if k.is_some() { "meprop" } else { "normal" };
                tracker.observe(
                    EpochResult {
                        epoch,
                        stage,
                        meter: &meter,
                        dev: d,
                        test: t,
                        sizes: model.hidden_sizes(),
                    },
                    || snapshot(&model, Some(&adam)),
                );
            }
        }
        Mode::Mesimp => {
            let k = config.k.expect("validated");
            let probe_n = train.len().min(100);
            let (probe, _) = train.gather(&(0..probe_n).collect::<Vec<_>>());
            let prune = PruneConfig {
                prune_interval: config.prune_interval.unwrap_or(train.len()),
                prune_rate: config.prune_rate.expect("validated"),
                min_keep: k.max(1),
                cycle_epochs: config.cycle_epochs,
                simplify_epochs: config.simplify_epochs,
            };
            let mut cycled = CycledTrainer::new(
                &model,
                CycleOptions {
                    k,
                    prune,
                    batch_size: config.batch_size,
                    seed: config.seed,
                    probe: Some(probe),
                },
            )?;
            let mut ok = true;
            for epoch in 0..config.epochs {
                let seen = cycled.events.len();
                let (stage, meter) = cycled.train_epoch(&mut model, &mut adam, train, epoch, &mut rng)?;
                let (d, t) = (evaluate(&model, dev)?, evaluate(&model, test)?);
                tracker.observe(
                    EpochResult {
                        epoch,
                        stage: stage_name(stage),
                        meter: &meter,
                        dev: d,
                        test: t,
                        sizes: model.hidden_sizes(),
                    },
                    || snapshot(&model, Some(&adam)),
                );
                for ev in &cycled.events[seen..] {
                    tracker.prune_rows(epoch, stage_name(stage), &ev.reports);
                    if let Some(g) = ev.max_gap {
                        max_gap = Some(max_gap.map_or(g, |m| m.max(g)));
                        ok &= g < 1e-12;
                    }
                    ok &= ev.counters_reset && ev.shapes_consistent;
                }
            }
            prune_events = cycled.events.len();
            checks_ok = Some(ok);
        }
        Mode::Meact => {
            let e = config.meact_e.expect("validated");
            let p = config.meact_p.expect("validated");
            let records = pretrain_and_record(
                &mut model,
                &mut adam,
                train,
                e,
                config.batch_size,
                config.seed,
                &mut rng,
                |epoch, meter, m| {
                    let (d, t) = (evaluate(m, dev)?, evaluate(m, test)?);
                    tracker.observe(
                        EpochResult {
                            epoch,
                            stage: "pretrain",
                            meter,
                            dev: d,
                            test: t,
                            sizes: m.hidden_sizes(),
                        },
                        || snapshot(m, None),
                    );
                    Ok(())
                },
            )?;
            let masks: Vec<ActMask> = records
                .iter()
                .map(|r| build_masks(r, p))
                .collect::<Result<_>>()?;
            drop(records);
            let pretrained = (model.clone(), adam.clone(), rng.clone());
            let mut masked_updates = Vec::new();
            let mut masked_best: Option<(f64, f64)> = None;
            for epoch in e..config.epochs {
                let meter = masked_train_epoch(
                    &mut model,
                    &mut adam,
                    train,
                    &masks,
                    config.meact_zero,
                    config.batch_size,
                    config.seed,
                    epoch as u64,
                    &mut rng,
                )?;
                masked_updates.push(meter.mean_update());
                let (d, t) = (evaluate(&model, dev)?, evaluate(&model, test)?);
                if masked_best.is_none_or(|b| d.accuracy > b.0) {
                    masked_best = Some((d.accuracy, t.accuracy));
                }
                tracker.observe(
                    EpochResult {
                        epoch,
                        stage: "masked",
                        meter: &meter,
                        dev: d,
                        test: t,
                        sizes: model.hidden_sizes(),
                    },
                    || snapshot(&model, Some(&adam)),
                );
            }
            let (mut probe_normal, mut normal_test) = (None, None);
            if config.meact_compare {
                let (mut m, mut a, mut r) = pretrained;
                let mut updates = Vec::new();
                for epoch in e..config.epochs {
                    let meter = run_epoch(
                        &mut m,
                        &mut a,
                        train,
                        config.batch_size,
                        config.seed,
                        epoch as u64,
                        &mut r,
                        |_| None,
                        |_, _, _, _| Ok(()),
                    )?;
                    updates.push(meter.mean_update());
                }
                probe_normal = Some(mean(&updates));
                normal_test = Some(evaluate(&m, test)?.accuracy);
            }
            meact = Some(MeactSummary {
                mean_unmasked: masks.iter().map(ActMask::mean_unmasked).collect(),
                probe_masked: mean(&masked_updates),
                probe_normal,
                masked_test_accuracy: masked_best.map_or(0.0, |b| b.1),
                normal_test_accuracy: normal_test,
            });
        }
    }

    let final_sizes = model.hidden_sizes();
    let nh = model.num_hidden();
    let ratios: Vec<f64> = (0..nh)
        .map(|l| {
            let full = tracker.layer_full.get(l).copied().unwrap_or(0);
            tracker.layer_flops.get(l).copied().unwrap_or(0) as f64 / full.max(1) as f64
        })
        .collect();
    finish(config, tracker, final_sizes, ratios, prune_events, max_gap, checks_ok, meact)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[allow(clippy::too_many_arguments)]
fn finish(
    config: &ExperimentConfig,
    tracker: Tracker,
    final_sizes: Vec<usize>,
    hidden_flop_ratio: Vec<f64>,
    prune_events: usize,
    max_prune_gap: Option<f64>,
    prune_checks_ok: Option<bool>,
    meact: Option<MeactSummary>,
) -> Result<Summary> {
    let (best_epoch, dev, test, best_sizes, ckpt) = tracker.best.clone().expect("at least one epoch");
    let summary = Summary {
        name: config.display_name(),
        task: config.task,
        mode: config.mode,
        seed: config.seed,
        epochs_run: config.epochs,
        best_epoch,
        dev_accuracy: dev.accuracy,
        test_accuracy: test.accuracy,
        final_test_accuracy: tracker.last_test,
        best_hidden_sizes: best_sizes,
        mean_hidden_size: mean(&final_sizes.iter().map(|&s| s as f64).collect::<Vec<_>>()),
        final_hidden_sizes: final_sizes,
        backprop_seconds: tracker.backprop.as_secs_f64(),
        backprop_ms_per_epoch: tracker.timing.iter().map(|t| t.1).collect(),
        backprop_flops: tracker.flops,
        hidden_flop_ratio,
        mean_update_per_epoch: tracker.mean_updates.clone(),
        prune_events,
        max_prune_gap,
        prune_checks_ok,
        meact,
        config: config.clone(),
    };
    write_outputs(&config.out, &tracker, &summary, &ckpt)?;
    Ok(summary)
}

fn write_outputs(out: &Path, tracker: &Tracker, summary: &Summary, ckpt: &[u8]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for r in &tracker.rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    let mut timing = String::from("epoch,backprop_wall_time_ms\n");
    for (e, ms) in &tracker.timing {
        let _ = writeln!(timing, "{e},{ms:.3}");
    }
    let write = |name: &str, bytes: &[u8]| {
        let p = out.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write("metrics.csv", csv.as_bytes())?;
    write("timing.csv", timing.as_bytes())?;
    write("summary.json", serde_json::to_string_pretty(summary)?.as_bytes())?;
    write("model.ckpt", ckpt)?;
    Ok(())
}

fn tag_accuracy(model: &BiLstmTagger, data: &SequenceDataset) -> Result<Evaluation> {
    let mut correct = 0;
    let mut total = 0;
    let mut loss = 0.0;
    for (tokens, tags) in data.tokens.iter().zip(&data.tags) {
        let trace = model.forward(tokens, &mut FlopCounter::new())?;
        for (l, &t) in trace.logits.iter().zip(tags) {
            loss += crate::layers::loss::softmax_cross_entropy(l, t)?.0;
            if crate::layers::loss::argmax(l) == t {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / total.max(1) as f64,
        loss: loss / total.max(1) as f64,
    })
}

/// Runs the bidirectional LSTM tagger. meSimp prunes both directions
/// jointly across gates; counters advance once per token.
pub fn run_lstm(
    config: &ExperimentConfig,
    train: &SequenceDataset,
    dev: &SequenceDataset,
    test: &SequenceDataset,
) -> Result<Summary> {
    config.validate()?;
    let h = config.hidden_sizes()[0];
    let (mut init_rng, _) = rng_pair(config.seed);
    let mut model = BiLstmTagger::init(train.vocab, config.embed, h, train.num_tags, None, &mut init_rng);
    let mut adam = model.new_optimizer(AdamConfig::default());
    let mut tracker = Tracker::new();
    let prune = match config.mode {
        Mode::Mesimp => {
            let k = config.k.expect("validated");
            Some(PruneConfig {
                prune_interval: config.prune_interval.unwrap_or(train.num_positions()),
                prune_rate: config.prune_rate.expect("validated"),
                min_keep: k.max(1),
                cycle_epochs: config.cycle_epochs,
                simplify_epochs: config.simplify_epochs,
            })
        }
        _ => None,
    };
    let mut counters: Vec<Vec<UpdateCounter>> = model
        .hidden_sizes()
        .iter()
        .map(|&n| (0..4).map(|_| UpdateCounter::new(n)).collect())
        .collect();
    let mut prune_events = 0;
    let mut shapes_ok = true;
    let mut last_stage = None;

    for epoch in 0..config.epochs {
        let stage = match &prune {
            Some(p) => stage_of(epoch, p),
            None => Stage::Normal,
        };
        let sparse = match config.mode {
            Mode::Meprop => true,
            Mode::Mesimp => stage == Stage::Simplify,
            _ => false,
        };
        model.set_k(if sparse { config.k } else { None });
        if last_stage.is_some_and(|s| s != stage) {
            adam.reset();
            for (dir, cs) in counters.iter_mut().enumerate() {
                for c in cs {
                    c.reset(model.hidden_sizes()[dir]);
                }
            }
        }
        last_stage = Some(stage);

        let mut meter = EpochMeter::default();
        let order = epoch_order(train.len(), config.seed, epoch as u64);
        let mut reports = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut flops = FlopCounter::new();
            let mut elapsed = Duration::ZERO;
            for &j in batch {
                let trace = model.forward(&train.tokens[j], &mut FlopCounter::new())?;
                let start = Instant::now();
                model.backward(&trace, &train.tags[j], scale, &mut grads, &mut flops)?;
                elapsed += start.elapsed();
            }
            meter.backprop_time += elapsed;
            meter.backprop_flops += flops.get();
            let moved = model.apply(&grads, &mut adam)?;
            let params: usize = model.param_shapes().iter().map(|(r, c)| r * c).sum();
            meter.update_sum += moved / params as f64;
            meter.steps += 1;
            meter.loss_sum += grads.loss_sum;
            meter.correct += grads.correct;
            meter.seen += grads.positions;
            if let (Some(p), true) = (&prune, stage == Stage::Simplify) {
                for (dir, sets) in grads.gate_sets.iter().enumerate() {
                    for step in sets {
                        for (gi, s) in step.iter().enumerate() {
                            counters[dir][gi].record(s)?;
                        }
                    }
                }
                if counters[0][0].examples_seen() >= p.prune_interval as u64 {
                    for (dir, cs) in counters.iter_mut().enumerate() {
                        reports.push(prune_lstm_joint(&mut model, &mut adam, dir, cs, p)?);
                    }
                    shapes_ok &= tagger_shapes_consistent(&model, &adam)
                        && counters.iter().flatten().all(|c| c.examples_seen() == 0);
                    prune_events += 1;
                }
            }
        }
        let (d, t) = (tag_accuracy(&model, dev)?, tag_accuracy(&model, test)?);
        let stage_label = match config.mode {
            Mode::Mesimp => stage_name(stage),
            Mode::Meprop => "meprop",
            _ => "normal",
        };
        tracker.observe(
            EpochResult {
                epoch,
                stage: stage_label,
                meter: &meter,
                dev: d,
                test: t,
                sizes: model.hidden_sizes().to_vec(),
            },
            || {
                encode(&Checkpoint {
                    model: Model::Tagger(model.clone()),
                    optimizer: Some(adam.clone()),
                })
            },
        );
        tracker.prune_rows(epoch, stage_label, &reports);
    }
    let sizes = model.hidden_sizes().to_vec();
    let checks = prune.is_some().then_some(shapes_ok);
    finish(config, tracker, sizes, Vec::new(), prune_events, None, checks, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<Summary>,
    /// Index into `runs` of the best run by dev accuracy.
    pub best: usize,
}

/// Runs `n` consecutive seeds, each into `out/seed_<s>`, and keeps the best
/// by dev accuracy.
pub fn sweep(config: &ExperimentConfig, n: usize) -> Result<SweepSummary> {
    if n == 0 {
        return Err(Error::Config {
            field: "seeds",
            reason: "must be at least 1".into(),
        });
    }
    config.validate()?;
    let mlp_data = match config.task {
        Task::SynthLstm => None,
        _ => Some(load_mlp_data(config)?),
    };
    let lstm_data = match config.task {
        Task::SynthLstm => Some(load_lstm_data(config)?),
        _ => None,
    };
    let mut runs = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let mut c = config.clone();
        c.seed = config.seed + i;
        c.out = config.out.join(format!("seed_{}", c.seed));
        c.name = config.name.as_ref().map(|s| format!("{s}-s{}", c.seed));
        let s = match (&mlp_data, &lstm_data) {
            (Some((tr, d, te)), _) => run_mlp(&c, tr, d, te)?,
            (_, Some((tr, d, te))) => run_lstm(&c, tr, d, te)?,
            _ => unreachable!(),
        };
        runs.push(s);
    }
    let best = (0..runs.len())
        .max_by(|&a, &b| {
            runs[a]
                .dev_accuracy
                .total_cmp(&runs[b].dev_accuracy)
                .then(b.cmp(&a))
        })
        .expect("non-empty");
    let out = SweepSummary { runs, best };
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let p = config.out.join("sweep.json");
    fs::write(&p, serde_json::to_string_pretty(&out)?).map_err(|e| Error::io(p, e))?;
    Ok(out)
}

/// A summary path, or a directory holding `summary.json`.
pub fn summary_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("summary.json")
    } else {
        p.to_path_buf()
    }
}

/// `rows × cols` random matrix for probes and benchmarks.
pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    use rand::Rng;
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}
