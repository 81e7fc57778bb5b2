//! Per-example neuron masking.
//!
//! After normal pretraining, every (example, neuron) pair whose accumulated
//! `|dL/dz|` is a small share of the example's total is pinned to the output
//! it had at the end of pretraining, and training continues through the
//! remaining neurons only.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::layers::mlp::{FrozenUnits, MaskedUnit, Mlp};
use crate::numerics::{top_k_indices, Matrix};
use crate::optimizer::Adam;
use crate::trainer::{run_epoch, EpochMeter};

#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleRecord {
    pub layer: usize,
    /// `examples × neurons` accumulated absolute gradients.
    pub g: Matrix,
    /// `examples × neurons` outputs after pretraining.
    pub a: Matrix,
}

/// Pinned neurons of one hidden layer, per training example.
#[derive(Debug, Clone, PartialEq)]
pub struct ActMask {
    pub layer: usize,
    pub neurons: usize,
    pub per_example: Vec<Vec<MaskedUnit>>,
}

impl ActMask {
    pub fn mean_unmasked(&self) -> f64 {
        if self.per_example.is_empty() {
            return self.neurons as f64;
        }
        let masked: usize = self.per_example.iter().map(Vec::len).sum();
        self.neurons as f64 - masked as f64 / self.per_example.len() as f64
    }
}

/// Adds `|dL/dz|` of every hidden layer to the rows of the batch's examples.
pub fn accumulate(
    records: &mut [PerExampleRecord],
    hidden_output_grads: &[Matrix],
    idx: &[usize],
) {
    for (rec, grads) in records.iter_mut().zip(hidden_output_grads) {
        for (b, &j) in idx.iter().enumerate() {
            for (acc, g) in rec.g.row_mut(j).iter_mut().zip(grads.row(b)) {
                *acc += g.abs();
            }
        }
    }
}

/// Trains normally for `e` epochs while accumulating gradients, then records
/// each example's hidden outputs in one sweep.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_and_record<R, C>(
    model: &mut Mlp,
    adam: &mut Adam,
    train: &Dataset,
    e: usize,
    batch_size: usize,
    seed: u64,
    rng: &mut R,
    mut on_epoch: C,
) -> Result<Vec<PerExampleRecord>>
where
    R: Rng + ?Sized,
    C: FnMut(usize, &EpochMeter, &Mlp) -> Result<()>,
{
    if e == 0 {
        return Err(Error::Config {
            field: "meact_e",
            reason: "must be at least 1".into(),
        });
    }
    let n = train.len();
    let mut records: Vec<PerExampleRecord> = model
        .hidden_sizes()
        .into_iter()
        .enumerate()
        .map(|(layer, h)| PerExampleRecord {
            layer,
            g: Matrix::zeros(n, h),
            a: Matrix::zeros(0, 0),
        })
        .collect();
    for epoch in 0..e {
        let meter = run_epoch(
            model,
            adam,
            train,
            batch_size,
            seed,
            epoch as u64,
            rng,
            |_| None,
            |_, _, grads, idx| {
                accumulate(&mut records, &grads.hidden_output_grads, idx);
                Ok(())
            },
        )?;
        on_epoch(epoch, &meter, model)?;
    }
    record_activations(model, train, &mut records)?;
    Ok(records)
}

/// Fills `a` with each example's hidden outputs under the current model.
pub fn record_activations(
    model: &Mlp,
    train: &Dataset,
    records: &mut [PerExampleRecord],
) -> Result<()> {
    let n = train.len();
    for rec in records.iter_mut() {
        rec.a = Matrix::zeros(n, rec.g.cols());
    }
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(1000) {
        let (x, _) = train.gather(chunk);
        let outs = model.hidden_outputs(&x)?;
        for (rec, out) in records.iter_mut().zip(&outs) {
            for (b, &j) in chunk.iter().enumerate() {
                rec.a.row_mut(j).copy_from_slice(out.row(b));
            }
        }
    }
    Ok(())
}

/// Neuron `i` is pinned for example `j` iff `g_ij < p · Σ_i g_ij`. If that
/// would pin every neuron, the one with the largest `g` stays free.
pub fn build_masks(record: &PerExampleRecord, p: f64) -> Result<ActMask> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config {
            field: "meact_p",
            reason: format!("{p} is outside (0, 1)"),
        });
    }
    if record.a.shape() != record.g.shape() {
        return Err(Error::DimensionMismatch {
            op: "build_masks",
            left: record.g.shape(),
            right: record.a.shape(),
        });
    }
    let n = record.g.cols();
    let mut per_example = Vec::with_capacity(record.g.rows());
    for j in 0..record.g.rows() {
        let g = record.g.row(j);
        let theta = p * g.iter().sum::<f64>();
        let mut masked: Vec<usize> = (0..n).filter(|&i| g[i] < theta).collect();
        if masked.len() == n && n > 0 {
            let top = top_k_indices(g, 1)?.indices()[0];
            masked.retain(|&i| i != top);
        }
        per_example.push(
            masked
                .into_iter()
                .map(|i| MaskedUnit {
                    index: i as u32,
                    value: record.a.get(j, i),
                })
                .collect(),
        );
    }
    Ok(ActMask {
        layer: record.layer,
        neurons: n,
        per_example,
    })
}

/// Batch view of the masks for the examples in `idx`.
pub fn frozen_for<'m>(masks: &'m [ActMask], idx: &[usize], zero: bool) -> FrozenUnits<'m> {
    FrozenUnits {
        units: masks
            .iter()
            .map(|m| idx.iter().map(|&j| &m.per_example[j][..]).collect())
            .collect(),
        zero,
    }
}

/// One epoch of training where each example only trains its free neurons.
#[allow(clippy::too_many_arguments)]
pub fn masked_train_epoch<R: Rng + ?Sized>(
    model: &mut Mlp,
    adam: &mut Adam,
    train: &Dataset,
    masks: &[ActMask],
    zero: bool,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    rng: &mut R,
) -> Result<EpochMeter> {
    if masks.len() != model.num_hidden() {
        return Err(Error::Config {
            field: "masks",
            reason: format!("{} masks for {} hidden layers", masks.len(), model.num_hidden()),
        });
    }
    for m in masks {
        if m.per_example.len() < train.len() {
            return Err(Error::MissingMask(m.per_example.len()));
        }
    }
    run_epoch(
        model,
        adam,
        train,
        batch_size,
        seed,
        epoch,
        rng,
        |idx| Some(frozen_for(masks, idx, zero)),
        |_, _, _, _| Ok(()),
    )
}

/// Mean absolute parameter difference between two models of the same shape.
pub fn update_magnitude_probe(before: &Mlp, after: &Mlp) -> Result<f64> {
    if before.param_shapes() != after.param_shapes() {
        return Err(Error::DimensionMismatch {
            op: "update_magnitude_probe",
            left: (before.num_params(), 0),
            right: (after.num_params(), 0),
        });
    }
    let mut total = 0.0;
    for (a, b) in before.layers.iter().zip(&after.layers) {
        for (x, y) in a.weight.as_slice().iter().zip(b.weight.as_slice()) {
            total += (x - y).abs();
        }
        for (x, y) in a.bias.iter().zip(&b.bias) {
            total += (x - y).abs();
        }
    }
    Ok(total / before.num_params().max(1) as f64)
}

const MASK_MAGIC: &[u8; 4] = b"MACT";
const MASK_VERSION: u32 = 1;

pub fn save_masks(path: &Path, masks: &[ActMask]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&MASK_VERSION.to_le_bytes());
    out.extend_from_slice(&(masks.len() as u32).to_le_bytes());
    for m in masks {
        for v in [m.layer as u32, m.neurons as u32, m.per_example.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for units in &m.per_example {
            out.extend_from_slice(&(units.len() as u32).to_le_bytes());
            for u in units {
                out.extend_from_slice(&u.index.to_le_bytes());
                out.extend_from_slice(&u.value.to_bits().to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_masks(path: &Path) -> Result<Vec<ActMask>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader { bytes: &bytes, pos: 0, what: "mask file" };
    if r.take(4)? != MASK_MAGIC {
        return Err(Error::Format {
            what: "mask file",
            reason: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != MASK_VERSION {
        return Err(Error::Format {
            what: "mask file",
            reason: format!("unsupported version {version}"),
        });
    }
    let layers = r.u32()? as usize;
    let mut masks = Vec::with_capacity(layers);
    for _ in 0..layers {
        let layer = r.u32()? as usize;
        let neurons = r.u32()? as usize;
        let examples = r.u32()? as usize;
        let mut per_example = Vec::with_capacity(examples);
        for _ in 0..examples {
            let count = r.u32()? as usize;
            let mut units = Vec::with_capacity(count);
            for _ in 0..count {
                let index = r.u32()?;
                let value = f64::from_bits(r.u64()?);
                units.push(MaskedUnit { index, value });
            }
            per_example.push(units);
        }
        masks.push(ActMask {
            layer,
            neurons,
            per_example,
        });
    }
    r.finish()?;
    Ok(masks)
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                what: self.what,
                reason: format!("unexpected end at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format {
                what: self.what,
                reason: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}
