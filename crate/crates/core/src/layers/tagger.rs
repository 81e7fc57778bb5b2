//! Bidirectional LSTM sequence tagger.
//!
//! Tokens are embedded, read left to right by one cell and right to left by
//! another, and every position is classified from `[h_fwd; h_bwd]`.

use rand::Rng;

use super::linear::{glorot_uniform, LinearLayer};
use super::loss::{argmax, softmax_cross_entropy};
use super::lstm::{lstm_step_backward, lstm_step_forward, LstmCell, LstmStepCache, NUM_GATES};
use crate::error::{Error, Result};
use crate::numerics::{dot, FlopCounter, IndexSet, Matrix};
use crate::optimizer::{Adam, AdamConfig};

pub const DIRECTIONS: usize = 2;
const SLOTS_PER_CELL: usize = NUM_GATES * 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmTagger {
    /// `vocab × d`, never pruned.
    pub embedding: Matrix,
    /// Left-to-right, then right-to-left.
    pub cells: [LstmCell; DIRECTIONS],
    pub output: LinearLayer,
}

#[derive(Debug, Clone)]
pub struct SequenceTrace {
    pub tokens: Vec<usize>,
    /// `steps[dir][t]` is the step that produced position `t`.
    pub steps: [Vec<LstmStepCache>; DIRECTIONS],
    pub logits: Vec<Vec<f64>>,
}

/// Dense gradients, one buffer per parameter slot, plus the rows touched.
#[derive(Debug, Clone)]
pub struct TaggerGrads {
    pub slots: Vec<Vec<f64>>,
    pub touched: Vec<Vec<bool>>,
    pub loss_sum: f64,
    pub correct: usize,
    pub positions: usize,
    /// `gate_sets[dir][step]` holds the four per-gate selections of one step.
    pub gate_sets: [Vec<Vec<IndexSet>>; DIRECTIONS],
}

impl BiLstmTagger {
    pub fn init<R: Rng + ?Sized>(
        vocab: usize,
        embed: usize,
        hidden: usize,
        tags: usize,
        meprop_k: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let embedding = glorot_uniform(vocab, embed, rng);
        let fwd = LstmCell::init(embed, hidden, meprop_k, rng);
        let bwd = LstmCell::init(embed, hidden, meprop_k, rng);
        let output = LinearLayer::init(2 * hidden, tags, None, rng);
        BiLstmTagger {
            embedding,
            cells: [fwd, bwd],
            output,
        }
    }

    pub fn hidden_sizes(&self) -> [usize; DIRECTIONS] {
        [self.cells[0].hidden(), self.cells[1].hidden()]
    }

    pub fn set_k(&mut self, k: Option<usize>) {
        for c in &mut self.cells {
            c.meprop_k = k;
        }
    }

    pub fn num_slots(&self) -> usize {
        1 + DIRECTIONS * SLOTS_PER_CELL + 2
    }

    /// Slot of a gate tensor; `part` is 0 for `Wx`, 1 for `Wh`, 2 for the bias.
    pub fn gate_slot(dir: usize, gate: usize, part: usize) -> usize {
        1 + dir * SLOTS_PER_CELL + gate * 3 + part
    }

    fn output_slot(&self) -> usize {
        1 + DIRECTIONS * SLOTS_PER_CELL
    }

    pub fn slot_shape(&self, slot: usize) -> (usize, usize) {
        let out = self.output_slot();
        if slot == 0 {
            self.embedding.shape()
        } else if slot == out {
            self.output.weight.shape()
        } else if slot == out + 1 {
            (self.output.bias.len(), 1)
        } else {
            let s = slot - 1;
            let g = &self.cells[s / SLOTS_PER_CELL].gates[(s % SLOTS_PER_CELL) / 3];
            match s % 3 {
                0 => g.wx.shape(),
                1 => g.wh.shape(),
                _ => (g.b.len(), 1),
            }
        }
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut [f64] {
        let out = self.output_slot();
        if slot == 0 {
            self.embedding.as_mut_slice()
        } else if slot == out {
            self.output.weight.as_mut_slice()
        } else if slot == out + 1 {
            &mut self.output.bias
        } else {
            let s = slot - 1;
            let g = &mut self.cells[s / SLOTS_PER_CELL].gates[(s % SLOTS_PER_CELL) / 3];
            match s % 3 {
                0 => g.wx.as_mut_slice(),
                1 => g.wh.as_mut_slice(),
                _ => &mut g.b,
            }
        }
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.num_slots()).map(|s| self.slot_shape(s)).collect()
    }

    pub fn new_optimizer(&self, config: AdamConfig) -> Adam {
        Adam::new(config, &self.param_shapes())
    }

    pub fn forward(&self, tokens: &[usize], flops: &mut FlopCounter) -> Result<SequenceTrace> {
        let vocab = self.embedding.rows();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::IndexOutOfRange {
                op: "tagger token",
                index: bad,
                universe: vocab,
            });
        }
        let len = tokens.len();
        let mut steps: [Vec<LstmStepCache>; DIRECTIONS] = Default::default();
        for (dir, cell) in self.cells.iter().enumerate() {
            let h = cell.hidden();
            let mut hs = vec![0.0; h];
            let mut cs = vec![0.0; h];
            let mut out: Vec<Option<LstmStepCache>> = vec![None; len];
            for pos in 0..len {
                let t = if dir == 0 { pos } else { len - 1 - pos };
                let cache =
                    lstm_step_forward(cell, self.embedding.row(tokens[t]), &hs, &cs, flops)?;
                hs = cache.h();
                cs.clone_from(&cache.c);
                out[t] = Some(cache);
            }
            steps[dir] = out.into_iter().map(Option::unwrap).collect();
        }
        let mut logits = Vec::with_capacity(len);
        for t in 0..len {
            let feat = concat_h(&steps, t);
            let l: Vec<f64> = (0..self.output.outputs())
                .map(|o| dot(self.output.weight.row(o), &feat) + self.output.bias[o])
                .collect();
            flops.add((self.output.outputs() * feat.len()) as u64);
            logits.push(l);
        }
        Ok(SequenceTrace {
            tokens: tokens.to_vec(),
            steps,
            logits,
        })
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        let trace = self.forward(tokens, &mut FlopCounter::new())?;
        Ok(trace.logits.iter().map(|l| argmax(l)).collect())
    }

    /// Mean cross-entropy over positions.
    pub fn loss(&self, tokens: &[usize], tags: &[usize]) -> Result<f64> {
        let trace = self.forward(tokens, &mut FlopCounter::new())?;
        let mut total = 0.0;
        for (l, &t) in trace.logits.iter().zip(tags) {
            total += softmax_cross_entropy(l, t)?.0;
        }
        Ok(total / tags.len().max(1) as f64)
    }

    pub fn zero_grads(&self) -> TaggerGrads {
        let shapes = self.param_shapes();
        TaggerGrads {
            slots: shapes.iter().map(|&(r, c)| vec![0.0; r * c]).collect(),
            touched: shapes.iter().map(|&(r, _)| vec![false; r]).collect(),
            loss_sum: 0.0,
            correct: 0,
            positions: 0,
            gate_sets: Default::default(),
        }
    }

    /// Adds `scale ×` the gradient of this sequence's mean loss into `acc`.
    /// Each cell uses its own `meprop_k`, applied per gate.
    pub fn backward(
        &self,
        trace: &SequenceTrace,
        tags: &[usize],
        scale: f64,
        acc: &mut TaggerGrads,
        flops: &mut FlopCounter,
    ) -> Result<()> {
        let len = trace.tokens.len();
        if tags.len() != len {
            return Err(Error::DimensionMismatch {
                op: "tagger backward",
                left: (len, 1),
                right: (tags.len(), 1),
            });
        }
        let inv = scale / len.max(1) as f64;
        let out_slot = self.output_slot();
        let feat_dim = self.output.inputs();
        let hf = self.cells[0].hidden();
        let mut dfeat = vec![vec![0.0; feat_dim]; len];
        for t in 0..len {
            let (loss, mut g) = softmax_cross_entropy(&trace.logits[t], tags[t])?;
            acc.loss_sum += loss;
            acc.positions += 1;
            if argmax(&trace.logits[t]) == tags[t] {
                acc.correct += 1;
            }
            for v in g.iter_mut() {
                *v *= inv;
            }
            let feat = concat_h(&trace.steps, t);
            for (o, &go) in g.iter().enumerate() {
                let row = &mut acc.slots[out_slot][o * feat_dim..(o + 1) * feat_dim];
                for (r, f) in row.iter_mut().zip(&feat) {
                    *r += go * f;
                }
                acc.slots[out_slot + 1][o] += go;
                for (d, w) in dfeat[t].iter_mut().zip(self.output.weight.row(o)) {
                    *d += go * w;
                }
            }
            flops.add(2 * (g.len() * feat_dim) as u64);
        }
        acc.touched[out_slot].fill(true);
        acc.touched[out_slot + 1].fill(true);

        let d = self.embedding.cols();
        for (dir, cell) in self.cells.iter().enumerate() {
            let h = cell.hidden();
            let offset = if dir == 0 { 0 } else { hf };
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            // Reverse of the order this cell read the sequence in.
            for pos in 0..len {
                let t = if dir == 0 { len - 1 - pos } else { pos };
                let cache = &trace.steps[dir][t];
                let dh: Vec<f64> = (0..h).map(|i| dfeat[t][offset + i] + dh_next[i]).collect();
                let g = lstm_step_backward(cell, cache, &dh, &dc_next, cell.meprop_k.filter(|&k| k < h), flops)?;
                for (gi, gg) in g.gates.iter().enumerate() {
                    let wx = Self::gate_slot(dir, gi, 0);
                    for (pos_in_block, &r) in gg.selected.indices().iter().enumerate() {
                        let src = gg.dwx.block.row(pos_in_block);
                        for (a, v) in acc.slots[wx][r * d..(r + 1) * d].iter_mut().zip(src) {
                            *a += v;
                        }
                        let src = gg.dwh.block.row(pos_in_block);
                        for (a, v) in acc.slots[wx + 1][r * h..(r + 1) * h].iter_mut().zip(src) {
                            *a += v;
                        }
                        acc.slots[wx + 2][r] += gg.db[r];
                        acc.touched[wx][r] = true;
                        acc.touched[wx + 1][r] = true;
                        acc.touched[wx + 2][r] = true;
                    }
                }
                let tok = trace.tokens[t];
                for (a, v) in acc.slots[0][tok * d..(tok + 1) * d].iter_mut().zip(&g.dx) {
                    *a += v;
                }
                acc.touched[0][tok] = true;
                acc.gate_sets[dir].push(g.gates.into_iter().map(|gg| gg.selected).collect());
                dh_next = g.dh_prev;
                dc_next = g.dc_prev;
            }
        }
        Ok(())
    }

    /// One Adam step; slots whose rows were all touched get a dense step.
    pub fn apply(&mut self, grads: &TaggerGrads, adam: &mut Adam) -> Result<f64> {
        let mut moved = 0.0;
        for slot in 0..self.num_slots() {
            let (rows, cols) = self.slot_shape(slot);
            let touched = &grads.touched[slot];
            let g = &grads.slots[slot];
            if touched.iter().all(|&t| t) {
                moved += adam.step_dense_slice(slot, self.slot_mut(slot), rows, cols, g)?;
            } else {
                let idx: Vec<usize> = (0..rows).filter(|&r| touched[r]).collect();
                if idx.is_empty() {
                    continue;
                }
                let mut block = Vec::with_capacity(idx.len() * cols);
                for &r in &idx {
                    block.extend_from_slice(&g[r * cols..(r + 1) * cols]);
                }
                let set = IndexSet::new(idx, rows)?;
                moved += adam.step_rows(slot, self.slot_mut(slot), rows, cols, &set, &block)?;
            }
        }
        Ok(moved)
    }

    /// Removes hidden units of one direction from every gate, from the
    /// recurrent columns and from the output layer; optimizer state follows.
    pub fn prune_hidden(&mut self, dir: usize, keep: &IndexSet, adam: &mut Adam) -> Result<()> {
        let h = self.cells[dir].hidden();
        if keep.universe() != h {
            return Err(Error::IndexOutOfRange {
                op: "prune_hidden",
                index: keep.universe(),
                universe: h,
            });
        }
        if keep.is_empty() {
            return Err(Error::Prune {
                layer: dir,
                reason: "would remove every unit".into(),
            });
        }
        for (gi, g) in self.cells[dir].gates.iter_mut().enumerate() {
            g.wx = g.wx.gather_rows(keep);
            g.wh = g.wh.gather_rows(keep).gather_cols(keep);
            g.b = keep.indices().iter().map(|&i| g.b[i]).collect();
            adam.prune_rows(Self::gate_slot(dir, gi, 0), keep)?;
            adam.prune_rows(Self::gate_slot(dir, gi, 1), keep)?;
            adam.prune_cols(Self::gate_slot(dir, gi, 1), keep)?;
            adam.prune_rows(Self::gate_slot(dir, gi, 2), keep)?;
        }
        let hf = self.cells[0].hidden();
        let total = self.output.inputs();
        let cols: Vec<usize> = if dir == 0 {
            keep.indices()
                .iter()
                .copied()
                .chain(h..total)
                .collect()
        } else {
            (0..hf).chain(keep.indices().iter().map(|&i| hf + i)).collect()
        };
        let cols = IndexSet::new(cols, total)?;
        self.output.weight = self.output.weight.gather_cols(&cols);
        adam.prune_cols(self.output_slot(), &cols)?;
        Ok(())
    }
}

fn concat_h(steps: &[Vec<LstmStepCache>; DIRECTIONS], t: usize) -> Vec<f64> {
    let mut f = steps[0][t].h();
    f.extend(steps[1][t].h());
    f
}
