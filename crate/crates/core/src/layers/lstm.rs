//! LSTM cell with per-gate meProp.
//!
//! Gate order everywhere is input, forget, output, candidate.
//!
//! ```text
//! i = σ(Wxi x + Whi h + bi)    f = σ(Wxf x + Whf h + bf)
//! o = σ(Wxo x + Who h + bo)    g = tanh(Wxg x + Whg h + bg)
//! c' = f ⊙ c + i ⊙ g           h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use super::activation::sigmoid;
use super::linear::glorot_uniform;
use crate::error::{Error, Result};
use crate::numerics::{
    dot, masked_transpose_matvec, sparse_outer, top_k_indices, FlopCounter, IndexSet, Matrix,
    SparseRowGradient,
};

pub const NUM_GATES: usize = 4;
pub const GATE_NAMES: [&str; NUM_GATES] = ["input", "forget", "output", "candidate"];
const CANDIDATE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `h × d`
    pub wx: Matrix,
    /// `h × h`
    pub wh: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub gates: [GateParams; NUM_GATES],
    pub meprop_k: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Gate pre-activations.
    pub pre: [Vec<f64>; NUM_GATES],
    /// Gate activations (σ for i, f, o; tanh for the candidate).
    pub act: [Vec<f64>; NUM_GATES],
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GateGrad {
    pub selected: IndexSet,
    pub dwx: SparseRowGradient,
    pub dwh: SparseRowGradient,
    /// Full length, zero outside `selected`.
    pub db: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmStepGrads {
    pub gates: Vec<GateGrad>,
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

impl LstmCell {
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        meprop_k: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let gate = |rng: &mut R| GateParams {
            wx: glorot_uniform(hidden, input, rng),
            wh: glorot_uniform(hidden, hidden, rng),
            b: vec![0.0; hidden],
        };
        LstmCell {
            gates: [gate(rng), gate(rng), gate(rng), gate(rng)],
            meprop_k,
        }
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].b.len()
    }

    pub fn input(&self) -> usize {
        self.gates[0].wx.cols()
    }

    pub fn check(&self) -> Result<()> {
        let h = self.hidden();
        let d = self.input();
        for g in &self.gates {
            if g.wx.shape() != (h, d) || g.wh.shape() != (h, h) || g.b.len() != h {
                return Err(Error::DimensionMismatch {
                    op: "LstmCell",
                    left: (h, d),
                    right: g.wx.shape(),
                });
            }
        }
        Ok(())
    }
}

pub fn lstm_step_forward(
    cell: &LstmCell,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    flops: &mut FlopCounter,
) -> Result<LstmStepCache> {
    let h = cell.hidden();
    if x.len() != cell.input() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::DimensionMismatch {
            op: "lstm_step_forward",
            left: (h, cell.input()),
            right: (h_prev.len(), x.len()),
        });
    }
    let mut pre: [Vec<f64>; NUM_GATES] = Default::default();
    let mut act: [Vec<f64>; NUM_GATES] = Default::default();
    for (gi, g) in cell.gates.iter().enumerate() {
        let a: Vec<f64> = (0..h)
            .map(|r| dot(g.wx.row(r), x) + dot(g.wh.row(r), h_prev) + g.b[r])
            .collect();
        act[gi] = if gi == CANDIDATE {
            a.iter().map(|v| v.tanh()).collect()
        } else {
            a.iter().map(|&v| sigmoid(v)).collect()
        };
        pre[gi] = a;
    }
    flops.add((NUM_GATES * h * (x.len() + h)) as u64);
    let c: Vec<f64> = (0..h)
        .map(|r| act[1][r] * c_prev[r] + act[0][r] * act[CANDIDATE][r])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    Ok(LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        pre,
        act,
        c,
        tanh_c,
    })
}

impl LstmStepCache {
    pub fn h(&self) -> Vec<f64> {
        self.act[2]
            .iter()
            .zip(&self.tanh_c)
            .map(|(o, t)| o * t)
            .collect()
    }
}

/// Gradients of the four gate pre-activations given `dL/dh_t` and `dL/dc_t`.
/// Also returns `dL/dc_{t-1}`.
pub fn gate_preactivation_grads(
    cache: &LstmStepCache,
    grad_h: &[f64],
    grad_c: &[f64],
) -> ([Vec<f64>; NUM_GATES], Vec<f64>) {
    let h = cache.c.len();
    let [i, f, o, g] = &cache.act;
    let mut d: [Vec<f64>; NUM_GATES] = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
    let mut dc_prev = vec![0.0; h];
    for r in 0..h {
        let tc = cache.tanh_c[r];
        let dc = grad_c[r] + grad_h[r] * o[r] * (1.0 - tc * tc);
        d[0][r] = dc * g[r] * i[r] * (1.0 - i[r]);
        d[1][r] = dc * cache.c_prev[r] * f[r] * (1.0 - f[r]);
        d[2][r] = grad_h[r] * tc * o[r] * (1.0 - o[r]);
        d[3][r] = dc * i[r] * (1.0 - g[r] * g[r]);
        dc_prev[r] = dc * f[r];
    }
    (d, dc_prev)
}

/// One step of back propagation. With `k = Some(k)`, each gate keeps its
/// own top-k rows of the pre-activation gradient; `None` is full.
pub fn lstm_step_backward(
    cell: &LstmCell,
    cache: &LstmStepCache,
    grad_h: &[f64],
    grad_c: &[f64],
    k: Option<usize>,
    flops: &mut FlopCounter,
) -> Result<LstmStepGrads> {
    let h = cell.hidden();
    if grad_h.len() != h || grad_c.len() != h {
        return Err(Error::DimensionMismatch {
            op: "lstm_step_backward",
            left: (h, 1),
            right: (grad_h.len(), grad_c.len()),
        });
    }
    let (da, dc_prev) = gate_preactivation_grads(cache, grad_h, grad_c);
    let mut dx = vec![0.0; cell.input()];
    let mut dh_prev = vec![0.0; h];
    let mut gates = Vec::with_capacity(NUM_GATES);
    for (gi, g) in cell.gates.iter().enumerate() {
        let selected = match k {
            Some(k) => top_k_indices(&da[gi], k)?,
            None => IndexSet::full(h),
        };
        let dwx = sparse_outer(&da[gi], &cache.x, &selected, flops)?;
        let dwh = sparse_outer(&da[gi], &cache.h_prev, &selected, flops)?;
        let px = masked_transpose_matvec(&g.wx, &da[gi], &selected, flops)?;
        let ph = masked_transpose_matvec(&g.wh, &da[gi], &selected, flops)?;
        for (a, v) in dx.iter_mut().zip(px.iter()) {
            *a += v;
        }
        for (a, v) in dh_prev.iter_mut().zip(ph.iter()) {
            *a += v;
        }
        let mut db = vec![0.0; h];
        for &r in selected.indices() {
            db[r] = da[gi][r];
        }
        gates.push(GateGrad {
            selected,
            dwx,
            dwh,
            db,
        });
    }
    Ok(LstmStepGrads {
        gates,
        dx,
        dh_prev,
        dc_prev,
    })
}

/// Per-gate meProp backward; `k >= h` is the full backward.
pub fn lstm_step_backward_meprop(
    cell: &LstmCell,
    cache: &LstmStepCache,
    grad_h: &[f64],
    grad_c: &[f64],
    k: usize,
    flops: &mut FlopCounter,
) -> Result<LstmStepGrads> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    lstm_step_backward(cell, cache, grad_h, grad_c, Some(k), flops)
}
