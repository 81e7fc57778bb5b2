//! Adam with a lazy row-sparse mode.
//!
//! Every parameter tensor is viewed as a row-major `rows × cols` block and
//! owns one [`ParamState`]. Step counts are kept per row: a dense step
//! advances every row, a sparse step advances only the touched rows, so rows
//! that never receive gradient keep their initial values bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{IndexSet, Matrix, SparseRowGradient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub m: Matrix,
    pub v: Matrix,
    pub steps: Vec<u64>,
}

impl ParamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        ParamState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            steps: vec![0; rows],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// When set, sparse steps still decay the moments of untouched rows
    /// (as if their gradient were zero) instead of leaving them alone.
    pub dense_moments: bool,
    slots: Vec<ParamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Adam {
            config,
            dense_moments: false,
            slots: shapes.iter().map(|&(r, c)| ParamState::new(r, c)).collect(),
        }
    }

    pub fn from_slots(config: AdamConfig, dense_moments: bool, slots: Vec<ParamState>) -> Self {
        Adam {
            config,
            dense_moments,
            slots,
        }
    }

    pub fn slots(&self) -> &[ParamState] {
        &self.slots
    }

    pub fn slot(&self, slot: usize) -> &ParamState {
        &self.slots[slot]
    }

    fn state_mut(&mut self, slot: usize, rows: usize, cols: usize) -> Result<&mut ParamState> {
        let state = self.slots.get_mut(slot).ok_or(Error::IndexOutOfRange {
            op: "Adam slot",
            index: slot,
            universe: 0,
        })?;
        if state.shape() != (rows, cols) {
            return Err(Error::DimensionMismatch {
                op: "adam_step",
                left: state.shape(),
                right: (rows, cols),
            });
        }
        Ok(state)
    }

    /// Standard bias-corrected Adam on every entry. Returns `Σ |Δparam|`.
    pub fn step_dense(&mut self, slot: usize, param: &mut Matrix, grad: &Matrix) -> Result<f64> {
        if param.shape() != grad.shape() {
            return Err(Error::DimensionMismatch {
                op: "adam_step_dense",
                left: param.shape(),
                right: grad.shape(),
            });
        }
        let (rows, cols) = param.shape();
        self.step_dense_slice(slot, param.as_mut_slice(), rows, cols, grad.as_slice())
    }

    pub fn step_dense_slice(
        &mut self,
        slot: usize,
        param: &mut [f64],
        rows: usize,
        cols: usize,
        grad: &[f64],
    ) -> Result<f64> {
        if param.len() != rows * cols || grad.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "adam_step_dense",
                left: (rows, cols),
                right: (grad.len(), param.len()),
            });
        }
        let cfg = self.config;
        let state = self.state_mut(slot, rows, cols)?;
        let mut moved = 0.0;
        for r in 0..rows {
            let span = r * cols..(r + 1) * cols;
            moved += update_row(
                &cfg,
                state,
                r,
                &mut param[span.clone()],
                Some(&grad[span]),
            );
        }
        Ok(moved)
    }

    /// Lazy Adam: only rows of `grad.index_set` are updated.
    pub fn step_sparse(
        &mut self,
        slot: usize,
        param: &mut Matrix,
        grad: &SparseRowGradient,
    ) -> Result<f64> {
        let (rows, cols) = param.shape();
        self.step_rows(
            slot,
            param.as_mut_slice(),
            rows,
            cols,
            &grad.index_set,
            grad.block.as_slice(),
        )
    }

    /// Row-sparse step on a raw `rows × cols` buffer; `block` holds one row
    /// of gradient per entry of `touched`.
    pub fn step_rows(
        &mut self,
        slot: usize,
        param: &mut [f64],
        rows: usize,
        cols: usize,
        touched: &IndexSet,
        block: &[f64],
    ) -> Result<f64> {
        if param.len() != rows * cols || block.len() != touched.len() * cols {
            return Err(Error::DimensionMismatch {
                op: "adam_step_sparse",
                left: (rows, cols),
                right: (touched.len(), block.len() / cols.max(1)),
            });
        }
        if touched.universe() != rows {
            return Err(Error::IndexOutOfRange {
                op: "adam_step_sparse",
                index: touched.universe(),
                universe: rows,
            });
        }
        let cfg = self.config;
        let dense_moments = self.dense_moments;
        let state = self.state_mut(slot, rows, cols)?;
        let mut moved = 0.0;
        if dense_moments {
            let mut next = touched.indices().iter().enumerate().peekable();
            for r in 0..rows {
                let g = match next.peek() {
                    Some(&(pos, &i)) if i == r => {
                        next.next();
                        Some(&block[pos * cols..(pos + 1) * cols])
                    }
                    _ => None,
                };
                moved += update_row(&cfg, state, r, &mut param[r * cols..(r + 1) * cols], g);
            }
        } else {
            for (pos, &r) in touched.indices().iter().enumerate() {
                moved += update_row(
                    &cfg,
                    state,
                    r,
                    &mut param[r * cols..(r + 1) * cols],
                    Some(&block[pos * cols..(pos + 1) * cols]),
                );
            }
        }
        Ok(moved)
    }

    /// Keeps only the listed rows of a slot's state.
    pub fn prune_rows(&mut self, slot: usize, keep: &IndexSet) -> Result<()> {
        let state = &mut self.slots[slot];
        if keep.universe() != state.m.rows() {
            return Err(Error::IndexOutOfRange {
                op: "prune_rows",
                index: keep.universe(),
                universe: state.m.rows(),
            });
        }
        state.m = state.m.gather_rows(keep);
        state.v = state.v.gather_rows(keep);
        state.steps = keep.indices().iter().map(|&i| state.steps[i]).collect();
        Ok(())
    }

    /// Keeps only the listed columns of a slot's state.
    pub fn prune_cols(&mut self, slot: usize, keep: &IndexSet) -> Result<()> {
        let state = &mut self.slots[slot];
        if keep.universe() != state.m.cols() {
            return Err(Error::IndexOutOfRange {
                op: "prune_cols",
                index: keep.universe(),
                universe: state.m.cols(),
            });
        }
        state.m = state.m.gather_cols(keep);
        state.v = state.v.gather_cols(keep);
        Ok(())
    }

    /// Zeroes all moments and step counts; hyperparameters are kept.
    pub fn reset(&mut self) {
        for s in &mut self.slots {
            s.m.fill(0.0);
            s.v.fill(0.0);
            s.steps.fill(0);
        }
    }
}

#[inline]
fn update_row(
    cfg: &AdamConfig,
    state: &mut ParamState,
    r: usize,
    param: &mut [f64],
    grad: Option<&[f64]>,
) -> f64 {
    state.steps[r] += 1;
    let t = state.steps[r] as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (lr_t, inv_c2, eps) = (cfg.lr / c1, 1.0 / c2, cfg.eps);
    let m = state.m.row_mut(r);
    let v = state.v.row_mut(r);
    let zeros;
    let g = match grad {
        Some(g) => g,
        None => {
            zeros = vec![0.0; param.len()];
            &zeros
        }
    };
    let step = |p: &mut f64, mi: &mut f64, vi: &mut f64, gi: f64| {
        *mi = b1 * *mi + (1.0 - b1) * gi;
        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        let s = lr_t * *mi / ((*vi * inv_c2).sqrt() + eps);
        *p -= s;
        s.abs()
    };
    // Eight fixed lanes for the Σ|step| reduction so the loop vectorizes.
    let mut acc = [0.0f64; 8];
    let n8 = param.len() / 8 * 8;
    for (((p, mi), vi), gi) in param[..n8]
        .chunks_exact_mut(8)
        .zip(m[..n8].chunks_exact_mut(8))
        .zip(v[..n8].chunks_exact_mut(8))
        .zip(g[..n8].chunks_exact(8))
    {
        for l in 0..8 {
            acc[l] += step(&mut p[l], &mut mi[l], &mut vi[l], gi[l]);
        }
    }
    let mut moved: f64 = acc.iter().sum();
    for j in n8..param.len() {
        moved += step(&mut param[j], &mut m[j], &mut v[j], g[j]);
    }
    moved
}
