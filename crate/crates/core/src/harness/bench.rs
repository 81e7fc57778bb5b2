//! Backward-pass microbenchmark for one `h × h` linear layer.
//!
//! Both variants run the same row kernel (`axpy` into `dW` and `dx`) over a
//! mini-batch; meProp first picks each example's top-k rows. Buffers are
//! allocated and data generated before timing starts, and the forward pass
//! is not part of the measured region.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, top_k_into, FlopCounter, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub hidden: Vec<usize>,
    pub ks: Vec<usize>,
    pub repetitions: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            hidden: vec![500],
            ks: vec![20, 80, 500],
            repetitions: 50,
            batch_size: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median_ms: f64,
    pub iqr_ms: f64,
}

impl Stats {
    /// Median and interquartile range (linear interpolation between ranks).
    pub fn from_samples(samples: &[f64]) -> Stats {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if s.is_empty() {
                return 0.0;
            }
            let pos = p * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        Stats {
            median_ms: q(0.5),
            iqr_ms: q(0.75) - q(0.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub hidden: usize,
    pub k: usize,
    pub batch_size: usize,
    pub full: Stats,
    pub meprop: Stats,
    pub speedup: f64,
    pub full_flops: u64,
    pub meprop_flops: u64,
    pub flop_ratio: f64,
}

struct Buffers {
    w: Matrix,
    x: Matrix,
    grad: Matrix,
    dw: Matrix,
    dx: Matrix,
    scratch: Vec<usize>,
    picked: Vec<usize>,
}

impl Buffers {
    fn new(h: usize, batch: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut normal = |r, c| {
            Matrix::from_fn(r, c, |_, _| {
                let v: f64 = StandardNormal.sample(rng);
                v
            })
        };
        Buffers {
            w: normal(h, h),
            x: normal(batch, h),
            grad: normal(batch, h),
            dw: Matrix::zeros(h, h),
            dx: Matrix::zeros(batch, h),
            scratch: Vec::with_capacity(h),
            picked: Vec::with_capacity(h),
        }
    }

    fn clear(&mut self) {
        self.dw.fill(0.0);
        self.dx.fill(0.0);
    }

    fn full(&mut self, flops: &mut FlopCounter) {
        let (n, m) = self.w.shape();
        for b in 0..self.grad.rows() {
            let g = self.grad.row(b);
            let x = self.x.row(b);
            let dx = self.dx.row_mut(b);
            for i in 0..n {
                axpy(g[i], x, self.dw.row_mut(i));
                axpy(g[i], self.w.row(i), dx);
            }
            flops.add(2 * (n * m) as u64);
        }
    }

    fn meprop(&mut self, k: usize, flops: &mut FlopCounter) {
        let m = self.w.cols();
        for b in 0..self.grad.rows() {
            let g = self.grad.row(b);
            top_k_into(g, k, &mut self.scratch, &mut self.picked);
            let x = self.x.row(b);
            let dx = self.dx.row_mut(b);
            for &i in &self.picked {
                axpy(g[i], x, self.dw.row_mut(i));
                axpy(g[i], self.w.row(i), dx);
            }
            flops.add(2 * (self.picked.len() * m) as u64);
        }
    }
}

fn time_reps(reps: usize, buf: &mut Buffers, mut f: impl FnMut(&mut Buffers)) -> Vec<f64> {
    buf.clear();
    f(buf);
    (0..reps)
        .map(|_| {
            buf.clear();
            let start = Instant::now();
            f(buf);
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect()
}

/// Times full and meProp backward for every `(hidden, k)` pair with `k <= hidden`.
pub fn bench_backprop(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.hidden.contains(&0) || config.ks.contains(&0) {
        return Err(Error::invalid("bench", "sizes and k must be at least 1"));
    }
    if config.repetitions == 0 || config.batch_size == 0 {
        return Err(Error::invalid("bench", "repetitions and batch size must be at least 1"));
    }
    let mut rows = Vec::new();
    for &h in &config.hidden {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut buf = Buffers::new(h, config.batch_size, &mut rng);
        let mut full_flops = FlopCounter::new();
        buf.full(&mut full_flops);
        let full = Stats::from_samples(&time_reps(config.repetitions, &mut buf, |b| {
            b.full(&mut FlopCounter::new())
        }));
        for &k in config.ks.iter().filter(|&&k| k <= h) {
            let mut mp_flops = FlopCounter::new();
            buf.meprop(k, &mut mp_flops);
            let meprop = Stats::from_samples(&time_reps(config.repetitions, &mut buf, |b| {
                b.meprop(k, &mut FlopCounter::new())
            }));
            rows.push(BenchRow {
                hidden: h,
                k,
                batch_size: config.batch_size,
                full,
                meprop,
                speedup: full.median_ms / meprop.median_ms.max(f64::MIN_POSITIVE),
                full_flops: full_flops.get(),
                meprop_flops: mp_flops.get(),
                flop_ratio: mp_flops.get() as f64 / full_flops.get() as f64,
            });
        }
    }
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:>6} {:>6} {:>5} {:>12} {:>10} {:>12} {:>10} {:>8} {:>10}\n",
        "hidden", "k", "batch", "full_ms", "full_iqr", "meprop_ms", "mp_iqr", "speedup", "flop_ratio"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:>6} {:>5} {:>12.4} {:>10.4} {:>12.4} {:>10.4} {:>7.2}x {:>10.6}",
            r.hidden,
            r.k,
            r.batch_size,
            r.full.median_ms,
            r.full.iqr_ms,
            r.meprop.median_ms,
            r.meprop.iqr_ms,
            r.speedup,
            r.flop_ratio
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_quartiles() {
        let s = Stats::from_samples(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!(s.median_ms, 3.0);
        assert_eq!(s.iqr_ms, 2.0);
        assert_eq!(Stats::from_samples(&[7.0]).iqr_ms, 0.0);
    }

    #[test]
    fn flop_ratio_is_k_over_n() {
        let rows = bench_backprop(&BenchConfig {
            hidden: vec![30],
            ks: vec![1, 7, 30, 40],
            repetitions: 2,
            batch_size: 3,
            seed: 2,
        })
        .unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.flop_ratio, r.k as f64 / 30.0);
            assert_eq!(r.meprop_flops * 30, r.full_flops * r.k as u64);
        }
    }

    #[test]
    fn kernels_agree_at_full_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Buffers::new(12, 4, &mut rng);
        a.full(&mut FlopCounter::new());
        let (dw, dx) = (a.dw.clone(), a.dx.clone());
        a.clear();
        a.meprop(12, &mut FlopCounter::new());
        assert_eq!(a.dw, dw);
        assert_eq!(a.dx, dx);
    }

    #[test]
    fn rejects_zero_sizes() {
        let c = BenchConfig {
            ks: vec![0],
            ..Default::default()
        };
        assert!(bench_backprop(&c).is_err());
    }
}
