//! Binary model checkpoints.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MPCK" u32:version u32:model_kind
//! model body (per layer: u32 kind tag, shape, row-major weights, bias, k)
//! u32:has_optimizer [optimizer state]
//! ```
//!
//! Floats are stored as raw bits, so save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use crate::activator::ByteReader;
use crate::error::{Error, Result};
use crate::layers::activation::Activation;
use crate::layers::linear::LinearLayer;
use crate::layers::lstm::{GateParams, LstmCell};
use crate::layers::mlp::{Mlp, Selection};
use crate::layers::tagger::BiLstmTagger;
use crate::numerics::Matrix;
use crate::optimizer::{Adam, AdamConfig, ParamState};

const MAGIC: &[u8; 4] = b"MPCK";
pub const FORMAT_VERSION: u32 = 1;

const MODEL_MLP: u32 = 1;
const MODEL_TAGGER: u32 = 2;
const LAYER_LINEAR: u32 = 1;
const LAYER_LSTM: u32 = 2;
const LAYER_EMBEDDING: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(Mlp),
    Tagger(BiLstmTagger),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn floats(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        self.floats(m.as_slice());
    }

    fn k(&mut self, k: Option<usize>) {
        match k {
            Some(k) => {
                self.u32(1);
                self.u64(k as u64);
            }
            None => {
                self.u32(0);
                self.u64(0);
            }
        }
    }

    fn linear(&mut self, l: &LinearLayer) {
        self.u32(LAYER_LINEAR);
        self.matrix(&l.weight);
        self.floats(&l.bias);
        self.k(l.meprop_k);
    }

    fn lstm(&mut self, c: &LstmCell) {
        self.u32(LAYER_LSTM);
        self.u32(c.hidden() as u32);
        self.u32(c.input() as u32);
        for g in &c.gates {
            self.floats(g.wx.as_slice());
            self.floats(g.wh.as_slice());
            self.floats(&g.b);
        }
        self.k(c.meprop_k);
    }
}

fn activation_tag(a: Activation) -> u32 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Sigmoid => 2,
        Activation::Identity => 3,
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

impl ByteReader<'_> {
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let r = self.u32()? as usize;
        let c = self.u32()? as usize;
        Matrix::from_vec(r, c, self.floats(r * c)?)
    }

    fn k(&mut self) -> Result<Option<usize>> {
        let present = self.u32()?;
        let k = self.u64()? as usize;
        Ok((present == 1).then_some(k))
    }

    fn expect_tag(&mut self, tag: u32) -> Result<()> {
        let found = self.u32()?;
        if found != tag {
            return Err(bad(format!("layer kind {found}, expected {tag}")));
        }
        Ok(())
    }

    fn linear(&mut self) -> Result<LinearLayer> {
        self.expect_tag(LAYER_LINEAR)?;
        let w = self.matrix()?;
        let b = self.floats(w.rows())?;
        LinearLayer::new(w, b, self.k()?)
    }

    fn lstm(&mut self) -> Result<LstmCell> {
        self.expect_tag(LAYER_LSTM)?;
        let h = self.u32()? as usize;
        let d = self.u32()? as usize;
        let mut gate = || -> Result<GateParams> {
            Ok(GateParams {
                wx: Matrix::from_vec(h, d, self.floats(h * d)?)?,
                wh: Matrix::from_vec(h, h, self.floats(h * h)?)?,
                b: self.floats(h)?,
            })
        };
        let gates = [gate()?, gate()?, gate()?, gate()?];
        Ok(LstmCell {
            gates,
            meprop_k: self.k()?,
        })
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    match &ckpt.model {
        Model::Mlp(m) => {
            w.u32(MODEL_MLP);
            w.u32(activation_tag(m.hidden_activation));
            w.f64(m.dropout);
            w.u32(match m.selection {
                Selection::PerExample => 0,
                Selection::Unified => 1,
            });
            w.u32(m.layers.len() as u32);
            for l in &m.layers {
                w.linear(l);
            }
        }
        Model::Tagger(t) => {
            w.u32(MODEL_TAGGER);
            w.u32(LAYER_EMBEDDING);
            w.matrix(&t.embedding);
            for c in &t.cells {
                w.lstm(c);
            }
            w.linear(&t.output);
        }
    }
    match &ckpt.optimizer {
        None => w.u32(0),
        Some(adam) => {
            w.u32(1);
            let c = adam.config;
            for v in [c.lr, c.beta1, c.beta2, c.eps] {
                w.f64(v);
            }
            w.u32(u32::from(adam.dense_moments));
            w.u32(adam.slots().len() as u32);
            for s in adam.slots() {
                w.matrix(&s.m);
                w.floats(s.v.as_slice());
                for &t in &s.steps {
                    w.u64(t);
                }
            }
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader {
        bytes,
        pos: 0,
        what: "checkpoint",
    };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let model = match r.u32()? {
        MODEL_MLP => {
            let act = match r.u32()? {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                2 => Activation::Sigmoid,
                3 => Activation::Identity,
                t => return Err(bad(format!("activation tag {t}"))),
            };
            let dropout = r.f64()?;
            let selection = match r.u32()? {
                0 => Selection::PerExample,
                1 => Selection::Unified,
                t => return Err(bad(format!("selection tag {t}"))),
            };
            let n = r.u32()? as usize;
            let layers = (0..n).map(|_| r.linear()).collect::<Result<Vec<_>>>()?;
            let mut m = Mlp::from_layers(layers, act)?;
            m.dropout = dropout;
            m.selection = selection;
            Model::Mlp(m)
        }
        MODEL_TAGGER => {
            r.expect_tag(LAYER_EMBEDDING)?;
            let embedding = r.matrix()?;
            let fwd = r.lstm()?;
            let bwd = r.lstm()?;
            let output = r.linear()?;
            Model::Tagger(BiLstmTagger {
                embedding,
                cells: [fwd, bwd],
                output,
            })
        }
        t => return Err(bad(format!("model kind {t}"))),
    };
    let optimizer = match r.u32()? {
        0 => None,
        1 => {
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let dense_moments = r.u32()? == 1;
            let n = r.u32()? as usize;
            let mut slots = Vec::with_capacity(n);
            for _ in 0..n {
                let m = r.matrix()?;
                let v = Matrix::from_vec(m.rows(), m.cols(), r.floats(m.rows() * m.cols())?)?;
                let steps = (0..m.rows()).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                slots.push(ParamState { m, v, steps });
            }
            Some(Adam::from_slots(config, dense_moments, slots))
        }
        t => return Err(bad(format!("optimizer flag {t}"))),
    };
    r.finish()?;
    Ok(Checkpoint { model, optimizer })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
