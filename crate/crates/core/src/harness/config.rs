use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::mlp::Selection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MnistMlp,
    SynthLstm,
    SynthTiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Meprop,
    Mesimp,
    Meact,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::Config {
            field: "task",
            reason: format!("unknown task `{s}`"),
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::Config {
            field: "mode",
            reason: format!("unknown mode `{s}`"),
        })
    }
}

/// A flat description of one run. Every field has a default, so a JSON file
/// only needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub task: Task,
    pub mode: Mode,
    /// Hidden layer sizes; for the LSTM task, the first entry is the
    /// per-direction state size. Defaults depend on the task.
    pub hidden: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub selection: Selection,
    pub prune_rate: Option<f64>,
    /// Examples between prune events (tokens for the LSTM task); one epoch
    /// when absent.
    pub prune_interval: Option<usize>,
    pub cycle_epochs: usize,
    pub simplify_epochs: usize,
    pub meact_p: Option<f64>,
    pub meact_e: Option<usize>,
    /// Pin masked neurons to zero instead of their recorded output.
    pub meact_zero: bool,
    /// Also train an unmasked continuation from the pretrained state, for
    /// comparing update magnitudes.
    pub meact_compare: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: Option<f64>,
    pub mnist_dir: PathBuf,
    /// Use only the first `train_limit` training examples.
    pub train_limit: Option<usize>,
    pub out: PathBuf,
    pub synth_features: usize,
    pub synth_classes: usize,
    pub synth_examples: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub embed: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            task: Task::MnistMlp,
            mode: Mode::Baseline,
            hidden: None,
            k: None,
            selection: Selection::PerExample,
            prune_rate: None,
            prune_interval: None,
            cycle_epochs: 10,
            simplify_epochs: 5,
            meact_p: None,
            meact_e: None,
            meact_zero: false,
            meact_compare: true,
            epochs: 10,
            batch_size: 10,
            seed: 1,
            dropout: None,
            mnist_dir: PathBuf::from("data/mnist"),
            train_limit: None,
            out: PathBuf::from("runs/latest"),
            synth_features: 784,
            synth_classes: 10,
            synth_examples: 10_000,
            vocab: 30,
            seq_len: 12,
            embed: 16,
        }
    }
}

fn missing(field: &'static str, mode: &str) -> Error {
    Error::Config {
        field,
        reason: format!("required for mode {mode}"),
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| match self.task {
            Task::SynthLstm => vec![64],
            _ => vec![500, 500],
        })
    }

    /// A name for tables: the explicit one, or one derived from the settings.
    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let task = serde_json::to_value(self.task).unwrap();
        let mode = serde_json::to_value(self.mode).unwrap();
        let h: Vec<String> = self.hidden_sizes().iter().map(usize::to_string).collect();
        let mut s = format!("{}-{}-h{}", task.as_str().unwrap(), mode.as_str().unwrap(), h.join("x"));
        if let Some(k) = self.k.filter(|_| self.mode != Mode::Baseline && self.mode != Mode::Meact) {
            s.push_str(&format!("-k{k}"));
        }
        s.push_str(&format!("-s{}", self.seed));
        s
    }

    pub fn validate(&self) -> Result<()> {
        let mode = match self.mode {
            Mode::Baseline => "baseline",
            Mode::Meprop => "meprop",
            Mode::Mesimp => "mesimp",
            Mode::Meact => "meact",
        };
        let hidden = self.hidden_sizes();
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config {
                field: "hidden",
                reason: "need at least one positive size".into(),
            });
        }
        if self.epochs == 0 {
            return Err(Error::Config {
                field: "epochs",
                reason: "must be at least 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config {
                field: "batch_size",
                reason: "must be at least 1".into(),
            });
        }
        if self.k == Some(0) {
            return Err(Error::Config {
                field: "k",
                reason: "must be at least 1".into(),
            });
        }
        if let Some(d) = self.dropout {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config {
                    field: "dropout",
                    reason: format!("{d} is outside [0, 1)"),
                });
            }
        }
        match self.mode {
            Mode::Baseline => {}
            Mode::Meprop => {
                self.k.ok_or_else(|| missing("k", mode))?;
            }
            Mode::Mesimp => {
                self.k.ok_or_else(|| missing("k", mode))?;
                let p = self.prune_rate.ok_or_else(|| missing("prune_rate", mode))?;
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config {
                        field: "prune_rate",
                        reason: format!("{p} is outside [0, 1)"),
                    });
                }
                if self.prune_interval == Some(0) {
                    return Err(Error::Config {
                        field: "prune_interval",
                        reason: "must be positive".into(),
                    });
                }
                if self.cycle_epochs == 0 || self.simplify_epochs == 0 || self.simplify_epochs > self.cycle_epochs {
                    return Err(Error::Config {
                        field: "simplify_epochs",
                        reason: "need 1 <= simplify_epochs <= cycle_epochs".into(),
                    });
                }
            }
            Mode::Meact => {
                if self.task == Task::SynthLstm {
                    return Err(Error::Config {
                        field: "mode",
                        reason: "meact is only implemented for the MLP tasks".into(),
                    });
                }
                let p = self.meact_p.ok_or_else(|| missing("meact_p", mode))?;
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Config {
                        field: "meact_p",
                        reason: format!("{p} is outside (0, 1)"),
                    });
                }
                let e = self.meact_e.ok_or_else(|| missing("meact_e", mode))?;
                if e == 0 || e >= self.epochs {
                    return Err(Error::Config {
                        field: "meact_e",
                        reason: format!("need 1 <= meact_e < epochs ({})", self.epochs),
                    });
                }
            }
        }
        Ok(())
    }
}
