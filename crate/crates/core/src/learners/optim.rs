use std::str::FromStr;

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// First-order optimizer with its moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, dim: usize) -> Self {
        let buf = if kind == OptimizerKind::Adam { dim } else { 0 };
        Self {
            kind,
            learning_rate,
            first: vec![0.0; buf],
            second: vec![0.0; buf],
            steps: 0,
        }
    }

    /// Updates `params` in place with gradient `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len(params.len(), grad.len())?;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                check_len(self.first.len(), params.len())?;
                self.steps += 1;
                let c1 = 1.0 - BETA1.powi(self.steps);
                let c2 = 1.0 - BETA2.powi(self.steps);
                for k in 0..params.len() {
                    let g = grad[k];
                    self.first[k] = BETA1 * self.first[k] + (1.0 - BETA1) * g;
                    self.second[k] = BETA2 * self.second[k] + (1.0 - BETA2) * g * g;
                    let m = self.first[k] / c1;
                    let v = self.second[k] / c2;
                    params[k] -= lr * m / (v.sqrt() + EPS);
                }
            }
        }
        Ok(())
    }
}
