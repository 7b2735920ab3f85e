use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Param;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (adam | sgd_momentum)"))),
        }
    }
}

/// First-order optimizer with per-parameter state, keyed by position.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (i, p) in params.into_iter().enumerate() {
            let m = &mut self.first[i];
            let g = p.grad.data();
            let w = p.value.data_mut();
            match self.kind {
                OptimizerKind::Adam => {
                    let v = &mut self.second[i];
                    for k in 0..w.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        w[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for k in 0..w.len() {
                        m[k] = MOMENTUM * m[k] + g[k];
                        w[k] -= self.lr * m[k];
                    }
                }
            }
        }
    }
}
