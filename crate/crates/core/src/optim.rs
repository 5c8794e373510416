//! First-order optimisers over lists of parameter tensors.

use std::fmt;
use std::str::FromStr;

use mc_autodiff::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    /// One descent step `p <- p - lr * direction(grad)`.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dim {
                context: "optimizer step",
                expected: params.len(),
                actual: grads.len(),
            });
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    p.axpy(-self.lr, g)?;
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    if p.shape() != g.shape() || self.m[k].len() != g.numel() {
                        return Err(Error::Dim {
                            context: "optimizer step",
                            expected: p.numel(),
                            actual: g.numel(),
                        });
                    }
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        *pv -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
