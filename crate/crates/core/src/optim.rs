//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Method {
    pub fn adam_default() -> Method {
        Method::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Debug)]
struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

#[derive(Debug)]
pub struct Optimizer {
    pub lr: f64,
    pub method: Method,
    state: Option<AdamState>,
}

impl Optimizer {
    pub fn new(lr: f64, method: Method) -> Optimizer {
        Optimizer {
            lr,
            method,
            state: None,
        }
    }

    /// One update; aborts without touching any parameter if a gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| !p.same_shape(g))
        {
            return Err(Error::Shape("grads do not match params".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient for parameter {i}")));
            }
        }
        match self.method {
            Method::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.values_mut().iter_mut().zip(g.values()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                let state = self.state.get_or_insert_with(|| AdamState {
                    m: grads.iter().map(|g| vec![0.0; g.len()]).collect(),
                    v: grads.iter().map(|g| vec![0.0; g.len()]).collect(),
                    t: 0,
                });
                if state.m.len() != grads.len() {
                    return Err(Error::Shape("optimizer state does not match params".into()));
                }
                state.t += 1;
                let t = state.t as f64;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut state.m[i];
                    let v = &mut state.v[i];
                    for (k, (pv, gv)) in p.values_mut().iter_mut().zip(g.values()).enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                        let m_hat = m[k] / bc1;
                        let v_hat = v[k] / bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
