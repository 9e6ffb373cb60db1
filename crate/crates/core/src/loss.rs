//! Training objective: epsilon MSE plus the psi-weighted neighbor-consistency
//! term. With psi identically zero this is exactly the vanilla objective.

use crate::error::{Error, Result};
use crate::nn::{BoundMlp, Denoiser};
use crate::schedule::NoiseSchedule;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub x0: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub y_prime: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub t: Vec<usize>,
    pub eps: Vec<Vec<f64>>,
}

impl TrainBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.x0.len();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if [
            self.y.len(),
            self.y_prime.len(),
            self.psi.len(),
            self.t.len(),
            self.eps.len(),
        ]
        .iter()
        .any(|l| *l != n)
        {
            return Err(Error::Shape("batch fields have unequal lengths".into()));
        }
        if self.psi.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Contract("psi must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
}

pub struct LossNode {
    pub loss: NodeId,
    /// Batch means of the two terms, for the trace CSV.
    pub term1: f64,
    pub term2: f64,
    pub psi_mean: f64,
    pub total: f64,
}

/// Builds mean_i [ ||eps_hat(x_t, y) - eps||^2 + psi_i ||eps_hat(x_t, y) -
/// eps_hat(x_t, y')||^2 ] on the tape. When `stop_grad_neighbor` is set the
/// neighbor prediction enters as a constant.
pub fn pogdiff_loss(
    model: &Denoiser,
    bound: &BoundMlp,
    tape: &mut Tape,
    schedule: &NoiseSchedule,
    batch: &TrainBatch,
    stop_grad_neighbor: bool,
) -> Result<LossNode> {
    batch.validate()?;
    let n = batch.len();
    let mut sum_node: Option<NodeId> = None;
    let mut term1_sum = 0.0;
    let mut term2_sum = 0.0;
    for i in 0..n {
        let x_t = schedule.q_sample(&batch.x0[i], batch.t[i], &batch.eps[i])?;
        let pred_y = model.predict_on_tape(tape, bound, &x_t, batch.t[i], &batch.y[i])?;
        let pred_yp = if stop_grad_neighbor {
            let v = model.predict(&x_t, batch.t[i], &batch.y_prime[i])?;
            tape.leaf(Tensor::vector(v))
        } else {
            model.predict_on_tape(tape, bound, &x_t, batch.t[i], &batch.y_prime[i])?
        };
        let eps_const = tape.leaf(Tensor::vector(batch.eps[i].clone()));
        let d1 = tape.sub(pred_y, eps_const)?;
        let t1 = tape.sum_squares(d1);
        let d2 = tape.sub(pred_y, pred_yp)?;
        let t2 = tape.sum_squares(d2);
        let weighted = tape.scale(t2, batch.psi[i]);
        let li = tape.add(t1, weighted)?;
        term1_sum += tape.value(t1).item()?;
        term2_sum += tape.value(t2).item()?;
        sum_node = Some(match sum_node {
            None => li,
            Some(acc) => tape.add(acc, li)?,
        });
    }
    let loss = tape.scale(sum_node.expect("non-empty batch"), 1.0 / n as f64);
    let nf = n as f64;
    Ok(LossNode {
        loss,
        term1: term1_sum / nf,
        term2: term2_sum / nf,
        psi_mean: batch.psi.iter().sum::<f64>() / nf,
        total: tape.value(loss).item()?,
    })
}
