//! Linear-beta noise schedule with precomputed cumulative products and
//! posterior precisions.

use crate::error::{Error, Result};

/// Arrays are indexed by t-1 for t in 1..=T.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub t_max: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// 1 / beta_tilde_t, the inverse posterior variance of q(x_{t-1}|x_t, x_0).
    posterior_precision: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if t_max < 1 {
            return Err(Error::Config("schedule needs T >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta range ({beta_start}, {beta_end}) outside 0 < start <= end < 1"
            )));
        }
        let mut beta = Vec::with_capacity(t_max);
        for i in 0..t_max {
            let frac = if t_max == 1 {
                0.0
            } else {
                i as f64 / (t_max - 1) as f64
            };
            beta.push(beta_start + frac * (beta_end - beta_start));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_max);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let mut posterior_precision = Vec::with_capacity(t_max);
        for i in 0..t_max {
            let beta_tilde = if i == 0 {
                beta[0]
            } else {
                beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i])
            };
            posterior_precision.push(1.0 / beta_tilde);
        }
        Ok(NoiseSchedule {
            t_max,
            beta,
            alpha,
            alpha_bar,
            posterior_precision,
        })
    }

    pub fn default_toy() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.02).expect("valid defaults")
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.t_max {
            return Err(Error::Contract(format!(
                "timestep {t} outside 1..={}",
                self.t_max
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn posterior_precision(&self, t: usize) -> f64 {
        self.posterior_precision[t - 1]
    }

    /// Closed-form forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(Error::Shape(format!(
                "q_sample: x0 dim {} != eps dim {}",
                x0.len(),
                eps.len()
            )));
        }
        let ab = self.alpha_bar(t);
        let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0
            .iter()
            .zip(eps)
            .map(|(x, e)| c0 * x + c1 * e)
            .collect())
    }

    /// A(lambda) = lambda (1 - alpha_t)^2 / (2 alpha_t (1 - abar_t)):
    /// the coefficient mapping mu-space quadratics to eps-space quadratics.
    pub fn a_coeff(&self, t: usize, lam: f64) -> Result<f64> {
        self.check_t(t)?;
        if lam < 0.0 {
            return Err(Error::Contract(format!("a_coeff: lambda {lam} < 0")));
        }
        Ok(a_coeff_from(self.alpha(t), self.alpha_bar(t), lam))
    }

    /// Posterior mean of q(x_{t-1}|x_t, x_0) in the eps parameterization:
    /// (x_t - beta_t / sqrt(1-abar_t) * eps) / sqrt(alpha_t).
    pub fn posterior_mean_from_eps(&self, x_t: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        let b = self.beta(t);
        let a = self.alpha(t);
        let ab = self.alpha_bar(t);
        let coeff = b / (1.0 - ab).sqrt();
        Ok(x_t
            .iter()
            .zip(eps)
            .map(|(x, e)| (x - coeff * e) / a.sqrt())
            .collect())
    }
}

/// A(lambda) given the per-step and cumulative alpha values.
pub fn a_coeff_from(alpha: f64, alpha_bar: f64, lam: f64) -> f64 {
    lam * (1.0 - alpha).powi(2) / (2.0 * alpha * (1.0 - alpha_bar))
}
