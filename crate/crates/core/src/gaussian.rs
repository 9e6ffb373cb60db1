//! Closed-form algebra for isotropic Gaussians N(mu, lambda^-1 I):
//! products, KL divergence, and the precision-weighted fusion identity
//! underlying the neighbor-consistency bound.

use crate::error::{Error, Result};
use crate::tensor::squared_distance;

#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    mean: Vec<f64>,
    precision: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, precision: f64) -> Result<IsotropicGaussian> {
        if !(precision > 0.0) || !precision.is_finite() {
            return Err(Error::Contract(format!(
                "precision must be positive and finite, got {precision}"
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian mean".into()));
        }
        Ok(IsotropicGaussian { mean, precision })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    /// Log density at a point.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let ln_norm = 0.5 * d * (self.precision.ln() - (2.0 * std::f64::consts::PI).ln());
        ln_norm - 0.5 * self.precision * squared_distance(&self.mean, x)
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }
}

/// Renormalized pointwise product of two Gaussian densities: precision-summed,
/// precision-weighted mean.
pub fn pog_product(
    g1: &IsotropicGaussian,
    g2: &IsotropicGaussian,
) -> Result<IsotropicGaussian> {
    if g1.dim() != g2.dim() {
        return Err(Error::Shape(format!(
            "product of gaussians with dims {} and {}",
            g1.dim(),
            g2.dim()
        )));
    }
    let precision = g1.precision + g2.precision;
    let mean = g1
        .mean
        .iter()
        .zip(&g2.mean)
        .map(|(m1, m2)| (g1.precision * m1 + g2.precision * m2) / precision)
        .collect();
    IsotropicGaussian::new(mean, precision)
}

/// KL(p || q) for isotropic Gaussians of the same dimension:
/// d/2 (lq/lp - 1 + ln(lp/lq)) + lq/2 ||mu_p - mu_q||^2.
pub fn kl_isotropic(p: &IsotropicGaussian, q: &IsotropicGaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!(
            "kl between dims {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let d = p.dim() as f64;
    let ratio = q.precision / p.precision;
    let kl = 0.5 * d * (ratio - 1.0 + (p.precision / q.precision).ln())
        + 0.5 * q.precision * squared_distance(&p.mean, &q.mean);
    Ok(kl)
}

#[derive(Debug, Clone, Copy)]
pub struct LemmaResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl LemmaResidual {
    /// |lhs - rhs - residual| scaled by max(1, lhs).
    pub fn identity_error(&self) -> f64 {
        (self.lhs - self.rhs - self.residual).abs() / self.lhs.max(1.0)
    }
}

/// Decomposition of the two-target quadratic form around the fused mean:
///   lhs  = 1/2 lt ||m_y - m_t||^2 + 1/2 lyp ||m_y - m_yp||^2
///   rhs  = 1/2 (lt + lyp) ||m_y - m_fused||^2
///   residual = lt lyp ||m_t - m_yp||^2 / (2 (lt + lyp))
/// with lhs == rhs + residual exactly and residual >= 0.
pub fn lemma_residual(
    mu_theta_y: &[f64],
    mu_t: &[f64],
    mu_theta_yp: &[f64],
    lambda_t: f64,
    lambda_yp: f64,
) -> Result<LemmaResidual> {
    if mu_theta_y.len() != mu_t.len() || mu_theta_y.len() != mu_theta_yp.len() {
        return Err(Error::Shape("lemma_residual: mismatched vector dims".into()));
    }
    if !(lambda_t > 0.0) || !(lambda_yp > 0.0) {
        return Err(Error::Contract(format!(
            "precisions must be positive, got lambda_t={lambda_t}, lambda_yp={lambda_yp}"
        )));
    }
    let lhs = 0.5 * lambda_t * squared_distance(mu_theta_y, mu_t)
        + 0.5 * lambda_yp * squared_distance(mu_theta_y, mu_theta_yp);
    let fused = pog_product(
        &IsotropicGaussian::new(mu_t.to_vec(), lambda_t)?,
        &IsotropicGaussian::new(mu_theta_yp.to_vec(), lambda_yp)?,
    )?;
    let rhs = 0.5 * (lambda_t + lambda_yp) * squared_distance(mu_theta_y, fused.mean());
    let residual =
        lambda_t * lambda_yp * squared_distance(mu_t, mu_theta_yp) / (2.0 * (lambda_t + lambda_yp));
    Ok(LemmaResidual { lhs, rhs, residual })
}
