//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// All analytic gradients were zero; `max_abs_err` is the signal then.
    pub degenerate: bool,
}

impl GradCheckReport {
    pub fn score(&self) -> f64 {
        if self.degenerate {
            self.max_abs_err
        } else {
            self.max_rel_err
        }
    }
}

/// Perturbs every parameter entry by ±epsilon and compares the central
/// difference against `analytic`. `loss_fn` must be a pure function of the
/// parameters. Unreliable at non-smooth points (e.g. relu kinks).
pub fn grad_check<F>(
    params: &mut [Tensor],
    analytic: &[Tensor],
    mut loss_fn: F,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Contract(format!(
            "grad_check epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape("analytic grads do not match params".into()));
    }
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let degenerate = analytic
        .iter()
        .all(|g| g.values().iter().all(|v| *v == 0.0));
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].values()[k];
            params[p].values_mut()[k] = orig + epsilon;
            let plus = loss_fn(params)?;
            params[p].values_mut()[k] = orig - epsilon;
            let minus = loss_fn(params)?;
            params[p].values_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[p].values()[k];
            let abs = (a - numeric).abs();
            let rel = abs / (a.abs() + numeric.abs() + 1e-12);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn quadratic_loss(params: &[Tensor]) -> f64 {
        // loss = ||w||^2 + 3 * w[0]
        let w = params[0].values();
        w.iter().map(|v| v * v).sum::<f64>() + 3.0 * w[0]
    }

    #[test]
    fn exact_for_quadratics() {
        let mut params = vec![Tensor::vector(vec![0.7, -1.3, 2.0])];
        let mut analytic = vec![Tensor::vector(vec![2.0 * 0.7 + 3.0, -2.6, 4.0])];
        let _ = &mut analytic;
        let report = grad_check(&mut params, &analytic, |p| Ok(quadratic_loss(p)), 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-7, "err {}", report.max_rel_err);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let mut params = vec![Tensor::scalar(1.0)];
        let analytic = vec![Tensor::scalar(2.0)];
        assert!(grad_check(&mut params, &analytic, |_| Ok(0.0), 0.0).is_err());
        assert!(grad_check(&mut params, &analytic, |_| Ok(0.0), 0.1).is_err());
    }

    #[test]
    fn degenerate_all_zero_reports_absolute() {
        let mut params = vec![Tensor::scalar(0.0)];
        let analytic = vec![Tensor::scalar(0.0)];
        // loss = w^2 has zero gradient at 0
        let report = grad_check(
            &mut params,
            &analytic,
            |p| Ok(p[0].values()[0].powi(2)),
            1e-5,
        )
        .unwrap();
        assert!(report.degenerate);
        assert!(report.max_abs_err < 1e-10);
    }

    #[test]
    fn relu_kink_is_flagged_unreliable() {
        // loss = sum(relu(w)) straddling the kink: analytic backward picks one
        // side, central difference averages both, so the check must fail.
        let mut params = vec![Tensor::vector(vec![0.0])];
        let mut tape = Tape::new();
        let w = tape.leaf(params[0].clone());
        let r = tape.relu(w);
        let loss = tape.sum(r);
        let grads = tape.gradients(loss).unwrap();
        let analytic = vec![grads[0].clone()];
        let report = grad_check(
            &mut params,
            &analytic,
            |p| Ok(p[0].values()[0].max(0.0)),
            1e-5,
        )
        .unwrap();
        assert!(report.score() > 1e-4, "kink should be unreliable");
    }
}
