//! Reverse samplers: deterministic DDIM over a timestep subsequence and the
//! stochastic ancestral sampler.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Denoiser;
use crate::schedule::NoiseSchedule;

/// Evenly spaced timesteps including both t_max and 1, descending.
pub fn ddim_timesteps(t_max: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps < 1 || n_steps > t_max {
        return Err(Error::Contract(format!(
            "n_steps {n_steps} outside 1..={t_max}"
        )));
    }
    if n_steps == 1 {
        return Ok(vec![t_max]);
    }
    let mut ts = Vec::with_capacity(n_steps);
    for i in 0..n_steps {
        let frac = i as f64 / (n_steps - 1) as f64;
        let t = (1.0 + frac * (t_max - 1) as f64).round() as usize;
        if ts.last() != Some(&t) {
            ts.push(t);
        }
    }
    ts.reverse();
    Ok(ts)
}

/// Deterministic (eta = 0) DDIM trajectory from x_T down to the x_0 estimate.
pub fn ddim_sample(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    y: &[f64],
    n_steps: usize,
    x_t: &[f64],
) -> Result<Vec<f64>> {
    let ts = ddim_timesteps(schedule.t_max, n_steps)?;
    let mut x = x_t.to_vec();
    for (k, &t) in ts.iter().enumerate() {
        let eps = model.predict(&x, t, y)?;
        let ab = schedule.alpha_bar(t);
        let x0_pred: Vec<f64> = x
            .iter()
            .zip(&eps)
            .map(|(xi, ei)| (xi - (1.0 - ab).sqrt() * ei) / ab.sqrt())
            .collect();
        let ab_prev = match ts.get(k + 1) {
            Some(&t_prev) => schedule.alpha_bar(t_prev),
            None => 1.0,
        };
        x = x0_pred
            .iter()
            .zip(&eps)
            .map(|(x0i, ei)| ab_prev.sqrt() * x0i + (1.0 - ab_prev).sqrt() * ei)
            .collect();
    }
    Ok(x)
}

/// Stochastic ancestral sampler over all T steps; posterior std is
/// sqrt(beta_tilde_t), no noise at the final step.
pub fn ddpm_sample<R: Rng>(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    y: &[f64],
    x_t: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut x = x_t.to_vec();
    for t in (1..=schedule.t_max).rev() {
        let eps = model.predict(&x, t, y)?;
        let mut mean = schedule.posterior_mean_from_eps(&x, t, &eps)?;
        if t > 1 {
            let sigma = schedule.posterior_precision(t).powf(-0.5);
            for m in mean.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *m += sigma * z;
            }
        }
        x = mean;
    }
    Ok(x)
}
