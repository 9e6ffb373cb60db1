//! Small VAE over condition embeddings. Its ELBO serves as a log-density
//! surrogate; low-density (minority) conditions get larger inverse-density
//! weights.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::neighbors::img_similarity;
use crate::nn::{Activation, BoundMlp, Mlp};
use crate::optim::{Method, Optimizer};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.8378770664093453;

/// Encoder maps y to (latent mean, latent log-variance); decoder maps a
/// latent to a reconstruction mean with fixed unit decoder variance.
#[derive(Debug, Clone)]
pub struct DensityVae {
    encoder: Mlp,
    decoder: Mlp,
    input_dim: usize,
    latent_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum ElboMode {
    /// Latent mean, no sampling; a pure function of (vae, y).
    Deterministic,
    /// Average of n reparameterized samples.
    MonteCarlo { n: usize },
}

impl DensityVae {
    pub fn random<R: Rng>(
        input_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<DensityVae> {
        let encoder = Mlp::random(
            vec![input_dim, hidden, hidden, 2 * latent_dim],
            Activation::Tanh,
            rng,
        )?;
        let decoder = Mlp::random(
            vec![latent_dim, hidden, hidden, input_dim],
            Activation::Tanh,
            rng,
        )?;
        Ok(DensityVae {
            encoder,
            decoder,
            input_dim,
            latent_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encode(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.encoder.forward(y)?;
        let (mu, logvar) = out.split_at(self.latent_dim);
        if logvar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder log-variance".into()));
        }
        Ok((mu.to_vec(), logvar.to_vec()))
    }

    fn recon_log_likelihood(&self, y: &[f64], z: &[f64]) -> Result<f64> {
        let recon = self.decoder.forward(z)?;
        let d = self.input_dim as f64;
        Ok(-0.5 * crate::tensor::squared_distance(y, &recon) - 0.5 * d * LN_2PI)
    }

    /// ELBO(y) = E_q [log p(y|z)] - KL(q(z|y) || N(0, I)), with the closed
    /// form Gaussian KL.
    pub fn elbo<R: Rng>(&self, y: &[f64], mode: ElboMode, rng: &mut R) -> Result<f64> {
        if y.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "elbo input dim {} != expected {}",
                y.len(),
                self.input_dim
            )));
        }
        let (mu, logvar) = self.encode(y)?;
        let kl: f64 = mu
            .iter()
            .zip(&logvar)
            .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
            .sum();
        let recon = match mode {
            ElboMode::Deterministic => self.recon_log_likelihood(y, &mu)?,
            ElboMode::MonteCarlo { n } => {
                let mut acc = 0.0;
                for _ in 0..n {
                    let z: Vec<f64> = mu
                        .iter()
                        .zip(&logvar)
                        .map(|(m, lv)| {
                            let e: f64 = StandardNormal.sample(rng);
                            m + (0.5 * lv).exp() * e
                        })
                        .collect();
                    acc += self.recon_log_likelihood(y, &z)?;
                }
                acc / n as f64
            }
        };
        Ok(recon - kl)
    }

    pub fn elbo_deterministic(&self, y: &[f64]) -> Result<f64> {
        use rand::SeedableRng;
        // deterministic mode never touches the rng
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        self.elbo(y, ElboMode::Deterministic, &mut rng)
    }

    fn all_params(&self) -> Vec<Tensor> {
        let mut p = self.encoder.params().to_vec();
        p.extend_from_slice(self.decoder.params());
        p
    }

    fn set_all_params(&mut self, params: &[Tensor]) -> Result<()> {
        let ne = self.encoder.params().len();
        self.encoder.set_params(params[..ne].to_vec())?;
        self.decoder.set_params(params[ne..].to_vec())
    }

    /// One reparameterized negative-ELBO term on the tape (constant
    /// -d/2 ln(2pi) excluded from the optimized loss).
    fn neg_elbo_on_tape(
        &self,
        tape: &mut Tape,
        enc: &BoundMlp,
        dec: &BoundMlp,
        y: &[f64],
        eps: &[f64],
    ) -> Result<NodeId> {
        let l = self.latent_dim;
        let y_leaf = tape.leaf(Tensor::vector(y.to_vec()));
        let enc_out = enc.forward(tape, y_leaf)?;
        let mu = tape.slice(enc_out, 0, l)?;
        let logvar = tape.slice(enc_out, l, l)?;
        // KL = 0.5 (sum mu^2 + sum e^lv - sum lv - L)
        let mu2 = tape.sum_squares(mu);
        let exp_lv = tape.exp(logvar);
        let sum_exp = tape.sum(exp_lv);
        let sum_lv = tape.sum(logvar);
        let a = tape.add(mu2, sum_exp)?;
        let b = tape.sub(a, sum_lv)?;
        let c = tape.add_const(b, -(l as f64));
        let kl = tape.scale(c, 0.5);
        // z = mu + exp(lv/2) * eps
        let half_lv = tape.scale(logvar, 0.5);
        let std = tape.exp(half_lv);
        let eps_leaf = tape.leaf(Tensor::vector(eps.to_vec()));
        let noise = tape.mul(std, eps_leaf)?;
        let z = tape.add(mu, noise)?;
        let recon = dec.forward(tape, z)?;
        let diff = tape.sub(y_leaf, recon)?;
        let sq = tape.sum_squares(diff);
        let neg_recon = tape.scale(sq, 0.5);
        tape.add(neg_recon, kl)
    }

    /// Full-batch ELBO maximization; returns the per-epoch mean ELBO trace
    /// (constant included so values are comparable with `elbo`).
    pub fn fit<R: Rng>(
        &mut self,
        embeddings: &[Vec<f64>],
        epochs: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if embeddings.len() < 2 {
            return Err(Error::Contract("vae fit needs at least 2 embeddings".into()));
        }
        let n = embeddings.len() as f64;
        let d = self.input_dim as f64;
        let mut opt = Optimizer::new(lr, Method::adam_default());
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut tape = Tape::new();
            let enc = self.encoder.bind(&mut tape);
            let dec = self.decoder.bind(&mut tape);
            let mut sum: Option<NodeId> = None;
            for y in embeddings {
                let eps: Vec<f64> = (0..self.latent_dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                let term = self.neg_elbo_on_tape(&mut tape, &enc, &dec, y, &eps)?;
                sum = Some(match sum {
                    None => term,
                    Some(acc) => tape.add(acc, term)?,
                });
            }
            let loss = tape.scale(sum.expect("non-empty"), 1.0 / n);
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(Error::NonFinite(format!("vae loss at epoch {epoch}")));
            }
            let grads_all = tape.gradients(loss)?;
            let ids: Vec<_> = enc
                .param_ids()
                .iter()
                .chain(dec.param_ids())
                .copied()
                .collect();
            let grads: Vec<Tensor> = ids.iter().map(|id| grads_all[id.index()].clone()).collect();
            let mut params = self.all_params();
            opt.step(&mut params, &grads)?;
            self.set_all_params(&params)?;
            trace.push(-loss_val - 0.5 * d * LN_2PI);
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PsiWeight {
    pub psi: f64,
    pub img_factor: f64,
    pub density_factor: f64,
    /// Set when e^(-ELBO) pushed psi past psi_max and it was clamped.
    pub clamped: bool,
}

/// psi = img_similarity(s, same_identity, a1, a2) * e^(-elbo_y) / a3, clamped
/// to psi_max.
pub fn psi_weight(
    s: f64,
    same_identity: bool,
    a1: f64,
    a2: f64,
    a3: f64,
    elbo_y: f64,
    psi_max: f64,
) -> Result<PsiWeight> {
    if !(a1 > 0.0 && a2 > 0.0 && a3 > 0.0) {
        return Err(Error::Contract(format!(
            "a1, a2, a3 must be positive, got ({a1}, {a2}, {a3})"
        )));
    }
    let img = img_similarity(s, same_identity, a1, a2);
    let density = (-elbo_y).exp() / a3;
    let raw = img * density;
    let (psi, clamped) = if !raw.is_finite() || raw > psi_max {
        (psi_max, true)
    } else {
        (raw, false)
    };
    Ok(PsiWeight {
        psi,
        img_factor: img,
        density_factor: density,
        clamped,
    })
}
