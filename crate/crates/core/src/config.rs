//! Experiment configuration: JSON schema with strict validation and a
//! canonical hash for grouping runs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::optim::Method;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityCount {
    pub id: String,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub identities: Vec<IdentityCount>,
    pub data_dim: usize,
    pub condition_dim: usize,
    pub spread: f64,
    pub center_scale: f64,
    /// Master seed; per-stage streams are derived from it.
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Method,
    pub stop_grad_neighbor: bool,
    pub psi_override: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiConfig {
    pub k: usize,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub psi_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_identity: usize,
    pub ddim_steps: usize,
    pub threshold: f64,
    pub seeds: Vec<u64>,
    /// Identities with at most this many training samples count as few-shot.
    pub few_shot_cutoff: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub psi: PsiConfig,
    pub vae: VaeConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig {
                identities: vec![
                    IdentityCount {
                        id: "A".into(),
                        count: 30,
                    },
                    IdentityCount {
                        id: "B".into(),
                        count: 2,
                    },
                ],
                data_dim: 2,
                condition_dim: 4,
                spread: 0.3,
                center_scale: 3.0,
                seed: 0,
            },
            schedule: ScheduleConfig {
                t_steps: 100,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            model: ModelConfig {
                hidden: vec![64, 64],
                activation: Activation::Tanh,
            },
            training: TrainingConfig {
                steps: 2000,
                batch: 16,
                lr: 1e-3,
                optimizer: Method::adam_default(),
                stop_grad_neighbor: false,
                psi_override: None,
            },
            psi: PsiConfig {
                k: 5,
                a1: 1.0,
                a2: 1.0,
                a3: 1.0,
                psi_max: 100.0,
            },
            vae: VaeConfig {
                latent_dim: 2,
                hidden: 16,
                epochs: 300,
                lr: 1e-2,
            },
            eval: EvalConfig {
                samples_per_identity: 20,
                ddim_steps: 50,
                threshold: 0.7,
                seeds: vec![0, 1, 2],
                few_shot_cutoff: 5,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.identities.is_empty() {
            return Err(Error::Config("dataset.identities is empty".into()));
        }
        if d.identities.iter().any(|i| i.count < 2) {
            return Err(Error::Config("identity counts must be >= 2".into()));
        }
        if d.data_dim < 1 || d.condition_dim < 1 {
            return Err(Error::Config("dataset dims must be >= 1".into()));
        }
        if !(d.spread > 0.0) || !(d.center_scale > 0.0) {
            return Err(Error::Config("spread and center_scale must be > 0".into()));
        }
        let s = &self.schedule;
        if s.t_steps < 1 || !(s.beta_start > 0.0 && s.beta_start <= s.beta_end && s.beta_end < 1.0)
        {
            return Err(Error::Config("invalid schedule".into()));
        }
        let t = &self.training;
        if t.steps < 1 || t.batch < 1 || !(t.lr > 0.0) {
            return Err(Error::Config("invalid training settings".into()));
        }
        if let Some(p) = t.psi_override {
            if p < 0.0 || !p.is_finite() {
                return Err(Error::Config("psi_override must be finite and >= 0".into()));
            }
        }
        let total: usize = d.identities.iter().map(|i| i.count).sum();
        let p = &self.psi;
        if p.k < 1 || p.k >= total {
            return Err(Error::Config(format!(
                "psi.k = {} outside 1..{total}",
                p.k
            )));
        }
        if !(p.a1 > 0.0 && p.a2 > 0.0 && p.a3 > 0.0 && p.psi_max > 0.0) {
            return Err(Error::Config("psi hyperparameters must be > 0".into()));
        }
        let v = &self.vae;
        if v.latent_dim < 1 || v.hidden < 1 || v.epochs < 1 || !(v.lr > 0.0) {
            return Err(Error::Config("invalid vae settings".into()));
        }
        let e = &self.eval;
        if e.samples_per_identity < 1 {
            return Err(Error::Config("eval.samples_per_identity must be >= 1".into()));
        }
        if e.ddim_steps < 1 || e.ddim_steps > s.t_steps {
            return Err(Error::Config(format!(
                "eval.ddim_steps {} outside 1..={}",
                e.ddim_steps, s.t_steps
            )));
        }
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return Err(Error::Config("eval.threshold must be in (0, 1)".into()));
        }
        if e.seeds.is_empty() {
            return Err(Error::Config("eval.seeds is empty".into()));
        }
        Ok(())
    }

    /// Hash of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
