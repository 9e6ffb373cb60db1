//! Imbalanced synthetic identity datasets with a ground-truth identity
//! oracle, plus lossless CSV round-tripping.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub id: String,
    pub count: usize,
    pub data_center: Vec<f64>,
    pub condition_center: Vec<f64>,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample_id: usize,
    pub x0: Vec<f64>,
    pub y: Vec<f64>,
    pub identity: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub data_dim: usize,
    pub condition_dim: usize,
}

impl Dataset {
    /// The generating identity; total on the dataset.
    pub fn identity_of(&self, sample_id: usize) -> Result<&str> {
        self.samples
            .iter()
            .find(|s| s.sample_id == sample_id)
            .map(|s| s.identity.as_str())
            .ok_or_else(|| Error::Contract(format!("unknown sample id {sample_id}")))
    }

    pub fn identity_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.identity.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Identities with at most `cutoff` training samples.
    pub fn few_shot_identities(&self, cutoff: usize) -> Vec<String> {
        self.identity_counts()
            .into_iter()
            .filter(|(_, c)| *c <= cutoff)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn condition_mean(&self, identity: &str) -> Option<Vec<f64>> {
        let members: Vec<&LabeledSample> = self
            .samples
            .iter()
            .filter(|s| s.identity == identity)
            .collect();
        if members.is_empty() {
            return None;
        }
        let mut mean = vec![0.0; self.condition_dim];
        for s in &members {
            for (m, v) in mean.iter_mut().zip(&s.y) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= members.len() as f64;
        }
        Some(mean)
    }
}

/// Samples per identity: x0 = data center + spread * N(0, I), condition
/// jitter 10x tighter than data jitter.
pub fn generate<R: Rng>(
    specs: &[IdentitySpec],
    data_dim: usize,
    condition_dim: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::Config("need at least one identity spec".into()));
    }
    if data_dim < 1 || condition_dim < 1 {
        return Err(Error::Config("dims must be >= 1".into()));
    }
    for (i, a) in specs.iter().enumerate() {
        if a.count < 2 {
            return Err(Error::Config(format!(
                "identity {} has count {} < 2",
                a.id, a.count
            )));
        }
        if !(a.spread > 0.0) {
            return Err(Error::Config(format!("identity {} spread must be > 0", a.id)));
        }
        if a.data_center.len() != data_dim || a.condition_center.len() != condition_dim {
            return Err(Error::Shape(format!("identity {} center dims", a.id)));
        }
        if specs[..i].iter().any(|b| b.id == a.id) {
            return Err(Error::Config(format!("duplicate identity id {}", a.id)));
        }
    }
    let mut samples = Vec::new();
    let mut next_id = 0usize;
    for spec in specs {
        for _ in 0..spec.count {
            let x0 = spec
                .data_center
                .iter()
                .map(|c| {
                    let e: f64 = StandardNormal.sample(rng);
                    c + spec.spread * e
                })
                .collect();
            let y = spec
                .condition_center
                .iter()
                .map(|c| {
                    let e: f64 = StandardNormal.sample(rng);
                    c + 0.1 * spec.spread * e
                })
                .collect();
            samples.push(LabeledSample {
                sample_id: next_id,
                x0,
                y,
                identity: spec.id.clone(),
            });
            next_id += 1;
        }
    }
    Ok(Dataset {
        samples,
        data_dim,
        condition_dim,
    })
}

/// Draws one center per identity in both spaces, re-drawing until all
/// pairwise separations reach 4x the intra-class spread (and centers sit away
/// from the origin, keeping cosine-based coverage well posed).
pub fn draw_specs<R: Rng>(
    identities: &[(String, usize)],
    data_dim: usize,
    condition_dim: usize,
    spread: f64,
    center_scale: f64,
    rng: &mut R,
) -> Result<Vec<IdentitySpec>> {
    if !(spread > 0.0) || !(center_scale > 0.0) {
        return Err(Error::Config("spread and center_scale must be > 0".into()));
    }
    let min_sep = 4.0 * spread;
    let min_norm = 0.5 * center_scale;
    let draw_set = |rng: &mut R, dim: usize| -> Result<Vec<Vec<f64>>> {
        'attempt: for _ in 0..10_000 {
            let centers: Vec<Vec<f64>> = (0..identities.len())
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.gen_range(-center_scale..center_scale))
                        .collect()
                })
                .collect();
            for (i, a) in centers.iter().enumerate() {
                if crate::tensor::norm(a) < min_norm {
                    continue 'attempt;
                }
                for b in &centers[..i] {
                    if crate::tensor::squared_distance(a, b).sqrt() < min_sep {
                        continue 'attempt;
                    }
                }
            }
            return Ok(centers);
        }
        Err(Error::Config(
            "could not place identity centers; raise center_scale or lower spread".into(),
        ))
    };
    let data_centers = draw_set(rng, data_dim)?;
    let cond_centers = draw_set(rng, condition_dim)?;
    Ok(identities
        .iter()
        .zip(data_centers.into_iter().zip(cond_centers))
        .map(|((id, count), (dc, cc))| IdentitySpec {
            id: id.clone(),
            count: *count,
            data_center: dc,
            condition_center: cc,
            spread,
        })
        .collect())
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "identity".to_string()];
    header.extend((0..dataset.data_dim).map(|i| format!("x_{i}")));
    header.extend((0..dataset.condition_dim).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for s in &dataset.samples {
        let mut rec = vec![s.sample_id.to_string(), s.identity.clone()];
        rec.extend(s.x0.iter().map(|v| format!("{v}")));
        rec.extend(s.y.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let data_dim = header.iter().filter(|h| h.starts_with("x_")).count();
    let condition_dim = header.iter().filter(|h| h.starts_with("y_")).count();
    if data_dim == 0 || condition_dim == 0 {
        return Err(Error::Config("dataset csv missing x_/y_ columns".into()));
    }
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad float {s:?}: {e}")))
        };
        let sample_id: usize = rec[0]
            .parse()
            .map_err(|e| Error::Config(format!("bad sample id: {e}")))?;
        let identity = rec[1].to_string();
        let x0 = (0..data_dim)
            .map(|i| parse(&rec[2 + i]))
            .collect::<Result<Vec<_>>>()?;
        let y = (0..condition_dim)
            .map(|i| parse(&rec[2 + data_dim + i]))
            .collect::<Result<Vec<_>>>()?;
        samples.push(LabeledSample {
            sample_id,
            x0,
            y,
            identity,
        });
    }
    Ok(Dataset {
        samples,
        data_dim,
        condition_dim,
    })
}
