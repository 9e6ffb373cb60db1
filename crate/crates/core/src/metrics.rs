//! Generative recall (unique covered training images per identity) and a
//! desk-scale Fréchet distance between Gaussian fits.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tensor::cosine_similarity;

#[derive(Debug, Clone)]
pub struct IdentityCoverage {
    pub identity: String,
    /// Unique training image ids covered by at least one generated image.
    pub covered: BTreeSet<usize>,
    /// Generated images within threshold of some training image.
    pub correct_count: usize,
    pub training_count: usize,
}

impl IdentityCoverage {
    pub fn grecall(&self) -> f64 {
        self.covered.len() as f64 / self.training_count as f64
    }
}

#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub threshold: f64,
    pub per_identity: Vec<IdentityCoverage>,
}

/// A generated image is "correct" if its cosine similarity to at least one
/// training image of its target identity exceeds the threshold; each such
/// training image is "covered" (counted once, however many generations hit
/// it).
pub fn coverage_match(
    generated: &[(String, Vec<f64>)],
    training: &BTreeMap<String, Vec<(usize, Vec<f64>)>>,
    threshold: f64,
) -> Result<CoverageReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let mut per: BTreeMap<&String, IdentityCoverage> = BTreeMap::new();
    for (identity, images) in training {
        if images.is_empty() {
            return Err(Error::Contract(format!(
                "empty training set for identity {identity}"
            )));
        }
        per.insert(
            identity,
            IdentityCoverage {
                identity: identity.clone(),
                covered: BTreeSet::new(),
                correct_count: 0,
                training_count: images.len(),
            },
        );
    }
    for (target, emb) in generated {
        let images = training.get(target).ok_or_else(|| {
            Error::Contract(format!("generated image targets unknown identity {target}"))
        })?;
        let cov = per.get_mut(target).expect("inserted above");
        let mut correct = false;
        for (img_id, img_emb) in images {
            if cosine_similarity(emb, img_emb) > threshold {
                correct = true;
                cov.covered.insert(*img_id);
            }
        }
        if correct {
            cov.correct_count += 1;
        }
    }
    Ok(CoverageReport {
        threshold,
        per_identity: per.into_values().collect(),
    })
}

/// Mean over identities of (unique covered) / (training count).
pub fn grecall(report: &CoverageReport) -> Result<f64> {
    if report.per_identity.is_empty() {
        return Err(Error::Contract("coverage report has no identities".into()));
    }
    let sum: f64 = report.per_identity.iter().map(|c| c.grecall()).sum();
    Ok(sum / report.per_identity.len() as f64)
}

#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// Symmetric, regularized with +1e-8 I.
    pub cov: Vec<Vec<f64>>,
}

const COV_REG: f64 = 1e-8;

pub fn fit_gaussian(set: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = set.len();
    if n == 0 {
        return Err(Error::Contract("empty embedding set".into()));
    }
    let d = set[0].len();
    if n < d + 1 {
        return Err(Error::Contract(format!(
            "need at least dim+1 = {} points to fit a covariance, got {n}",
            d + 1
        )));
    }
    let mut mean = vec![0.0; d];
    for v in set {
        if v.len() != d {
            return Err(Error::Shape("mixed embedding dimensions".into()));
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for v in set {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (v[i] - mean[i]) * (v[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for (i, row) in cov.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c /= denom;
            if i == j {
                *c += COV_REG;
            }
        }
    }
    Ok(GaussianFit { mean, cov })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues, eigenvectors as columns).
pub fn symmetric_eigen(mat: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = mat.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eig = (0..d).map(|i| a[i][i]).collect();
    (eig, v)
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..p {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// V f(diag) V^T with eigenvalues clamped at 0 before f.
fn eigen_apply(mat: &[Vec<f64>], f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    let d = mat.len();
    let (eig, v) = symmetric_eigen(mat);
    let mut scaled = vec![vec![0.0; d]; d];
    for j in 0..d {
        let fj = f(eig[j].max(0.0));
        for i in 0..d {
            scaled[i][j] = v[i][j] * fj;
        }
    }
    // scaled * V^T
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                out[i][j] += scaled[i][k] * v[j][k];
            }
        }
    }
    out
}

fn trace(m: &[Vec<f64>]) -> f64 {
    (0..m.len()).map(|i| m[i][i]).sum()
}

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the matrix
/// square root taken through sqrt(S_a) S_b sqrt(S_a).
pub fn toy_fid(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let ga = fit_gaussian(set_a)?;
    let gb = fit_gaussian(set_b)?;
    frechet_distance(&ga, &gb)
}

pub fn frechet_distance(ga: &GaussianFit, gb: &GaussianFit) -> Result<f64> {
    if ga.mean.len() != gb.mean.len() {
        return Err(Error::Shape("gaussian fits have different dims".into()));
    }
    let d = ga.mean.len();
    let mean_term = crate::tensor::squared_distance(&ga.mean, &gb.mean);
    let sqrt_a = eigen_apply(&ga.cov, f64::sqrt);
    let inner = matmul(&matmul(&sqrt_a, &gb.cov), &sqrt_a);
    // symmetrize against roundoff before the eigen pass
    let mut sym = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            sym[i][j] = 0.5 * (inner[i][j] + inner[j][i]);
        }
    }
    let (eig, _) = symmetric_eigen(&sym);
    let trace_sqrt: f64 = eig.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((mean_term + trace(&ga.cov) + trace(&gb.cov) - 2.0 * trace_sqrt).max(0.0))
}
