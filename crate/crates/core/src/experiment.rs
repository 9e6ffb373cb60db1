//! End-to-end experiment runner: synthetic data, neighbor index, density
//! VAE, training, sampling, evaluation, and plain-text A/B reports. Every
//! artifact except the wall time in `record.json` is a pure function of
//! (config, method, seed).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{coverage_match, grecall, toy_fid};
use crate::neighbors::{EmbeddingIndex, IndexEntry};
use crate::nn::Denoiser;
use crate::sampler::ddim_sample;
use crate::schedule::NoiseSchedule;
use crate::seeds::stream;
use crate::train::{train, ElboTable, PsiParams, TrainConfig, TraceRow};
use crate::vae::DensityVae;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Vanilla,
    Pogdiff,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Vanilla => "vanilla",
            MethodKind::Pogdiff => "pogdiff",
        }
    }

    pub fn parse(s: &str) -> Result<MethodKind> {
        match s {
            "vanilla" => Ok(MethodKind::Vanilla),
            "pogdiff" => Ok(MethodKind::Pogdiff),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected vanilla or pogdiff)"
            ))),
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub seed: u64,
    /// "all" or "few".
    pub shot: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub method: MethodKind,
    pub seed: u64,
    pub metrics: Vec<MetricRow>,
    /// Informational only; excluded from all determinism guarantees.
    pub wall_time_secs: f64,
}

pub fn prepare_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, "data");
    let identities: Vec<(String, usize)> = cfg
        .dataset
        .identities
        .iter()
        .map(|i| (i.id.clone(), i.count))
        .collect();
    let specs = data::draw_specs(
        &identities,
        cfg.dataset.data_dim,
        cfg.dataset.condition_dim,
        cfg.dataset.spread,
        cfg.dataset.center_scale,
        &mut rng,
    )?;
    data::generate(&specs, cfg.dataset.data_dim, cfg.dataset.condition_dim, &mut rng)
}

pub fn build_index(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<EmbeddingIndex> {
    let entries: Vec<IndexEntry> = dataset
        .samples
        .iter()
        .map(|s| IndexEntry {
            sample_id: s.sample_id,
            identity: s.identity.clone(),
            embedding: s.x0.clone(),
            condition: s.y.clone(),
        })
        .collect();
    EmbeddingIndex::build(entries, cfg.psi.k)
}

pub fn fit_density(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<(DensityVae, ElboTable)> {
    let mut rng = stream(seed, "vae");
    let mut vae = DensityVae::random(
        cfg.dataset.condition_dim,
        cfg.vae.latent_dim,
        cfg.vae.hidden,
        &mut rng,
    )?;
    let embeddings: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.y.clone()).collect();
    vae.fit(&embeddings, cfg.vae.epochs, cfg.vae.lr, &mut rng)?;
    let elbos = embeddings
        .iter()
        .map(|y| vae.elbo_deterministic(y))
        .collect::<Result<Vec<f64>>>()?;
    Ok((vae, ElboTable::new(elbos)))
}

pub fn train_model(
    cfg: &ExperimentConfig,
    method: MethodKind,
    dataset: &Dataset,
    index: &EmbeddingIndex,
    elbo_table: &ElboTable,
    seed: u64,
) -> Result<(Denoiser, NoiseSchedule, Vec<TraceRow>)> {
    let schedule = NoiseSchedule::linear(
        cfg.schedule.t_steps,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
    )?;
    let mut init_rng = stream(seed, "init");
    let mut model = Denoiser::random(
        cfg.dataset.data_dim,
        cfg.dataset.condition_dim,
        &cfg.model.hidden,
        cfg.model.activation,
        cfg.schedule.t_steps,
        &mut init_rng,
    )?;
    let psi_override = match method {
        // vanilla is exactly the psi == 0 special case of the same pipeline
        MethodKind::Vanilla => Some(0.0),
        MethodKind::Pogdiff => cfg.training.psi_override,
    };
    let tc = TrainConfig {
        steps: cfg.training.steps,
        batch: cfg.training.batch,
        lr: cfg.training.lr,
        method: cfg.training.optimizer,
        stop_grad_neighbor: cfg.training.stop_grad_neighbor,
        psi_override,
    };
    let psi_params = PsiParams {
        a1: cfg.psi.a1,
        a2: cfg.psi.a2,
        a3: cfg.psi.a3,
        psi_max: cfg.psi.psi_max,
    };
    let mut rng = stream(seed, "train");
    let trace = train(
        &mut model,
        &schedule,
        dataset,
        index,
        elbo_table,
        &psi_params,
        &tc,
        &mut rng,
    )?;
    Ok((model, schedule, trace))
}

/// Fixed samples per identity, conditioned on the identity's mean training
/// condition, DDIM from pure noise.
pub fn generate_samples(
    cfg: &ExperimentConfig,
    model: &Denoiser,
    schedule: &NoiseSchedule,
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rng = stream(seed, "sample");
    let mut out = Vec::new();
    for identity in dataset.identity_counts().keys() {
        let y = dataset
            .condition_mean(identity)
            .ok_or_else(|| Error::Contract(format!("no samples for identity {identity}")))?;
        for _ in 0..cfg.eval.samples_per_identity {
            let x_t: Vec<f64> = (0..dataset.data_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let x0 = ddim_sample(model, schedule, &y, cfg.eval.ddim_steps, &x_t)?;
            out.push((identity.clone(), x0));
        }
    }
    Ok(out)
}

/// Coverage recall and Fréchet distance, split into all identities vs the
/// few-shot subset. The few-shot Fréchet row is skipped when either side has
/// fewer than dim+1 points (a covariance fit is not defined there).
pub fn evaluate(
    cfg: &ExperimentConfig,
    method: MethodKind,
    seed: u64,
    dataset: &Dataset,
    generated: &[(String, Vec<f64>)],
) -> Result<Vec<MetricRow>> {
    let mut training: BTreeMap<String, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for s in &dataset.samples {
        training
            .entry(s.identity.clone())
            .or_default()
            .push((s.sample_id, s.x0.clone()));
    }
    let report = coverage_match(generated, &training, cfg.eval.threshold)?;
    let few: Vec<String> = dataset.few_shot_identities(cfg.eval.few_shot_cutoff);
    let mut rows = Vec::new();
    let mut push = |shot: &str, metric: &str, value: f64| {
        rows.push(MetricRow {
            method: method.as_str().to_string(),
            seed,
            shot: shot.to_string(),
            metric: metric.to_string(),
            value,
        });
    };
    push("all", "grecall", grecall(&report)?);
    let few_cov: Vec<f64> = report
        .per_identity
        .iter()
        .filter(|c| few.contains(&c.identity))
        .map(|c| c.grecall())
        .collect();
    if !few_cov.is_empty() {
        push(
            "few",
            "grecall",
            few_cov.iter().sum::<f64>() / few_cov.len() as f64,
        );
    }
    let gen_all: Vec<Vec<f64>> = generated.iter().map(|(_, x)| x.clone()).collect();
    let train_all: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.x0.clone()).collect();
    push("all", "fid", toy_fid(&gen_all, &train_all)?);
    let gen_few: Vec<Vec<f64>> = generated
        .iter()
        .filter(|(id, _)| few.contains(id))
        .map(|(_, x)| x.clone())
        .collect();
    let train_few: Vec<Vec<f64>> = dataset
        .samples
        .iter()
        .filter(|s| few.contains(&s.identity))
        .map(|s| s.x0.clone())
        .collect();
    let min_points = dataset.data_dim + 1;
    if gen_few.len() >= min_points && train_few.len() >= min_points {
        push("few", "fid", toy_fid(&gen_few, &train_few)?);
    }
    Ok(rows)
}

fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "term1", "term2", "psi_mean", "total"])?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            format!("{}", r.term1),
            format!("{}", r.term2),
            format!("{}", r.psi_mean),
            format!("{}", r.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "seed", "shot", "metric", "value"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.shot.clone(),
            r.metric.clone(),
            format!("{}", r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_elbo_csv(dataset: &Dataset, elbo: &ElboTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "identity", "elbo", "inv_density"])?;
    for s in &dataset.samples {
        let e = elbo.get(s.sample_id)?;
        w.write_record([
            s.sample_id.to_string(),
            s.identity.clone(),
            format!("{e}"),
            format!("{}", (-e).exp()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_neighbors_csv(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_id", "neighbor_id", "similarity", "weight"])?;
    for (q, nbr, s, weight) in index.dump_rows() {
        w.write_record([
            q.to_string(),
            nbr.to_string(),
            format!("{s}"),
            format!("{weight}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples_csv(
    generated: &[(String, Vec<f64>)],
    data_dim: usize,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["identity".to_string()];
    header.extend((0..data_dim).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for (id, x) in generated {
        let mut rec = vec![id.clone()];
        rec.extend(x.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let dims = r.headers()?.iter().filter(|h| h.starts_with("x_")).count();
    if dims == 0 {
        return Err(Error::Config("samples csv missing x_ columns".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x = (1..=dims)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad float in samples csv: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((rec[0].to_string(), x));
    }
    Ok(out)
}

/// Runs one full (method, seed) pipeline, writing every artifact under
/// `out_dir` and returning the run record.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    method: MethodKind,
    seed: u64,
    out_dir: &Path,
) -> Result<RunRecord> {
    let started = Instant::now();
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let dataset = prepare_dataset(cfg, seed).map_err(|e| e.in_stage("gen-data"))?;
    data::write_csv(&dataset, &out_dir.join("dataset.csv")).map_err(|e| e.in_stage("gen-data"))?;

    let index = build_index(cfg, &dataset).map_err(|e| e.in_stage("index"))?;
    write_neighbors_csv(&index, &out_dir.join("neighbors.csv"))
        .map_err(|e| e.in_stage("index"))?;

    let (_vae, elbo_table) =
        fit_density(cfg, &dataset, seed).map_err(|e| e.in_stage("density"))?;
    write_elbo_csv(&dataset, &elbo_table, &out_dir.join("elbo.csv"))
        .map_err(|e| e.in_stage("density"))?;

    let (model, schedule, trace) = train_model(cfg, method, &dataset, &index, &elbo_table, seed)
        .map_err(|e| e.in_stage("train"))?;
    write_trace_csv(&trace, &out_dir.join("trace.csv")).map_err(|e| e.in_stage("train"))?;
    model
        .save(&out_dir.join("model.bin"))
        .map_err(|e| e.in_stage("train"))?;

    let generated = generate_samples(cfg, &model, &schedule, &dataset, seed)
        .map_err(|e| e.in_stage("sample"))?;
    write_samples_csv(&generated, dataset.data_dim, &out_dir.join("samples.csv"))
        .map_err(|e| e.in_stage("sample"))?;

    let metrics =
        evaluate(cfg, method, seed, &dataset, &generated).map_err(|e| e.in_stage("eval"))?;
    write_metrics_csv(&metrics, &out_dir.join("metrics.csv")).map_err(|e| e.in_stage("eval"))?;

    let record = RunRecord {
        config_hash: cfg.hash(),
        method,
        seed,
        metrics,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&record)?;
    std::fs::write(out_dir.join("record.json"), json)?;
    Ok(record)
}

/// Both methods over every configured seed, each into its own subdirectory.
pub fn ab_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for &seed in &cfg.eval.seeds {
        for method in [MethodKind::Vanilla, MethodKind::Pogdiff] {
            let sub = out_dir.join(format!("{method}_seed{seed}"));
            records.push(run_experiment(cfg, method, seed, &sub)?);
        }
    }
    Ok(records)
}

/// Recursively collects record.json files under a directory.
pub fn collect_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "record.json") {
                paths.push(p);
            }
        }
    }
    paths.sort();
    let mut records = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        records.push(serde_json::from_str(&text)?);
    }
    Ok(records)
}

/// Seed-aggregated mean/std per (method, shot, metric) as a plain-text table.
/// Mixing runs from different configs is refused unless `force` is set.
pub fn emit_report(records: &[RunRecord], force: bool) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Contract("no run records to report".into()));
    }
    let first_hash = &records[0].config_hash;
    if !force && records.iter().any(|r| &r.config_hash != first_hash) {
        return Err(Error::Contract(
            "run records come from different configs; pass --force to aggregate anyway".into(),
        ));
    }
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for rec in records {
        for m in &rec.metrics {
            groups
                .entry((m.method.clone(), m.shot.clone(), m.metric.clone()))
                .or_default()
                .push(m.value);
        }
    }
    let mut out = String::new();
    out.push_str(&format!(
        "config {}  ({} runs)\n",
        &first_hash[..12.min(first_hash.len())],
        records.len()
    ));
    out.push_str(&format!(
        "{:<10} {:<6} {:<10} {:>12} {:>12} {:>6}\n",
        "method", "shot", "metric", "mean", "std", "n"
    ));
    for ((method, shot, metric), values) in &groups {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        out.push_str(&format!(
            "{:<10} {:<6} {:<10} {:>12.6} {:>12.6} {:>6}\n",
            method,
            shot,
            metric,
            mean,
            var.sqrt(),
            values.len()
        ));
    }
    Ok(out)
}
