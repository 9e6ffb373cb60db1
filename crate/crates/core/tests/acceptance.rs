//! Acceptance suite: one test per acceptance criterion, each printing a
//! single pass/fail line (visible with `cargo test -- --nocapture`).

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pogdiff::config::ExperimentConfig;
use pogdiff::experiment::{ab_run, fit_density, prepare_dataset, run_experiment, MethodKind};
use pogdiff::gaussian::{lemma_residual, pog_product, IsotropicGaussian};
use pogdiff::gradcheck::grad_check;
use pogdiff::loss::{pogdiff_loss, TrainBatch};
use pogdiff::metrics::{coverage_match, grecall, toy_fid};
use pogdiff::neighbors::img_similarity;
use pogdiff::nn::{Activation, Denoiser};
use pogdiff::schedule::NoiseSchedule;
use pogdiff::tape::Tape;

fn report(name: &str, ok: bool, detail: &str) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

/// The two-target quadratic form around the fused mean decomposes exactly,
/// with a non-negative residual, across random dimensions and precisions.
#[test]
fn criterion_fused_mean_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..10_000 {
        let d = rng.gen_range(1..=8);
        fn v(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
            (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()
        }
        let (a, b, c) = (v(&mut rng, d), v(&mut rng, d), v(&mut rng, d));
        let lt = rng.gen_range(0.05..20.0);
        let lyp = rng.gen_range(0.05..20.0);
        let res = lemma_residual(&a, &b, &c, lt, lyp).unwrap();
        worst = worst.max(res.identity_error());
        ok &= res.identity_error() < 1e-9 && res.residual >= -1e-12;
    }
    report(
        "fused-mean decomposition (10^4 tuples, d <= 8)",
        ok,
        &format!("max identity error {worst:.3e} (tol 1e-9)"),
    );
}

/// Closed-form product of two Gaussians matches brute-force grid integration
/// of the renormalized pointwise product.
#[test]
fn criterion_gaussian_product_vs_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..100 {
        let g1 =
            IsotropicGaussian::new(vec![rng.gen_range(-2.0..2.0)], rng.gen_range(0.3..5.0))
                .unwrap();
        let g2 =
            IsotropicGaussian::new(vec![rng.gen_range(-2.0..2.0)], rng.gen_range(0.3..5.0))
                .unwrap();
        let fused = pog_product(&g1, &g2).unwrap();
        let n = 100_000usize;
        let (lo, hi) = (-10.0f64, 10.0f64);
        let h = (hi - lo) / n as f64;
        let (mut mass, mut first, mut second) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            let p = g1.pdf(&[x]) * g2.pdf(&[x]);
            mass += p * h;
            first += x * p * h;
            second += x * x * p * h;
        }
        let grid_mean = first / mass;
        let grid_var = second / mass - grid_mean * grid_mean;
        let mean_err = (grid_mean - fused.mean()[0]).abs();
        let var_err = (grid_var - fused.variance()).abs();
        worst = worst.max(mean_err).max(var_err);
        ok &= mean_err < 1e-6 && var_err < 1e-6;
    }
    report(
        "gaussian product vs grid integration (100 pairs)",
        ok,
        &format!("max moment error {worst:.3e} (tol 1e-6)"),
    );
}

/// Analytic gradients of the combined loss agree with central differences in
/// both neighbor-gradient modes, within budget.
#[test]
fn criterion_loss_gradient_check() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let schedule = NoiseSchedule::linear(20, 1e-3, 0.02).unwrap();
    let mut worst = 0.0f64;
    let mut ok = true;
    for instance in 0..100 {
        let stop_grad = instance % 2 == 1;
        let model = Denoiser::random(2, 2, &[6], Activation::Tanh, 20, &mut rng).unwrap();
        fn draw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        }
        let batch = TrainBatch {
            x0: vec![draw(&mut rng, 2), draw(&mut rng, 2)],
            y: vec![draw(&mut rng, 2), draw(&mut rng, 2)],
            y_prime: vec![draw(&mut rng, 2), draw(&mut rng, 2)],
            psi: vec![rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)],
            t: vec![rng.gen_range(1..=20), rng.gen_range(1..=20)],
            eps: vec![draw(&mut rng, 2), draw(&mut rng, 2)],
        };
        let mut tape = Tape::new();
        let bound = model.mlp.bind(&mut tape);
        let parts =
            pogdiff_loss(&model, &bound, &mut tape, &schedule, &batch, stop_grad).unwrap();
        let grads_all = tape.gradients(parts.loss).unwrap();
        let analytic: Vec<_> = bound
            .param_ids()
            .iter()
            .map(|id| grads_all[id.index()].clone())
            .collect();
        // with the neighbor branch detached, the finite-difference oracle
        // must hold the neighbor prediction at its unperturbed value too
        let frozen_neighbors: Vec<Vec<f64>> = (0..batch.len())
            .map(|i| {
                let x_t = schedule.q_sample(&batch.x0[i], batch.t[i], &batch.eps[i]).unwrap();
                model.predict(&x_t, batch.t[i], &batch.y_prime[i]).unwrap()
            })
            .collect();
        let template = model.mlp.clone();
        let mut params = model.mlp.params().to_vec();
        let rep = grad_check(
            &mut params,
            &analytic,
            |p| {
                let mut m = template.clone();
                m.set_params(p.to_vec())?;
                let probe = Denoiser::from_mlp(m, 2, 2, 20)?;
                if !stop_grad {
                    let mut tape = Tape::new();
                    let bound = probe.mlp.bind(&mut tape);
                    return Ok(
                        pogdiff_loss(&probe, &bound, &mut tape, &schedule, &batch, false)?.total
                    );
                }
                let mut total = 0.0;
                for i in 0..batch.len() {
                    let x_t = schedule.q_sample(&batch.x0[i], batch.t[i], &batch.eps[i])?;
                    let pred = probe.predict(&x_t, batch.t[i], &batch.y[i])?;
                    let t1: f64 = pred
                        .iter()
                        .zip(&batch.eps[i])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let t2: f64 = pred
                        .iter()
                        .zip(&frozen_neighbors[i])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    total += t1 + batch.psi[i] * t2;
                }
                Ok(total / batch.len() as f64)
            },
            1e-5,
        )
        .unwrap();
        worst = worst.max(rep.score());
        ok &= rep.score() < 1e-4;
    }
    let elapsed = started.elapsed().as_secs_f64();
    ok &= elapsed < 30.0;
    report(
        "loss gradient check (100 instances, both neighbor modes)",
        ok,
        &format!("max rel error {worst:.3e} (tol 1e-4), {elapsed:.1}s (budget 30s)"),
    );
}

/// Running the weighted method with psi forced to 0 produces bit-identical
/// artifacts to the vanilla method.
#[test]
fn criterion_psi_zero_is_vanilla_bitwise() {
    let mut cfg = ExperimentConfig::default();
    cfg.training.steps = 60;
    cfg.training.batch = 4;
    cfg.vae.epochs = 20;
    cfg.eval.samples_per_identity = 4;
    cfg.eval.ddim_steps = 10;
    cfg.model.hidden = vec![16];
    let d_vanilla = tempfile::tempdir().unwrap();
    let d_forced = tempfile::tempdir().unwrap();
    run_experiment(&cfg, MethodKind::Vanilla, 17, d_vanilla.path()).unwrap();
    let mut cfg_forced = cfg.clone();
    cfg_forced.training.psi_override = Some(0.0);
    run_experiment(&cfg_forced, MethodKind::Pogdiff, 17, d_forced.path()).unwrap();
    let mut ok = true;
    let mut detail = String::from("trace.csv, model.bin, samples.csv identical");
    for name in ["trace.csv", "model.bin", "samples.csv"] {
        let a = std::fs::read(d_vanilla.path().join(name)).unwrap();
        let b = std::fs::read(d_forced.path().join(name)).unwrap();
        if a != b {
            ok = false;
            detail = format!("{name} differs between vanilla and psi=0");
        }
    }
    report("psi = 0 reduces to vanilla bit-for-bit", ok, &detail);
}

/// Recall worked examples on the 30-vs-2 layout: covered sets (1, 0),
/// (16, 0), and (18, 2) give the three reference averages.
#[test]
fn criterion_grecall_worked_examples() {
    // orthogonal one-hot embeddings: a generated copy of training image i
    // covers exactly image i; an extra axis covers nothing
    let dim = 33;
    let onehot = |i: usize| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    };
    let mut training: BTreeMap<String, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    training.insert("A".into(), (0..30).map(|i| (i, onehot(i))).collect());
    training.insert("B".into(), (30..32).map(|i| (i, onehot(i))).collect());
    let run = |a_cover: usize, b_cover: usize| -> f64 {
        let mut generated = Vec::new();
        for i in 0..a_cover {
            generated.push(("A".to_string(), onehot(i)));
        }
        for i in 0..b_cover {
            generated.push(("B".to_string(), onehot(30 + i)));
        }
        // off-target generations that cover nothing
        generated.push(("A".to_string(), onehot(32)));
        generated.push(("B".to_string(), onehot(32)));
        let rep = coverage_match(&generated, &training, 0.7).unwrap();
        grecall(&rep).unwrap()
    };
    let cases = [
        (1, 0, 0.5 * 1.0 / 30.0),
        (16, 0, 0.5 * 16.0 / 30.0),
        (18, 2, 0.8),
    ];
    let mut worst = 0.0f64;
    let mut ok = true;
    for (a, b, expect) in cases {
        let got = run(a, b);
        worst = worst.max((got - expect).abs());
        ok &= (got - expect).abs() < 1e-4;
    }
    report(
        "recall worked examples (0.0167 / 0.2667 / 0.8)",
        ok,
        &format!("max deviation {worst:.2e} (tol 1e-4)"),
    );
}

/// Identity-aware similarity worked examples: 0.4^1 and 0.4^2.
#[test]
fn criterion_similarity_worked_examples() {
    let same = img_similarity(0.4, true, 1.0, 1.0);
    let diff = img_similarity(0.4, false, 1.0, 1.0);
    let ok = same == 0.4 && (diff - 0.16).abs() < 1e-15;
    report(
        "identity similarity worked examples (0.4 / 0.16)",
        ok,
        &format!("same {same}, different {diff}"),
    );
}

/// The density VAE assigns lower ELBO (lower density) to the 2-sample
/// minority identity than to the 30-sample majority, on every seed.
#[test]
fn criterion_density_ordering() {
    let cfg = ExperimentConfig::default();
    let mut ok = true;
    let mut detail = String::new();
    for seed in [0u64, 1, 2] {
        let dataset = prepare_dataset(&cfg, seed).unwrap();
        let (_vae, elbo) = fit_density(&cfg, &dataset, seed).unwrap();
        let mut by_id: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for s in &dataset.samples {
            by_id
                .entry(s.identity.as_str())
                .or_default()
                .push(elbo.get(s.sample_id).unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let majority = mean(&by_id["A"]);
        let minority = mean(&by_id["B"]);
        ok &= minority < majority;
        detail.push_str(&format!(
            "seed {seed}: minority {minority:.2} vs majority {majority:.2}; "
        ));
    }
    report("density ordering on 30-vs-2 (3/3 seeds)", ok, &detail);
}

/// Seed-mean few-shot recall of the weighted method is at least the vanilla
/// baseline's, within the wall-time budget.
#[test]
fn criterion_ab_few_shot_recall() {
    let started = Instant::now();
    let cfg = ExperimentConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let records = ab_run(&cfg, dir.path()).unwrap();
    let mean_few = |method: &str| -> f64 {
        let vals: Vec<f64> = records
            .iter()
            .flat_map(|r| &r.metrics)
            .filter(|m| m.method == method && m.shot == "few" && m.metric == "grecall")
            .map(|m| m.value)
            .collect();
        assert_eq!(vals.len(), cfg.eval.seeds.len());
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let pog = mean_few("pogdiff");
    let van = mean_few("vanilla");
    let elapsed = started.elapsed().as_secs_f64();
    let ok = pog >= van && elapsed < 600.0;
    report(
        "A/B few-shot recall (3 seeds)",
        ok,
        &format!("pogdiff {pog:.4} vs vanilla {van:.4}, {elapsed:.0}s (budget 600s)"),
    );
}

/// Simulating the forward chain step by step reproduces the closed-form
/// marginal moments at early, middle, and final timesteps.
#[test]
fn criterion_forward_marginals() {
    let t_max = 100;
    let schedule = NoiseSchedule::linear(t_max, 1e-4, 0.02).unwrap();
    let x0 = 1.3f64;
    let n = 100_000usize;
    let checkpoints = [1usize, t_max / 2, t_max];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for _ in 0..n {
        let mut x = x0;
        for t in 1..=t_max {
            let beta = schedule.beta(t);
            let e: f64 = StandardNormal.sample(&mut rng);
            x = (1.0 - beta).sqrt() * x + beta.sqrt() * e;
            if checkpoints.contains(&t) {
                let s = sums.entry(t).or_insert((0.0, 0.0));
                s.0 += x;
                s.1 += x * x;
            }
        }
    }
    let mut ok = true;
    let mut detail = String::new();
    for t in checkpoints {
        let (s1, s2) = sums[&t];
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let ab = schedule.alpha_bar(t);
        let expect_mean = ab.sqrt() * x0;
        let expect_var = 1.0 - ab;
        let se_mean = (expect_var / n as f64).sqrt();
        let se_var = expect_var * (2.0 / (n as f64 - 1.0)).sqrt();
        // 1e-9 floors keep the t = 1 check meaningful when the variance is
        // tiny but nonzero
        let ok_t = (mean - expect_mean).abs() < 3.0 * se_mean.max(1e-9)
            && (var - expect_var).abs() < 3.0 * se_var.max(1e-9);
        ok &= ok_t;
        detail.push_str(&format!(
            "t={t}: |dmean| {:.1e} (3se {:.1e}), |dvar| {:.1e} (3se {:.1e}); ",
            (mean - expect_mean).abs(),
            3.0 * se_mean,
            (var - expect_var).abs(),
            3.0 * se_var
        ));
    }
    report(
        "forward chain matches closed-form marginals (10^5 samples)",
        ok,
        &detail,
    );
}

/// Distribution-distance sanity: zero on identical sets, symmetric, and
/// equal to the squared mean offset for matched covariances.
#[test]
fn criterion_fid_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draw = |rng: &mut ChaCha8Rng, n: usize, offset: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                offset
                    .iter()
                    .map(|o| {
                        let e: f64 = StandardNormal.sample(rng);
                        o + e
                    })
                    .collect()
            })
            .collect()
    };
    let a = draw(&mut rng, 10_000, &[0.0, 0.0]);
    let self_fid = toy_fid(&a, &a).unwrap();
    let b = draw(&mut rng, 10_000, &[3.0, 4.0]);
    let ab = toy_fid(&a, &b).unwrap();
    let ba = toy_fid(&b, &a).unwrap();
    let expect = 25.0;
    let rel = (ab - expect).abs() / expect;
    let ok = self_fid < 1e-10 && (ab - ba).abs() < 1e-10 && rel < 0.02;
    report(
        "distribution distance properties",
        ok,
        &format!(
            "self {self_fid:.1e} (tol 1e-10), asymmetry {:.1e} (tol 1e-10), offset rel err {rel:.4} (tol 0.02)",
            (ab - ba).abs()
        ),
    );
}
