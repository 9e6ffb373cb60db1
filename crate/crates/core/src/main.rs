//! Command-line entry point for the diffusion lab.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pogdiff::config::ExperimentConfig;
use pogdiff::data;
use pogdiff::error::{Error, Result};
use pogdiff::experiment::{
    self, ab_run, collect_records, emit_report, run_experiment, MethodKind,
};
use pogdiff::gaussian::{kl_isotropic, lemma_residual, pog_product, IsotropicGaussian};
use pogdiff::gradcheck::grad_check;
use pogdiff::loss::{pogdiff_loss, TrainBatch};
use pogdiff::nn::{Activation, Denoiser};
use pogdiff::schedule::NoiseSchedule;
use pogdiff::tape::Tape;

#[derive(Parser)]
#[command(name = "pogdiff", version, about = "Desk-scale conditional diffusion A/B lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write dataset.csv.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the full training pipeline and write model.bin plus trace.csv.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "pogdiff")]
        method: String,
    },
    /// Sample from a trained model.bin in --out (requires dataset.csv there).
    Sample {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate samples.csv against dataset.csv in --out.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "pogdiff")]
        method: String,
    },
    /// Run internal numeric self-checks; nonzero exit on any failure.
    VerifyMath,
    /// Run both methods over all configured seeds and print the report.
    AbRun {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Aggregate record.json files under --out into a seed-mean report.
    Report {
        /// Directory containing run subdirectories.
        #[arg(long)]
        out: PathBuf,
        /// Aggregate even when runs come from different configs.
        #[arg(long)]
        force: bool,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn master_seed(cfg: &ExperimentConfig, flag: Option<u64>) -> u64 {
    flag.unwrap_or(cfg.dataset.seed)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common.config)?;
            cfg.validate()?;
            let seed = master_seed(&cfg, common.seed);
            let dataset = experiment::prepare_dataset(&cfg, seed)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("dataset.csv");
            data::write_csv(&dataset, &path)?;
            println!(
                "wrote {} samples across {} identities to {}",
                dataset.samples.len(),
                dataset.identity_counts().len(),
                path.display()
            );
        }
        Command::Train { common, method } => {
            let cfg = load_config(&common.config)?;
            let method = MethodKind::parse(&method)?;
            let seed = master_seed(&cfg, common.seed);
            let record = run_experiment(&cfg, method, seed, &common.out)?;
            println!(
                "trained {method} seed {seed}: artifacts in {}",
                common.out.display()
            );
            for m in &record.metrics {
                println!("  {}/{} = {}", m.shot, m.metric, m.value);
            }
        }
        Command::Sample { common } => {
            let cfg = load_config(&common.config)?;
            cfg.validate()?;
            let seed = master_seed(&cfg, common.seed);
            let dataset = data::read_csv(&common.out.join("dataset.csv"))?;
            let model = Denoiser::load(&common.out.join("model.bin"))?;
            let schedule = NoiseSchedule::linear(
                cfg.schedule.t_steps,
                cfg.schedule.beta_start,
                cfg.schedule.beta_end,
            )?;
            let generated =
                experiment::generate_samples(&cfg, &model, &schedule, &dataset, seed)?;
            let path = common.out.join("samples.csv");
            experiment::write_samples_csv(&generated, dataset.data_dim, &path)?;
            println!("wrote {} samples to {}", generated.len(), path.display());
        }
        Command::Eval { common, method } => {
            let cfg = load_config(&common.config)?;
            cfg.validate()?;
            let method = MethodKind::parse(&method)?;
            let seed = master_seed(&cfg, common.seed);
            let dataset = data::read_csv(&common.out.join("dataset.csv"))?;
            let generated = experiment::read_samples_csv(&common.out.join("samples.csv"))?;
            let rows = experiment::evaluate(&cfg, method, seed, &dataset, &generated)?;
            let path = common.out.join("metrics.csv");
            experiment::write_metrics_csv(&rows, &path)?;
            for m in &rows {
                println!("{}/{} = {}", m.shot, m.metric, m.value);
            }
        }
        Command::VerifyMath => {
            verify_math()?;
        }
        Command::AbRun { common } => {
            let cfg = load_config(&common.config)?;
            let records = ab_run(&cfg, &common.out)?;
            let report = emit_report(&records, false)?;
            std::fs::write(common.out.join("report.txt"), &report)?;
            print!("{report}");
        }
        Command::Report { out, force } => {
            let records = collect_records(&out)?;
            print!("{}", emit_report(&records, force)?);
        }
    }
    Ok(())
}

/// Numeric self-checks over the core identities; prints one line per check.
fn verify_math() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "pass" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // 1. fused-mean decomposition identity on random tuples
    {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst = 0.0f64;
        let mut ok = true;
        for _ in 0..10_000 {
            let d = rng.gen_range(1..=8);
            let v = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()
            };
            let (a, b, c) = (v(&mut rng), v(&mut rng), v(&mut rng));
            let lt = rng.gen_range(0.05..20.0);
            let lyp = rng.gen_range(0.05..20.0);
            let res = lemma_residual(&a, &b, &c, lt, lyp)?;
            worst = worst.max(res.identity_error());
            ok &= res.identity_error() < 1e-9 && res.residual >= -1e-12;
        }
        check("fused-mean decomposition", ok, format!("max error {worst:.3e}"));
    }

    // 2. product of gaussians vs 1-D grid integration
    {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut worst = 0.0f64;
        let mut ok = true;
        for _ in 0..20 {
            let g1 = IsotropicGaussian::new(
                vec![rng.gen_range(-2.0..2.0)],
                rng.gen_range(0.3..5.0),
            )?;
            let g2 = IsotropicGaussian::new(
                vec![rng.gen_range(-2.0..2.0)],
                rng.gen_range(0.3..5.0),
            )?;
            let fused = pog_product(&g1, &g2)?;
            let n = 100_000usize;
            let (lo, hi) = (-10.0, 10.0);
            let h = (hi - lo) / n as f64;
            let mut mass = 0.0;
            let mut first = 0.0;
            for i in 0..n {
                let x = lo + (i as f64 + 0.5) * h;
                let p = g1.pdf(&[x]) * g2.pdf(&[x]);
                mass += p * h;
                first += x * p * h;
            }
            let grid_mean = first / mass;
            let err = (grid_mean - fused.mean()[0]).abs();
            worst = worst.max(err);
            ok &= err < 1e-6;
        }
        check("gaussian product vs grid", ok, format!("max mean error {worst:.3e}"));
    }

    // 3. gradient check of the combined loss
    {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let schedule = NoiseSchedule::linear(20, 1e-3, 0.02)?;
        let mut worst = 0.0f64;
        let mut ok = true;
        for _ in 0..5 {
            let model = Denoiser::random(2, 2, &[6], Activation::Tanh, 20, &mut rng)?;
            let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
                (0..n).map(|_| StandardNormal.sample(rng)).collect()
            };
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
            let parts = pogdiff_loss(&model, &bound, &mut tape, &schedule, &batch, false)?;
            let grads_all = tape.gradients(parts.loss)?;
            let analytic: Vec<_> = bound
                .param_ids()
                .iter()
                .map(|id| grads_all[id.index()].clone())
                .collect();
            let x_dim = 2;
            let y_dim = 2;
            let t_max = 20;
            let template = model.mlp.clone();
            let mut params = model.mlp.params().to_vec();
            let report = grad_check(
                &mut params,
                &analytic,
                |p| {
                    let mut m = template.clone();
                    m.set_params(p.to_vec())?;
                    let probe = Denoiser::from_mlp(m, x_dim, y_dim, t_max)?;
                    let mut tape = Tape::new();
                    let bound = probe.mlp.bind(&mut tape);
                    let parts =
                        pogdiff_loss(&probe, &bound, &mut tape, &schedule, &batch, false)?;
                    Ok(parts.total)
                },
                1e-5,
            )?;
            worst = worst.max(report.score());
            ok &= report.score() < 1e-4;
        }
        check("loss gradient check", ok, format!("max rel error {worst:.3e}"));
    }

    // 4. analytic KL vs direct formula evaluation on swapped arguments
    {
        let g1 = IsotropicGaussian::new(vec![0.5, -1.0], 2.0)?;
        let g2 = IsotropicGaussian::new(vec![0.5, -1.0], 2.0)?;
        let self_kl = kl_isotropic(&g1, &g2)?;
        let g3 = IsotropicGaussian::new(vec![1.5, 0.0], 0.7)?;
        let cross = kl_isotropic(&g1, &g3)?;
        let ok = self_kl.abs() < 1e-12 && cross > 0.0;
        check("kl sanity", ok, format!("self {self_kl:.3e}, cross {cross:.4}"));
    }

    if failures > 0 {
        return Err(Error::Contract(format!("{failures} self-check(s) failed")));
    }
    println!("all self-checks passed");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
