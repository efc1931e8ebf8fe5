use crate::manifest::Manifest;
use crate::suites::{self, Faults, SUITES};
use crate::{out_dir, Failure};
use clap::Args;
use shm_core::calibration::{init_params, CalibrationVariant, Dims};
use shm_core::diagnostics::{
    export_heatmaps, prop3_witness, CorrelationReport, prop4_expected_product, prop5_correlation_ratio, write_cumprod_csv, Prop4Config,
    Prop5Config, SyntheticContexts, ThetaMode,
};
use shm_core::envs::make_supervised_dataset;
use shm_core::episode::{run_sequence, EvalMode};
use shm_core::rng::SeedTree;
use shm_core::trainer::{
    checkpoint, evaluate, supervised_accuracy, train_policy_gradient, train_supervised, Mode, Policy, TrainConfig,
};
use shm_core::{Mat, Real};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Suites to run (memory, scan, gradients, prop3, prop4, prop5, ordering, roundtrip, determinism).
    #[arg(long = "suite")]
    suites: Vec<String>,
    /// Run every suite.
    #[arg(long)]
    all: bool,
    /// Deliberately corrupt a result to check that the harness notices (scan).
    #[arg(long = "inject-fault")]
    inject_fault: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn verify(a: &VerifyArgs, threads: usize) -> Result<(), Failure> {
    let names: Vec<String> = if a.all || a.suites.is_empty() {
        SUITES.iter().map(|s| s.to_string()).collect()
    } else {
        a.suites.clone()
    };
    if let Some(bad) = names.iter().find(|n| !SUITES.contains(&n.as_str())) {
        return Err(Failure::Usage(format!("unknown suite {bad:?}; known suites: {}", SUITES.join(", "))));
    }
    let faults = match a.inject_fault.as_deref() {
        None => Faults::default(),
        Some("scan") => Faults { scan: true },
        Some(other) => return Err(Failure::Usage(format!("unknown fault {other:?}; known faults: scan"))),
    };
    let dir = out_dir(&a.out, "verify");
    std::fs::create_dir_all(&dir)?;
    let mut csv = String::from("suite,status,cases,failures,worst,seconds\n");
    let mut failed = vec![];
    for name in &names {
        let r = suites::run(name, faults)?;
        let status = if r.passed() { "pass" } else { "fail" };
        println!(
            "suite={} status={status} cases={} failures={} worst={:e} seconds={:.2}",
            r.name,
            r.cases,
            r.failures.len(),
            r.worst,
            r.seconds
        );
        for f in &r.failures {
            println!("  FAIL {f}");
        }
        writeln!(csv, "{},{status},{},{},{:e},{:.3}", r.name, r.cases, r.failures.len(), r.worst, r.seconds)
            .expect("writing to a String");
        if !r.passed() {
            failed.push(format!("{}: {}", r.name, r.failures[0]));
        }
    }
    std::fs::write(dir.join("verify.csv"), csv)?;
    let mut m = Manifest::new("verify", threads);
    m.set("suites", names.join(","));
    m.set("inject_fault", a.inject_fault.as_deref().unwrap_or("none"));
    m.write(&dir)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join("; ")))
    }
}

#[derive(Args, Debug)]
pub struct DiagArgs {
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    h: usize,
    /// Monte-Carlo samples for the independence checks.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn diag(a: &DiagArgs, threads: usize) -> Result<(), Failure> {
    let dir = out_dir(&a.out, "diag");
    std::fs::create_dir_all(&dir)?;
    let curves = suites::ordering_curves(a.h, a.episodes, a.steps, a.seed)?;
    write_cumprod_csv(&dir.join("cumprod_curve.csv"), &curves)?;
    let j = a.steps.min(100);
    for c in &curves {
        println!("{:>12} mean_below_one[j={j}] = {:.6e}", c.variant.name(), c.rows[j - 1].mean_below_one);
    }

    let p4 = prop4_expected_product(&Prop4Config { samples: a.samples, seed: a.seed, ..Default::default() })?;
    p4.write_csv(&dir.join("prop4.csv"))?;
    println!("prop4: max |mean - 1| / SE = {:.3}", p4.max_z());

    let mut rows = String::from(CorrelationReport::CSV_HEADER);
    for mode in [ThetaMode::RandomRows, ThetaMode::Fixed] {
        let r = prop5_correlation_ratio(&Prop5Config { samples: a.samples, theta_mode: mode, seed: a.seed, ..Default::default() })?;
        rows.push_str(&r.csv_rows());
        let worst = r.pairs.iter().map(|p| p.rho_uv.abs() / p.rho_v.abs()).fold(0.0, Real::max);
        println!("prop5 ({}): max |rho_uv| / |rho_v| = {worst:.4}", mode.name());
    }
    std::fs::write(dir.join("prop5.csv"), rows)?;

    let mut p3 = String::from("theta,steps,predicted,product,observed\n");
    for (theta, steps) in [(0.5, 10), (0.9, 200), (1.0, 200), (1.05, 1000)] {
        let w = prop3_witness(&Mat::filled(1, 1, theta), steps)[0];
        writeln!(p3, "{theta},{steps},{},{:.17e},{}", w.predicted.name(), w.product, w.observed.name())
            .expect("writing to a String");
    }
    std::fs::write(dir.join("prop3.csv"), p3)?;

    let tree = SeedTree::new(a.seed);
    let ctx = SyntheticContexts::default();
    let params = init_params(Dims::new(ctx.d, a.h, 128)?, CalibrationVariant::ShmRandomTheta, &mut tree.stream("init", 0))?;
    let xs = ctx.generate(a.steps, &mut tree.stream("env", 0))?;
    let trace = run_sequence(&params, &xs, EvalMode::Sequential, &mut tree.stream("theta", 0))?;
    let picks: Vec<usize> = [1, a.steps / 4, a.steps / 2, a.steps].into_iter().filter(|t| *t >= 1).collect();
    let mut picks = picks;
    picks.dedup();
    export_heatmaps(&trace, &picks, 0, &dir.join("heatmaps"))?;

    let mut m = Manifest::new("diag", threads);
    m.set("seed", a.seed);
    m.set("episodes", a.episodes);
    m.set("steps", a.steps);
    m.set("h", a.h);
    m.set("samples", a.samples);
    m.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (`key=value`); repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Number of consecutive seeds to run, starting at the configured seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> Result<TrainConfig, Failure> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_text(
            &std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        )?,
        None => TrainConfig::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Usage(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs, threads: usize) -> Result<(), Failure> {
    let base = load_config(&a.config, &a.overrides)?;
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let dir = out_dir(&a.out, "train");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.txt"), base.to_text())?;
    let mut m = Manifest::new("train", threads);
    m.set("config_hash", base.hash());
    m.set("seed", base.seed);
    m.set("seeds", a.seeds);
    m.set("mode", match base.mode {
        Mode::Supervised => "supervised",
        Mode::Rl => "rl",
    });
    let mut abort = None;
    for s in 0..a.seeds {
        let mut cfg = base.clone();
        cfg.seed = base.seed + s;
        let out = match cfg.mode {
            Mode::Supervised => train_supervised(&cfg)?,
            Mode::Rl => train_policy_gradient(&cfg)?,
        };
        let tag = format!("seed{}", cfg.seed);
        std::fs::write(dir.join(format!("report_{tag}.csv")), out.report.to_csv())?;
        let mut timing = String::from("step,seconds_per_update\n");
        for (step, secs) in &out.report.wall_clock {
            writeln!(timing, "{step},{secs:.6e}").expect("writing to a String");
        }
        std::fs::write(dir.join(format!("timing_{tag}.csv")), timing)?;
        checkpoint::save(&out.agent, &dir.join(format!("checkpoint_{tag}.bin")))?;
        let summary = match cfg.mode {
            Mode::Supervised => format!("accuracy {:.4}", out.report.last("accuracy").unwrap_or(Real::NAN)),
            Mode::Rl => format!(
                "success_rate {:.4} mean_return {:.4}",
                out.report.last("success_rate").unwrap_or(Real::NAN),
                out.report.last("mean_return").unwrap_or(Real::NAN)
            ),
        };
        println!("seed {}: {summary} clip_events {}", cfg.seed, out.report.clip_events);
        if let Some(e) = out.aborted {
            abort = Some(format!("seed {}: {e}; last good parameters saved", cfg.seed));
            break;
        }
    }
    m.write(&dir)?;
    match abort {
        Some(msg) => Err(Failure::Numeric(msg)),
        None => Ok(()),
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// greedy, sampled, random or clairvoyant.
    #[arg(long, default_value = "greedy")]
    policy: String,
    #[arg(long, default_value_t = 12345)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs, threads: usize) -> Result<(), Failure> {
    let cfg = load_config(&a.config, &a.overrides)?;
    let agent = checkpoint::load(&a.checkpoint, Some((cfg.dims()?, cfg.variant)))?;
    let dir = out_dir(&a.out, "eval");
    std::fs::create_dir_all(&dir)?;
    let mut csv = String::from("metric,value,episodes,policy,seed\n");
    match cfg.mode {
        Mode::Supervised => {
            let data = make_supervised_dataset(cfg.supervised_task(), a.episodes, a.seed)?;
            let acc = supervised_accuracy(&agent, &data, a.seed)?;
            println!("accuracy {acc:.4} over {} sequences", a.episodes);
            writeln!(csv, "accuracy,{acc:.17e},{},greedy,{}", a.episodes, a.seed).expect("writing to a String");
        }
        Mode::Rl => {
            let policy = match a.policy.as_str() {
                "greedy" => Policy::Greedy(&agent),
                "sampled" => Policy::Sampled(&agent),
                "random" => Policy::Random,
                "clairvoyant" => Policy::Clairvoyant,
                other => return Err(Failure::Usage(format!("unknown policy {other:?}"))),
            };
            let r = evaluate(&cfg, policy, a.episodes, a.seed)?;
            println!(
                "success_rate {:.4} ± {:.4} mean_return {:.4} ± {:.4} over {} episodes",
                r.success_rate,
                r.success_std_err(),
                r.mean_return,
                r.std_return,
                r.episodes
            );
            for (k, v) in [("success_rate", r.success_rate), ("mean_return", r.mean_return), ("std_return", r.std_return)] {
                writeln!(csv, "{k},{v:.17e},{},{},{}", a.episodes, a.policy, a.seed).expect("writing to a String");
            }
        }
    }
    std::fs::write(dir.join("eval.csv"), csv)?;
    let mut m = Manifest::new("eval", threads);
    m.set("config_hash", cfg.hash());
    m.set("seed", a.seed);
    m.set("checkpoint", a.checkpoint.display());
    m.write(&dir)?;
    Ok(())
}
