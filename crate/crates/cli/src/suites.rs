//! Verification suites behind `shm verify`.

use rand::Rng;
use rand_distr::StandardNormal;
use shm_core::autograd::{backward, clip_gradients, finite_difference_oracle};
use shm_core::calibration::{init_params, CalibrationVariant, Dims, ShmParams, VariantParams};
use shm_core::diagnostics::{
    bootstrap_less, cumulative_product_curve, export_heatmaps, prop3_witness, prop4_expected_product,
    prop5_correlation_ratio, read_heatmap, GradientRegime, Prop4Config, Prop5Config, SyntheticContexts, ThetaMode,
};
use shm_core::episode::{run_sequence, run_sequence_taped, EvalMode};
use shm_core::memory::{max_rel_diff, max_rel_diff_states, ContextInput};
use shm_core::rng::{rng_from_seed, SeedTree};
use shm_core::scan::{ceil_log2, parallel_scan_with, ScanOptions};
use shm_core::trainer::{checkpoint, Agent, TrainConfig};
use shm_core::{Mat, Real, Result};
use std::time::Instant;

pub const SUITES: [&str; 9] =
    ["memory", "scan", "gradients", "prop3", "prop4", "prop5", "ordering", "roundtrip", "determinism"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Perturb one scan output entry before it is compared.
    pub scan: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failures: Vec<String>,
    /// Largest observed error statistic (suite-specific).
    pub worst: Real,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Tally {
    cases: usize,
    failures: Vec<String>,
    worst: Real,
}

impl Tally {
    fn new() -> Self {
        Tally { cases: 0, failures: vec![], worst: 0.0 }
    }

    fn check(&mut self, ok: bool, stat: Real, what: impl FnOnce() -> String) {
        self.cases += 1;
        if stat.is_finite() {
            self.worst = self.worst.max(stat);
        } else {
            self.worst = Real::INFINITY;
        }
        if !ok {
            self.failures.push(what());
        }
    }
}

pub fn run(name: &str, faults: Faults) -> Result<SuiteResult> {
    let started = Instant::now();
    let tally = match name {
        "memory" => memory()?,
        "scan" => scan(faults)?,
        "gradients" => gradients()?,
        "prop3" => prop3()?,
        "prop4" => prop4()?,
        "prop5" => prop5()?,
        "ordering" => ordering()?,
        "roundtrip" => roundtrip()?,
        "determinism" => determinism()?,
        other => return Err(shm_core::Error::Config(format!("unknown suite {other:?}"))),
    };
    Ok(SuiteResult {
        name: name.to_string(),
        cases: tally.cases,
        failures: tally.failures,
        worst: tally.worst,
        seconds: started.elapsed().as_secs_f64(),
    })
}

struct RandomCase {
    params: ShmParams,
    xs: Vec<ContextInput>,
    seed: u64,
}

fn random_case(tree: &SeedTree, i: u64, max_t: usize, max_h: usize, max_d: usize) -> Result<RandomCase> {
    let mut rng = tree.stream("case", i);
    let t = rng.random_range(1..=max_t);
    let h = rng.random_range(2..=max_h);
    let d = rng.random_range(1..=max_d);
    let variant = CalibrationVariant::ALL[rng.random_range(0..CalibrationVariant::ALL.len())];
    let params = init_params(Dims::new(d, h, 16)?, variant, &mut rng)?;
    let xs = (0..t).map(|_| ContextInput((0..d).map(|_| rng.sample::<Real, _>(StandardNormal)).collect())).collect();
    Ok(RandomCase { params, xs, seed: tree.seed("theta", i) })
}

fn memory() -> Result<Tally> {
    let tree = SeedTree::new(11);
    let mut tally = Tally::new();
    for i in 0..100 {
        let c = random_case(&tree, i, 256, 16, 8)?;
        let seq = run_sequence(&c.params, &c.xs, EvalMode::Sequential, &mut rng_from_seed(c.seed))?;
        let closed = run_sequence(&c.params, &c.xs, EvalMode::ClosedForm, &mut rng_from_seed(c.seed))?;
        let scan = run_sequence(&c.params, &c.xs, EvalMode::Scan, &mut rng_from_seed(c.seed))?;
        let d = max_rel_diff_states(&seq.states, &closed.states).max(max_rel_diff_states(&seq.states, &scan.states));
        tally.check(d <= 1e-10, d, || {
            format!("memory case {i} ({}, T={}, H={}): max rel diff {d:e}", c.params.variant, c.xs.len(), c.params.dims.h)
        });
    }
    // C = 1 reduces to plain accumulation.
    for i in 0..10 {
        let mut c = random_case(&tree, 1000 + i, 64, 8, 4)?;
        c.params.variant = CalibrationVariant::AllOnes;
        c.params.extra = VariantParams::None;
        let tr = run_sequence(&c.params, &c.xs, EvalMode::Sequential, &mut rng_from_seed(c.seed))?;
        let h = c.params.dims.h;
        let mut acc = Mat::zeros(h, h);
        let mut worst: Real = 0.0;
        for (u, m) in tr.us.iter().zip(&tr.states[1..]) {
            acc = acc.add(&u.0);
            worst = worst.max(max_rel_diff(&acc, &m.m));
        }
        tally.check(worst <= 1e-12, worst, || format!("all-ones case {i}: additive mismatch {worst:e}"));
    }
    Ok(tally)
}

fn scan(faults: Faults) -> Result<Tally> {
    let mut tally = Tally::new();
    for t in [1usize, 2, 7, 64, 257, 1024] {
        let mut rng = rng_from_seed(t as u64);
        let h = 2;
        let cs: Vec<_> = (0..t)
            .map(|_| shm_core::CalMatrix(Mat::from_fn(h, h, |_, _| rng.random_range(0.5..1.5))))
            .collect();
        let us: Vec<_> = (0..t).map(|_| shm_core::UpdMatrix(Mat::uniform(h, h, 1.0, &mut rng))).collect();
        let (_, stats) = parallel_scan_with(&shm_core::MemoryState::zeros(h), &cs, &us, &ScanOptions::default())?;
        let want = ceil_log2(t + 1);
        tally.check(stats.levels == want, stats.levels.abs_diff(want) as Real, || {
            format!("scan depth T={t}: {} levels, expected {want}", stats.levels)
        });
    }
    let tree = SeedTree::new(12);
    for i in 0..30 {
        let c = random_case(&tree, i, 256, 16, 8)?;
        let seq = run_sequence(&c.params, &c.xs, EvalMode::Sequential, &mut rng_from_seed(c.seed))?;
        let mut scan = run_sequence(&c.params, &c.xs, EvalMode::Scan, &mut rng_from_seed(c.seed))?;
        if faults.scan && i == 7 {
            let mid = scan.states.len() / 2;
            let cell = &mut scan.states[mid].m.as_mut_slice()[0];
            *cell += 1e-3 * cell.abs().max(1.0);
        }
        let d = max_rel_diff_states(&seq.states, &scan.states);
        tally.check(d <= 1e-10, d, || {
            format!("scan case {i} ({}, T={}, H={}): max rel diff {d:e}", c.params.variant, c.xs.len(), c.params.dims.h)
        });
        // Chunking must not change a single bit.
        let a = parallel_scan_with(&seq.states[0], &seq.cs, &seq.us, &ScanOptions { tile: 3 })?.0;
        let b = parallel_scan_with(&seq.states[0], &seq.cs, &seq.us, &ScanOptions { tile: 64 })?.0;
        let same = a.iter().zip(&b).all(|(x, y)| x.m == y.m);
        tally.check(same, 0.0, || format!("scan case {i}: results depend on tile size"));
    }
    Ok(tally)
}

/// Backward pass against central differences on a quadratic read loss.
pub fn gradient_case(params: &ShmParams, xs: &[ContextInput], seed: u64) -> Result<(Real, String)> {
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let h = params.dims.h;
    let y: Vec<Vec<Real>> = xs.iter().map(|_| (0..h).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let trace = run_sequence_taped(params, xs, &mut rng_from_seed(seed))?;
    let dl_dh: Vec<Vec<Real>> =
        trace.reads.iter().zip(&y).map(|(r, y)| r.iter().zip(y).map(|(a, b)| a - b).collect()).collect();
    let analytic = backward(&trace, &dl_dh)?;
    let numeric = finite_difference_oracle(params, 1e-5, |p| {
        let tr = run_sequence(p, xs, EvalMode::Sequential, &mut rng_from_seed(seed))?;
        Ok(tr.reads.iter().zip(&y).flat_map(|(r, y)| r.iter().zip(y).map(|(a, b)| 0.5 * (a - b) * (a - b))).sum())
    })?;
    let mut worst = (0.0, String::new());
    for (a, n) in analytic.tensors.iter().zip(&numeric) {
        for (i, (x, z)) in a.values.iter().zip(&n.values).enumerate() {
            if x.abs() > 1e-8 {
                let r = (x - z).abs() / x.abs().max(z.abs());
                if r > worst.0 {
                    worst = (r, format!("{}[{i}]", a.name));
                }
            }
        }
    }
    Ok(worst)
}

fn gradients() -> Result<Tally> {
    let tree = SeedTree::new(13);
    let mut tally = Tally::new();
    for i in 0..20 {
        let c = random_case(&tree, i, 8, 6, 4)?;
        let (err, at) = gradient_case(&c.params, &c.xs, c.seed)?;
        tally.check(err <= 1e-4, err, || format!("gradient case {i} ({}): rel err {err:e} at {at}", c.params.variant));
        let trace = run_sequence_taped(&c.params, &c.xs, &mut rng_from_seed(c.seed))?;
        let big: Vec<Vec<Real>> = trace.reads.iter().map(|r| vec![1e150; r.len()]).collect();
        if let Ok(g) = backward(&trace, &big) {
            let clipped = clip_gradients(&g, 1.0)?;
            let finite = clipped.is_finite();
            tally.check(finite, 0.0, || format!("gradient case {i}: non-finite entry after clipping"));
        }
    }
    Ok(tally)
}

fn prop3() -> Result<Tally> {
    let mut tally = Tally::new();
    let params = {
        let mut p = init_params(Dims::new(8, 4, 4)?, CalibrationVariant::FixedC, &mut rng_from_seed(0))?;
        p.extra = VariantParams::FixedC(Mat::filled(4, 4, 0.5));
        p
    };
    let stats = cumulative_product_curve(&params, &SyntheticContexts::default(), 4, 40, 3)?;
    for r in &stats.rows {
        let want = (0.5 as Real).powi(r.step as i32);
        let err = (r.mean_below_one - want).abs();
        tally.check(err <= 1e-12, err, || format!("prop3 step {}: {} vs {want}", r.step, r.mean_below_one));
    }
    for (value, steps, regime) in [
        (0.9, 200, GradientRegime::Vanishing),
        (1.0, 200, GradientRegime::Marginal),
        (1.05, 1000, GradientRegime::Exploding),
    ] {
        let w = prop3_witness(&Mat::filled(1, 1, value), steps)[0];
        tally.check(w.predicted == regime && w.consistent(), 0.0, || {
            format!("prop3 |theta|={value}: predicted {}, observed {}", w.predicted.name(), w.observed.name())
        });
    }
    Ok(tally)
}

fn prop4() -> Result<Tally> {
    let mut tally = Tally::new();
    for (steps, h) in [(50, 4), (10, 2)] {
        let r = prop4_expected_product(&Prop4Config { steps, h, ..Default::default() })?;
        let z = r.max_z();
        tally.check(z <= 3.0, z, || format!("prop4 T={steps} H={h}: max |mean-1|/SE = {z:.3}"));
    }
    Ok(tally)
}

fn prop5() -> Result<Tally> {
    let mut tally = Tally::new();
    for (mode, dependence) in [(ThetaMode::RandomRows, 0.9), (ThetaMode::RandomRows, 0.5), (ThetaMode::Fixed, 0.9)] {
        let r = prop5_correlation_ratio(&Prop5Config { theta_mode: mode, dependence, ..Default::default() })?;
        for p in &r.pairs {
            let ok = match mode {
                ThetaMode::RandomRows => p.bound_holds(),
                ThetaMode::Fixed => p.equality_holds(),
            };
            let excess = (p.rho_uv.abs() - p.rho_v.abs()) / p.std_err;
            tally.check(ok, excess.max(0.0), || {
                format!("prop5 {} rho={dependence} pair ({}, {}): rho_uv {} rho_v {}", mode.name(), p.m, p.k, p.rho_uv, p.rho_v)
            });
        }
    }
    Ok(tally)
}

pub fn ordering_curves(h: usize, episodes: usize, steps: usize, seed: u64) -> Result<Vec<shm_core::diagnostics::CumProductStats>> {
    let ctx = SyntheticContexts::default();
    CalibrationVariant::ALL
        .iter()
        .map(|&v| {
            let mut rng = SeedTree::new(seed).stream("init", 0);
            let mut p = init_params(Dims::new(ctx.d, h, 128)?, v, &mut rng)?;
            if v == CalibrationVariant::FixedC {
                p.extra = VariantParams::FixedC(Mat::filled(h, h, 0.5));
            }
            cumulative_product_curve(&p, &ctx, episodes, steps, seed)
        })
        .collect()
}

fn ordering() -> Result<Tally> {
    use CalibrationVariant::*;
    let mut tally = Tally::new();
    let curves = ordering_curves(8, 100, 100, 5)?;
    let get = |v: CalibrationVariant| &curves[CalibrationVariant::ALL.iter().position(|x| *x == v).expect("listed")];
    for (a, b, strict) in [(FixedC, NeuralTheta, true), (NeuralTheta, FixedTheta, false), (FixedTheta, ShmRandomTheta, true)] {
        let conf = bootstrap_less(get(a), get(b), 100, 1000, strict, 9)?;
        tally.check(conf >= 0.95, 1.0 - conf, || format!("ordering {a} < {b}: bootstrap confidence {conf}"));
    }
    let at10 = get(FixedC).rows[9].mean_below_one;
    tally.check(at10 < 1e-2, at10, || format!("fixed_c at step 10: {at10}"));
    Ok(tally)
}

fn roundtrip() -> Result<Tally> {
    let mut tally = Tally::new();
    let dir = std::env::temp_dir().join(format!("shm-verify-{}", std::process::id()));
    let params = init_params(Dims::new(4, 5, 16)?, CalibrationVariant::ShmRandomTheta, &mut rng_from_seed(1))?;
    let xs = SyntheticContexts { d: 4, ..Default::default() }.generate(12, &mut rng_from_seed(2))?;
    let trace = run_sequence(&params, &xs, EvalMode::Sequential, &mut rng_from_seed(3))?;
    let files = export_heatmaps(&trace, &[1, 6, 12], 0, &dir)?;
    for f in &files {
        let hm = read_heatmap(f)?;
        let original = match hm.kind {
            shm_core::diagnostics::HeatmapKind::Memory => &trace.states[hm.step].m,
            shm_core::diagnostics::HeatmapKind::Calibration => &trace.cs[hm.step - 1].0,
        };
        tally.check(&hm.matrix == original, 0.0, || format!("heatmap {} does not round-trip", f.display()));
    }
    let cfg = TrainConfig::default();
    let agent = Agent::init(&cfg)?;
    let back = checkpoint::decode(&checkpoint::encode(&agent), Some((cfg.dims()?, cfg.variant)))?;
    tally.check(back == agent, 0.0, || "checkpoint does not round-trip".into());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(tally)
}

fn determinism() -> Result<Tally> {
    let mut tally = Tally::new();
    let cfg = TrainConfig {
        length: 12,
        h: 6,
        l: 16,
        epochs: 2,
        eval_every: 1,
        dataset_size: 32,
        test_size: 16,
        batch: 8,
        lr: 1e-2,
        ..Default::default()
    };
    let a = shm_core::trainer::train_supervised(&cfg)?;
    let b = shm_core::trainer::train_supervised(&cfg)?;
    tally.check(a.report.to_csv() == b.report.to_csv(), 0.0, || "supervised reports differ between runs".into());
    tally.check(a.agent == b.agent, 0.0, || "trained parameters differ between runs".into());
    let c = random_case(&SeedTree::new(14), 0, 64, 8, 4)?;
    let x = run_sequence(&c.params, &c.xs, EvalMode::Sequential, &mut rng_from_seed(c.seed))?;
    let y = run_sequence(&c.params, &c.xs, EvalMode::Sequential, &mut rng_from_seed(c.seed))?;
    tally.check(x.states.iter().zip(&y.states).all(|(p, q)| p.m == q.m), 0.0, || "sequential runs differ".into());
    Ok(tally)
}
