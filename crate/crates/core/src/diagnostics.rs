//! Stability diagnostics for calibration designs.
//!
//! - cumulative-product curves `𝒞_j = ∏_{t≤j} C_t` and the average of their
//!   entries below one (the vanishing measure),
//! - Monte-Carlo checks that `E[∏ C] = 1` under independent Gaussian contexts
//!   and that random θ rows never raise the correlation between steps,
//! - the fixed-calibration blow-up/decay classification,
//! - CSV export of memory and calibration snapshots.

use crate::calibration::{init_params, variant_calibration, CalibrationVariant, Dims, ShmParams};
use crate::episode::EpisodeTrace;
use crate::error::{Error, Result};
use crate::memory::{layer_normalize, ContextInput};
use crate::rng::{SeedTree, StreamRng};
use crate::tensor::Mat;
use crate::Real;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Gaussian contexts, optionally AR(1)-correlated over time, layer-normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticContexts {
    pub d: usize,
    /// AR(1) coefficient across steps; 0 gives independent contexts.
    pub temporal_corr: Real,
    pub layer_norm: bool,
}

impl Default for SyntheticContexts {
    fn default() -> Self {
        SyntheticContexts { d: 8, temporal_corr: 0.9, layer_norm: true }
    }
}

impl SyntheticContexts {
    pub fn generate<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> Result<Vec<ContextInput>> {
        let rho = self.temporal_corr;
        if !(-1.0 < rho && rho < 1.0) {
            return Err(Error::Config(format!("temporal correlation must lie in (-1, 1), got {rho}")));
        }
        let innov = (1.0 - rho * rho).sqrt();
        let mut z: Vec<Real> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            if t > 0 {
                for zi in &mut z {
                    let e: Real = rng.sample(StandardNormal);
                    *zi = rho * *zi + innov * e;
                }
            }
            let x = ContextInput(z.clone());
            out.push(if self.layer_norm { layer_normalize(&x)? } else { x });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CumProductRow {
    pub step: usize,
    pub mean_below_one: Real,
    pub max_entry: Real,
    pub frac_ge_1: Real,
    /// Episodes whose product had overflowed by this step.
    pub saturated: usize,
}

#[derive(Clone, Debug)]
pub struct CumProductStats {
    pub variant: CalibrationVariant,
    pub rows: Vec<CumProductRow>,
    /// `per_episode[e][j-1]`: below-one mean of episode `e` at step `j`.
    pub per_episode: Vec<Vec<Real>>,
}

/// Average of the entries `< 1`, or 1.0 when there are none.
pub fn mean_below_one(values: &[Real]) -> Real {
    let (sum, n) = values
        .iter()
        .filter(|v| **v < 1.0)
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as Real
    }
}

struct EpisodeCurve {
    below: Vec<Real>,
    max: Vec<Real>,
    ge1: Vec<Real>,
    saturated_from: Option<usize>,
}

/// Run `episodes` synthetic episodes of `steps` steps and track `𝒞_j`.
pub fn cumulative_product_curve(
    params: &ShmParams,
    contexts: &SyntheticContexts,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<CumProductStats> {
    if episodes == 0 || steps == 0 {
        return Err(Error::Config("cumulative-product curve needs at least one episode and one step".into()));
    }
    if contexts.d != params.dims.d {
        return Err(Error::Dimension(format!("contexts of width {} for D = {}", contexts.d, params.dims.d)));
    }
    let tree = SeedTree::new(seed);
    let curves: Vec<EpisodeCurve> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut env_rng = tree.stream("contexts", e as u64);
            let mut theta_rng = tree.stream("theta", e as u64);
            let xs = contexts.generate(steps, &mut env_rng)?;
            let h = params.dims.h;
            let mut cum = Mat::ones(h, h);
            let mut curve = EpisodeCurve {
                below: Vec::with_capacity(steps),
                max: Vec::with_capacity(steps),
                ge1: Vec::with_capacity(steps),
                saturated_from: None,
            };
            for (j, x) in xs.iter().enumerate() {
                let c = variant_calibration(params, x, &mut theta_rng)?.c;
                cum = cum.hadamard(&c.0);
                if curve.saturated_from.is_none() && !cum.is_finite() {
                    curve.saturated_from = Some(j + 1);
                }
                let vals = cum.as_slice();
                curve.below.push(mean_below_one(vals));
                curve.max.push(vals.iter().fold(Real::NEG_INFINITY, |a, v| a.max(*v)));
                curve.ge1.push(vals.iter().filter(|v| **v >= 1.0).count() as Real / vals.len() as Real);
            }
            Ok(curve)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = episodes as Real;
    let rows = (0..steps)
        .map(|j| CumProductRow {
            step: j + 1,
            mean_below_one: curves.iter().map(|c| c.below[j]).sum::<Real>() / n,
            max_entry: curves.iter().fold(Real::NEG_INFINITY, |a, c| a.max(c.max[j])),
            frac_ge_1: curves.iter().map(|c| c.ge1[j]).sum::<Real>() / n,
            saturated: curves.iter().filter(|c| c.saturated_from.is_some_and(|s| s <= j + 1)).count(),
        })
        .collect();
    Ok(CumProductStats {
        variant: params.variant,
        rows,
        per_episode: curves.into_iter().map(|c| c.below).collect(),
    })
}

/// Fraction of bootstrap resamples (episodes resampled with replacement,
/// independently per curve) in which `a`'s mean at `step` is below `b`'s.
/// With `strict = false`, ties count as successes.
pub fn bootstrap_less(
    a: &CumProductStats,
    b: &CumProductStats,
    step: usize,
    resamples: usize,
    strict: bool,
    seed: u64,
) -> Result<Real> {
    if step == 0 || step > a.rows.len() || step > b.rows.len() {
        return Err(Error::Range(format!("step {step} outside the recorded curves")));
    }
    let col = |s: &CumProductStats| s.per_episode.iter().map(|e| e[step - 1]).collect::<Vec<_>>();
    let (xa, xb) = (col(a), col(b));
    let mut rng = SeedTree::new(seed).stream("bootstrap", 0);
    let resample_mean = |x: &[Real], rng: &mut StreamRng| {
        (0..x.len()).map(|_| x[rng.random_range(0..x.len())]).sum::<Real>() / x.len() as Real
    };
    let mut wins = 0usize;
    for _ in 0..resamples {
        let ma = resample_mean(&xa, &mut rng);
        let mb = resample_mean(&xb, &mut rng);
        if ma < mb || (!strict && ma == mb) {
            wins += 1;
        }
    }
    Ok(wins as Real / resamples.max(1) as Real)
}

pub fn write_cumprod_csv(path: &Path, curves: &[CumProductStats]) -> Result<()> {
    let mut s = String::from("step,mean_below_one,max_entry,frac_ge_1,variant\n");
    for c in curves {
        for r in &c.rows {
            writeln!(s, "{},{:.16e},{:.16e},{:.16e},{}", r.step, r.mean_below_one, r.max_entry, r.frac_ge_1, c.variant)
                .expect("writing to a String");
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop4Config {
    pub d: usize,
    pub h: usize,
    pub l: usize,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for Prop4Config {
    fn default() -> Self {
        Prop4Config { d: 8, h: 4, l: 128, steps: 50, samples: 100_000, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Prop4Report {
    pub config: Prop4Config,
    /// Per-entry sample mean of `∏_{t≤T} C_t`.
    pub mean: Mat,
    /// Per-entry standard error of that mean.
    pub std_err: Mat,
}

impl Prop4Report {
    /// Largest `|mean - 1| / SE` over entries (0 where SE is 0 and mean is 1).
    pub fn max_z(&self) -> Real {
        self.mean
            .as_slice()
            .iter()
            .zip(self.std_err.as_slice())
            .map(|(m, se)| {
                let d = (m - 1.0).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / se
                }
            })
            .fold(0.0, Real::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("m,k,mean,std_err,z,steps,samples\n");
        let h = self.mean.rows();
        for m in 0..h {
            for k in 0..h {
                let mean = self.mean[(m, k)];
                let se = self.std_err[(m, k)];
                let z = if mean == 1.0 { 0.0 } else { (mean - 1.0).abs() / se };
                writeln!(s, "{m},{k},{mean:.17e},{se:.17e},{z:.6},{},{}", self.config.steps, self.config.samples)
                    .expect("writing to a String");
            }
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Parameters used by the independence checks: default initialization with
/// zero `v_c` bias, so `v_c(x) = W x` is linear.
pub fn linear_probe_params(d: usize, h: usize, l: usize, seed: u64) -> Result<ShmParams> {
    let mut rng = SeedTree::new(seed).stream("init", 0);
    let mut p = init_params(Dims::new(d, h, l)?, CalibrationVariant::ShmRandomTheta, &mut rng)?;
    p.w_vc.bias.iter_mut().for_each(|b| *b = 0.0);
    Ok(p)
}

/// Monte-Carlo estimate of `E[∏_{t≤T} C_t]` with fresh `x_t ~ N(0, I)` each step.
pub fn prop4_expected_product(cfg: &Prop4Config) -> Result<Prop4Report> {
    if cfg.samples < 2 {
        return Err(Error::Config("need at least two samples for a standard error".into()));
    }
    let params = linear_probe_params(cfg.d, cfg.h, cfg.l, cfg.seed)?;
    let tree = SeedTree::new(cfg.seed);
    let n_entries = cfg.h * cfg.h;
    let products: Vec<Vec<Real>> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = tree.stream("prop4", s as u64);
            let mut prod = vec![1.0; n_entries];
            for _ in 0..cfg.steps {
                let x: Vec<Real> = (0..cfg.d).map(|_| rng.sample(StandardNormal)).collect();
                let c = variant_calibration(&params, &ContextInput(x), &mut rng).expect("valid probe params").c;
                for (p, c) in prod.iter_mut().zip(c.0.as_slice()) {
                    *p *= c;
                }
            }
            prod
        })
        .collect();
    let n = cfg.samples as Real;
    let mut mean = vec![0.0; n_entries];
    for p in &products {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; n_entries];
    for p in &products {
        for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let se: Vec<Real> = var.iter().map(|s| (s / (n - 1.0)).sqrt() / n.sqrt()).collect();
    Ok(Prop4Report {
        config: *cfg,
        mean: Mat::from_vec(cfg.h, cfg.h, mean)?,
        std_err: Mat::from_vec(cfg.h, cfg.h, se)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaMode {
    /// `u_t = θ[l_t, m]`, rows drawn independently per step.
    RandomRows,
    /// `u_t = u_{t'} = θ[0, m]`.
    Fixed,
}

impl ThetaMode {
    pub fn name(self) -> &'static str {
        match self {
            ThetaMode::RandomRows => "random_rows",
            ThetaMode::Fixed => "fixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop5Config {
    pub h: usize,
    pub l: usize,
    pub samples: usize,
    /// AR(1) coefficient linking `v_t` and `v_{t'}`.
    pub dependence: Real,
    pub theta_mode: ThetaMode,
    pub seed: u64,
}

impl Default for Prop5Config {
    fn default() -> Self {
        Prop5Config { h: 4, l: 128, samples: 100_000, dependence: 0.9, theta_mode: ThetaMode::RandomRows, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPair {
    pub m: usize,
    pub k: usize,
    /// `ρ(v_t, v_{t'})`
    pub rho_v: Real,
    /// `ρ(u_t v_t, u_{t'} v_{t'})`
    pub rho_uv: Real,
    /// `|ρ_uv| / |ρ_v|`; `None` when `|ρ_v| ≤ 1e-6`.
    pub ratio: Option<Real>,
    /// Large-sample standard error of the difference `ρ_uv - ρ_v`.
    pub std_err: Real,
    /// `|E u|² / E u²` for the θ column, the population value of the ratio.
    pub theory_ratio: Real,
}

impl CorrelationPair {
    /// `|ρ_uv| ≤ |ρ_v| + 3·SE`
    pub fn bound_holds(&self) -> bool {
        self.rho_uv.abs() <= self.rho_v.abs() + 3.0 * self.std_err
    }

    /// `|ρ_uv| = |ρ_v|` within 3·SE.
    pub fn equality_holds(&self) -> bool {
        (self.rho_uv.abs() - self.rho_v.abs()).abs() <= 3.0 * self.std_err
    }
}

#[derive(Clone, Debug)]
pub struct CorrelationReport {
    pub config: Prop5Config,
    pub pairs: Vec<CorrelationPair>,
    /// `(m, k)` pairs dropped for degenerate variance.
    pub skipped: Vec<(usize, usize)>,
}

impl CorrelationReport {
    pub const CSV_HEADER: &'static str = "m,k,rho_v,rho_uv,ratio,std_err,theory_ratio,theta_mode,dependence\n";

    /// CSV rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            let ratio = p.ratio.map(|r| format!("{r:.17e}")).unwrap_or_default();
            writeln!(
                s,
                "{},{},{:.17e},{:.17e},{},{:.17e},{:.17e},{},{}",
                p.m,
                p.k,
                p.rho_v,
                p.rho_uv,
                ratio,
                p.std_err,
                p.theory_ratio,
                self.config.theta_mode.name(),
                self.config.dependence
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, format!("{}{}", Self::CSV_HEADER, self.csv_rows()))?;
        Ok(())
    }
}

/// Sample Pearson correlation; `None` for a degenerate variance.
pub fn pearson(x: &[Real], y: &[Real]) -> Option<Real> {
    let n = x.len() as Real;
    let mx = x.iter().sum::<Real>() / n;
    let my = y.iter().sum::<Real>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Correlation of `z = u·v` across two dependent steps versus that of `v`.
pub fn prop5_correlation_ratio(cfg: &Prop5Config) -> Result<CorrelationReport> {
    if cfg.samples < 4 {
        return Err(Error::Config("need at least four samples".into()));
    }
    if !(-1.0 < cfg.dependence && cfg.dependence < 1.0) {
        return Err(Error::Config(format!("dependence must lie in (-1, 1), got {}", cfg.dependence)));
    }
    let tree = SeedTree::new(cfg.seed);
    let theta = {
        let mut rng = tree.stream("init", 0);
        let bound = 1.0 / (cfg.h as Real).sqrt();
        Mat::uniform(cfg.l, cfg.h, bound, &mut rng)
    };
    let mut rng = tree.stream("prop5", 0);
    let n = cfg.samples;
    let innov = (1.0 - cfg.dependence * cfg.dependence).sqrt();
    // v[k][s], v2[k][s], rows drawn per sample
    let mut v = vec![vec![0.0; n]; cfg.h];
    let mut v2 = vec![vec![0.0; n]; cfg.h];
    let mut rows = vec![(0usize, 0usize); n];
    for s in 0..n {
        for k in 0..cfg.h {
            let a: Real = rng.sample(StandardNormal);
            let e: Real = rng.sample(StandardNormal);
            v[k][s] = a;
            v2[k][s] = cfg.dependence * a + innov * e;
        }
        rows[s] = match cfg.theta_mode {
            ThetaMode::RandomRows => (rng.random_range(0..cfg.l), rng.random_range(0..cfg.l)),
            ThetaMode::Fixed => (0, 0),
        };
    }
    let sqrt_n = (n as Real).sqrt();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for m in 0..cfg.h {
        let column: Vec<Real> = (0..cfg.l).map(|l| theta[(l, m)]).collect();
        let theory_ratio = match cfg.theta_mode {
            ThetaMode::Fixed => 1.0,
            ThetaMode::RandomRows => {
                let e1 = column.iter().sum::<Real>() / cfg.l as Real;
                let e2 = column.iter().map(|u| u * u).sum::<Real>() / cfg.l as Real;
                e1 * e1 / e2
            }
        };
        for k in 0..cfg.h {
            let x: Vec<Real> = (0..n).map(|s| theta[(rows[s].0, m)] * v[k][s]).collect();
            let y: Vec<Real> = (0..n).map(|s| theta[(rows[s].1, m)] * v2[k][s]).collect();
            let (Some(rho_v), Some(rho_uv)) = (pearson(&v[k], &v2[k]), pearson(&x, &y)) else {
                skipped.push((m, k));
                continue;
            };
            let se_v = (1.0 - rho_v * rho_v) / sqrt_n;
            let se_uv = (1.0 - rho_uv * rho_uv) / sqrt_n;
            let ratio = (rho_v.abs() > 1e-6).then(|| rho_uv.abs() / rho_v.abs());
            pairs.push(CorrelationPair {
                m,
                k,
                rho_v,
                rho_uv,
                ratio,
                std_err: (se_v * se_v + se_uv * se_uv).sqrt(),
                theory_ratio,
            });
        }
    }
    Ok(CorrelationReport { config: *cfg, pairs, skipped })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientRegime {
    Exploding,
    Vanishing,
    Marginal,
}

impl GradientRegime {
    pub fn name(self) -> &'static str {
        match self {
            GradientRegime::Exploding => "exploding",
            GradientRegime::Vanishing => "vanishing",
            GradientRegime::Marginal => "marginal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop3Entry {
    pub row: usize,
    pub col: usize,
    pub value: Real,
    /// Regime predicted from `|θ|` against 1.
    pub predicted: GradientRegime,
    /// `θ^T` by repeated multiplication.
    pub product: Real,
    /// Regime read off `|θ^T|` against 1.
    pub observed: GradientRegime,
}

impl Prop3Entry {
    pub fn consistent(&self) -> bool {
        self.predicted == self.observed
    }
}

fn regime_of(magnitude: Real) -> GradientRegime {
    if magnitude > 1.0 {
        GradientRegime::Exploding
    } else if magnitude < 1.0 {
        GradientRegime::Vanishing
    } else {
        GradientRegime::Marginal
    }
}

/// Classify each entry of a fixed calibration matrix by where `G_2 = θ^T`
/// heads, cross-checked by evaluating the product directly.
pub fn prop3_witness(theta: &Mat, steps: usize) -> Vec<Prop3Entry> {
    let mut out = Vec::with_capacity(theta.as_slice().len());
    for i in 0..theta.rows() {
        for j in 0..theta.cols() {
            let value = theta[(i, j)];
            let mut product: Real = 1.0;
            for _ in 0..steps {
                product *= value;
            }
            out.push(Prop3Entry {
                row: i,
                col: j,
                value,
                predicted: regime_of(value.abs()),
                product,
                observed: regime_of(product.abs()),
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapKind {
    Memory,
    Calibration,
}

impl HeatmapKind {
    fn tag(self) -> &'static str {
        match self {
            HeatmapKind::Memory => "M",
            HeatmapKind::Calibration => "C",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub kind: HeatmapKind,
    pub step: usize,
    pub episode: u64,
    pub matrix: Mat,
}

pub fn heatmap_file_name(kind: HeatmapKind, step: usize) -> String {
    format!("heatmap_{}_t{}.csv", kind.tag(), step)
}

fn format_heatmap(h: &Heatmap) -> String {
    let mut s = format!("# matrix={} step={} episode={}\n", h.kind.tag(), h.step, h.episode);
    for i in 0..h.matrix.rows() {
        let row: Vec<String> = h.matrix.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Write `M_t` and `C_t` for each requested step (1-based) into `dir`.
pub fn export_heatmaps(trace: &EpisodeTrace, steps: &[usize], episode: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    for &t in steps {
        if t == 0 || t > trace.len() {
            return Err(Error::Range(format!("step {t} outside the trace (1..={})", trace.len())));
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(steps.len() * 2);
    for &t in steps {
        for (kind, matrix) in
            [(HeatmapKind::Memory, &trace.states[t].m), (HeatmapKind::Calibration, &trace.cs[t - 1].0)]
        {
            let path = dir.join(heatmap_file_name(kind, t));
            let hm = Heatmap { kind, step: t, episode, matrix: matrix.clone() };
            std::fs::write(&path, format_heatmap(&hm))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn parse_heatmap(text: &str) -> Result<Heatmap> {
    let bad = |m: &str| Error::Config(format!("malformed heatmap: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let header = header.strip_prefix("# ").ok_or_else(|| bad("missing header"))?;
    let (mut kind, mut step, mut episode) = (None, None, None);
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("matrix", "M")) => kind = Some(HeatmapKind::Memory),
            Some(("matrix", "C")) => kind = Some(HeatmapKind::Calibration),
            Some(("step", v)) => step = v.parse().ok(),
            Some(("episode", v)) => episode = v.parse().ok(),
            _ => return Err(bad(field)),
        }
    }
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row: Vec<Real> = line
            .split(',')
            .map(|v| v.trim().parse::<Real>().map_err(|_| bad(v)))
            .collect::<Result<_>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(bad("ragged rows"));
        }
        data.extend(row);
        rows += 1;
    }
    Ok(Heatmap {
        kind: kind.ok_or_else(|| bad("matrix kind"))?,
        step: step.ok_or_else(|| bad("step"))?,
        episode: episode.ok_or_else(|| bad("episode"))?,
        matrix: Mat::from_vec(rows, cols.unwrap_or(0), data)?,
    })
}

pub fn read_heatmap(path: &Path) -> Result<Heatmap> {
    parse_heatmap(&std::fs::read_to_string(path)?)
}
