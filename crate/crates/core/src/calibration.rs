//! Calibration (`C_t`) and update (`U_t`) matrices.
//!
//! The stable variant computes `C = 1 + tanh(θ[l_t] ⊗ v_c(x))` with the row
//! `l_t` drawn uniformly from `L` learnable rows. The remaining variants are
//! the ablations it is compared against.

use crate::error::{Error, Result};
use crate::memory::{CalMatrix, ContextInput, UpdMatrix};
use crate::tensor::{outer, sigmoid, Affine, Mat};
use crate::Real;
use rand::Rng;
use rand_distr::StandardNormal;

/// Clamp on `tanh` so stable calibration entries stay in `[ε, 2 − ε]`.
pub const TANH_CLAMP_EPS: Real = 1e-6;

/// Number of calibration rows used throughout the experiments.
pub const DEFAULT_THETA_ROWS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CalibrationVariant {
    /// `θ_t` is a uniformly drawn row of a learnable `L×H` matrix.
    ShmRandomTheta,
    /// `C = 1`: purely additive memory.
    AllOnes,
    /// `C = 1 + tanh(g)`, `g ~ N(0, 1)` per entry per step.
    RandomC,
    /// One learnable `H×H` matrix used at every step.
    FixedC,
    /// One learnable `θ ∈ ℝ^H` used at every step.
    FixedTheta,
    /// `θ_t = FFW(x_t)`.
    NeuralTheta,
}

impl CalibrationVariant {
    pub const ALL: [CalibrationVariant; 6] = [
        CalibrationVariant::ShmRandomTheta,
        CalibrationVariant::AllOnes,
        CalibrationVariant::RandomC,
        CalibrationVariant::FixedC,
        CalibrationVariant::FixedTheta,
        CalibrationVariant::NeuralTheta,
    ];

    /// Stable numeric tag used by the checkpoint format.
    pub fn tag(self) -> u32 {
        match self {
            CalibrationVariant::ShmRandomTheta => 0,
            CalibrationVariant::AllOnes => 1,
            CalibrationVariant::RandomC => 2,
            CalibrationVariant::FixedC => 3,
            CalibrationVariant::FixedTheta => 4,
            CalibrationVariant::NeuralTheta => 5,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| Error::Config(format!("unknown calibration variant tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            CalibrationVariant::ShmRandomTheta => "shm",
            CalibrationVariant::AllOnes => "all_ones",
            CalibrationVariant::RandomC => "random_c",
            CalibrationVariant::FixedC => "fixed_c",
            CalibrationVariant::FixedTheta => "fixed_theta",
            CalibrationVariant::NeuralTheta => "neural_theta",
        }
    }
}

impl std::fmt::Display for CalibrationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CalibrationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .or(match key.as_str() {
                "shm_random_theta" | "random_theta" => Some(CalibrationVariant::ShmRandomTheta),
                "c1" | "ones" => Some(CalibrationVariant::AllOnes),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown calibration variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    /// Context width.
    pub d: usize,
    /// Memory side length.
    pub h: usize,
    /// Number of calibration rows.
    pub l: usize,
}

impl Dims {
    pub fn new(d: usize, h: usize, l: usize) -> Result<Self> {
        if d == 0 || h == 0 || l == 0 {
            return Err(Error::Config(format!("dims must be positive, got D={d} H={h} L={l}")));
        }
        Ok(Dims { d, h, l })
    }
}

/// Variant-specific learnable state.
#[derive(Clone, Debug, PartialEq)]
pub enum VariantParams {
    None,
    FixedC(Mat),
    FixedTheta(Vec<Real>),
    /// One tanh hidden layer of width `H`, linear output of width `H`.
    Neural { hidden: Affine, out: Affine },
}

/// All learnable parameters of the memory cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ShmParams {
    pub dims: Dims,
    pub variant: CalibrationVariant,
    /// `L × H` calibration rows.
    pub theta: Mat,
    pub w_vc: Affine,
    pub w_k: Affine,
    pub w_v: Affine,
    pub w_q: Affine,
    /// Affine `D → 1` before the sigmoid gate.
    pub eta: Affine,
    pub extra: VariantParams,
}

/// A realized row draw; `row` is 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ThetaDraw {
    pub row: usize,
}

impl ThetaDraw {
    pub fn one_based(self) -> usize {
        self.row + 1
    }
}

/// Output of [`variant_calibration`]; `draw` is set for the stable variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub c: CalMatrix,
    pub draw: Option<ThetaDraw>,
}

#[inline]
pub fn clamped_tanh(z: Real) -> Real {
    z.tanh().clamp(-1.0 + TANH_CLAMP_EPS, 1.0 - TANH_CLAMP_EPS)
}

/// `1 + clamp(tanh(θ ⊗ v_c))`, rows indexed by `θ`, columns by `v_c`.
pub fn calibrate_outer(theta_row: &[Real], vc: &[Real]) -> CalMatrix {
    CalMatrix(outer(theta_row, vc).map(|z| 1.0 + clamped_tanh(z)))
}

pub fn init_params<R: Rng + ?Sized>(
    dims: Dims,
    variant: CalibrationVariant,
    rng: &mut R,
) -> Result<ShmParams> {
    let Dims { d, h, l } = Dims::new(dims.d, dims.h, dims.l)?;
    let theta_bound = 1.0 / (h as Real).sqrt();
    let theta = Mat::uniform(l, h, theta_bound, rng);
    let w_vc = Affine::init(d, h, rng);
    let w_k = Affine::init(d, h, rng);
    let w_v = Affine::init(d, h, rng);
    let w_q = Affine::init(d, h, rng);
    let eta = Affine::init(d, 1, rng);
    let extra = match variant {
        CalibrationVariant::ShmRandomTheta
        | CalibrationVariant::AllOnes
        | CalibrationVariant::RandomC => VariantParams::None,
        CalibrationVariant::FixedC => {
            VariantParams::FixedC(Mat::uniform(h, h, theta_bound, rng).map(|u| 1.0 + u.tanh()))
        }
        CalibrationVariant::FixedTheta => VariantParams::FixedTheta(
            (0..h).map(|_| rng.random_range(-theta_bound..=theta_bound)).collect(),
        ),
        CalibrationVariant::NeuralTheta => VariantParams::Neural {
            hidden: Affine::init(d, h, rng),
            out: Affine::init(h, h, rng),
        },
    };
    Ok(ShmParams { dims, variant, theta, w_vc, w_k, w_v, w_q, eta, extra })
}

impl ShmParams {
    /// Every parameter tensor in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[Real])> {
        let mut out: Vec<(&'static str, &[Real])> = vec![
            ("theta", self.theta.as_slice()),
            ("vc.weight", self.w_vc.weight.as_slice()),
            ("vc.bias", &self.w_vc.bias),
            ("k.weight", self.w_k.weight.as_slice()),
            ("k.bias", &self.w_k.bias),
            ("v.weight", self.w_v.weight.as_slice()),
            ("v.bias", &self.w_v.bias),
            ("q.weight", self.w_q.weight.as_slice()),
            ("q.bias", &self.w_q.bias),
            ("eta.weight", self.eta.weight.as_slice()),
            ("eta.bias", &self.eta.bias),
        ];
        match &self.extra {
            VariantParams::None => {}
            VariantParams::FixedC(c) => out.push(("fixed_c", c.as_slice())),
            VariantParams::FixedTheta(t) => out.push(("fixed_theta", t)),
            VariantParams::Neural { hidden, out: o } => {
                out.push(("ffw.hidden.weight", hidden.weight.as_slice()));
                out.push(("ffw.hidden.bias", &hidden.bias));
                out.push(("ffw.out.weight", o.weight.as_slice()));
                out.push(("ffw.out.bias", &o.bias));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [Real])> {
        let mut out: Vec<(&'static str, &mut [Real])> = vec![
            ("theta", self.theta.as_mut_slice()),
            ("vc.weight", self.w_vc.weight.as_mut_slice()),
            ("vc.bias", &mut self.w_vc.bias),
            ("k.weight", self.w_k.weight.as_mut_slice()),
            ("k.bias", &mut self.w_k.bias),
            ("v.weight", self.w_v.weight.as_mut_slice()),
            ("v.bias", &mut self.w_v.bias),
            ("q.weight", self.w_q.weight.as_mut_slice()),
            ("q.bias", &mut self.w_q.bias),
            ("eta.weight", self.eta.weight.as_mut_slice()),
            ("eta.bias", &mut self.eta.bias),
        ];
        match &mut self.extra {
            VariantParams::None => {}
            VariantParams::FixedC(c) => out.push(("fixed_c", c.as_mut_slice())),
            VariantParams::FixedTheta(t) => out.push(("fixed_theta", t)),
            VariantParams::Neural { hidden, out: o } => {
                out.push(("ffw.hidden.weight", hidden.weight.as_mut_slice()));
                out.push(("ffw.hidden.bias", &mut hidden.bias));
                out.push(("ffw.out.weight", o.weight.as_mut_slice()));
                out.push(("ffw.out.bias", &mut o.bias));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn check_context(&self, x: &ContextInput) -> Result<()> {
        if x.dim() != self.dims.d {
            return Err(Error::Dimension(format!(
                "context of width {} for D = {}",
                x.dim(),
                self.dims.d
            )));
        }
        if !x.is_finite() {
            return Err(Error::Numeric { step: 0, what: "non-finite context".into() });
        }
        Ok(())
    }

    /// Neural θ for a context (only meaningful for [`CalibrationVariant::NeuralTheta`]).
    pub fn neural_theta(&self, x: &[Real]) -> Option<Vec<Real>> {
        match &self.extra {
            VariantParams::Neural { hidden, out } => {
                let a: Vec<Real> = hidden.apply(x).into_iter().map(Real::tanh).collect();
                Some(out.apply(&a))
            }
            _ => None,
        }
    }
}

/// `l_t ~ U(1, L)`; consumes exactly one draw from `rng`.
pub fn sample_theta_row<R: Rng + ?Sized>(params: &ShmParams, rng: &mut R) -> ThetaDraw {
    ThetaDraw { row: rng.random_range(0..params.theta.rows()) }
}

/// Stable calibration for a given draw.
pub fn shm_calibration(params: &ShmParams, x: &ContextInput, draw: ThetaDraw) -> CalMatrix {
    let vc = params.w_vc.apply(&x.0);
    calibrate_outer(params.theta.row(draw.row), &vc)
}

/// Calibration for the configured variant at one step.
pub fn variant_calibration<R: Rng + ?Sized>(
    params: &ShmParams,
    x: &ContextInput,
    rng: &mut R,
) -> Result<Calibration> {
    let h = params.dims.h;
    let mismatch = || {
        Error::Config(format!(
            "variant {} does not match stored variant parameters",
            params.variant
        ))
    };
    Ok(match params.variant {
        CalibrationVariant::ShmRandomTheta => {
            let draw = sample_theta_row(params, rng);
            Calibration { c: shm_calibration(params, x, draw), draw: Some(draw) }
        }
        CalibrationVariant::AllOnes => Calibration { c: CalMatrix::ones(h), draw: None },
        CalibrationVariant::RandomC => {
            let c = Mat::from_fn(h, h, |_, _| {
                let g: Real = rng.sample(StandardNormal);
                1.0 + clamped_tanh(g)
            });
            Calibration { c: CalMatrix(c), draw: None }
        }
        CalibrationVariant::FixedC => match &params.extra {
            VariantParams::FixedC(c) => Calibration { c: CalMatrix(c.clone()), draw: None },
            _ => return Err(mismatch()),
        },
        CalibrationVariant::FixedTheta => match &params.extra {
            VariantParams::FixedTheta(theta) => {
                let vc = params.w_vc.apply(&x.0);
                Calibration { c: calibrate_outer(theta, &vc), draw: None }
            }
            _ => return Err(mismatch()),
        },
        CalibrationVariant::NeuralTheta => {
            let theta = params.neural_theta(&x.0).ok_or_else(mismatch)?;
            let vc = params.w_vc.apply(&x.0);
            Calibration { c: calibrate_outer(&theta, &vc), draw: None }
        }
    })
}

/// Scalar update gate `η(x) ∈ (0, 1)`.
pub fn gate(params: &ShmParams, x: &ContextInput) -> Real {
    sigmoid(params.eta.apply(&x.0)[0])
}

/// `U = η(x) · (v(x) ⊗ k(x))`: value indexes rows, key indexes columns.
pub fn update_matrix(params: &ShmParams, x: &ContextInput) -> UpdMatrix {
    let eta = gate(params, x);
    let v = params.w_v.apply(&x.0);
    let k = params.w_k.apply(&x.0);
    UpdMatrix(outer(&v, &k).scale(eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn params(variant: CalibrationVariant, seed: u64) -> ShmParams {
        init_params(Dims::new(6, 4, 8).unwrap(), variant, &mut rng_from_seed(seed)).unwrap()
    }

    fn random_x(d: usize, seed: u64) -> ContextInput {
        let mut rng = rng_from_seed(seed);
        ContextInput((0..d).map(|_| rng.sample::<Real, _>(StandardNormal)).collect())
    }

    #[test]
    fn single_row_always_drawn() {
        let p = init_params(Dims::new(2, 3, 1).unwrap(), CalibrationVariant::ShmRandomTheta, &mut rng_from_seed(0))
            .unwrap();
        let mut rng = rng_from_seed(1);
        assert!((0..100).all(|_| sample_theta_row(&p, &mut rng).one_based() == 1));
    }

    #[test]
    fn draws_are_reproducible() {
        let p = params(CalibrationVariant::ShmRandomTheta, 0);
        let a: Vec<_> = {
            let mut r = rng_from_seed(9);
            (0..50).map(|_| sample_theta_row(&p, &mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = rng_from_seed(9);
            (0..50).map(|_| sample_theta_row(&p, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn zero_context_gives_unit_calibration_and_zero_update_direction() {
        let p = params(CalibrationVariant::ShmRandomTheta, 1);
        let x = ContextInput(vec![0.0; 6]);
        let c = shm_calibration(&p, &x, ThetaDraw { row: 3 });
        assert_eq!(c, CalMatrix::ones(4));
        // zero biases: v(0) = k(0) = 0
        assert_eq!(update_matrix(&p, &x), UpdMatrix::zeros(4));
    }

    #[test]
    fn scalar_calibration_value() {
        let c = calibrate_outer(&[0.5], &[1.0]);
        assert!((c.0[(0, 0)] - 1.462_117_157_260_01).abs() < 1e-12);
    }

    #[test]
    fn calibration_clamped_range() {
        let c = calibrate_outer(&[100.0, -100.0], &[100.0, 0.0, -3.0]);
        for &v in c.0.as_slice() {
            assert!(v >= TANH_CLAMP_EPS - 1e-15 && v <= 2.0 - TANH_CLAMP_EPS + 1e-15);
        }
        assert!((c.0[(0, 0)] - (2.0 - TANH_CLAMP_EPS)).abs() < 1e-15);
        assert!((c.0[(1, 0)] - TANH_CLAMP_EPS).abs() < 1e-15);
    }

    #[test]
    fn fixed_c_is_constant_over_steps() {
        let mut p = params(CalibrationVariant::FixedC, 2);
        p.extra = VariantParams::FixedC(Mat::filled(4, 4, 0.5));
        let mut rng = rng_from_seed(3);
        let a = variant_calibration(&p, &random_x(6, 1), &mut rng).unwrap();
        let b = variant_calibration(&p, &random_x(6, 2), &mut rng).unwrap();
        assert_eq!(a.c, b.c);
        assert_eq!(a.c.0, Mat::filled(4, 4, 0.5));
    }

    #[test]
    fn all_ones_variant() {
        let p = params(CalibrationVariant::AllOnes, 3);
        let c = variant_calibration(&p, &random_x(6, 5), &mut rng_from_seed(0)).unwrap();
        assert_eq!(c.c, CalMatrix::ones(4));
        assert!(c.draw.is_none());
    }

    #[test]
    fn mismatched_variant_params_rejected() {
        let mut p = params(CalibrationVariant::FixedTheta, 4);
        p.extra = VariantParams::None;
        assert!(variant_calibration(&p, &random_x(6, 1), &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn closed_gate_gives_zero_update() {
        let mut p = params(CalibrationVariant::ShmRandomTheta, 5);
        p.eta.weight = Mat::zeros(1, 6);
        p.eta.bias = vec![-1e9];
        // The gate stays inside (0, 1), so a closed gate leaves a subnormal-scale update.
        let u = update_matrix(&p, &random_x(6, 7));
        assert!(u.0.as_slice().iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn basis_update() {
        let mut p = params(CalibrationVariant::ShmRandomTheta, 6);
        // x = e_0; v = e_1, k = e_2, gate fully open
        p.w_v = Affine::zeros(6, 4);
        p.w_v.weight[(1, 0)] = 1.0;
        p.w_k = Affine::zeros(6, 4);
        p.w_k.weight[(2, 0)] = 1.0;
        p.eta.weight = Mat::zeros(1, 6);
        p.eta.bias = vec![1e9];
        let mut x = vec![0.0; 6];
        x[0] = 1.0;
        let u = update_matrix(&p, &ContextInput(x));
        for i in 0..4 {
            for j in 0..4 {
                let want = if (i, j) == (1, 2) { 1.0 } else { 0.0 };
                assert!((u.0[(i, j)] - want).abs() <= Real::EPSILON, "({i}, {j}) = {}", u.0[(i, j)]);
            }
        }
    }

    #[test]
    fn update_matches_scalar_loop() {
        let p = params(CalibrationVariant::ShmRandomTheta, 7);
        let x = random_x(6, 8);
        let u = update_matrix(&p, &x);
        let lin = |a: &Affine, i: usize| {
            let mut s = a.bias[i];
            for j in 0..6 {
                s += a.weight[(i, j)] * x.0[j];
            }
            s
        };
        let mut z = p.eta.bias[0];
        for j in 0..6 {
            z += p.eta.weight[(0, j)] * x.0[j];
        }
        let eta = 1.0 / (1.0 + (-z).exp());
        for i in 0..4 {
            for j in 0..4 {
                let want = eta * lin(&p.w_v, i) * lin(&p.w_k, j);
                assert!((u.0[(i, j)] - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_counts_params() {
        let dims = Dims::new(8, 16, 128).unwrap();
        let a = init_params(dims, CalibrationVariant::ShmRandomTheta, &mut rng_from_seed(42)).unwrap();
        let b = init_params(dims, CalibrationVariant::ShmRandomTheta, &mut rng_from_seed(42)).unwrap();
        assert_eq!(a, b);
        let base = 128 * 16 + 4 * (8 * 16 + 16) + (8 + 1);
        assert_eq!(a.num_params(), base);
        let extras = [
            (CalibrationVariant::AllOnes, 0),
            (CalibrationVariant::RandomC, 0),
            (CalibrationVariant::FixedC, 16 * 16),
            (CalibrationVariant::FixedTheta, 16),
            (CalibrationVariant::NeuralTheta, (8 * 16 + 16) + (16 * 16 + 16)),
        ];
        for (v, extra) in extras {
            let p = init_params(dims, v, &mut rng_from_seed(1)).unwrap();
            assert_eq!(p.num_params(), base + extra, "{v}");
        }
        assert!(Dims::new(0, 4, 4).is_err());
    }

    #[test]
    fn init_bounds() {
        let dims = Dims::new(8, 16, 128).unwrap();
        let p = init_params(dims, CalibrationVariant::ShmRandomTheta, &mut rng_from_seed(3)).unwrap();
        let wb = 1.0 / (8.0 as Real).sqrt();
        let tb = 1.0 / (16.0 as Real).sqrt();
        assert!(p.w_k.weight.as_slice().iter().all(|v| v.abs() <= wb));
        assert!(p.theta.as_slice().iter().all(|v| v.abs() <= tb));
        assert_eq!(p.eta.bias, vec![0.0]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in CalibrationVariant::ALL {
            assert_eq!(v.name().parse::<CalibrationVariant>().unwrap(), v);
            assert_eq!(CalibrationVariant::from_tag(v.tag()).unwrap(), v);
        }
        assert!("bogus".parse::<CalibrationVariant>().is_err());
        assert!(CalibrationVariant::from_tag(99).is_err());
    }
}
