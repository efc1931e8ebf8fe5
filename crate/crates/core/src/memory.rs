//! Hadamard memory write/read rules.
//!
//! The memory evolves as `M_t = M_{t-1} ⊙ C_t + U_t` and is read with
//! `h_t = M_t q_t`. Three evaluation routes produce the same sequence
//! `{M_t}`: [`write_step`] iterated, [`unroll_closed_form`], and
//! [`crate::scan::parallel_scan`].

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::Real;

/// Memory matrix plus the index of the last write.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    pub m: Mat,
    pub step: usize,
}

impl MemoryState {
    /// `M_0 = 0`.
    pub fn zeros(h: usize) -> Self {
        MemoryState { m: Mat::zeros(h, h), step: 0 }
    }

    pub fn new(m: Mat, step: usize) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Dimension(format!("memory must be square, got {:?}", m.shape())));
        }
        Ok(MemoryState { m, step })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m.rows()
    }
}

/// Calibration matrix `C_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalMatrix(pub Mat);

/// Update matrix `U_t` (rank one by construction).
#[derive(Clone, Debug, PartialEq)]
pub struct UpdMatrix(pub Mat);

impl CalMatrix {
    pub fn ones(h: usize) -> Self {
        CalMatrix(Mat::ones(h, h))
    }
}

impl UpdMatrix {
    pub fn zeros(h: usize) -> Self {
        UpdMatrix(Mat::zeros(h, h))
    }
}

/// Context vector `x_t` (observation plus previous-action encoding).
#[derive(Clone, Debug, PartialEq)]
pub struct ContextInput(pub Vec<Real>);

impl ContextInput {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<Real>> for ContextInput {
    fn from(v: Vec<Real>) -> Self {
        ContextInput(v)
    }
}

fn check_square(state: &MemoryState, c: &CalMatrix, u: &UpdMatrix) -> Result<()> {
    let h = state.dim();
    if state.m.cols() != h {
        return Err(Error::Dimension(format!("memory is {:?}", state.m.shape())));
    }
    if c.0.shape() != (h, h) || u.0.shape() != (h, h) {
        return Err(Error::Dimension(format!(
            "memory {h}x{h}, calibration {:?}, update {:?}",
            c.0.shape(),
            u.0.shape()
        )));
    }
    Ok(())
}

/// One write: `M_t = M_{t-1} ⊙ C_t + U_t`.
pub fn write_step(state: &MemoryState, c: &CalMatrix, u: &UpdMatrix) -> Result<MemoryState> {
    check_square(state, c, u)?;
    let step = state.step + 1;
    let data: Vec<Real> = state
        .m
        .as_slice()
        .iter()
        .zip(c.0.as_slice())
        .zip(u.0.as_slice())
        .map(|((m, c), u)| m * c + u)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { step, what: "memory entry overflowed".into() });
    }
    let h = state.dim();
    Ok(MemoryState { m: Mat::from_vec(h, h, data)?, step })
}

/// Read `h = M q`.
pub fn read(state: &MemoryState, query: &[Real]) -> Result<Vec<Real>> {
    if query.len() != state.m.cols() {
        return Err(Error::Dimension(format!(
            "query of length {} against {}x{} memory",
            query.len(),
            state.m.rows(),
            state.m.cols()
        )));
    }
    Ok(state.m.matvec(query))
}

/// Evaluate `M_t = M_0 ∏_{i≤t} C_i + Σ_{i≤t} U_i ⊙ ∏_{j=i+1..t} C_j` for every
/// `t` directly from the sums and products.
///
/// Quadratic in `T`; this is a reference route, not a fast one.
pub fn unroll_closed_form(
    m0: &MemoryState,
    cs: &[CalMatrix],
    us: &[UpdMatrix],
) -> Result<Vec<MemoryState>> {
    if cs.len() != us.len() {
        return Err(Error::Dimension(format!(
            "{} calibration matrices for {} update matrices",
            cs.len(),
            us.len()
        )));
    }
    for (c, u) in cs.iter().zip(us) {
        check_square(m0, c, u)?;
    }
    let h = m0.dim();
    let n = h * h;
    let mut out = Vec::with_capacity(cs.len());
    for t in 1..=cs.len() {
        let mut acc = vec![0.0; n];
        for (e, slot) in acc.iter_mut().enumerate() {
            let mut head = m0.m.as_slice()[e];
            for c in &cs[..t] {
                head *= c.0.as_slice()[e];
            }
            let mut tail = 0.0;
            for i in 1..=t {
                let mut prod = us[i - 1].0.as_slice()[e];
                for c in &cs[i..t] {
                    prod *= c.0.as_slice()[e];
                }
                tail += prod;
            }
            *slot = head + tail;
        }
        let step = m0.step + t;
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { step, what: "closed-form memory overflowed".into() });
        }
        out.push(MemoryState { m: Mat::from_vec(h, h, acc)?, step });
    }
    Ok(out)
}

/// Iterates [`write_step`] over the sequence.
pub fn unroll_sequential(
    m0: &MemoryState,
    cs: &[CalMatrix],
    us: &[UpdMatrix],
) -> Result<Vec<MemoryState>> {
    if cs.len() != us.len() {
        return Err(Error::Dimension(format!(
            "{} calibration matrices for {} update matrices",
            cs.len(),
            us.len()
        )));
    }
    let mut out: Vec<MemoryState> = Vec::with_capacity(cs.len());
    for (c, u) in cs.iter().zip(us) {
        let next = write_step(out.last().unwrap_or(m0), c, u)?;
        out.push(next);
    }
    Ok(out)
}

/// Standardize to zero mean and unit (population) variance.
///
/// A zero-variance input maps to the zero vector.
pub fn layer_normalize(x: &ContextInput) -> Result<ContextInput> {
    let d = x.dim();
    if d < 2 {
        return Err(Error::Config(format!("layer normalization needs D >= 2, got {d}")));
    }
    let n = d as Real;
    let mean = x.0.iter().sum::<Real>() / n;
    let var = x.0.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    let scale = x.0.iter().fold(0.0, |a: Real, v| a.max(v.abs()));
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + scale)) {
        return Ok(ContextInput(vec![0.0; d]));
    }
    Ok(ContextInput(x.0.iter().map(|v| (v - mean) / sd).collect()))
}

/// Largest entrywise `|a - b| / max(1, |a|, |b|)` across two matrices.
///
/// The unit floor keeps entries that cancel to near zero from reporting
/// meaningless relative errors.
pub fn max_rel_diff(a: &Mat, b: &Mat) -> Real {
    debug_assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d == 0.0 {
                0.0
            } else {
                d / x.abs().max(y.abs()).max(1.0)
            }
        })
        .fold(0.0, |acc: Real, v| if v.is_nan() || acc.is_nan() { Real::NAN } else { acc.max(v) })
}

/// [`max_rel_diff`] over two state sequences; infinite if lengths differ.
pub fn max_rel_diff_states(a: &[MemoryState], b: &[MemoryState]) -> Real {
    if a.len() != b.len() {
        return Real::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| max_rel_diff(&x.m, &y.m)).fold(0.0, Real::max)
}
