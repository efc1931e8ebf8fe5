//! Parallel prefix-scan evaluation of the memory recurrence.
//!
//! For a run of `n` steps starting from `M_s`:
//!
//! 1. `P_t = ∏_{i≤t} C_i` by an inclusive product scan over `C`.
//! 2. `D = [M_s, C_1, …, C_n]` scanned with the same product, so
//!    `D_p[t] = M_s ⊙ P_t`.
//! 3. `E_t = U_t / P_t`, then `S_t = Σ_{i≤t} E_i` by an inclusive sum scan.
//! 4. `M_t = D_p[t] + P_t ⊙ S_t`.
//!
//! Each scan is Hillis–Steele, so a scan over `k` items takes `⌈log2 k⌉`
//! combine levels and the widest one (over `D`, `n + 1` items) sets the
//! depth. Entries never interact, so the `H²` entries are split into tiles
//! that run independently on the rayon pool. Every output value is produced
//! by the same fixed sequence of floating-point operations whatever the tile
//! size or worker count.
//!
//! Step 3 divides by the running product. Steps whose calibration has an
//! entry with `|c| < SCAN_DIV_EPS` are applied sequentially, splitting the
//! sequence into segments around them; a segment whose running product
//! leaves the representable window is evaluated sequentially as a whole.
//! Both events are counted in [`ScanStats`].

use crate::error::{Error, Result};
use crate::memory::{write_step, CalMatrix, MemoryState, UpdMatrix};
use crate::tensor::Mat;
use crate::Real;
use rayon::prelude::*;

/// Calibration entries below this magnitude are not divided by.
pub const SCAN_DIV_EPS: Real = 1e-12;

/// Running products outside `[PRODUCT_FLOOR, 1/PRODUCT_FLOOR]` force a
/// sequential segment.
const PRODUCT_FLOOR: Real = 1e-250;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    /// Deepest combine-level count over all scans performed.
    pub levels: usize,
    /// Combine levels of the calibration prefix product alone.
    pub product_levels: usize,
    /// Number of scanned segments.
    pub segments: usize,
    /// Steps that had to be evaluated sequentially.
    pub fallback_steps: usize,
    /// Number of times the sequential fallback was entered.
    pub fallback_events: usize,
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    /// Memory entries handled together by one task.
    pub tile: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { tile: 64 }
    }
}

/// `⌈log2 k⌉`, the Hillis–Steele depth for `k` items (0 for `k ≤ 1`).
pub fn ceil_log2(k: usize) -> usize {
    if k <= 1 {
        0
    } else {
        (usize::BITS - (k - 1).leading_zeros()) as usize
    }
}

pub fn parallel_scan(
    m0: &MemoryState,
    cs: &[CalMatrix],
    us: &[UpdMatrix],
) -> Result<(Vec<MemoryState>, ScanStats)> {
    parallel_scan_with(m0, cs, us, &ScanOptions::default())
}

pub fn parallel_scan_with(
    m0: &MemoryState,
    cs: &[CalMatrix],
    us: &[UpdMatrix],
    opts: &ScanOptions,
) -> Result<(Vec<MemoryState>, ScanStats)> {
    if cs.len() != us.len() {
        return Err(Error::Dimension(format!(
            "{} calibration matrices for {} update matrices",
            cs.len(),
            us.len()
        )));
    }
    let h = m0.dim();
    for (t, (c, u)) in cs.iter().zip(us).enumerate() {
        if c.0.shape() != (h, h) || u.0.shape() != (h, h) {
            return Err(Error::Dimension(format!(
                "step {}: calibration {:?}, update {:?}, memory {h}x{h}",
                m0.step + t + 1,
                c.0.shape(),
                u.0.shape()
            )));
        }
    }
    if opts.tile == 0 {
        return Err(Error::Config("scan tile size must be positive".into()));
    }

    let mut stats = ScanStats::default();
    let mut out: Vec<MemoryState> = Vec::with_capacity(cs.len());
    let mut t = 0;
    while t < cs.len() {
        let start = out.last().cloned().unwrap_or_else(|| m0.clone());
        if has_tiny_entry(&cs[t]) {
            stats.fallback_steps += 1;
            stats.fallback_events += 1;
            out.push(write_step(&start, &cs[t], &us[t])?);
            t += 1;
            continue;
        }
        let mut end = t + 1;
        while end < cs.len() && !has_tiny_entry(&cs[end]) {
            end += 1;
        }
        match scan_segment(&start, &cs[t..end], &us[t..end], opts.tile) {
            Some((states, levels, product_levels)) => {
                stats.segments += 1;
                stats.levels = stats.levels.max(levels);
                stats.product_levels = stats.product_levels.max(product_levels);
                out.extend(states);
            }
            None => {
                stats.fallback_events += 1;
                stats.fallback_steps += end - t;
                let mut cur = start;
                for i in t..end {
                    cur = write_step(&cur, &cs[i], &us[i])?;
                    out.push(cur.clone());
                }
            }
        }
        t = end;
    }
    if let Some(bad) = out.iter().find(|s| !s.m.is_finite()) {
        return Err(Error::Numeric { step: bad.step, what: "scan produced a non-finite memory".into() });
    }
    Ok((out, stats))
}

fn has_tiny_entry(c: &CalMatrix) -> bool {
    c.0.as_slice().iter().any(|v| !(v.abs() >= SCAN_DIV_EPS))
}

/// Inclusive Hillis–Steele scan over `len` time steps of `width` lanes,
/// stored time-major. Returns the number of combine levels.
fn hillis_steele(
    buf: &mut Vec<Real>,
    scratch: &mut Vec<Real>,
    len: usize,
    width: usize,
    op: impl Fn(Real, Real) -> Real,
) -> usize {
    let mut levels = 0;
    let mut offset = 1;
    scratch.resize(buf.len(), 0.0);
    while offset < len {
        let shift = offset * width;
        scratch[..shift].copy_from_slice(&buf[..shift]);
        for i in shift..len * width {
            scratch[i] = op(buf[i - shift], buf[i]);
        }
        std::mem::swap(buf, scratch);
        offset *= 2;
        levels += 1;
    }
    levels
}

struct TileResult {
    values: Vec<Real>,
    levels: usize,
    product_levels: usize,
    ok: bool,
}

fn scan_tile(
    start: &[Real],
    cs: &[CalMatrix],
    us: &[UpdMatrix],
    lanes: std::ops::Range<usize>,
) -> TileResult {
    let n = cs.len();
    let w = lanes.len();
    let mut scratch = Vec::new();

    // 1. prefix product of C
    let mut prod = Vec::with_capacity(n * w);
    for c in cs {
        prod.extend_from_slice(&c.0.as_slice()[lanes.clone()]);
    }
    let product_levels = hillis_steele(&mut prod, &mut scratch, n, w, |a, b| a * b);
    let ok = prod.iter().all(|p| {
        let a = p.abs();
        a.is_finite() && (PRODUCT_FLOOR..=1.0 / PRODUCT_FLOOR).contains(&a)
    });
    if !ok {
        return TileResult { values: Vec::new(), levels: 0, product_levels, ok };
    }

    // 2. D = [M_s, C_1..C_n] under the same product
    let mut dp = Vec::with_capacity((n + 1) * w);
    dp.extend_from_slice(&start[lanes.clone()]);
    for c in cs {
        dp.extend_from_slice(&c.0.as_slice()[lanes.clone()]);
    }
    let d_levels = hillis_steele(&mut dp, &mut scratch, n + 1, w, |a, b| a * b);

    // 3. E = U / P, prefix sum
    let mut e = Vec::with_capacity(n * w);
    for (t, u) in us.iter().enumerate() {
        let row = &prod[t * w..(t + 1) * w];
        e.extend(u.0.as_slice()[lanes.clone()].iter().zip(row).map(|(u, p)| u / p));
    }
    let s_levels = hillis_steele(&mut e, &mut scratch, n, w, |a, b| a + b);

    // 4. M = D_p[1:] + P ⊙ S
    let values: Vec<Real> = dp[w..]
        .iter()
        .zip(&prod)
        .zip(&e)
        .map(|((d, p), s)| d + p * s)
        .collect();
    TileResult {
        values,
        levels: product_levels.max(d_levels).max(s_levels),
        product_levels,
        ok,
    }
}

fn scan_segment(
    start: &MemoryState,
    cs: &[CalMatrix],
    us: &[UpdMatrix],
    tile: usize,
) -> Option<(Vec<MemoryState>, usize, usize)> {
    let h = start.dim();
    let entries = h * h;
    let n = cs.len();
    let ranges: Vec<std::ops::Range<usize>> =
        (0..entries).step_by(tile).map(|a| a..(a + tile).min(entries)).collect();
    let tiles: Vec<TileResult> = ranges
        .par_iter()
        .map(|r| scan_tile(start.m.as_slice(), cs, us, r.clone()))
        .collect();
    if tiles.iter().any(|t| !t.ok) {
        return None;
    }
    let levels = tiles.iter().map(|t| t.levels).max().unwrap_or(0);
    let product_levels = tiles.iter().map(|t| t.product_levels).max().unwrap_or(0);
    let mut states = Vec::with_capacity(n);
    for t in 0..n {
        let mut data = vec![0.0; entries];
        for (r, tr) in ranges.iter().zip(&tiles) {
            let w = r.len();
            data[r.clone()].copy_from_slice(&tr.values[t * w..(t + 1) * w]);
        }
        let m = Mat::from_vec(h, h, data).expect("tile layout covers the matrix");
        states.push(MemoryState { m, step: start.step + t + 1 });
    }
    Some((states, levels, product_levels))
}
