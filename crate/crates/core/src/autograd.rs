//! Reverse-mode differentiation through the memory recurrence.
//!
//! A [`Tape`] records the primitive operations of one episode (affine maps,
//! `tanh`, sigmoid, outer and Hadamard products, matrix-vector reads) with
//! their forward values. [`backward`] walks it in reverse from per-step read
//! gradients `∂L/∂h_t` to gradients for every parameter tensor. Discrete θ-row
//! draws are constants of the episode: only the drawn row receives gradient.

use crate::calibration::{ShmParams, TANH_CLAMP_EPS};
use crate::episode::EpisodeTrace;
use crate::error::{Error, Result};
use crate::tensor::sigmoid;
use crate::Real;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Const,
    Param { tensor: usize },
    /// `W x + b`, `W` is `len(b) × len(x)`.
    Affine { w: NodeId, b: NodeId, x: NodeId },
    RowOf { src: NodeId, row: usize },
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// `1 + clamp(tanh(z), -1 + ε, 1 - ε)`
    Calibrate(NodeId),
    Outer(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// scalar node times vector node
    Scale { s: NodeId, x: NodeId },
    /// square-or-not matrix node times vector node
    MatVec { m: NodeId, x: NodeId },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Vec<Real>,
    step: usize,
    needs_grad: bool,
}

/// Ordered record of primitive operations with cached forward values.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    step: usize,
}

fn affine_forward(w: &[Real], b: &[Real], x: &[Real]) -> Vec<Real> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| w[i * n..(i + 1) * n].iter().zip(x).map(|(a, c)| a * c).sum::<Real>() + bi)
        .collect()
}

fn outer_forward(a: &[Real], b: &[Real]) -> Vec<Real> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        out.extend(b.iter().map(|&bj| ai * bj));
    }
    out
}

fn matvec_forward(m: &[Real], x: &[Real]) -> Vec<Real> {
    let n = x.len();
    m.chunks(n).map(|row| row.iter().zip(x).map(|(a, c)| a * c).sum()).collect()
}

fn calibrate_value(z: Real) -> Real {
    1.0 + z.tanh().clamp(-1.0 + TANH_CLAMP_EPS, 1.0 - TANH_CLAMP_EPS)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Subsequent nodes are tagged with this step for error reporting.
    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub fn value(&self, id: NodeId) -> &[Real] {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Vec<Real>) -> NodeId {
        let needs_grad = match &op {
            Op::Const => false,
            Op::Param { .. } => true,
            Op::Affine { w, b, x } => self.ng(*w) || self.ng(*b) || self.ng(*x),
            Op::RowOf { src, .. } => self.ng(*src),
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Calibrate(a) => self.ng(*a),
            Op::Outer(a, b) | Op::Hadamard(a, b) | Op::Add(a, b) => self.ng(*a) || self.ng(*b),
            Op::Scale { s, x } => self.ng(*s) || self.ng(*x),
            Op::MatVec { m, x } => self.ng(*m) || self.ng(*x),
        };
        self.nodes.push(Node { op, value, step: self.step, needs_grad });
        self.nodes.len() - 1
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn constant(&mut self, value: Vec<Real>) -> NodeId {
        self.push(Op::Const, value)
    }

    /// Leaf holding a snapshot of parameter tensor `tensor`.
    pub fn param(&mut self, tensor: usize, value: Vec<Real>) -> NodeId {
        self.push(Op::Param { tensor }, value)
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
        let v = affine_forward(self.value(w), self.value(b), self.value(x));
        self.push(Op::Affine { w, b, x }, v)
    }

    pub fn row_of(&mut self, src: NodeId, row: usize, width: usize) -> NodeId {
        let v = self.value(src)[row * width..(row + 1) * width].to_vec();
        self.push(Op::RowOf { src, row }, v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|z| z.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&z| sigmoid(z)).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn calibrate(&mut self, z: NodeId) -> NodeId {
        let v = self.value(z).iter().map(|&z| calibrate_value(z)).collect();
        self.push(Op::Calibrate(z), v)
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = outer_forward(self.value(a), self.value(b));
        self.push(Op::Outer(a, b), v)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(Op::Hadamard(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(Op::Add(a, b), v)
    }

    pub fn scale(&mut self, s: NodeId, x: NodeId) -> NodeId {
        let sv = self.value(s)[0];
        let v = self.value(x).iter().map(|v| v * sv).collect();
        self.push(Op::Scale { s, x }, v)
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let v = matvec_forward(self.value(m), self.value(x));
        self.push(Op::MatVec { m, x }, v)
    }

    /// Recompute every node from the recorded leaves.
    pub fn replay(&self) -> Vec<Vec<Real>> {
        let mut vals: Vec<Vec<Real>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Const | Op::Param { .. } => node.value.clone(),
                Op::Affine { w, b, x } => affine_forward(&vals[*w], &vals[*b], &vals[*x]),
                Op::RowOf { src, row } => {
                    let w = node.value.len();
                    vals[*src][row * w..(row + 1) * w].to_vec()
                }
                Op::Tanh(a) => vals[*a].iter().map(|z| z.tanh()).collect(),
                Op::Sigmoid(a) => vals[*a].iter().map(|&z| sigmoid(z)).collect(),
                Op::Calibrate(a) => vals[*a].iter().map(|&z| calibrate_value(z)).collect(),
                Op::Outer(a, b) => outer_forward(&vals[*a], &vals[*b]),
                Op::Hadamard(a, b) => vals[*a].iter().zip(&vals[*b]).map(|(x, y)| x * y).collect(),
                Op::Add(a, b) => vals[*a].iter().zip(&vals[*b]).map(|(x, y)| x + y).collect(),
                Op::Scale { s, x } => {
                    let sv = vals[*s][0];
                    vals[*x].iter().map(|v| v * sv).collect()
                }
                Op::MatVec { m, x } => matvec_forward(&vals[*m], &vals[*x]),
            };
            vals.push(v);
        }
        vals
    }

    /// True when [`Tape::replay`] reproduces every cached value bit for bit.
    pub fn replay_matches(&self) -> bool {
        self.replay()
            .iter()
            .zip(&self.nodes)
            .all(|(a, n)| a.len() == n.value.len() && a.iter().zip(&n.value).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// Reverse sweep from the given seeds. Returns the adjoint of every node
    /// (empty for nodes that do not need a gradient or never received one).
    pub fn reverse(&self, seeds: &[(NodeId, &[Real])]) -> Result<Vec<Vec<Real>>> {
        let mut grads: Vec<Vec<Real>> = vec![Vec::new(); self.nodes.len()];
        for (id, g) in seeds {
            if g.len() != self.nodes[*id].value.len() {
                return Err(Error::Dimension(format!(
                    "seed of length {} for node of length {}",
                    g.len(),
                    self.nodes[*id].value.len()
                )));
            }
            accumulate(&mut grads[*id], g);
        }
        for id in (0..self.nodes.len()).rev() {
            if grads[id].is_empty() {
                continue;
            }
            let node = &self.nodes[id];
            if grads[id].iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric { step: node.step, what: "non-finite gradient".into() });
            }
            let g = std::mem::take(&mut grads[id]);
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[id] = g;
        }
        Ok(grads)
    }

    fn propagate(&self, op: &Op, y: &[Real], g: &[Real], grads: &mut [Vec<Real>]) {
        match *op {
            Op::Const | Op::Param { .. } => {}
            Op::Affine { w, b, x } => {
                let xv = self.value(x);
                let n = xv.len();
                if self.ng(w) {
                    let gw = slot(grads, w, g.len() * n);
                    for (i, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            for (o, xj) in gw[i * n..(i + 1) * n].iter_mut().zip(xv) {
                                *o += gi * xj;
                            }
                        }
                    }
                }
                if self.ng(b) {
                    accumulate(&mut grads[b], g);
                }
                if self.ng(x) {
                    let wv = self.value(w);
                    let gx = slot(grads, x, n);
                    for (i, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            for (o, wij) in gx.iter_mut().zip(&wv[i * n..(i + 1) * n]) {
                                *o += gi * wij;
                            }
                        }
                    }
                }
            }
            Op::RowOf { src, row } => {
                if self.ng(src) {
                    let len = self.value(src).len();
                    let w = g.len();
                    let gs = slot(grads, src, len);
                    for (o, gi) in gs[row * w..(row + 1) * w].iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::Tanh(a) => {
                let d: Vec<Real> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(&mut grads[a], &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<Real> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(&mut grads[a], &d);
            }
            Op::Calibrate(a) => {
                let lo = -1.0 + TANH_CLAMP_EPS;
                let hi = 1.0 - TANH_CLAMP_EPS;
                let d: Vec<Real> = g
                    .iter()
                    .zip(self.value(a))
                    .map(|(g, z)| {
                        let t = z.tanh();
                        if t > lo && t < hi {
                            g * (1.0 - t * t)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(&mut grads[a], &d);
            }
            Op::Outer(a, b) => {
                let av = self.value(a);
                let bv = self.value(b);
                let n = bv.len();
                if self.ng(a) {
                    let d: Vec<Real> = (0..av.len())
                        .map(|i| g[i * n..(i + 1) * n].iter().zip(bv).map(|(g, b)| g * b).sum())
                        .collect();
                    accumulate(&mut grads[a], &d);
                }
                if self.ng(b) {
                    let mut d = vec![0.0; n];
                    for (i, ai) in av.iter().enumerate() {
                        for (o, gij) in d.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *o += gij * ai;
                        }
                    }
                    accumulate(&mut grads[b], &d);
                }
            }
            Op::Hadamard(a, b) => {
                if self.ng(a) {
                    let d: Vec<Real> = g.iter().zip(self.value(b)).map(|(g, b)| g * b).collect();
                    accumulate(&mut grads[a], &d);
                }
                if self.ng(b) {
                    let d: Vec<Real> = g.iter().zip(self.value(a)).map(|(g, a)| g * a).collect();
                    accumulate(&mut grads[b], &d);
                }
            }
            Op::Add(a, b) => {
                if self.ng(a) {
                    accumulate(&mut grads[a], g);
                }
                if self.ng(b) {
                    accumulate(&mut grads[b], g);
                }
            }
            Op::Scale { s, x } => {
                let sv = self.value(s)[0];
                if self.ng(s) {
                    let d: Real = g.iter().zip(self.value(x)).map(|(g, x)| g * x).sum();
                    accumulate(&mut grads[s], &[d]);
                }
                if self.ng(x) {
                    let d: Vec<Real> = g.iter().map(|g| g * sv).collect();
                    accumulate(&mut grads[x], &d);
                }
            }
            Op::MatVec { m, x } => {
                let xv = self.value(x);
                let n = xv.len();
                if self.ng(m) {
                    let gm = slot(grads, m, g.len() * n);
                    for (i, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            for (o, xj) in gm[i * n..(i + 1) * n].iter_mut().zip(xv) {
                                *o += gi * xj;
                            }
                        }
                    }
                }
                if self.ng(x) {
                    let mv = self.value(m);
                    let gx = slot(grads, x, n);
                    for (i, gi) in g.iter().enumerate() {
                        for (o, mij) in gx.iter_mut().zip(&mv[i * n..(i + 1) * n]) {
                            *o += gi * mij;
                        }
                    }
                }
            }
        }
    }

    /// Parameter tensor index of a leaf node.
    fn param_tensor(&self, id: NodeId) -> Option<usize> {
        match self.nodes[id].op {
            Op::Param { tensor } => Some(tensor),
            _ => None,
        }
    }
}

fn slot(grads: &mut [Vec<Real>], id: NodeId, len: usize) -> &mut [Real] {
    if grads[id].is_empty() {
        grads[id] = vec![0.0; len];
    }
    &mut grads[id]
}

fn accumulate(dst: &mut Vec<Real>, src: &[Real]) {
    if dst.is_empty() {
        dst.extend_from_slice(src);
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

/// Gradient of one named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedGrad {
    pub name: String,
    pub values: Vec<Real>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    /// One entry per parameter tensor, in parameter order.
    pub tensors: Vec<NamedGrad>,
    /// Global L2 norm before any clipping.
    pub norm: Real,
    pub clip_events: usize,
    /// `∂L/∂U_t` per step, flattened row-major.
    pub update_adjoints: Vec<Vec<Real>>,
}

impl GradReport {
    pub fn zeros_like(params: &ShmParams) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| NamedGrad { name: name.to_string(), values: vec![0.0; t.len()] })
            .collect();
        GradReport { tensors, norm: 0.0, clip_events: 0, update_adjoints: Vec::new() }
    }

    pub fn get(&self, name: &str) -> Option<&[Real]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| t.values.as_slice())
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<Real>) {
        self.tensors.push(NamedGrad { name: name.into(), values });
        self.norm = self.global_norm();
    }

    /// Overflow-safe global L2 norm.
    pub fn global_norm(&self) -> Real {
        let scale = self
            .tensors
            .iter()
            .flat_map(|t| t.values.iter())
            .fold(0.0, |a: Real, v| a.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        let ss: Real = self
            .tensors
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|v| (v / scale) * (v / scale))
            .sum();
        scale * ss.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// Element-wise sum with another report of identical layout.
    pub fn accumulate(&mut self, other: &GradReport) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Dimension("gradient reports differ in tensor count".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.values.len() != b.values.len() || a.name != b.name {
                return Err(Error::Dimension(format!("gradient tensor {} vs {}", a.name, b.name)));
            }
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += y;
            }
        }
        self.clip_events += other.clip_events;
        self.norm = self.global_norm();
        Ok(())
    }

    pub fn scale(&mut self, s: Real) {
        for t in &mut self.tensors {
            for v in &mut t.values {
                *v *= s;
            }
        }
        self.norm = self.global_norm();
    }
}

/// Parameter gradients of an episode from per-step read gradients.
///
/// `dl_dh[t]` is `∂L/∂h_{t+1}`. The trace must come from
/// [`crate::episode::run_sequence_taped`].
pub fn backward(trace: &EpisodeTrace, dl_dh: &[Vec<Real>]) -> Result<GradReport> {
    let tape = trace
        .tape
        .as_ref()
        .ok_or_else(|| Error::Config("trace was recorded without a tape".into()))?;
    if dl_dh.len() != tape.h_nodes.len() {
        return Err(Error::Dimension(format!(
            "{} read gradients for {} steps",
            dl_dh.len(),
            tape.h_nodes.len()
        )));
    }
    let seeds: Vec<(NodeId, &[Real])> = tape
        .h_nodes
        .iter()
        .zip(dl_dh)
        .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
        .map(|(&id, g)| (id, g.as_slice()))
        .collect();
    let grads = tape.tape.reverse(&seeds)?;

    let mut report = GradReport {
        tensors: tape
            .tensor_meta
            .iter()
            .map(|(name, len)| NamedGrad { name: name.clone(), values: vec![0.0; *len] })
            .collect(),
        ..Default::default()
    };
    for (id, g) in grads.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        if let Some(t) = tape.tape.param_tensor(id) {
            for (o, v) in report.tensors[t].values.iter_mut().zip(g) {
                *o += v;
            }
        }
    }
    report.update_adjoints = tape
        .u_nodes
        .iter()
        .map(|&id| {
            if grads[id].is_empty() {
                vec![0.0; tape.tape.value(id).len()]
            } else {
                grads[id].clone()
            }
        })
        .collect();
    report.norm = report.global_norm();
    Ok(report)
}

/// Rescale so the global L2 norm is at most `max_norm`.
pub fn clip_gradients(report: &GradReport, max_norm: Real) -> Result<GradReport> {
    if !(max_norm > 0.0) {
        return Err(Error::Config(format!("clip max_norm must be positive, got {max_norm}")));
    }
    let mut out = report.clone();
    let norm = report.global_norm();
    out.norm = norm;
    if norm > max_norm {
        let s = max_norm / norm;
        for t in &mut out.tensors {
            for v in &mut t.values {
                *v *= s;
            }
        }
        out.clip_events += 1;
    }
    Ok(out)
}

/// Closed forms of the critical memory gradients for a fixed scalar
/// calibration `θ` over a span `t - i`: `(span·θ^{span-1}, θ^{span})`.
pub fn critical_gradients_fixed_c(theta: Real, span: u32) -> (Real, Real) {
    assert!(span >= 1, "span must be at least 1");
    let g1 = span as Real * theta.powi(span as i32 - 1);
    let g2 = theta.powi(span as i32);
    (g1, g2)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[Real], step: Real, mut f: impl FnMut(&[Real]) -> Real) -> Result<Vec<Real>> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Central-difference gradient of `loss(params)` for every scalar parameter.
///
/// `loss` must pin its own randomness (e.g. reseed the θ stream on every
/// call) so both perturbations see the same row draws.
pub fn finite_difference_oracle(
    params: &ShmParams,
    step: Real,
    mut loss: impl FnMut(&ShmParams) -> Result<Real>,
) -> Result<Vec<NamedGrad>> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = params.clone();
    let names: Vec<(String, usize)> =
        params.tensors().iter().map(|(n, t)| (n.to_string(), t.len())).collect();
    let mut out = Vec::with_capacity(names.len());
    for (ti, (name, len)) in names.into_iter().enumerate() {
        let mut values = Vec::with_capacity(len);
        for i in 0..len {
            let orig = probe.tensors()[ti].1[i];
            probe.tensors_mut()[ti].1[i] = orig + step;
            let up = loss(&probe)?;
            probe.tensors_mut()[ti].1[i] = orig - step;
            let down = loss(&probe)?;
            probe.tensors_mut()[ti].1[i] = orig;
            values.push((up - down) / (2.0 * step));
        }
        out.push(NamedGrad { name, values });
    }
    Ok(out)
}

/// Handles into the tape of a recorded episode.
#[derive(Clone, Debug)]
pub struct EpisodeTape {
    pub tape: Tape,
    pub h_nodes: Vec<NodeId>,
    pub u_nodes: Vec<NodeId>,
    pub c_nodes: Vec<NodeId>,
    pub m_nodes: Vec<NodeId>,
    /// Name and length of every parameter tensor.
    pub tensor_meta: Vec<(String, usize)>,
}
