//! Running the memory cell over an episode of contexts.

use crate::autograd::{EpisodeTape, NodeId, Tape};
use crate::calibration::{
    gate, update_matrix, variant_calibration, CalibrationVariant, ShmParams, ThetaDraw, VariantParams,
};
use crate::error::{Error, Result};
use crate::memory::{read, write_step, unroll_closed_form, unroll_sequential, CalMatrix, ContextInput, MemoryState, UpdMatrix};
use crate::scan::{parallel_scan, ScanStats};
use crate::tensor::Mat;
use crate::Real;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalMode {
    Sequential,
    ClosedForm,
    Scan,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sequential" | "seq" => Ok(EvalMode::Sequential),
            "closed_form" | "closed-form" => Ok(EvalMode::ClosedForm),
            "scan" | "parallel" => Ok(EvalMode::Scan),
            _ => Err(Error::Config(format!("unknown evaluation mode '{s}'"))),
        }
    }
}

/// Everything recorded while running one episode.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub xs: Vec<ContextInput>,
    /// `l_t` for the stable variant, `None` otherwise.
    pub draws: Vec<Option<ThetaDraw>>,
    pub cs: Vec<CalMatrix>,
    pub us: Vec<UpdMatrix>,
    /// `M_0 … M_T`.
    pub states: Vec<MemoryState>,
    pub queries: Vec<Vec<Real>>,
    /// `h_1 … h_T`.
    pub reads: Vec<Vec<Real>>,
    pub mode: EvalMode,
    pub scan_stats: Option<ScanStats>,
    pub tape: Option<EpisodeTape>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn final_state(&self) -> &MemoryState {
        self.states.last().expect("trace always holds M_0")
    }
}

/// Calibration and update for one context.
fn step_inputs<R: Rng + ?Sized>(
    params: &ShmParams,
    x: &ContextInput,
    t: usize,
    rng: &mut R,
) -> Result<(CalMatrix, Option<ThetaDraw>, UpdMatrix, Vec<Real>)> {
    if x.dim() != params.dims.d {
        return Err(Error::Dimension(format!("step {t}: context width {} for D = {}", x.dim(), params.dims.d)));
    }
    if !x.is_finite() {
        return Err(Error::Numeric { step: t, what: "non-finite context".into() });
    }
    let cal = variant_calibration(params, x, rng)?;
    let u = update_matrix(params, x);
    let q = params.w_q.apply(&x.0);
    if !cal.c.0.is_finite() || !u.0.is_finite() || q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { step: t, what: "calibration, update or query overflowed".into() });
    }
    Ok((cal.c, cal.draw, u, q))
}

/// Run the cell from `M_0 = 0` over `xs`, evaluating the memory with `mode`.
///
/// Calibration and update matrices never depend on the memory, so they are
/// produced first (consuming `rng` in step order) and the three modes differ
/// only in how `{M_t}` is evaluated.
pub fn run_sequence<R: Rng + ?Sized>(
    params: &ShmParams,
    xs: &[ContextInput],
    mode: EvalMode,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let h = params.dims.h;
    let mut cs = Vec::with_capacity(xs.len());
    let mut us = Vec::with_capacity(xs.len());
    let mut draws = Vec::with_capacity(xs.len());
    let mut queries = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let (c, draw, u, q) = step_inputs(params, x, i + 1, rng)?;
        cs.push(c);
        us.push(u);
        draws.push(draw);
        queries.push(q);
    }
    let m0 = MemoryState::zeros(h);
    let (later, scan_stats) = match mode {
        EvalMode::Sequential => (unroll_sequential(&m0, &cs, &us)?, None),
        EvalMode::ClosedForm => (unroll_closed_form(&m0, &cs, &us)?, None),
        EvalMode::Scan => {
            let (s, stats) = parallel_scan(&m0, &cs, &us)?;
            (s, Some(stats))
        }
    };
    let reads = later.iter().zip(&queries).map(|(m, q)| read(m, q)).collect::<Result<Vec<_>>>()?;
    let mut states = Vec::with_capacity(xs.len() + 1);
    states.push(m0);
    states.extend(later);
    Ok(EpisodeTrace {
        xs: xs.to_vec(),
        draws,
        cs,
        us,
        states,
        queries,
        reads,
        mode,
        scan_stats,
        tape: None,
    })
}

/// Step-by-step evaluation for online rollouts.
///
/// Consumes `rng` exactly like [`run_sequence`], so replaying the collected
/// contexts through [`run_sequence_taped`] with a clone of the starting rng
/// reproduces every read bit-for-bit.
#[derive(Clone, Debug)]
pub struct MemoryCell {
    pub state: MemoryState,
}

impl MemoryCell {
    pub fn new(h: usize) -> Self {
        MemoryCell { state: MemoryState::zeros(h) }
    }

    /// Write `x` and return the read `h_t`.
    pub fn step<R: Rng + ?Sized>(&mut self, params: &ShmParams, x: &ContextInput, rng: &mut R) -> Result<Vec<Real>> {
        let t = self.state.step + 1;
        let (c, _, u, q) = step_inputs(params, x, t, rng)?;
        self.state = write_step(&self.state, &c, &u)?;
        read(&self.state, &q)
    }
}

// Checkpoint order of the base tensors; see `ShmParams::tensors`.
const T_THETA: usize = 0;
const T_VC: usize = 1;
const T_K: usize = 3;
const T_V: usize = 5;
const T_Q: usize = 7;
const T_ETA: usize = 9;
const T_EXTRA: usize = 11;

struct ParamNodes<'a> {
    params: &'a ShmParams,
    ids: Vec<Option<NodeId>>,
}

impl<'a> ParamNodes<'a> {
    fn get(&mut self, tape: &mut Tape, tensor: usize) -> NodeId {
        if let Some(id) = self.ids[tensor] {
            return id;
        }
        let value = self.params.tensors()[tensor].1.to_vec();
        let id = tape.param(tensor, value);
        self.ids[tensor] = Some(id);
        id
    }

    fn affine(&mut self, tape: &mut Tape, first: usize, x: NodeId) -> NodeId {
        let w = self.get(tape, first);
        let b = self.get(tape, first + 1);
        tape.affine(w, b, x)
    }
}

/// Sequential run that also records a tape for [`crate::autograd::backward`].
///
/// Consumes `rng` exactly as [`run_sequence`] does, and every recorded value
/// is bit-identical to the untaped sequential path.
pub fn run_sequence_taped<R: Rng + ?Sized>(
    params: &ShmParams,
    xs: &[ContextInput],
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let h = params.dims.h;
    let mut tape = Tape::new();
    let tensor_meta: Vec<(String, usize)> =
        params.tensors().iter().map(|(n, t)| (n.to_string(), t.len())).collect();
    let mut pn = ParamNodes { params, ids: vec![None; tensor_meta.len()] };

    let m0 = MemoryState::zeros(h);
    let mut m_node = tape.constant(m0.m.as_slice().to_vec());
    let mut trace = EpisodeTrace {
        xs: xs.to_vec(),
        draws: Vec::with_capacity(xs.len()),
        cs: Vec::with_capacity(xs.len()),
        us: Vec::with_capacity(xs.len()),
        states: vec![m0],
        queries: Vec::with_capacity(xs.len()),
        reads: Vec::with_capacity(xs.len()),
        mode: EvalMode::Sequential,
        scan_stats: None,
        tape: None,
    };
    let (mut h_nodes, mut u_nodes, mut c_nodes, mut m_nodes) = (vec![], vec![], vec![], vec![]);

    for (i, x) in xs.iter().enumerate() {
        let t = i + 1;
        tape.set_step(t);
        params.check_context(x).map_err(|e| match e {
            Error::Numeric { what, .. } => Error::Numeric { step: t, what },
            other => other,
        })?;
        let xn = tape.constant(x.0.clone());

        let (c_node, draw) = match params.variant {
            CalibrationVariant::ShmRandomTheta => {
                let draw = crate::calibration::sample_theta_row(params, rng);
                let theta = pn.get(&mut tape, T_THETA);
                let row = tape.row_of(theta, draw.row, h);
                let vc = pn.affine(&mut tape, T_VC, xn);
                let z = tape.outer(row, vc);
                (tape.calibrate(z), Some(draw))
            }
            CalibrationVariant::AllOnes => (tape.constant(vec![1.0; h * h]), None),
            CalibrationVariant::RandomC => {
                let c: Vec<Real> = (0..h * h)
                    .map(|_| {
                        let g: Real = rng.sample(StandardNormal);
                        1.0 + crate::calibration::clamped_tanh(g)
                    })
                    .collect();
                (tape.constant(c), None)
            }
            CalibrationVariant::FixedC => {
                if !matches!(params.extra, VariantParams::FixedC(_)) {
                    return Err(Error::Config("fixed_c variant without its matrix".into()));
                }
                (pn.get(&mut tape, T_EXTRA), None)
            }
            CalibrationVariant::FixedTheta => {
                if !matches!(params.extra, VariantParams::FixedTheta(_)) {
                    return Err(Error::Config("fixed_theta variant without its vector".into()));
                }
                let row = pn.get(&mut tape, T_EXTRA);
                let vc = pn.affine(&mut tape, T_VC, xn);
                let z = tape.outer(row, vc);
                (tape.calibrate(z), None)
            }
            CalibrationVariant::NeuralTheta => {
                if !matches!(params.extra, VariantParams::Neural { .. }) {
                    return Err(Error::Config("neural_theta variant without its network".into()));
                }
                let pre = pn.affine(&mut tape, T_EXTRA, xn);
                let hid = tape.tanh(pre);
                let row = pn.affine(&mut tape, T_EXTRA + 2, hid);
                let vc = pn.affine(&mut tape, T_VC, xn);
                let z = tape.outer(row, vc);
                (tape.calibrate(z), None)
            }
        };

        let k = pn.affine(&mut tape, T_K, xn);
        let v = pn.affine(&mut tape, T_V, xn);
        let eta_pre = pn.affine(&mut tape, T_ETA, xn);
        let eta = tape.sigmoid(eta_pre);
        let vk = tape.outer(v, k);
        let u_node = tape.scale(eta, vk);
        let mc = tape.hadamard(m_node, c_node);
        m_node = tape.add(mc, u_node);
        let q = pn.affine(&mut tape, T_Q, xn);
        let h_node = tape.matvec(m_node, q);

        let m_vals = tape.value(m_node);
        if m_vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { step: t, what: "memory entry overflowed".into() });
        }
        trace.cs.push(CalMatrix(Mat::from_vec(h, h, tape.value(c_node).to_vec())?));
        trace.us.push(UpdMatrix(Mat::from_vec(h, h, tape.value(u_node).to_vec())?));
        trace.states.push(MemoryState { m: Mat::from_vec(h, h, m_vals.to_vec())?, step: t });
        trace.queries.push(tape.value(q).to_vec());
        trace.reads.push(tape.value(h_node).to_vec());
        trace.draws.push(draw);
        h_nodes.push(h_node);
        u_nodes.push(u_node);
        c_nodes.push(c_node);
        m_nodes.push(m_node);
    }
    trace.tape = Some(EpisodeTape { tape, h_nodes, u_nodes, c_nodes, m_nodes, tensor_meta });
    Ok(trace)
}

/// Recompute `C_t` from recorded row draws; bit-identical to the recording.
pub fn replay_calibrations(params: &ShmParams, trace: &EpisodeTrace) -> Result<Vec<CalMatrix>> {
    trace
        .xs
        .iter()
        .zip(&trace.draws)
        .zip(&trace.cs)
        .map(|((x, draw), recorded)| match (params.variant, draw) {
            (CalibrationVariant::ShmRandomTheta, Some(d)) => Ok(crate::calibration::shm_calibration(params, x, *d)),
            (CalibrationVariant::ShmRandomTheta, None) => {
                Err(Error::Config("stable-variant trace is missing a row draw".into()))
            }
            // RandomC is replayed from the record itself.
            (CalibrationVariant::RandomC, _) => Ok(recorded.clone()),
            _ => Ok(variant_calibration(params, x, &mut crate::rng::rng_from_seed(0))?.c),
        })
        .collect()
}

/// Gate values `η(x_t)` along a trace.
pub fn gates(params: &ShmParams, trace: &EpisodeTrace) -> Vec<Real> {
    trace.xs.iter().map(|x| gate(params, x)).collect()
}

/// Calibration and update used for padded steps of batched episodes;
/// `M ⊙ 1 + 0 = M`, so padding never changes the memory.
pub fn padding_step(h: usize) -> (CalMatrix, UpdMatrix) {
    (CalMatrix::ones(h), UpdMatrix::zeros(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{init_params, Dims};
    use crate::memory::max_rel_diff_states;
    use crate::rng::rng_from_seed;

    #[test]
    fn cell_matches_taped_replay() {
        for variant in CalibrationVariant::ALL {
            let p = init_params(Dims::new(3, 4, 8).unwrap(), variant, &mut rng_from_seed(1)).unwrap();
            let inputs = xs(9, 3, 2);
            let mut rng = rng_from_seed(5);
            let start = rng.clone();
            let mut cell = MemoryCell::new(4);
            let online: Vec<_> = inputs.iter().map(|x| cell.step(&p, x, &mut rng).unwrap()).collect();
            let taped = run_sequence_taped(&p, &inputs, &mut start.clone()).unwrap();
            assert_eq!(online, taped.reads, "{variant}");
        }
    }

    fn xs(t: usize, d: usize, seed: u64) -> Vec<ContextInput> {
        let mut rng = rng_from_seed(seed);
        (0..t)
            .map(|_| ContextInput((0..d).map(|_| rng.sample::<Real, _>(StandardNormal)).collect()))
            .collect()
    }

    fn params(variant: CalibrationVariant) -> ShmParams {
        init_params(Dims::new(5, 4, 16).unwrap(), variant, &mut rng_from_seed(21)).unwrap()
    }

    #[test]
    fn empty_sequence_has_only_initial_state() {
        let p = params(CalibrationVariant::ShmRandomTheta);
        let tr = run_sequence(&p, &[], EvalMode::Scan, &mut rng_from_seed(0)).unwrap();
        assert_eq!(tr.states, vec![MemoryState::zeros(4)]);
        assert!(tr.reads.is_empty());
    }

    #[test]
    fn modes_agree_for_every_variant() {
        for v in CalibrationVariant::ALL {
            let p = params(v);
            let x = xs(3, 5, 1);
            let a = run_sequence(&p, &x, EvalMode::Sequential, &mut rng_from_seed(4)).unwrap();
            let b = run_sequence(&p, &x, EvalMode::ClosedForm, &mut rng_from_seed(4)).unwrap();
            let c = run_sequence(&p, &x, EvalMode::Scan, &mut rng_from_seed(4)).unwrap();
            assert_eq!(a.draws, c.draws);
            assert!(max_rel_diff_states(&a.states, &b.states) <= 1e-10, "{v}");
            assert!(max_rel_diff_states(&a.states, &c.states) <= 1e-10, "{v}");
        }
    }

    #[test]
    fn closed_gate_only_decays_initial_memory() {
        let mut p = params(CalibrationVariant::ShmRandomTheta);
        p.eta.weight = Mat::zeros(1, 5);
        p.eta.bias = vec![-1e9];
        let tr = run_sequence(&p, &xs(6, 5, 2), EvalMode::Sequential, &mut rng_from_seed(0)).unwrap();
        // The gate never reaches exactly 0, so writes are subnormal-scale rather than zero.
        assert!(tr.us.iter().all(|u| u.0.as_slice().iter().all(|v| v.abs() < 1e-300)));
        assert!(tr.states.iter().all(|s| s.m.as_slice().iter().all(|v| v.abs() < 1e-300)));
    }

    #[test]
    fn all_ones_is_additive() {
        let p = params(CalibrationVariant::AllOnes);
        let tr = run_sequence(&p, &xs(12, 5, 3), EvalMode::Scan, &mut rng_from_seed(0)).unwrap();
        let mut acc = Mat::zeros(4, 4);
        for (u, s) in tr.us.iter().zip(&tr.states[1..]) {
            acc = acc.add(&u.0);
            assert!(crate::memory::max_rel_diff(&acc, &s.m) <= 1e-12);
        }
    }

    #[test]
    fn taped_run_is_bit_identical_to_plain_run() {
        for v in CalibrationVariant::ALL {
            let p = params(v);
            let x = xs(7, 5, 5);
            let a = run_sequence(&p, &x, EvalMode::Sequential, &mut rng_from_seed(8)).unwrap();
            let b = run_sequence_taped(&p, &x, &mut rng_from_seed(8)).unwrap();
            assert_eq!(a.states, b.states, "{v}");
            assert_eq!(a.reads, b.reads, "{v}");
            assert_eq!(a.cs, b.cs, "{v}");
            assert_eq!(a.draws, b.draws, "{v}");
            assert!(b.tape.as_ref().unwrap().tape.replay_matches());
        }
    }

    #[test]
    fn recorded_draws_replay_calibration_exactly() {
        for v in CalibrationVariant::ALL {
            let p = params(v);
            let tr = run_sequence(&p, &xs(9, 5, 6), EvalMode::Sequential, &mut rng_from_seed(3)).unwrap();
            assert_eq!(replay_calibrations(&p, &tr).unwrap(), tr.cs, "{v}");
        }
    }

    #[test]
    fn non_finite_context_names_its_step() {
        let p = params(CalibrationVariant::ShmRandomTheta);
        let mut x = xs(4, 5, 7);
        x[2].0[1] = Real::NAN;
        match run_sequence(&p, &x, EvalMode::Sequential, &mut rng_from_seed(0)) {
            Err(Error::Numeric { step, .. }) => assert_eq!(step, 3),
            other => panic!("expected numeric error, got {other:?}"),
        }
        assert!(matches!(
            run_sequence_taped(&p, &x, &mut rng_from_seed(0)),
            Err(Error::Numeric { step: 3, .. })
        ));
    }

    #[test]
    fn padding_is_a_no_op() {
        let p = params(CalibrationVariant::ShmRandomTheta);
        let tr = run_sequence(&p, &xs(4, 5, 8), EvalMode::Sequential, &mut rng_from_seed(0)).unwrap();
        let (c, u) = padding_step(4);
        let last = tr.final_state();
        assert_eq!(crate::memory::write_step(last, &c, &u).unwrap().m, last.m);
    }
}
