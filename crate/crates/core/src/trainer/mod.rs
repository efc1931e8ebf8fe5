//! Supervised and actor-critic training through the memory, evaluation and
//! checkpoints.
//!
//! Heads consume the read vector `h_t` directly. Every update collects its
//! per-sequence gradients in a fixed order before summing, so results do not
//! depend on the worker count.

pub mod checkpoint;
pub mod config;
pub mod optim;

pub use config::{Mode, TaskKind, TrainConfig};
pub use optim::Adam;

use crate::autograd::{backward, clip_gradients, GradReport};
use crate::calibration::{init_params, ShmParams};
use crate::envs::{agent_context, make_supervised_dataset, Dataset, Env, Sequence};
use crate::episode::{run_sequence, run_sequence_taped, EvalMode, MemoryCell};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, StreamRng};
use crate::tensor::{outer, Affine};
use crate::Real;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::time::Instant;

pub fn softmax(z: &[Real]) -> Vec<Real> {
    let max = z.iter().fold(Real::NEG_INFINITY, |a, v| a.max(*v));
    let e: Vec<Real> = z.iter().map(|v| (v - max).exp()).collect();
    let s: Real = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[Real]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, Real::NEG_INFINITY), |(bi, bv), (i, x)| if *x > bv { (i, *x) } else { (bi, bv) })
        .0
}

fn sample_categorical<R: Rng + ?Sized>(p: &[Real], rng: &mut R) -> usize {
    let u: Real = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Policy (softmax over actions or classes) and value heads on `h_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyValueHeads {
    pub policy: Affine,
    pub value: Affine,
}

impl PolicyValueHeads {
    pub fn zeros(h: usize, outputs: usize) -> Self {
        PolicyValueHeads { policy: Affine::zeros(h, outputs), value: Affine::zeros(h, 1) }
    }

    pub fn init<R: Rng + ?Sized>(h: usize, outputs: usize, rng: &mut R) -> Self {
        PolicyValueHeads { policy: Affine::init(h, outputs, rng), value: Affine::zeros(h, 1) }
    }

    pub fn probs(&self, h: &[Real]) -> Vec<Real> {
        softmax(&self.policy.apply(h))
    }

    pub fn value(&self, h: &[Real]) -> Real {
        self.value.apply(h)[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub params: ShmParams,
    pub heads: PolicyValueHeads,
}

impl Agent {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let tree = SeedTree::new(config.seed);
        let mut rng = tree.stream("init", 0);
        let params = init_params(config.dims()?, config.variant, &mut rng)?;
        let heads = PolicyValueHeads::init(config.h, config.outputs()?, &mut rng);
        Ok(Agent { params, heads })
    }

    /// Memory tensors, then `policy.weight`, `policy.bias`, `value.weight`, `value.bias`.
    pub fn tensors(&self) -> Vec<(&'static str, &[Real])> {
        let mut t = self.params.tensors();
        t.push(("policy.weight", self.heads.policy.weight.as_slice()));
        t.push(("policy.bias", &self.heads.policy.bias));
        t.push(("value.weight", self.heads.value.weight.as_slice()));
        t.push(("value.bias", &self.heads.value.bias));
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [Real])> {
        let mut t = self.params.tensors_mut();
        t.push(("policy.weight", self.heads.policy.weight.as_mut_slice()));
        t.push(("policy.bias", &mut self.heads.policy.bias));
        t.push(("value.weight", self.heads.value.weight.as_mut_slice()));
        t.push(("value.bias", &mut self.heads.value.bias));
        t
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Accumulates head gradients and the read gradients `∂L/∂h_t`.
struct HeadGrads {
    policy_w: Vec<Real>,
    policy_b: Vec<Real>,
    value_w: Vec<Real>,
    value_b: Vec<Real>,
}

impl HeadGrads {
    fn new(heads: &PolicyValueHeads) -> Self {
        HeadGrads {
            policy_w: vec![0.0; heads.policy.num_params() - heads.policy.bias.len()],
            policy_b: vec![0.0; heads.policy.bias.len()],
            value_w: vec![0.0; heads.value.weight.as_slice().len()],
            value_b: vec![0.0; 1],
        }
    }

    /// Back through both heads given `∂L/∂logits` and `∂L/∂V`; returns `∂L/∂h`.
    fn add(&mut self, heads: &PolicyValueHeads, h: &[Real], dz: &[Real], dv: Real) -> Vec<Real> {
        let gw = outer(dz, h);
        for (a, b) in self.policy_w.iter_mut().zip(gw.as_slice()) {
            *a += b;
        }
        for (a, b) in self.policy_b.iter_mut().zip(dz) {
            *a += b;
        }
        let mut dh = heads.policy.weight.matvec_t(dz);
        if dv != 0.0 {
            for (a, hv) in self.value_w.iter_mut().zip(h) {
                *a += dv * hv;
            }
            self.value_b[0] += dv;
            for (d, w) in dh.iter_mut().zip(heads.value.weight.as_slice()) {
                *d += dv * w;
            }
        }
        dh
    }

    fn into_report(self, mut report: GradReport) -> GradReport {
        report.push("policy.weight", self.policy_w);
        report.push("policy.bias", self.policy_b);
        report.push("value.weight", self.value_w);
        report.push("value.bias", self.value_b);
        report
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub metric: String,
    pub value: Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub variant: String,
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
    /// `(step, seconds per update)`; kept out of the CSV so reports stay reproducible.
    pub wall_clock: Vec<(u64, Real)>,
    pub clip_events: usize,
}

impl RunReport {
    fn new(config: &TrainConfig) -> Self {
        RunReport {
            seed: config.seed,
            variant: config.variant.name().to_string(),
            config_hash: config.hash(),
            rows: vec![],
            wall_clock: vec![],
            clip_events: 0,
        }
    }

    pub fn record(&mut self, step: u64, metric: &str, value: Real) {
        self.rows.push(MetricRow { step, metric: metric.to_string(), value });
    }

    pub fn last(&self, metric: &str) -> Option<Real> {
        self.rows.iter().rev().find(|r| r.metric == metric).map(|r| r.value)
    }

    pub fn series(&self, metric: &str) -> Vec<(u64, Real)> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| (r.step, r.value)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,metric,value,seed,variant,config-hash\n");
        for r in &self.rows {
            writeln!(s, "{},{},{:.17e},{},{},{}", r.step, r.metric, r.value, self.seed, self.variant, self.config_hash)
                .expect("writing to a String");
        }
        s
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: RunReport,
    /// Final parameters, or the last finite ones when training aborted.
    pub agent: Agent,
    pub aborted: Option<Error>,
}

fn descend(agent: &mut Agent, opt: &mut Adam, mut grads: GradReport, clip: Option<Real>, report: &mut RunReport) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric { step: opt.steps as usize + 1, what: "non-finite gradient".into() });
    }
    if let Some(max_norm) = clip {
        grads = clip_gradients(&grads, max_norm)?;
        report.clip_events += grads.clip_events;
    }
    opt.step(agent.tensors_mut(), &grads)
}

fn sequence_gradient(agent: &Agent, seq: &Sequence, rng: &mut StreamRng) -> Result<(Real, GradReport)> {
    let trace = run_sequence_taped(&agent.params, &seq.xs, rng)?;
    let scored = seq.targets.iter().filter(|t| t.is_some()).count().max(1) as Real;
    let mut heads = HeadGrads::new(&agent.heads);
    let mut loss = 0.0;
    let mut dl_dh = Vec::with_capacity(seq.xs.len());
    for (h, target) in trace.reads.iter().zip(&seq.targets) {
        match target {
            Some(y) => {
                let mut p = agent.heads.probs(h);
                loss -= p[*y].max(Real::MIN_POSITIVE).ln() / scored;
                p[*y] -= 1.0;
                p.iter_mut().for_each(|v| *v /= scored);
                dl_dh.push(heads.add(&agent.heads, h, &p, 0.0));
            }
            None => dl_dh.push(vec![0.0; h.len()]),
        }
    }
    let report = backward(&trace, &dl_dh)?;
    Ok((loss, heads.into_report(report)))
}

fn sum_reports(parts: Vec<GradReport>, scale: Real) -> Result<GradReport> {
    let mut it = parts.into_iter();
    let mut total = it.next().ok_or_else(|| Error::Config("empty batch".into()))?;
    for g in it {
        total.accumulate(&g)?;
    }
    total.scale(scale);
    Ok(total)
}

/// Fraction of scored steps predicted correctly (argmax of the policy head).
pub fn supervised_accuracy(agent: &Agent, data: &Dataset, seed: u64) -> Result<Real> {
    let tree = SeedTree::new(seed);
    let counts = data
        .sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let trace = run_sequence(&agent.params, &seq.xs, EvalMode::Sequential, &mut tree.stream("eval", i as u64))?;
            let mut hit = 0usize;
            let mut total = 0usize;
            for (h, y) in trace.reads.iter().zip(&seq.targets) {
                if let Some(y) = y {
                    total += 1;
                    hit += usize::from(argmax(&agent.heads.policy.apply(h)) == *y);
                }
            }
            Ok((hit, total))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |(a, b), (h, t)| (a + h, b + t));
    Ok(if total == 0 { 0.0 } else { hit as Real / total as Real })
}

/// Minimize cross-entropy of the scored steps; evaluates test accuracy every
/// `eval_every` epochs.
pub fn train_supervised(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.mode != Mode::Supervised {
        return Err(Error::Config("train_supervised needs mode = supervised".into()));
    }
    let tree = SeedTree::new(config.seed);
    let task = config.supervised_task();
    let train = make_supervised_dataset(task, config.dataset_size, tree.seed("dataset", 0))?;
    let test = make_supervised_dataset(task, config.test_size, tree.seed("dataset", 1))?;
    let mut agent = Agent::init(config)?;
    train_supervised_on(config, &mut agent, &train, &test)
}

pub fn train_supervised_on(config: &TrainConfig, agent: &mut Agent, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    let tree = SeedTree::new(config.seed);
    let mut report = RunReport::new(config);
    let mut opt = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..train.sequences.len()).collect();
    let mut shuffle = tree.stream("shuffle", 0);
    let mut update = 0u64;
    let mut last_good = agent.clone();
    let eval_seed = tree.seed("eval", 0);

    let acc = supervised_accuracy(agent, test, eval_seed)?;
    report.record(0, "accuracy", acc);
    for epoch in 1..=config.epochs as u64 {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let started = Instant::now();
        let batches = order.chunks(config.batch);
        let n_batches = batches.len();
        for batch in batches {
            update += 1;
            let theta = tree.child("theta", update);
            let parts = batch
                .par_iter()
                .map(|&i| sequence_gradient(agent, &train.sequences[i], &mut theta.stream("seq", i as u64)))
                .collect::<Result<Vec<_>>>();
            let step = parts.and_then(|parts| {
                let loss: Real = parts.iter().map(|(l, _)| l).sum::<Real>() / batch.len() as Real;
                if !loss.is_finite() {
                    return Err(Error::Diverged { update, reason: "loss is not finite".into() });
                }
                epoch_loss += loss;
                let grads = sum_reports(parts.into_iter().map(|(_, g)| g).collect(), 1.0 / batch.len() as Real)?;
                descend(agent, &mut opt, grads, config.clip, &mut report)
            });
            if let Err(e) = step.and_then(|_| {
                if agent.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Diverged { update, reason: "parameters are not finite".into() })
                }
            }) {
                return Ok(abort(report, last_good, e, update));
            }
            last_good = agent.clone();
        }
        report.wall_clock.push((epoch, started.elapsed().as_secs_f64() as Real / n_batches.max(1) as Real));
        report.record(epoch, "train_loss", epoch_loss / n_batches.max(1) as Real);
        if epoch % config.eval_every as u64 == 0 || epoch == config.epochs as u64 {
            let acc = supervised_accuracy(agent, test, eval_seed)?;
            report.record(epoch, "accuracy", acc);
            report.record(epoch, "clip_events", report.clip_events as Real);
            if config.target.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }
    Ok(TrainOutcome { report, agent: agent.clone(), aborted: None })
}

fn abort(mut report: RunReport, last_good: Agent, e: Error, update: u64) -> TrainOutcome {
    let e = match e {
        e @ Error::Diverged { .. } => e,
        other => Error::Diverged { update, reason: other.to_string() },
    };
    report.record(update, "aborted", 1.0);
    TrainOutcome { report, agent: last_good, aborted: Some(e) }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub xs: Vec<crate::memory::ContextInput>,
    pub actions: Vec<usize>,
    pub rewards: Vec<Real>,
    pub success: bool,
    /// Rng state before the first calibration draw, for the taped replay.
    theta_start: StreamRng,
}

impl Rollout {
    pub fn episode_return(&self) -> Real {
        self.rewards.iter().sum()
    }
}

/// Action selection for rollouts and evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    Greedy(&'a Agent),
    Sampled(&'a Agent),
    Random,
    Clairvoyant,
}

/// Play one episode.
pub fn rollout(env: &mut dyn Env, policy: Policy<'_>, env_seed: u64, theta_rng: &mut StreamRng, action_rng: &mut StreamRng) -> Result<Rollout> {
    let theta_start = theta_rng.clone();
    let mut tr = env.reset(env_seed);
    let n_actions = env.num_actions();
    let mut cell = match policy {
        Policy::Greedy(a) | Policy::Sampled(a) => Some(MemoryCell::new(a.params.dims.h)),
        _ => None,
    };
    let mut out = Rollout { xs: vec![], actions: vec![], rewards: vec![], success: false, theta_start };
    let mut prev = None;
    while !tr.done {
        let x = agent_context(&tr.observation, prev, n_actions);
        let action = match policy {
            Policy::Greedy(a) | Policy::Sampled(a) => {
                let h = cell.as_mut().expect("agent policies own a cell").step(&a.params, &x, theta_rng)?;
                let p = a.heads.probs(&h);
                if matches!(policy, Policy::Greedy(_)) {
                    argmax(&p)
                } else {
                    sample_categorical(&p, action_rng)
                }
            }
            Policy::Random => action_rng.random_range(0..n_actions),
            Policy::Clairvoyant => env.clairvoyant_action(),
        };
        tr = env.step(action)?;
        out.xs.push(x);
        out.actions.push(action);
        out.rewards.push(tr.reward);
        prev = Some(action);
        if out.xs.len() > env.horizon() {
            return Err(Error::Protocol("episode exceeded the environment horizon".into()));
        }
    }
    out.success = env.success();
    Ok(out)
}

/// Actor-critic loss gradients for one episode. Returns the summed loss terms
/// `(policy, value, entropy)` and unnormalized gradients.
pub fn actor_critic_gradient(agent: &Agent, ep: &Rollout, config: &TrainConfig) -> Result<((Real, Real, Real), GradReport)> {
    let trace = run_sequence_taped(&agent.params, &ep.xs, &mut ep.theta_start.clone())?;
    let n = ep.rewards.len();
    let mut returns = vec![0.0; n];
    let mut g = 0.0;
    for t in (0..n).rev() {
        g = ep.rewards[t] + config.gamma * g;
        returns[t] = g;
    }
    let mut heads = HeadGrads::new(&agent.heads);
    let (mut lp, mut lv, mut le) = (0.0, 0.0, 0.0);
    let mut dl_dh = Vec::with_capacity(n);
    for t in 0..n {
        let h = &trace.reads[t];
        let p = agent.heads.probs(h);
        let v = agent.heads.value(h);
        let adv = returns[t] - v;
        let a = ep.actions[t];
        let logp: Vec<Real> = p.iter().map(|pi| pi.max(Real::MIN_POSITIVE).ln()).collect();
        let entropy: Real = -p.iter().zip(&logp).map(|(pi, l)| pi * l).sum::<Real>();
        lp -= logp[a] * adv;
        lv += 0.5 * config.value_coef * adv * adv;
        le -= config.entropy * entropy;
        // d(-log p_a · A)/dz = (p - e_a)·A; d(-βH)/dz_i = β p_i (log p_i + H)
        let dz: Vec<Real> = (0..p.len())
            .map(|i| {
                let pg = (p[i] - if i == a { 1.0 } else { 0.0 }) * adv;
                pg + config.entropy * p[i] * (logp[i] + entropy)
            })
            .collect();
        let dv = -config.value_coef * adv;
        dl_dh.push(heads.add(&agent.heads, h, &dz, dv));
    }
    let report = backward(&trace, &dl_dh)?;
    Ok(((lp, lv, le), heads.into_report(report)))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: Real,
    pub mean_return: Real,
    pub std_return: Real,
}

impl EvalReport {
    /// Binomial standard error of the success rate.
    pub fn success_std_err(&self) -> Real {
        if self.episodes == 0 {
            return 0.0;
        }
        let p = self.success_rate;
        (p * (1.0 - p) / self.episodes as Real).sqrt()
    }
}

/// `episodes` fresh-seed episodes; `N = 0` gives an empty report.
pub fn evaluate(config: &TrainConfig, policy: Policy<'_>, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Ok(EvalReport::default());
    }
    let tree = SeedTree::new(seed);
    let results = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = config.build_env()?;
            let i = i as u64;
            let ep = rollout(env.as_mut(), policy, tree.seed("env", i), &mut tree.stream("theta", i), &mut tree.stream("policy", i))?;
            Ok((ep.success, ep.episode_return()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = episodes as Real;
    let successes = results.iter().filter(|r| r.0).count();
    let mean = results.iter().map(|r| r.1).sum::<Real>() / n;
    let var = results.iter().map(|r| (r.1 - mean) * (r.1 - mean)).sum::<Real>() / n;
    Ok(EvalReport { episodes, successes, success_rate: successes as Real / n, mean_return: mean, std_return: var.sqrt() })
}

/// Advantage actor-critic with an entropy bonus, trained end-to-end through
/// the memory. Evaluates the greedy policy every `eval_every` episodes.
pub fn train_policy_gradient(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.mode != Mode::Rl {
        return Err(Error::Config("train_policy_gradient needs mode = rl".into()));
    }
    let mut agent = Agent::init(config)?;
    let tree = SeedTree::new(config.seed);
    let mut report = RunReport::new(config);
    let mut opt = Adam::new(config.lr);
    let mut last_good = agent.clone();
    let mut seen = 0u64;
    let mut next_eval = config.eval_every as u64;
    let mut update = 0u64;
    while seen < config.episodes as u64 {
        update += 1;
        let batch = (config.batch as u64).min(config.episodes as u64 - seen);
        let started = Instant::now();
        let parts = (seen..seen + batch)
            .into_par_iter()
            .map(|e| {
                let mut env = config.build_env()?;
                let ep = rollout(
                    env.as_mut(),
                    Policy::Sampled(&agent),
                    tree.seed("env", e),
                    &mut tree.stream("theta", e),
                    &mut tree.stream("policy", e),
                )?;
                let (losses, grads) = actor_critic_gradient(&agent, &ep, config)?;
                Ok((ep.episode_return(), ep.success, losses, ep.rewards.len(), grads))
            })
            .collect::<Result<Vec<_>>>();
        let step = parts.and_then(|parts| {
            let steps: usize = parts.iter().map(|p| p.3).sum();
            let loss: Real = parts.iter().map(|p| p.2 .0 + p.2 .1 + p.2 .2).sum();
            if !loss.is_finite() {
                return Err(Error::Diverged { update, reason: "loss is not finite".into() });
            }
            let ret = parts.iter().map(|p| p.0).sum::<Real>() / batch as Real;
            let succ = parts.iter().filter(|p| p.1).count() as Real / batch as Real;
            report.record(seen + batch, "train_return", ret);
            report.record(seen + batch, "train_success", succ);
            let grads = sum_reports(parts.into_iter().map(|p| p.4).collect(), 1.0 / steps.max(1) as Real)?;
            descend(&mut agent, &mut opt, grads, config.clip, &mut report)
        });
        if let Err(e) = step.and_then(|_| {
            if agent.is_finite() {
                Ok(())
            } else {
                Err(Error::Diverged { update, reason: "parameters are not finite".into() })
            }
        }) {
            return Ok(abort(report, last_good, e, update));
        }
        last_good = agent.clone();
        seen += batch;
        report.wall_clock.push((seen, started.elapsed().as_secs_f64() as Real));
        if seen >= next_eval || seen == config.episodes as u64 {
            next_eval += config.eval_every as u64;
            let ev = evaluate(config, Policy::Greedy(&agent), config.eval_episodes, tree.seed("eval", seen))?;
            report.record(seen, "success_rate", ev.success_rate);
            report.record(seen, "mean_return", ev.mean_return);
            report.record(seen, "clip_events", report.clip_events as Real);
            let metric = match config.task {
                TaskKind::DelayedRecall => ev.success_rate,
                TaskKind::RepeatPrev => ev.mean_return,
            };
            if config.target.is_some_and(|t| metric >= t) {
                break;
            }
        }
    }
    Ok(TrainOutcome { report, agent, aborted: None })
}
