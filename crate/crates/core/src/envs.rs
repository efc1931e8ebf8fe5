//! Toy partially observable environments and supervised sequence datasets.
//!
//! Observations are symbolic one-hot vectors. Agents build contexts with
//! [`agent_context`]: `x_t = concat(o_t, one_hot(a_{t-1}))`, zeros at `t = 1`.

use crate::error::{Error, Result};
use crate::memory::ContextInput;
use crate::rng::{SeedTree, StreamRng};
use crate::Real;
use rand::seq::SliceRandom;
use rand::Rng;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Recall,
    Distractor,
    Query,
    Stream,
    Done,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Vec<Real>,
    pub reward: Real,
    pub done: bool,
    /// Phase of the step that produced this observation.
    pub phase: Phase,
}

pub trait Env {
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Transition;
    fn step(&mut self, action: usize) -> Result<Transition>;
    /// Return of a policy that knows the hidden state, for the current episode.
    fn optimal_return(&self) -> Real;
    /// Whether the goal bonus has been earned this episode.
    fn success(&self) -> bool;
    /// Action an oracle with access to the hidden state would take now.
    fn clairvoyant_action(&self) -> usize;
    /// Upper bound on episode length.
    fn horizon(&self) -> usize;
}

pub fn one_hot(n: usize, i: usize) -> Vec<Real> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub fn agent_context(observation: &[Real], prev_action: Option<usize>, num_actions: usize) -> ContextInput {
    let mut x = Vec::with_capacity(observation.len() + num_actions);
    x.extend_from_slice(observation);
    x.extend((0..num_actions).map(|a| if Some(a) == prev_action { 1.0 } else { 0.0 }));
    ContextInput(x)
}

pub const ACTION_PICK: usize = 0;
pub const ACTION_MOVE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayedRecallConfig {
    pub n_codes: usize,
    /// Steps in the code, distractor and query phases.
    pub phases: (usize, usize, usize),
    /// Probability that an apple is present at a distractor step.
    pub apple_prob: Real,
    pub door_reward: Real,
}

impl Default for DelayedRecallConfig {
    fn default() -> Self {
        DelayedRecallConfig { n_codes: 4, phases: (5, 60, 5), apple_prob: 0.5, door_reward: 10.0 }
    }
}

impl DelayedRecallConfig {
    pub fn stress() -> Self {
        DelayedRecallConfig { phases: (5, 200, 5), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (t1, _, t3) = self.phases;
        if self.n_codes < 2 || t1 == 0 || t3 == 0 {
            return Err(Error::Config("delayed recall needs n_codes >= 2 and non-empty code and query phases".into()));
        }
        if !(0.0..=1.0).contains(&self.apple_prob) || !(self.door_reward > 0.0) {
            return Err(Error::Config("apple_prob must lie in [0, 1] and door_reward be positive".into()));
        }
        Ok(())
    }
}

/// Symbolic delayed recall: a code is shown, apples appear during a long
/// distractor phase, and the agent must then open the door matching the code.
///
/// Observation: `[code one-hot (n_codes) | apple flag | query flag]`.
/// Actions: pick, move, then one door per code.
#[derive(Clone, Debug)]
pub struct DelayedRecallEnv {
    pub config: DelayedRecallConfig,
    code: usize,
    apples: Vec<bool>,
    picked: Vec<bool>,
    t: usize,
    done: bool,
    success: bool,
}

impl DelayedRecallEnv {
    pub fn new(config: DelayedRecallConfig) -> Result<Self> {
        config.validate()?;
        Ok(DelayedRecallEnv { config, code: 0, apples: vec![], picked: vec![], t: 0, done: true, success: false })
    }

    /// Hidden code, 0-based.
    pub fn code(&self) -> usize {
        self.code
    }

    /// Apples scheduled this episode, picked or not.
    pub fn apples(&self) -> usize {
        self.apples.iter().filter(|a| **a).count()
    }

    pub fn door_action(&self, code: usize) -> usize {
        2 + code
    }

    fn phase_at(&self, t: usize) -> Phase {
        let (t1, t2, t3) = self.config.phases;
        if t < t1 {
            Phase::Recall
        } else if t < t1 + t2 {
            Phase::Distractor
        } else if t < t1 + t2 + t3 {
            Phase::Query
        } else {
            Phase::Done
        }
    }

    fn observe(&self) -> Vec<Real> {
        let n = self.config.n_codes;
        let mut o = vec![0.0; n + 2];
        match self.phase_at(self.t) {
            Phase::Recall => o[self.code] = 1.0,
            Phase::Distractor => {
                let slot = self.t - self.config.phases.0;
                if self.apples[slot] && !self.picked[slot] {
                    o[n] = 1.0;
                }
            }
            Phase::Query => o[n + 1] = 1.0,
            Phase::Stream | Phase::Done => {}
        }
        o
    }
}

impl Env for DelayedRecallEnv {
    fn obs_dim(&self) -> usize {
        self.config.n_codes + 2
    }

    fn num_actions(&self) -> usize {
        self.config.n_codes + 2
    }

    fn reset(&mut self, seed: u64) -> Transition {
        let mut rng = SeedTree::new(seed).stream("env", 0);
        self.code = rng.random_range(0..self.config.n_codes);
        self.apples = (0..self.config.phases.1).map(|_| rng.random_bool(self.config.apple_prob)).collect();
        self.picked = vec![false; self.apples.len()];
        self.t = 0;
        self.done = false;
        self.success = false;
        Transition { observation: self.observe(), reward: 0.0, done: false, phase: self.phase_at(0) }
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::Protocol("step called on a finished episode".into()));
        }
        if action >= self.num_actions() {
            return Err(Error::Range(format!("action {action} outside 0..{}", self.num_actions())));
        }
        let phase = self.phase_at(self.t);
        let mut reward = 0.0;
        match phase {
            Phase::Distractor => {
                let slot = self.t - self.config.phases.0;
                if action == ACTION_PICK && self.apples[slot] && !self.picked[slot] {
                    self.picked[slot] = true;
                    reward = 1.0;
                }
            }
            Phase::Query if action >= 2 => {
                self.done = true;
                if action - 2 == self.code {
                    self.success = true;
                    reward = self.config.door_reward;
                }
            }
            _ => {}
        }
        self.t += 1;
        if self.phase_at(self.t) == Phase::Done {
            self.done = true;
        }
        let observation = if self.done { vec![0.0; self.obs_dim()] } else { self.observe() };
        Ok(Transition { observation, reward, done: self.done, phase })
    }

    fn optimal_return(&self) -> Real {
        self.config.door_reward + self.apples() as Real
    }

    fn success(&self) -> bool {
        self.success
    }

    fn clairvoyant_action(&self) -> usize {
        match self.phase_at(self.t) {
            Phase::Distractor => ACTION_PICK,
            Phase::Query => self.door_action(self.code),
            _ => ACTION_MOVE,
        }
    }

    fn horizon(&self) -> usize {
        let (a, b, c) = self.config.phases;
        a + b + c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RepeatPrevConfig {
    pub alphabet: usize,
    pub lag: usize,
    pub horizon: usize,
}

impl Default for RepeatPrevConfig {
    fn default() -> Self {
        RepeatPrevConfig { alphabet: 4, lag: 4, horizon: 32 }
    }
}

/// Guess the symbol shown `lag` steps ago; `+1/T` when right, `-1/T` when
/// wrong, 0 while no such symbol exists.
#[derive(Clone, Debug)]
pub struct RepeatPrevEnv {
    pub config: RepeatPrevConfig,
    symbols: Vec<usize>,
    t: usize,
    done: bool,
}

impl RepeatPrevEnv {
    pub fn new(config: RepeatPrevConfig) -> Result<Self> {
        if config.alphabet < 2 || config.horizon == 0 || config.lag >= config.horizon {
            return Err(Error::Config("repeat-previous needs alphabet >= 2 and lag < horizon".into()));
        }
        Ok(RepeatPrevEnv { config, symbols: vec![], t: 0, done: true })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }
}

impl Env for RepeatPrevEnv {
    fn obs_dim(&self) -> usize {
        self.config.alphabet
    }

    fn num_actions(&self) -> usize {
        self.config.alphabet
    }

    fn reset(&mut self, seed: u64) -> Transition {
        let mut rng = SeedTree::new(seed).stream("env", 0);
        self.symbols = (0..self.config.horizon).map(|_| rng.random_range(0..self.config.alphabet)).collect();
        self.t = 0;
        self.done = false;
        Transition {
            observation: one_hot(self.config.alphabet, self.symbols[0]),
            reward: 0.0,
            done: false,
            phase: Phase::Stream,
        }
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::Protocol("step called on a finished episode".into()));
        }
        if action >= self.num_actions() {
            return Err(Error::Range(format!("action {action} outside 0..{}", self.num_actions())));
        }
        let big_t = self.config.horizon as Real;
        let reward = if self.t < self.config.lag {
            0.0
        } else if action == self.symbols[self.t - self.config.lag] {
            1.0 / big_t
        } else {
            -1.0 / big_t
        };
        self.t += 1;
        self.done = self.t == self.config.horizon;
        let observation = if self.done {
            vec![0.0; self.config.alphabet]
        } else {
            one_hot(self.config.alphabet, self.symbols[self.t])
        };
        Ok(Transition { observation, reward, done: self.done, phase: Phase::Stream })
    }

    fn optimal_return(&self) -> Real {
        (self.config.horizon - self.config.lag) as Real / self.config.horizon as Real
    }

    fn success(&self) -> bool {
        false
    }

    fn clairvoyant_action(&self) -> usize {
        if self.t < self.config.lag {
            0
        } else {
            self.symbols[self.t - self.config.lag]
        }
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Several code cues among distractor symbols; the label is the last cue.
    DelayedRecall { n_codes: usize, length: usize, min_cues: usize, max_cues: usize },
    /// Label at every step `t >= lag` is the symbol from `lag` steps earlier.
    RepeatPrev { alphabet: usize, lag: usize, length: usize },
}

impl Task {
    pub fn delayed_recall(n_codes: usize, length: usize) -> Self {
        Task::DelayedRecall { n_codes, length, min_cues: 2, max_cues: 3 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::DelayedRecall { .. } => "delayed_recall",
            Task::RepeatPrev { .. } => "repeat_prev",
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Task::DelayedRecall { n_codes, .. } => 2 * n_codes + 1,
            Task::RepeatPrev { alphabet, .. } => alphabet,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Task::DelayedRecall { n_codes, .. } => n_codes,
            Task::RepeatPrev { alphabet, .. } => alphabet,
        }
    }

    pub fn length(&self) -> usize {
        match *self {
            Task::DelayedRecall { length, .. } | Task::RepeatPrev { length, .. } => length,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Task::DelayedRecall { n_codes, length, min_cues, max_cues } => {
                if n_codes < 2 || length == 0 || min_cues == 0 || min_cues > max_cues {
                    return Err(Error::Config("delayed recall needs n_codes >= 2, length >= 1, 1 <= min_cues <= max_cues".into()));
                }
            }
            Task::RepeatPrev { alphabet, lag, length } => {
                if alphabet < 2 || lag >= length {
                    return Err(Error::Config("repeat-previous needs alphabet >= 2 and lag < length".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub xs: Vec<ContextInput>,
    /// Label per step; `None` where the step is not scored.
    pub targets: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub sequences: Vec<Sequence>,
}

fn delayed_recall_sequence(
    n_codes: usize,
    length: usize,
    cues: usize,
    label: usize,
    rng: &mut StreamRng,
) -> Sequence {
    let dim = 2 * n_codes + 1;
    let cues = cues.min(length);
    let mut positions: Vec<usize> = (0..length).collect();
    positions.shuffle(rng);
    let mut positions = positions[..cues].to_vec();
    positions.sort_unstable();
    let mut xs = Vec::with_capacity(length);
    for t in 0..length {
        let mut x = vec![0.0; dim];
        match positions.iter().position(|p| *p == t) {
            Some(i) if i + 1 == cues => x[label] = 1.0,
            Some(_) => x[rng.random_range(0..n_codes)] = 1.0,
            None => x[n_codes + rng.random_range(0..n_codes)] = 1.0,
        }
        if t + 1 == length {
            x[2 * n_codes] = 1.0;
        }
        xs.push(ContextInput(x));
    }
    let mut targets = vec![None; length];
    targets[length - 1] = Some(label);
    Sequence { xs, targets }
}

/// Deterministic dataset of `size` sequences; delayed-recall labels are
/// balanced across codes.
pub fn make_supervised_dataset(task: Task, size: usize, seed: u64) -> Result<Dataset> {
    task.validate()?;
    let mut rng = SeedTree::new(seed).stream("dataset", 0);
    let mut sequences = Vec::with_capacity(size);
    match task {
        Task::DelayedRecall { n_codes, length, min_cues, max_cues } => {
            let mut labels: Vec<usize> = (0..size).map(|i| i % n_codes).collect();
            labels.shuffle(&mut rng);
            for label in labels {
                let cues = rng.random_range(min_cues..=max_cues);
                sequences.push(delayed_recall_sequence(n_codes, length, cues, label, &mut rng));
            }
        }
        Task::RepeatPrev { alphabet, lag, length } => {
            for _ in 0..size {
                let symbols: Vec<usize> = (0..length).map(|_| rng.random_range(0..alphabet)).collect();
                let xs = symbols.iter().map(|s| ContextInput(one_hot(alphabet, *s))).collect();
                let targets = (0..length).map(|t| (t >= lag).then(|| symbols[t - lag])).collect();
                sequences.push(Sequence { xs, targets });
            }
        }
    }
    Ok(Dataset { task, sequences })
}

impl Dataset {
    /// One row per step: `sequence,step,x_0..x_{D-1},target` (`-1` = unscored).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.task.input_dim();
        let mut s = String::from("sequence,step");
        for i in 0..d {
            write!(s, ",x{i}").expect("writing to a String");
        }
        s.push_str(",target\n");
        for (n, seq) in self.sequences.iter().enumerate() {
            for (t, (x, y)) in seq.xs.iter().zip(&seq.targets).enumerate() {
                write!(s, "{n},{t}").expect("writing to a String");
                for v in &x.0 {
                    write!(s, ",{v}").expect("writing to a String");
                }
                writeln!(s, ",{}", y.map_or(-1, |y| y as i64)).expect("writing to a String");
            }
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}
