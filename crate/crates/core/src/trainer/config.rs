//! Training configuration and its flat `key = value` text form.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank lines
//! are ignored; unknown keys and repeated keys are errors.

use crate::calibration::{CalibrationVariant, Dims};
use crate::envs::{DelayedRecallConfig, DelayedRecallEnv, Env, RepeatPrevConfig, RepeatPrevEnv, Task};
use crate::error::{Error, Result};
use crate::Real;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    Rl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    DelayedRecall,
    RepeatPrev,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub task: TaskKind,
    /// Context width; 0 derives it from the task.
    pub d: usize,
    pub h: usize,
    pub l: usize,
    pub variant: CalibrationVariant,
    pub lr: Real,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip: Option<Real>,
    /// Sequences (supervised) or episodes (rl) per update.
    pub batch: usize,
    pub epochs: usize,
    pub episodes: usize,
    pub seed: u64,
    pub n_codes: usize,
    pub length: usize,
    pub min_cues: usize,
    pub max_cues: usize,
    pub alphabet: usize,
    pub lag: usize,
    pub phases: (usize, usize, usize),
    pub apple_prob: Real,
    pub door_reward: Real,
    pub dataset_size: usize,
    pub test_size: usize,
    pub gamma: Real,
    pub entropy: Real,
    pub value_coef: Real,
    /// Epochs (supervised) or episodes (rl) between evaluations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop once the evaluation metric reaches this value.
    pub target: Option<Real>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Supervised,
            task: TaskKind::DelayedRecall,
            d: 0,
            h: 16,
            l: 128,
            variant: CalibrationVariant::ShmRandomTheta,
            lr: 3e-4,
            clip: Some(1.0),
            batch: 32,
            epochs: 200,
            episodes: 50_000,
            seed: 0,
            n_codes: 4,
            length: 70,
            min_cues: 2,
            max_cues: 3,
            alphabet: 4,
            lag: 4,
            phases: (5, 60, 5),
            apple_prob: 0.5,
            door_reward: 10.0,
            dataset_size: 1024,
            test_size: 512,
            gamma: 0.99,
            entropy: 0.01,
            value_coef: 0.5,
            eval_every: 10,
            eval_episodes: 200,
            target: None,
        }
    }
}

pub const KEYS: [&str; 31] = [
    "mode", "task", "d", "h", "l", "variant", "lr", "clip", "batch", "epochs", "episodes", "seed", "n_codes",
    "length", "min_cues", "max_cues", "alphabet", "lag", "phase1", "phase2", "phase3", "apple_prob", "door_reward",
    "dataset_size", "test_size", "gamma", "entropy", "value_coef", "eval_every", "eval_episodes", "target",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<Real>> {
    match value {
        "off" | "none" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

impl TrainConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: repeated key {k}", n + 1)));
            }
            cfg.set(k, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => {
                self.mode = match value {
                    "supervised" => Mode::Supervised,
                    "rl" => Mode::Rl,
                    _ => return Err(Error::Config(format!("mode: expected supervised or rl, got {value:?}"))),
                }
            }
            "task" => {
                self.task = match value {
                    "delayed_recall" => TaskKind::DelayedRecall,
                    "repeat_prev" => TaskKind::RepeatPrev,
                    _ => return Err(Error::Config(format!("task: unknown task {value:?}"))),
                }
            }
            "d" => self.d = parse_num(key, value)?,
            "h" => self.h = parse_num(key, value)?,
            "l" => self.l = parse_num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "lr" => self.lr = parse_num(key, value)?,
            "clip" => self.clip = parse_opt(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "episodes" => self.episodes = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "n_codes" => self.n_codes = parse_num(key, value)?,
            "length" => self.length = parse_num(key, value)?,
            "min_cues" => self.min_cues = parse_num(key, value)?,
            "max_cues" => self.max_cues = parse_num(key, value)?,
            "alphabet" => self.alphabet = parse_num(key, value)?,
            "lag" => self.lag = parse_num(key, value)?,
            "phase1" => self.phases.0 = parse_num(key, value)?,
            "phase2" => self.phases.1 = parse_num(key, value)?,
            "phase3" => self.phases.2 = parse_num(key, value)?,
            "apple_prob" => self.apple_prob = parse_num(key, value)?,
            "door_reward" => self.door_reward = parse_num(key, value)?,
            "dataset_size" => self.dataset_size = parse_num(key, value)?,
            "test_size" => self.test_size = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "entropy" => self.entropy = parse_num(key, value)?,
            "value_coef" => self.value_coef = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, value)?,
            "target" => self.target = parse_opt(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("l", self.l),
            ("batch", self.batch),
            ("eval_every", self.eval_every),
            ("dataset_size", self.dataset_size),
            ("test_size", self.test_size),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip must be positive or off".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if self.entropy < 0.0 || self.value_coef < 0.0 {
            return Err(Error::Config("entropy and value_coef must be non-negative".into()));
        }
        let d = self.input_dim()?;
        if self.d != 0 && self.d != d {
            return Err(Error::Config(format!("d = {} but the task produces contexts of width {d}", self.d)));
        }
        Ok(())
    }

    pub fn supervised_task(&self) -> Task {
        match self.task {
            TaskKind::DelayedRecall => Task::DelayedRecall {
                n_codes: self.n_codes,
                length: self.length,
                min_cues: self.min_cues,
                max_cues: self.max_cues,
            },
            TaskKind::RepeatPrev => Task::RepeatPrev { alphabet: self.alphabet, lag: self.lag, length: self.length },
        }
    }

    pub fn delayed_recall(&self) -> DelayedRecallConfig {
        DelayedRecallConfig {
            n_codes: self.n_codes,
            phases: self.phases,
            apple_prob: self.apple_prob,
            door_reward: self.door_reward,
        }
    }

    pub fn repeat_prev(&self) -> RepeatPrevConfig {
        RepeatPrevConfig { alphabet: self.alphabet, lag: self.lag, horizon: self.length }
    }

    pub fn build_env(&self) -> Result<Box<dyn Env + Send>> {
        Ok(match self.task {
            TaskKind::DelayedRecall => Box::new(DelayedRecallEnv::new(self.delayed_recall())?),
            TaskKind::RepeatPrev => Box::new(RepeatPrevEnv::new(self.repeat_prev())?),
        })
    }

    /// Number of head outputs: actions (rl) or classes (supervised).
    pub fn outputs(&self) -> Result<usize> {
        Ok(match self.mode {
            Mode::Supervised => self.supervised_task().classes(),
            Mode::Rl => self.build_env()?.num_actions(),
        })
    }

    pub fn input_dim(&self) -> Result<usize> {
        Ok(match self.mode {
            Mode::Supervised => self.supervised_task().input_dim(),
            Mode::Rl => {
                let env = self.build_env()?;
                env.obs_dim() + env.num_actions()
            }
        })
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.input_dim()?, self.h, self.l)
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<Real>| v.map_or_else(|| "off".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mode = match self.mode {
            Mode::Supervised => "supervised",
            Mode::Rl => "rl",
        };
        let task = match self.task {
            TaskKind::DelayedRecall => "delayed_recall",
            TaskKind::RepeatPrev => "repeat_prev",
        };
        let pairs: [(&str, String); 31] = [
            ("mode", mode.into()),
            ("task", task.into()),
            ("d", self.d.to_string()),
            ("h", self.h.to_string()),
            ("l", self.l.to_string()),
            ("variant", self.variant.name().into()),
            ("lr", self.lr.to_string()),
            ("clip", opt(self.clip)),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("episodes", self.episodes.to_string()),
            ("seed", self.seed.to_string()),
            ("n_codes", self.n_codes.to_string()),
            ("length", self.length.to_string()),
            ("min_cues", self.min_cues.to_string()),
            ("max_cues", self.max_cues.to_string()),
            ("alphabet", self.alphabet.to_string()),
            ("lag", self.lag.to_string()),
            ("phase1", self.phases.0.to_string()),
            ("phase2", self.phases.1.to_string()),
            ("phase3", self.phases.2.to_string()),
            ("apple_prob", self.apple_prob.to_string()),
            ("door_reward", self.door_reward.to_string()),
            ("dataset_size", self.dataset_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("gamma", self.gamma.to_string()),
            ("entropy", self.entropy.to_string()),
            ("value_coef", self.value_coef.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("target", opt(self.target)),
        ];
        for (k, v) in pairs {
            writeln!(s, "{k} = {v}").expect("writing to a String");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`TrainConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
