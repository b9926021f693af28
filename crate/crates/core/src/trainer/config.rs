//! Experiment configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and
//! falls back to its default, but an unknown key is an error. `to_text`
//! writes every key in a fixed order and parses back to an identical value.

use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::tasks::{TaskKind, TaskParams};
use crate::error::{Error, Result};
use crate::objectives::IqlConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Mle,
    MleEnt,
    IqlOffline,
    IqlOnline,
    Gail,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Mle,
        ObjectiveKind::MleEnt,
        ObjectiveKind::IqlOffline,
        ObjectiveKind::IqlOnline,
        ObjectiveKind::Gail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Mle => "mle",
            ObjectiveKind::MleEnt => "mle-ent",
            ObjectiveKind::IqlOffline => "iql-offline",
            ObjectiveKind::IqlOnline => "iql-online",
            ObjectiveKind::Gail => "gail",
        }
    }
}

impl Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown objective `{s}` (expected mle, mle-ent, iql-offline, iql-online or gail)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub task_params: TaskParams,
    pub train_size: usize,
    pub val_size: usize,
    /// Fraction of the generated training set actually used.
    pub subset_fraction: f64,
    pub data_seed: u64,

    pub objective: ObjectiveKind,
    /// `lambda` doubles as the entropy weight of `mle-ent`.
    pub iql: IqlConfig,
    pub kl_weight_final: f64,
    pub anneal_steps: u64,
    pub mle_weight: f64,

    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_mle_steps: usize,
    pub learning_rate: f64,
    pub lr_warmup_steps: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_completion: usize,

    pub rollout_temperature: f64,
    pub rollouts_per_step: usize,
    /// Oldest policy version (in steps) the rollout buffer may serve.
    pub staleness: u64,

    pub eval_every: usize,
    pub eval_prompts: usize,
    pub eval_samples_per_prompt: usize,
    /// Sampling temperature for evaluation; 0 means greedy decoding.
    pub eval_temperature: f64,
    /// Stop after this many evaluations without a new best validation
    /// accuracy; 0 disables early stopping.
    pub early_stop_patience: usize,

    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Copy,
            task_params: TaskParams::default(),
            train_size: 2000,
            val_size: 200,
            subset_fraction: 1.0,
            data_seed: 0,
            objective: ObjectiveKind::Mle,
            iql: IqlConfig::default(),
            kl_weight_final: 1e-3,
            anneal_steps: 10_000,
            mle_weight: 0.0,
            batch_size: 32,
            total_steps: 3000,
            warmup_mle_steps: 0,
            learning_rate: 1e-4,
            lr_warmup_steps: 2000,
            grad_clip: 0.0,
            embed_dim: 32,
            hidden_dim: 64,
            layers: 2,
            max_completion: 64,
            rollout_temperature: 1.0,
            rollouts_per_step: 32,
            staleness: 0,
            eval_every: 250,
            eval_prompts: 64,
            eval_samples_per_prompt: 4,
            eval_temperature: 1.0,
            early_stop_patience: 0,
            seeds: vec![0, 1, 2],
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "task",
        "task.symbols",
        "task.min_len",
        "task.max_len",
        "task.modulus",
        "task.operands",
        "task.topics",
        "task.paraphrase_weights",
        "train_size",
        "val_size",
        "subset_fraction",
        "data_seed",
        "objective",
        "lambda",
        "gamma",
        "alpha",
        "kl_weight_final",
        "anneal_steps",
        "mle_weight",
        "batch_size",
        "total_steps",
        "warmup_mle_steps",
        "learning_rate",
        "lr_warmup_steps",
        "grad_clip",
        "embed_dim",
        "hidden_dim",
        "layers",
        "max_completion",
        "rollout_temperature",
        "rollouts_per_step",
        "staleness",
        "eval_every",
        "eval_prompts",
        "eval_samples_per_prompt",
        "eval_temperature",
        "early_stop_patience",
        "seeds",
    ];

    pub fn get(&self, key: &str) -> Result<String> {
        let p = &self.task_params;
        Ok(match key {
            "task" => self.task.name().to_string(),
            "task.symbols" => p.symbols.to_string(),
            "task.min_len" => p.min_len.to_string(),
            "task.max_len" => p.max_len.to_string(),
            "task.modulus" => p.modulus.to_string(),
            "task.operands" => p.operands.to_string(),
            "task.topics" => p.topics.to_string(),
            "task.paraphrase_weights" => join(&p.paraphrase_weights),
            "train_size" => self.train_size.to_string(),
            "val_size" => self.val_size.to_string(),
            "subset_fraction" => self.subset_fraction.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "objective" => self.objective.to_string(),
            "lambda" => self.iql.lambda.to_string(),
            "gamma" => self.iql.gamma.to_string(),
            "alpha" => self.iql.alpha.to_string(),
            "kl_weight_final" => self.kl_weight_final.to_string(),
            "anneal_steps" => self.anneal_steps.to_string(),
            "mle_weight" => self.mle_weight.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "warmup_mle_steps" => self.warmup_mle_steps.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "lr_warmup_steps" => self.lr_warmup_steps.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "layers" => self.layers.to_string(),
            "max_completion" => self.max_completion.to_string(),
            "rollout_temperature" => self.rollout_temperature.to_string(),
            "rollouts_per_step" => self.rollouts_per_step.to_string(),
            "staleness" => self.staleness.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_prompts" => self.eval_prompts.to_string(),
            "eval_samples_per_prompt" => self.eval_samples_per_prompt.to_string(),
            "eval_temperature" => self.eval_temperature.to_string(),
            "early_stop_patience" => self.early_stop_patience.to_string(),
            "seeds" => join(&self.seeds),
            _ => return Err(self.unknown(key)),
        })
    }

    fn unknown(&self, key: &str) -> Error {
        Error::Config(format!(
            "unknown config key `{key}`; valid keys: {}",
            Self::KEYS.join(", ")
        ))
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let p = &mut self.task_params;
        match key {
            "task" => self.task = v.parse()?,
            "task.symbols" => p.symbols = parse(key, v)?,
            "task.min_len" => p.min_len = parse(key, v)?,
            "task.max_len" => p.max_len = parse(key, v)?,
            "task.modulus" => p.modulus = parse(key, v)?,
            "task.operands" => p.operands = parse(key, v)?,
            "task.topics" => p.topics = parse(key, v)?,
            "task.paraphrase_weights" => p.paraphrase_weights = parse_list(key, v)?,
            "train_size" => self.train_size = parse(key, v)?,
            "val_size" => self.val_size = parse(key, v)?,
            "subset_fraction" => self.subset_fraction = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "objective" => self.objective = v.parse()?,
            "lambda" => self.iql.lambda = parse(key, v)?,
            "gamma" => self.iql.gamma = parse(key, v)?,
            "alpha" => self.iql.alpha = parse(key, v)?,
            "kl_weight_final" => self.kl_weight_final = parse(key, v)?,
            "anneal_steps" => self.anneal_steps = parse(key, v)?,
            "mle_weight" => self.mle_weight = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "warmup_mle_steps" => self.warmup_mle_steps = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "lr_warmup_steps" => self.lr_warmup_steps = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "max_completion" => self.max_completion = parse(key, v)?,
            "rollout_temperature" => self.rollout_temperature = parse(key, v)?,
            "rollouts_per_step" => self.rollouts_per_step = parse(key, v)?,
            "staleness" => self.staleness = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_prompts" => self.eval_prompts = parse(key, v)?,
            "eval_samples_per_prompt" => self.eval_samples_per_prompt = parse(key, v)?,
            "eval_temperature" => self.eval_temperature = parse(key, v)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            _ => return Err(self.unknown(key)),
        }
        Ok(())
    }

    /// Applies `key=value` text on top of the defaults and validates.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.iql.validate()?;
        if self.warmup_mle_steps > self.total_steps {
            return bad(format!(
                "warmup_mle_steps ({}) exceeds total_steps ({})",
                self.warmup_mle_steps, self.total_steps
            ));
        }
        for (name, x) in [
            ("learning_rate", self.learning_rate),
            ("rollout_temperature", self.rollout_temperature),
        ] {
            if !(x > 0.0) || !x.is_finite() {
                return bad(format!("{name} must be positive, got {x}"));
            }
        }
        for (name, x) in [
            ("kl_weight_final", self.kl_weight_final),
            ("mle_weight", self.mle_weight),
            ("grad_clip", self.grad_clip),
            ("eval_temperature", self.eval_temperature),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                return bad(format!("{name} must be ≥ 0, got {x}"));
            }
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return bad(format!("subset_fraction must be in (0, 1], got {}", self.subset_fraction));
        }
        for (name, x) in [
            ("batch_size", self.batch_size),
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("layers", self.layers),
            ("max_completion", self.max_completion),
            ("eval_every", self.eval_every),
            ("eval_prompts", self.eval_prompts),
            ("eval_samples_per_prompt", self.eval_samples_per_prompt),
        ] {
            if x == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        if self.objective == ObjectiveKind::IqlOnline {
            if self.iql.alpha * (self.batch_size as f64) < 1.0 {
                return bad(format!(
                    "iql-online needs alpha * batch_size ≥ 1 so every batch holds a rollout (alpha={}, batch_size={})",
                    self.iql.alpha, self.batch_size
                ));
            }
            if self.rollouts_per_step == 0 {
                return bad("iql-online needs rollouts_per_step ≥ 1".into());
            }
        }
        if self.objective == ObjectiveKind::Gail && self.rollouts_per_step == 0 {
            return bad("gail needs rollouts_per_step ≥ 1".into());
        }
        crate::envs::SyntheticTask::new(self.task, self.task_params.clone())?;
        Ok(())
    }
}
