//! On-policy rollout storage and expert/online batch assembly.

use rand::Rng as _;

use crate::envs::seq::Trajectory;
use crate::envs::vocab::TokenId;
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::policy::{sample, PolicyModel, SamplerConfig};
use crate::rng::{substream, Rng};

/// Rollouts tagged with the policy version (training step) that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub capacity: usize,
    /// Maximum age, in steps, of a servable rollout. 0 means on-policy only.
    pub staleness: u64,
    entries: Vec<(u64, Trajectory)>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, staleness: u64) -> Self {
        Self {
            capacity,
            staleness,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, version: u64, traj: Trajectory) {
        self.entries.push((version, traj));
        if self.entries.len() > self.capacity {
            let excess = self.entries.len() - self.capacity;
            self.entries.drain(..excess);
        }
    }

    /// Drops everything older than the staleness bound relative to `version`.
    pub fn expire(&mut self, version: u64) {
        let bound = self.staleness;
        self.entries.retain(|(v, _)| version.saturating_sub(*v) <= bound && *v <= version);
    }

    /// Rollouts servable at `version`.
    pub fn fresh(&self, version: u64) -> Vec<&Trajectory> {
        self.entries
            .iter()
            .filter(|(v, _)| *v <= version && version - v <= self.staleness)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn versions(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|(v, _)| *v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Samples `count` rollouts from `model` (the step-`version` parameters),
    /// each from a random training prompt on its own rng substream.
    #[allow(clippy::too_many_arguments)]
    pub fn refill(
        &mut self,
        model: &PolicyModel,
        prompts: &[Vec<TokenId>],
        sampler: &SamplerConfig,
        count: usize,
        version: u64,
        seed: u64,
        exec: Execution,
    ) -> Result<()> {
        if prompts.is_empty() {
            return Err(Error::EmptyBatch("no prompts to roll out from"));
        }
        let base = version * count as u64;
        let trajs: Vec<Result<Trajectory>> = exec.map_indexed(count, |i| {
            let mut rng = substream(seed, "rollout", base + i as u64);
            let p = &prompts[rng.random_range(0..prompts.len())];
            sample(model, p, sampler, &mut rng)
        });
        for t in trajs {
            self.push(version, t?);
        }
        self.expire(version);
        Ok(())
    }
}

/// Splits `batch_size` slots between expert data and fresh rollouts.
///
/// The online share is `floor(α·B)` plus one more slot with probability
/// `frac(α·B)`, so its expectation is exactly `α·B`. Expert trajectories
/// are drawn uniformly with replacement, online ones uniformly from the
/// servable rollouts.
pub fn assemble_online_batch(
    dataset: &[Trajectory],
    buffer: &RolloutBuffer,
    version: u64,
    alpha: f64,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1), got {alpha}")));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyBatch("expert dataset is empty"));
    }
    let target = alpha * batch_size as f64;
    let mut online_n = target.floor() as usize;
    if rng.random::<f64>() < target - target.floor() {
        online_n += 1;
    }
    let fresh = buffer.fresh(version);
    if online_n > 0 && fresh.is_empty() {
        return Err(Error::Contract(
            "rollout buffer has no fresh trajectories; roll out the current policy before assembling an online batch".into(),
        ));
    }
    let expert = (0..batch_size - online_n)
        .map(|_| dataset[rng.random_range(0..dataset.len())].clone())
        .collect();
    let online = (0..online_n)
        .map(|_| fresh[rng.random_range(0..fresh.len())].clone())
        .collect();
    Ok((expert, online))
}

/// Uniform draw with replacement.
pub fn sample_expert_batch(dataset: &[Trajectory], batch_size: usize, rng: &mut Rng) -> Vec<Trajectory> {
    (0..batch_size)
        .map(|_| dataset[rng.random_range(0..dataset.len())].clone())
        .collect()
}
