//! Metrics that need samples from a policy.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::metrics::{self_bleu, spearman, task_accuracy};
use crate::envs::seq::Trajectory;
use crate::envs::tasks::SyntheticTask;
use crate::envs::vocab::TokenId;
use crate::error::{Error, Result};
use crate::objectives::{extract_rewards, IqlConfig};
use crate::parallel::Execution;
use crate::policy::{decode, entropy, PolicyModel, SamplerConfig};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub self_bleu: f64,
    pub mean_per_token_entropy: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_metric: f64,
    pub diversity: DiversityReport,
}

/// `samples_per_prompt` decodes of every prompt; sample `k` of prompt `i`
/// uses rng substream `i * samples_per_prompt + k` of `seed`.
pub fn generate(
    model: &PolicyModel,
    prompts: &[Vec<TokenId>],
    sampler: &SamplerConfig,
    samples_per_prompt: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Trajectory>> {
    let spp = samples_per_prompt;
    exec.map_indexed(prompts.len() * spp, |j| {
        let mut rng = substream(seed, "generate", j as u64);
        decode(model, &prompts[j / spp], sampler, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Mean policy entropy over the states visited by the completions.
pub fn mean_entropy(model: &PolicyModel, trajs: &[Trajectory], exec: Execution) -> Result<f64> {
    let per: Vec<Result<(f64, usize)>> = exec.map(trajs, |t| {
        if t.completion.is_empty() {
            return Ok((0.0, 0));
        }
        let full = t.full();
        let outs = model.net.outputs(&full[..full.len() - 1])?;
        let start = t.prompt.len() - 1;
        Ok((outs[start..].iter().map(|o| entropy(o)).sum(), outs.len() - start))
    });
    let (mut sum, mut count) = (0.0, 0);
    for r in per {
        let (s, c) = r?;
        sum += s;
        count += c;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Self-BLEU within each prompt's group of samples, averaged over prompts.
pub fn grouped_self_bleu(trajs: &[Trajectory], samples_per_prompt: usize) -> Result<f64> {
    if samples_per_prompt < 2 {
        return self_bleu(&trajs.iter().map(|t| t.completion.clone()).collect::<Vec<_>>(), 4);
    }
    let groups: Vec<f64> = trajs
        .chunks(samples_per_prompt)
        .map(|g| self_bleu(&g.iter().map(|t| t.completion.clone()).collect::<Vec<_>>(), 4))
        .collect::<Result<_>>()?;
    Ok(groups.iter().sum::<f64>() / groups.len().max(1) as f64)
}

pub fn evaluate_policy(
    model: &PolicyModel,
    prompts: &[Vec<TokenId>],
    task: &SyntheticTask,
    sampler: &SamplerConfig,
    samples_per_prompt: usize,
    seed: u64,
    exec: Execution,
) -> Result<EvalReport> {
    if prompts.is_empty() || samples_per_prompt == 0 {
        return Err(Error::EmptyBatch("evaluation needs prompts and samples"));
    }
    let trajs = generate(model, prompts, sampler, samples_per_prompt, seed, exec)?;
    let accuracy = task_accuracy(&trajs, task)?;
    let mean_metric = trajs.iter().map(|t| task.metric(&t.prompt, &t.completion)).sum::<f64>() / trajs.len() as f64;
    let self_bleu = if trajs.len() >= 2 {
        grouped_self_bleu(&trajs, samples_per_prompt)?
    } else {
        f64::NAN
    };
    Ok(EvalReport {
        accuracy,
        mean_metric,
        diversity: DiversityReport {
            self_bleu,
            mean_per_token_entropy: mean_entropy(model, &trajs, exec)?,
            sample_count: trajs.len(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `None` when the correlation is undefined (constant ranks).
    pub spearman_rho: Option<f64>,
    pub n: usize,
    pub metric: String,
    pub returns: Vec<f64>,
    pub metric_values: Vec<f64>,
}

/// One sample per prompt, then Spearman between the implicit-reward return
/// and `metric(trajectory, return)`.
#[allow(clippy::too_many_arguments)]
pub fn correlate_returns(
    model: &PolicyModel,
    prompts: &[Vec<TokenId>],
    sampler: &SamplerConfig,
    iql: &IqlConfig,
    seed: u64,
    exec: Execution,
    metric_name: &str,
    metric: impl Fn(&Trajectory, f64) -> f64 + Sync + Send,
) -> Result<CorrelationReport> {
    if prompts.len() < 3 {
        return Err(Error::Contract("correlation needs at least 3 prompts".into()));
    }
    let pairs: Vec<Result<(f64, f64)>> = exec.map_indexed(prompts.len(), |i| {
        let mut rng = substream(seed, "correlate", i as u64);
        let traj = decode(model, &prompts[i], sampler, &mut rng)?;
        let ret = extract_rewards(model, &traj, iql)?.total_return;
        Ok((ret, metric(&traj, ret)))
    });
    let (returns, metric_values): (Vec<f64>, Vec<f64>) = pairs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(CorrelationReport {
        spearman_rho: spearman(&returns, &metric_values)?,
        n: prompts.len(),
        metric: metric_name.to_string(),
        returns,
        metric_values,
    })
}

pub fn reward_metric_correlation(
    model: &PolicyModel,
    prompts: &[Vec<TokenId>],
    task: &SyntheticTask,
    sampler: &SamplerConfig,
    iql: &IqlConfig,
    rng: &mut Rng,
    exec: Execution,
) -> Result<CorrelationReport> {
    let seed = rng.random::<u64>();
    correlate_returns(model, prompts, sampler, iql, seed, exec, "task-metric", |t, _| {
        task.metric(&t.prompt, &t.completion)
    })
}
