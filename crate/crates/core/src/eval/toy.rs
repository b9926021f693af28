//! Offline vs online IQLearn on the toy chain MDP with tabular policies.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::envs::toy::{ToyEpisode, ToyMdp, ToyState};
use crate::error::{Error, Result};
use crate::objectives::iql::{offline_from_logits, online_from_logits};
use crate::objectives::{IqlConfig, TokenIndex};
use crate::optim::{AdamConfig, OptimizerState};
use crate::parallel::Execution;
use crate::params::ParamStore;
use crate::rng::{stream, substream, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyVariant {
    Recoverable,
    NonRecoverable,
}

impl ToyVariant {
    pub fn name(self) -> &'static str {
        match self {
            ToyVariant::Recoverable => "recoverable",
            ToyVariant::NonRecoverable => "non-recoverable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyAlgorithm {
    IqlOffline,
    IqlOnline,
}

impl ToyAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            ToyAlgorithm::IqlOffline => "iql-offline",
            ToyAlgorithm::IqlOnline => "iql-online",
        }
    }
}

/// How a trained table acts during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyExecution {
    /// Most likely action; exact ties broken uniformly at random.
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub lambda: f64,
    pub gamma: f64,
    /// Mix-in ratio of the online run; the offline run always uses 0.
    pub alpha: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub rollouts_per_step: usize,
    pub demonstrations: usize,
    pub eval_episodes: usize,
    pub execution: ToyExecution,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gamma: 1.0,
            alpha: 0.1,
            steps: 200,
            learning_rate: 0.05,
            rollouts_per_step: 8,
            demonstrations: 10,
            eval_episodes: 1000,
            execution: ToyExecution::Greedy,
        }
    }
}

/// Per-state action logits, zero-initialized (uniform policy).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub logits: Tensor,
}

impl TabularPolicy {
    pub fn uniform(mdp: &ToyMdp) -> Self {
        Self {
            logits: Tensor::zeros(&[mdp.num_states(), 2]),
        }
    }

    pub fn prob_slot0(&self, row: usize) -> f64 {
        let r = self.logits.row(row);
        1.0 / (1.0 + (r[1] - r[0]).exp())
    }

    pub fn act(&self, mdp: &ToyMdp, s: ToyState, mode: ToyExecution, rng: &mut Rng) -> usize {
        let row = mdp.state_index(s).expect("acting in a non-terminal state");
        match mode {
            ToyExecution::Sample => usize::from(rng.random::<f64>() >= self.prob_slot0(row)),
            ToyExecution::Greedy => {
                let r = self.logits.row(row);
                if r[0] == r[1] {
                    usize::from(rng.random::<bool>())
                } else {
                    usize::from(r[1] > r[0])
                }
            }
        }
    }
}

fn transitions(mdp: &ToyMdp, episodes: &[ToyEpisode]) -> Vec<TokenIndex> {
    episodes
        .iter()
        .flat_map(|e| e.steps.iter())
        .map(|t| TokenIndex {
            state_row: mdp.state_index(t.state).expect("non-terminal"),
            action: t.action.slot(),
            next_row: mdp.state_index(t.next_state),
        })
        .collect()
}

/// Trains a tabular policy. Online rollouts at step `k` come from the step-`k`
/// table, `rollouts_per_step` episodes each on its own rng substream.
pub fn train_tabular(
    mdp: &ToyMdp,
    demos: &[ToyEpisode],
    algorithm: ToyAlgorithm,
    cfg: &ToyTrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<TabularPolicy> {
    let expert = transitions(mdp, demos);
    let iql = IqlConfig {
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        alpha: match algorithm {
            ToyAlgorithm::IqlOffline => 0.0,
            ToyAlgorithm::IqlOnline => cfg.alpha,
        },
    };
    iql.validate()?;
    let mut params = ParamStore::new();
    params.insert("logits", TabularPolicy::uniform(mdp).logits);
    let mut opt = OptimizerState::new(
        AdamConfig {
            base_rate: cfg.learning_rate,
            warmup_steps: 0,
            ..Default::default()
        },
        &params,
    );
    for k in 0..cfg.steps {
        let policy = TabularPolicy {
            logits: params.tensors()[0].clone(),
        };
        let online: Vec<TokenIndex> = if algorithm == ToyAlgorithm::IqlOnline {
            let episodes: Vec<Result<ToyEpisode>> = exec.map_indexed(cfg.rollouts_per_step, |i| {
                let mut rng = substream(seed, "toy-rollout", (k * cfg.rollouts_per_step + i) as u64);
                mdp.rollout(&mut rng, |s, r| policy.act(mdp, s, ToyExecution::Sample, r))
            });
            transitions(mdp, &episodes.into_iter().collect::<Result<Vec<_>>>()?)
        } else {
            Vec::new()
        };
        let g = Graph::new();
        let bound = params.bind(&g);
        let table = bound.var(0);
        let loss = match algorithm {
            ToyAlgorithm::IqlOffline => offline_from_logits(&g, table, &expert, &iql)?,
            ToyAlgorithm::IqlOnline => {
                online_from_logits(&g, table, &expert, Some(table), &online, &iql)?
            }
        };
        if !loss.output.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: k + 1,
                detail: loss.output.to_string(),
            });
        }
        let grads = g.backward(loss.total)?.wrt_all(&bound.vars);
        opt.step(&mut params, &grads)?;
    }
    Ok(TabularPolicy {
        logits: params.tensors()[0].clone(),
    })
}

/// Fraction of episodes that reach the goal within the horizon.
pub fn success_rate(
    mdp: &ToyMdp,
    policy: &TabularPolicy,
    episodes: usize,
    mode: ToyExecution,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let wins: Vec<Result<bool>> = exec.map_indexed(episodes, |i| {
        let mut rng = substream(seed, "toy-eval", i as u64);
        Ok(mdp
            .rollout(&mut rng, |s, r| policy.act(mdp, s, mode, r))?
            .reached_goal())
    });
    let mut n = 0;
    for w in wins {
        n += usize::from(w?);
    }
    Ok(n as f64 / episodes.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySeedResult {
    pub variant: ToyVariant,
    pub algorithm: ToyAlgorithm,
    pub seed: u64,
    pub success_rate: f64,
}

/// Success rate averaged over seeds, with the standard error of that mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyResult {
    pub variant: ToyVariant,
    pub algorithm: ToyAlgorithm,
    pub success_rate: f64,
    pub stderr: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyGap {
    pub variant: ToyVariant,
    /// online − offline.
    pub gap: f64,
    /// stderr(online) + stderr(offline).
    pub combined_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyComparison {
    pub runs: Vec<ToySeedResult>,
    pub results: Vec<ToyResult>,
    pub gaps: Vec<ToyGap>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Both variants × both algorithms × `seeds`. Within a variant and seed
/// both algorithms learn from the same demonstrations.
pub fn run_toy_comparison(
    mdp: &ToyMdp,
    cfg: &ToyTrainConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<ToyComparison> {
    mdp.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("toy comparison needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    let mut results = Vec::new();
    let mut gaps = Vec::new();
    for variant in [ToyVariant::Recoverable, ToyVariant::NonRecoverable] {
        let m = ToyMdp {
            recoverable: variant == ToyVariant::Recoverable,
            ..*mdp
        };
        let mut per_alg = Vec::new();
        for algorithm in [ToyAlgorithm::IqlOffline, ToyAlgorithm::IqlOnline] {
            let mut rates = Vec::new();
            for &seed in seeds {
                let demos = m.demonstrations(cfg.demonstrations, &mut stream(seed, "toy-demos"))?;
                let policy = train_tabular(&m, &demos, algorithm, cfg, seed, exec)?;
                let rate = success_rate(&m, &policy, cfg.eval_episodes, cfg.execution, seed, exec)?;
                runs.push(ToySeedResult {
                    variant,
                    algorithm,
                    seed,
                    success_rate: rate,
                });
                rates.push(rate);
            }
            let (mean, se) = mean_stderr(&rates);
            let r = ToyResult {
                variant,
                algorithm,
                success_rate: mean,
                stderr: se,
                seeds: seeds.len(),
            };
            results.push(r);
            per_alg.push(r);
        }
        gaps.push(ToyGap {
            variant,
            gap: per_alg[1].success_rate - per_alg[0].success_rate,
            combined_stderr: per_alg[0].stderr + per_alg[1].stderr,
        });
    }
    Ok(ToyComparison { runs, results, gaps })
}
