//! Likelihood and inverse soft-Q objectives.
//!
//! The policy logits are read as rescaled soft Q-values `q(s, ·)`, so
//! `v(s) = logsumexp q(s, ·)` and `log π(a|s) = q(s, a) − v(s)`. The TD
//! residual of a transition is `δ = v(s) + c·log π(a|s) − γ·v(s′)` with
//! `v(s′) = 0` for terminal successors and `c = 1/(1 − α)`.

use serde::{Deserialize, Serialize};

use super::batch::{SeqBatch, TokenIndex};
use super::LossOutput;
use crate::autodiff::{Graph, Var};
use crate::envs::seq::Trajectory;
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::policy::{PolicyModel, StepModel};
use crate::tensor::{logsumexp_slice, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqlConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for IqlConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gamma: 1.0,
            alpha: 0.0,
        }
    }
}

impl IqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// A loss node plus its decomposition.
#[derive(Debug, Clone, Copy)]
pub struct LossGraph {
    pub total: Var,
    pub output: LossOutput,
}

/// Per-token graph quantities for a logits matrix.
pub struct TokenTerms {
    pub log_softmax: Var,
    pub log_pi: Var,
    pub delta: Var,
}

/// `log π(a|s)` and `δ` for every indexed transition of `logits` (`[R, V]`).
pub fn token_terms(g: &Graph, logits: Var, idx: &[TokenIndex], c: f64, gamma: f64) -> Result<TokenTerms> {
    let shape = g.shape(logits);
    if shape.len() != 2 {
        return Err(Error::Shape(format!("logits must be [rows, vocab], got {shape:?}")));
    }
    let v_count = shape[1];
    let lsm = g.try_log_softmax(logits)?;
    let values = g.try_logsumexp(logits)?;
    let n = idx.len();
    let log_pi = g.try_gather(lsm, idx.iter().map(|t| t.state_row * v_count + t.action).collect(), vec![n])?;
    let v_s = g.try_gather(values, idx.iter().map(|t| t.state_row).collect(), vec![n])?;
    let v_next_raw = g.try_gather(values, idx.iter().map(|t| t.next_row.unwrap_or(0)).collect(), vec![n])?;
    let mask = g.constant(Tensor::vector(
        idx.iter().map(|t| if t.next_row.is_some() { 1.0 } else { 0.0 }).collect(),
    ));
    let v_next = g.mul(v_next_raw, mask);
    let delta = g.sub(g.add(v_s, g.scale(log_pi, c)), g.scale(v_next, gamma));
    Ok(TokenTerms {
        log_softmax: lsm,
        log_pi,
        delta,
    })
}

fn non_empty(idx: &[TokenIndex], what: &'static str) -> Result<()> {
    if idx.is_empty() {
        Err(Error::EmptyBatch(what))
    } else {
        Ok(())
    }
}

/// `mean(−log π)` over the indexed transitions.
pub fn mle_from_logits(g: &Graph, logits: Var, idx: &[TokenIndex]) -> Result<LossGraph> {
    non_empty(idx, "mle loss needs at least one completion token")?;
    let t = token_terms(g, logits, idx, 1.0, 1.0)?;
    let mle = g.mean(g.scale(t.log_pi, -1.0));
    let v = g.scalar_value(mle);
    Ok(LossGraph {
        total: mle,
        output: LossOutput {
            total: v,
            mle_term: v,
            token_count: idx.len(),
            ..Default::default()
        },
    })
}

/// `mean(−log π) − λ·mean H(π(·|s))`.
pub fn entropy_mle_from_logits(g: &Graph, logits: Var, idx: &[TokenIndex], lambda: f64) -> Result<LossGraph> {
    non_empty(idx, "entropy-regularized mle needs at least one completion token")?;
    let t = token_terms(g, logits, idx, 1.0, 1.0)?;
    let mle = g.mean(g.scale(t.log_pi, -1.0));
    let rows: Vec<usize> = idx.iter().map(|i| i.state_row).collect();
    let lp = g.select_rows(t.log_softmax, &rows);
    let neg_h_sum = g.sum(g.mul(g.exp(lp), lp));
    let ent = g.scale(neg_h_sum, -lambda / idx.len() as f64);
    let total = g.sub(mle, ent);
    Ok(LossGraph {
        total,
        output: LossOutput {
            total: g.scalar_value(total),
            mle_term: g.scalar_value(mle),
            entropy_term: g.scalar_value(ent),
            token_count: idx.len(),
            ..Default::default()
        },
    })
}

/// `mean(λ·δ²) + mean(−log π)` with `c = 1`.
pub fn offline_from_logits(g: &Graph, logits: Var, idx: &[TokenIndex], cfg: &IqlConfig) -> Result<LossGraph> {
    non_empty(idx, "iqlearn loss needs at least one completion token")?;
    cfg.validate()?;
    let t = token_terms(g, logits, idx, 1.0, cfg.gamma)?;
    let td = g.mean(g.scale(g.square(t.delta), cfg.lambda));
    let mle = g.mean(g.scale(t.log_pi, -1.0));
    let total = g.add(td, mle);
    Ok(LossGraph {
        total,
        output: LossOutput {
            total: g.scalar_value(total),
            mle_term: g.scalar_value(mle),
            td_term: g.scalar_value(td),
            token_count: idx.len(),
            ..Default::default()
        },
    })
}

/// `λ·[(1−α)·mean_E δ² + α·mean_B δ²] − mean_E log π`, residuals scaled by
/// `c = 1/(1−α)`. The likelihood term sees expert tokens only.
pub fn online_from_logits(
    g: &Graph,
    expert_logits: Var,
    expert: &[TokenIndex],
    online_logits: Option<Var>,
    online: &[TokenIndex],
    cfg: &IqlConfig,
) -> Result<LossGraph> {
    non_empty(expert, "online iqlearn needs expert tokens")?;
    cfg.validate()?;
    let c = 1.0 / (1.0 - cfg.alpha);
    let te = token_terms(g, expert_logits, expert, c, cfg.gamma)?;
    let expert_sq = g.mean(g.square(te.delta));
    let mut td_inner = g.scale(expert_sq, 1.0 - cfg.alpha);
    match online_logits {
        Some(ol) if !online.is_empty() => {
            let to = token_terms(g, ol, online, c, cfg.gamma)?;
            let online_sq = g.mean(g.square(to.delta));
            td_inner = g.add(td_inner, g.scale(online_sq, cfg.alpha));
        }
        _ if cfg.alpha > 0.0 => {
            return Err(Error::EmptyBatch("online iqlearn with alpha > 0 needs online tokens"));
        }
        _ => {}
    }
    let td = g.scale(td_inner, cfg.lambda);
    let mle = g.mean(g.scale(te.log_pi, -1.0));
    let total = g.add(td, mle);
    Ok(LossGraph {
        total,
        output: LossOutput {
            total: g.scalar_value(total),
            mle_term: g.scalar_value(mle),
            td_term: g.scalar_value(td),
            token_count: expert.len() + online.len(),
            ..Default::default()
        },
    })
}

fn forward_logits(g: &Graph, bound: &Bound, model: &PolicyModel, batch: &SeqBatch) -> Result<Var> {
    if batch.seqs.is_empty() {
        return Err(Error::EmptyBatch("no trajectories in batch"));
    }
    Ok(model.net.forward(g, bound, &batch.seq_refs())?.outputs)
}

pub fn mle_graph(g: &Graph, bound: &Bound, model: &PolicyModel, batch: &SeqBatch) -> Result<LossGraph> {
    let logits = forward_logits(g, bound, model, batch)?;
    mle_from_logits(g, logits, &batch.tokens)
}

pub fn entropy_mle_graph(
    g: &Graph,
    bound: &Bound,
    model: &PolicyModel,
    batch: &SeqBatch,
    lambda: f64,
) -> Result<LossGraph> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("entropy weight must be ≥ 0, got {lambda}")));
    }
    let logits = forward_logits(g, bound, model, batch)?;
    entropy_mle_from_logits(g, logits, &batch.tokens, lambda)
}

pub fn offline_graph(
    g: &Graph,
    bound: &Bound,
    model: &PolicyModel,
    batch: &SeqBatch,
    cfg: &IqlConfig,
) -> Result<LossGraph> {
    let logits = forward_logits(g, bound, model, batch)?;
    offline_from_logits(g, logits, &batch.tokens, cfg)
}

pub fn online_graph(
    g: &Graph,
    bound: &Bound,
    model: &PolicyModel,
    expert: &SeqBatch,
    online: &SeqBatch,
    cfg: &IqlConfig,
) -> Result<LossGraph> {
    let el = forward_logits(g, bound, model, expert)?;
    let ol = if online.seqs.is_empty() {
        None
    } else {
        Some(forward_logits(g, bound, model, online)?)
    };
    online_from_logits(g, el, &expert.tokens, ol, &online.tokens, cfg)
}

fn evaluate(
    model: &PolicyModel,
    build: impl FnOnce(&Graph, &Bound) -> Result<LossGraph>,
) -> Result<LossOutput> {
    let g = Graph::new();
    let bound = model.net.params.bind(&g);
    Ok(build(&g, &bound)?.output)
}

/// Loss value and parameter gradients (in parameter-store order).
pub fn value_and_grad(
    model: &PolicyModel,
    build: impl FnOnce(&Graph, &Bound) -> Result<LossGraph>,
) -> Result<(LossOutput, Vec<Tensor>)> {
    let g = Graph::new();
    let bound = model.net.params.bind(&g);
    let loss = build(&g, &bound)?;
    let grads = g.backward(loss.total)?;
    Ok((loss.output, grads.wrt_all(&bound.vars)))
}

pub fn mle_loss(batch: &[Trajectory], model: &PolicyModel) -> Result<LossOutput> {
    let b = SeqBatch::from_trajectories(batch)?;
    evaluate(model, |g, bd| mle_graph(g, bd, model, &b))
}

pub fn entropy_regularized_mle_loss(batch: &[Trajectory], model: &PolicyModel, lambda: f64) -> Result<LossOutput> {
    let b = SeqBatch::from_trajectories(batch)?;
    evaluate(model, |g, bd| entropy_mle_graph(g, bd, model, &b, lambda))
}

pub fn iqlearn_offline_loss(batch: &[Trajectory], model: &PolicyModel, cfg: &IqlConfig) -> Result<LossOutput> {
    let b = SeqBatch::from_trajectories(batch)?;
    evaluate(model, |g, bd| offline_graph(g, bd, model, &b, cfg))
}

pub fn iqlearn_online_loss(
    expert: &[Trajectory],
    online: &[Trajectory],
    model: &PolicyModel,
    cfg: &IqlConfig,
) -> Result<LossOutput> {
    let e = SeqBatch::from_trajectories(expert)?;
    let o = SeqBatch::from_trajectories(online)?;
    evaluate(model, |g, bd| online_graph(g, bd, model, &e, &o, cfg))
}

/// Implicit per-step rewards of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrace {
    pub per_step: Vec<f64>,
    pub total_return: f64,
}

/// `r_t = λ·[q(s_t, a_t) − γ·v(s_{t+1})]`, `v` of a terminal successor = 0.
pub fn extract_rewards<M: StepModel>(model: &M, traj: &Trajectory, cfg: &IqlConfig) -> Result<RewardTrace> {
    let n = traj.completion.len();
    let mut state = model.start(&traj.prompt)?;
    let mut logits = model.next_logits(&state);
    let mut per_step = Vec::with_capacity(n);
    for (i, &a) in traj.completion.iter().enumerate() {
        let q = *logits.get(a).ok_or(Error::TokenOutOfRange { id: a, size: logits.len() })?;
        let terminal = i + 1 == n && traj.terminated;
        let v_next = if terminal {
            0.0
        } else {
            state = model.advance(&state, a)?;
            logits = model.next_logits(&state);
            logsumexp_slice(&logits)
        };
        per_step.push(cfg.lambda * (q - cfg.gamma * v_next));
    }
    let total_return = per_step.iter().sum();
    Ok(RewardTrace {
        per_step,
        total_return,
    })
}
