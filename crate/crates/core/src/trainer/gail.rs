//! One GAIL iteration: a joint policy/critic update followed by exactly
//! one discriminator update.

use super::config::ExperimentConfig;
use crate::autodiff::Graph;
use crate::envs::seq::Trajectory;
use crate::error::{Error, Result};
use crate::objectives::gail::{
    discriminator_accuracy, discriminator_graph, policy_graph, score_rollout,
};
use crate::objectives::{Discriminator, GailWeights, LossOutput, ScalarNet, SeqBatch, StateBatch, ValueNet};
use crate::optim::{clip_global_norm, AdamConfig, OptimizerState};
use crate::policy::PolicyModel;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Consecutive steps of perfect discriminator accuracy before warning.
pub const SATURATION_STEPS: usize = 500;

/// `final · min(1, step / anneal_steps)`, with `step` counted from the first
/// GAIL update. `anneal_steps = 0` applies the final weight immediately.
pub fn kl_weight_at(step: u64, final_weight: f64, anneal_steps: u64) -> f64 {
    if anneal_steps == 0 {
        final_weight
    } else {
        final_weight * (step as f64 / anneal_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GailState {
    pub disc: Discriminator,
    pub value: ValueNet,
    /// Frozen policy snapshot the KL term anchors to.
    pub initial: PolicyModel,
    pub disc_opt: OptimizerState,
    pub value_opt: OptimizerState,
    /// GAIL steps taken so far.
    pub steps: u64,
    pub disc_updates: usize,
    /// Current run of steps with discriminator accuracy 1.0.
    pub saturated_run: usize,
}

impl GailState {
    /// Discriminator and critic share the policy's encoder and start with
    /// zero heads; the anchor is a copy of `policy`.
    pub fn new(policy: &PolicyModel, adam: AdamConfig, rng: &mut Rng) -> Result<Self> {
        let disc = ScalarNet::from_policy(policy, rng)?;
        let value = ScalarNet::from_policy(policy, rng)?;
        Ok(Self {
            disc_opt: OptimizerState::new(adam, &disc.net.params),
            value_opt: OptimizerState::new(adam, &value.net.params),
            disc,
            value,
            initial: policy.clone(),
            steps: 0,
            disc_updates: 0,
            saturated_run: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GailStepReport {
    pub loss: LossOutput,
    pub kl_weight: f64,
    pub disc_loss: f64,
    /// Accuracy on this step's states, measured before the discriminator update.
    pub disc_accuracy: f64,
    pub saturated: bool,
}

fn check_finite(step: usize, what: &str, loss: f64, detail: impl Fn() -> String) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        log::error!("non-finite {what} loss at step {step}: {}", detail());
        Err(Error::NonFiniteLoss { step, detail: detail() })
    }
}

/// One gradient step on the pooled BCE. Returns the loss before the step.
pub fn discriminator_step(
    disc: &mut Discriminator,
    opt: &mut OptimizerState,
    expert: &StateBatch,
    policy: &StateBatch,
    grad_clip: f64,
) -> Result<f64> {
    let g = Graph::new();
    let db = disc.net.params.bind(&g);
    let dl = discriminator_graph(&g, &db, disc, expert, policy)?;
    let loss = g.scalar_value(dl);
    check_finite(0, "discriminator", loss, || format!("bce={loss}"))?;
    let mut dg: Vec<Tensor> = g.backward(dl)?.wrt_all(&db.vars);
    if grad_clip > 0.0 {
        clip_global_norm(&mut dg, grad_clip);
    }
    opt.step(&mut disc.net.params, &dg)?;
    Ok(loss)
}

/// One policy update on `rollouts` (freshly sampled from `policy`), then one
/// discriminator update on expert vs rollout states.
#[allow(clippy::too_many_arguments)]
pub fn gail_train_step(
    policy: &mut PolicyModel,
    policy_opt: &mut OptimizerState,
    state: &mut GailState,
    rollouts: Vec<Trajectory>,
    expert: &[Trajectory],
    cfg: &ExperimentConfig,
    step: usize,
) -> Result<GailStepReport> {
    let grad_clip = cfg.grad_clip;
    if rollouts.is_empty() || expert.is_empty() {
        return Err(Error::EmptyBatch("gail step needs rollouts and expert data"));
    }
    state.steps += 1;
    let w = GailWeights {
        kl_weight: kl_weight_at(state.steps, cfg.kl_weight_final, cfg.anneal_steps),
        mle_weight: cfg.mle_weight,
        gamma: cfg.iql.gamma,
    };

    let policy_states = StateBatch::from_trajectories(&rollouts);
    let expert_states = StateBatch::from_trajectories(expert);
    let scored = rollouts
        .into_iter()
        .map(|t| score_rollout(&state.disc, t))
        .collect::<Result<Vec<_>>>()?;
    let expert_batch = SeqBatch::from_trajectories(expert)?;

    let g = Graph::new();
    let pb = policy.net.params.bind(&g);
    let vb = state.value.net.params.bind(&g);
    let lg = policy_graph(&g, &pb, &vb, policy, &state.value, &state.initial, &scored, Some(&expert_batch), &w)?;
    check_finite(step, "policy", lg.output.total, || lg.output.to_string())?;
    let grads = g.backward(lg.total)?;
    let mut pg = grads.wrt_all(&pb.vars);
    let mut vg = grads.wrt_all(&vb.vars);
    if grad_clip > 0.0 {
        clip_global_norm(&mut pg, grad_clip);
        clip_global_norm(&mut vg, grad_clip);
    }
    policy_opt.step(&mut policy.net.params, &pg)?;
    state.value_opt.step(&mut state.value.net.params, &vg)?;

    let disc_accuracy = discriminator_accuracy(&state.disc, &expert_states, &policy_states)?;
    let disc_loss = discriminator_step(&mut state.disc, &mut state.disc_opt, &expert_states, &policy_states, grad_clip)
        .map_err(|e| match e {
            Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step, detail },
            other => other,
        })?;
    state.disc_updates += 1;

    if disc_accuracy >= 1.0 {
        state.saturated_run += 1;
    } else {
        state.saturated_run = 0;
    }
    let saturated = state.saturated_run >= SATURATION_STEPS;
    if state.saturated_run == SATURATION_STEPS {
        log::warn!(
            "discriminator accuracy has been 1.0 for {SATURATION_STEPS} consecutive steps (step {step}); the policy may have collapsed"
        );
    }
    Ok(GailStepReport {
        loss: lg.output,
        kl_weight: w.kl_weight,
        disc_loss,
        disc_accuracy,
        saturated,
    })
}
