//! Adversarial imitation: a state discriminator whose softplus output is
//! the reward for an advantage actor-critic update of the policy.

use super::batch::{SeqBatch, StateBatch};
use super::iql::{token_terms, LossGraph};
use super::LossOutput;
use crate::autodiff::{Graph, Var};
use crate::envs::seq::Trajectory;
use crate::envs::vocab::TokenId;
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::policy::model::log_softmax;
use crate::policy::{NetConfig, PolicyModel, SeqNet};
use crate::rng::Rng;
use crate::tensor::{softplus, Tensor};

/// A recurrent network with one scalar output per state. Used both as the
/// GAIL discriminator `D(s)` and as the critic `V(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarNet {
    pub net: SeqNet,
}

pub type Discriminator = ScalarNet;
pub type ValueNet = ScalarNet;

impl ScalarNet {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize, layers: usize, rng: &mut Rng) -> Result<Self> {
        let config = NetConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            layers,
            out_dim: 1,
        };
        Ok(Self {
            net: SeqNet::new(config, rng)?,
        })
    }

    /// Shares the policy's encoder weights and starts from a zero head.
    pub fn from_policy(policy: &PolicyModel, rng: &mut Rng) -> Result<Self> {
        let c = policy.net.config;
        let mut s = Self::new(c.vocab_size, c.embed_dim, c.hidden_dim, c.layers, rng)?;
        s.net.copy_encoder_from(&policy.net)?;
        s.net.zero_head();
        Ok(s)
    }

    /// Output at the last token of `state`.
    pub fn score(&self, state: &[TokenId]) -> Result<f64> {
        if state.is_empty() {
            return Err(Error::Contract("empty state prefix".into()));
        }
        Ok(self.net.head(&self.net.encode(state)?)[0])
    }

    /// Outputs after every position of `tokens`.
    pub fn scores(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.net.outputs(tokens)?.into_iter().map(|o| o[0]).collect())
    }

    /// `[n]` graph node of outputs at the batch's state rows.
    pub fn forward_states(&self, g: &Graph, bound: &Bound, states: &StateBatch) -> Result<Var> {
        let out = self.net.forward(g, bound, &states.seq_refs())?;
        let picked = g.select_rows(out.outputs, &states.rows);
        Ok(g.reshape(picked, vec![states.len()]))
    }
}

/// Shaped reward `ln(1 + e^D)`; positive and increasing in `D`.
pub fn gail_reward_from_logit(d: f64) -> f64 {
    softplus(d)
}

pub fn gail_reward(disc: &Discriminator, state: &[TokenId]) -> Result<f64> {
    Ok(gail_reward_from_logit(disc.score(state)?))
}

/// `softplus(x)` elementwise on an `[n]` node, as `logsumexp([x, 0])`.
fn softplus_node(g: &Graph, x: Var, n: usize) -> Var {
    let col = g.reshape(x, vec![n, 1]);
    let zeros = g.constant(Tensor::zeros(&[n, 1]));
    g.logsumexp(g.concat(&[col, zeros], 1))
}

/// Binary cross-entropy on `sigmoid(D)`, expert states labelled 1 and policy
/// states 0, averaged over the pooled states of both batches.
pub fn discriminator_graph(
    g: &Graph,
    bound: &Bound,
    disc: &Discriminator,
    expert: &StateBatch,
    policy: &StateBatch,
) -> Result<Var> {
    if expert.is_empty() || policy.is_empty() {
        return Err(Error::EmptyBatch("discriminator needs expert and policy states"));
    }
    let de = disc.forward_states(g, bound, expert)?;
    let dp = disc.forward_states(g, bound, policy)?;
    // −log σ(D) = softplus(−D), −log(1 − σ(D)) = softplus(D)
    let le = g.sum(softplus_node(g, g.scale(de, -1.0), expert.len()));
    let lp = g.sum(softplus_node(g, dp, policy.len()));
    Ok(g.scale(g.add(le, lp), 1.0 / (expert.len() + policy.len()) as f64))
}

pub fn gail_discriminator_loss(expert: &StateBatch, policy: &StateBatch, disc: &Discriminator) -> Result<f64> {
    let g = Graph::new();
    let bound = disc.net.params.bind(&g);
    let loss = discriminator_graph(&g, &bound, disc, expert, policy)?;
    Ok(g.scalar_value(loss))
}

/// Fraction of states the discriminator classifies correctly (`D > 0` ⇔ expert).
pub fn discriminator_accuracy(disc: &Discriminator, expert: &StateBatch, policy: &StateBatch) -> Result<f64> {
    let g = Graph::new();
    let bound = disc.net.params.bind(&g);
    let de = g.value(disc.forward_states(&g, &bound, expert)?);
    let dp = g.value(disc.forward_states(&g, &bound, policy)?);
    let correct = de.data().iter().filter(|&&d| d > 0.0).count() + dp.data().iter().filter(|&&d| d <= 0.0).count();
    Ok(correct as f64 / (de.len() + dp.len()).max(1) as f64)
}

/// A policy rollout with its per-step discriminator rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRollout {
    pub traj: Trajectory,
    pub rewards: Vec<f64>,
}

/// Rewards `softplus(D(s_t))` for every completion step, where `s_t`
/// includes the step's token.
pub fn score_rollout(disc: &Discriminator, traj: Trajectory) -> Result<ScoredRollout> {
    let full = traj.full();
    let d = disc.scores(&full)?;
    let rewards = d[traj.prompt.len()..].iter().map(|&x| gail_reward_from_logit(x)).collect();
    Ok(ScoredRollout { traj, rewards })
}

/// Discounted reward-to-go.
pub fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Centres `adv` and scales it to unit variance. A batch of equal values
/// maps to exact zeros; a near-constant one is only centred.
pub fn standardize(adv: &[f64]) -> Vec<f64> {
    if adv.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; adv.len()];
    }
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    adv.iter()
        .map(|a| if sd > 1e-12 { (a - mean) / sd } else { a - mean })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GailWeights {
    pub kl_weight: f64,
    pub mle_weight: f64,
    pub gamma: f64,
}

/// Policy and critic loss:
/// `−mean(Â·log π) + kl·mean KL(π‖π_init) + mle·MLE(expert) + mean (V − R)²`.
///
/// `Â` are standardized `R_t − V(s_t)`, with the critic value held fixed.
/// The critic sees the state before each action, the same state the policy
/// conditions on.
#[allow(clippy::too_many_arguments)]
pub fn policy_graph(
    g: &Graph,
    policy_bound: &Bound,
    value_bound: &Bound,
    model: &PolicyModel,
    value_net: &ValueNet,
    initial: &PolicyModel,
    rollouts: &[ScoredRollout],
    expert: Option<&SeqBatch>,
    w: &GailWeights,
) -> Result<LossGraph> {
    let trajs: Vec<Trajectory> = rollouts.iter().map(|r| r.traj.clone()).collect();
    let batch = SeqBatch::from_trajectories(&trajs)?;
    if batch.tokens.is_empty() {
        return Err(Error::EmptyBatch("gail policy loss needs rollout tokens"));
    }
    let returns: Vec<f64> = rollouts.iter().flat_map(|r| reward_to_go(&r.rewards, w.gamma)).collect();
    if returns.len() != batch.tokens.len() {
        return Err(Error::Contract("rollout rewards do not match completion lengths".into()));
    }
    let n = batch.tokens.len();
    let state_rows: Vec<usize> = batch.tokens.iter().map(|t| t.state_row).collect();

    let logits = model.net.forward(g, policy_bound, &batch.seq_refs())?.outputs;
    let t = token_terms(g, logits, &batch.tokens, 1.0, 1.0)?;

    let vout = value_net.net.forward(g, value_bound, &batch.seq_refs())?.outputs;
    let v_s = g.reshape(g.select_rows(vout, &state_rows), vec![n]);
    let values = g.value(v_s);
    let raw_adv: Vec<f64> = returns.iter().zip(values.data()).map(|(r, v)| r - v).collect();
    let adv = g.constant(Tensor::vector(standardize(&raw_adv)));
    let pg = g.scale(g.mean(g.mul(t.log_pi, adv)), -1.0);

    let mut init_rows = Vec::with_capacity(n * model.vocab_size());
    for traj in &trajs {
        let full = traj.full();
        let outs = initial.net.outputs(&full[..full.len().saturating_sub(1)])?;
        for o in outs.iter().skip(traj.prompt.len() - 1) {
            init_rows.extend(log_softmax(o));
        }
    }
    let init_lp = g.constant(Tensor::new(vec![n, model.vocab_size()], init_rows)?);
    let lp_s = g.select_rows(t.log_softmax, &state_rows);
    let kl_sum = g.sum(g.mul(g.exp(lp_s), g.sub(lp_s, init_lp)));
    let kl = g.scale(kl_sum, 1.0 / n as f64);

    let value_term = g.mean(g.square(g.sub(v_s, g.constant(Tensor::vector(returns)))));

    let mut total = g.add(g.add(pg, g.scale(kl, w.kl_weight)), value_term);
    let mut mle_value = 0.0;
    if let Some(e) = expert.filter(|e| !e.tokens.is_empty() && w.mle_weight != 0.0) {
        let el = model.net.forward(g, policy_bound, &e.seq_refs())?.outputs;
        let te = token_terms(g, el, &e.tokens, 1.0, 1.0)?;
        let mle = g.scale(g.mean(g.scale(te.log_pi, -1.0)), w.mle_weight);
        mle_value = g.scalar_value(mle);
        total = g.add(total, mle);
    }
    Ok(LossGraph {
        total,
        output: LossOutput {
            total: g.scalar_value(total),
            mle_term: mle_value,
            policy_term: g.scalar_value(pg),
            kl_term: w.kl_weight * g.scalar_value(kl),
            value_term: g.scalar_value(value_term),
            token_count: n,
            ..Default::default()
        },
    })
}

pub fn gail_policy_loss(
    rollouts: &[ScoredRollout],
    value_net: &ValueNet,
    w: &GailWeights,
    initial: &PolicyModel,
    model: &PolicyModel,
    expert: &[Trajectory],
) -> Result<LossOutput> {
    let g = Graph::new();
    let pb = model.net.params.bind(&g);
    let vb = value_net.net.params.bind(&g);
    let e = SeqBatch::from_trajectories(expert)?;
    Ok(policy_graph(&g, &pb, &vb, model, value_net, initial, rollouts, Some(&e), w)?.output)
}
