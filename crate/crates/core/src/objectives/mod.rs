pub mod batch;
pub mod gail;
pub mod iql;

use serde::{Deserialize, Serialize};

pub use batch::{SeqBatch, StateBatch, TokenIndex};
pub use gail::{
    gail_discriminator_loss, gail_policy_loss, gail_reward, Discriminator, GailWeights, ScalarNet,
    ScoredRollout, ValueNet,
};
pub use iql::{
    entropy_regularized_mle_loss, extract_rewards, iqlearn_offline_loss, iqlearn_online_loss,
    mle_loss, value_and_grad, IqlConfig, LossGraph, RewardTrace,
};

/// Scalar loss and its parts.
///
/// `total` decomposes per objective as follows:
/// MLE: `mle_term`;
/// entropy-regularized MLE: `mle_term − entropy_term`;
/// IQLearn (offline and online): `td_term + mle_term`;
/// GAIL: `policy_term + kl_term + mle_term + value_term`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossOutput {
    pub total: f64,
    pub mle_term: f64,
    pub td_term: f64,
    pub entropy_term: f64,
    pub policy_term: f64,
    pub kl_term: f64,
    pub value_term: f64,
    pub token_count: usize,
}

impl std::fmt::Display for LossOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total={} mle={} td={} entropy={} policy={} kl={} value={} tokens={}",
            self.total,
            self.mle_term,
            self.td_term,
            self.entropy_term,
            self.policy_term,
            self.kl_term,
            self.value_term,
            self.token_count
        )
    }
}
