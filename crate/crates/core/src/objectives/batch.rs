//! Flattening trajectories into graph row indices.

use crate::envs::seq::Trajectory;
use crate::envs::vocab::TokenId;
use crate::error::{Error, Result};

/// One scored transition: the logits row of its state, the action taken,
/// and the logits row of the successor (`None` when terminal, whose value is
/// fixed to 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenIndex {
    pub state_row: usize,
    pub action: usize,
    pub next_row: Option<usize>,
}

/// A padded batch of full sequences (prompt ++ completion) and the
/// completion tokens to score. Rows follow [`crate::policy::BatchOutputs`]:
/// row `t * batch + b` is the state after position `t` of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub seqs: Vec<Vec<TokenId>>,
    pub tokens: Vec<TokenIndex>,
}

impl SeqBatch {
    pub fn from_trajectories(batch: &[Trajectory]) -> Result<Self> {
        let b_count = batch.len();
        let mut seqs = Vec::with_capacity(b_count);
        let mut tokens = Vec::new();
        for (b, traj) in batch.iter().enumerate() {
            if traj.prompt.is_empty() && !traj.completion.is_empty() {
                return Err(Error::Contract(
                    "trajectory without a prompt has no initial state".into(),
                ));
            }
            let p = traj.prompt.len();
            let n = traj.completion.len();
            for (i, &a) in traj.completion.iter().enumerate() {
                let j = p + i;
                let terminal = i + 1 == n && traj.terminated;
                tokens.push(TokenIndex {
                    state_row: (j - 1) * b_count + b,
                    action: a,
                    next_row: (!terminal).then_some(j * b_count + b),
                });
            }
            seqs.push(traj.full());
        }
        Ok(Self { seqs, tokens })
    }

    pub fn seq_refs(&self) -> Vec<&[TokenId]> {
        self.seqs.iter().map(Vec::as_slice).collect()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// States given as prefixes inside padded sequences; row indices as above.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    pub seqs: Vec<Vec<TokenId>>,
    pub rows: Vec<usize>,
}

impl StateBatch {
    /// Each prefix becomes its own sequence, scored at its last token.
    pub fn from_prefixes(prefixes: &[Vec<TokenId>]) -> Result<Self> {
        let n = prefixes.len();
        let mut rows = Vec::with_capacity(n);
        for (b, p) in prefixes.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Contract("empty state prefix".into()));
            }
            rows.push((p.len() - 1) * n + b);
        }
        Ok(Self {
            seqs: prefixes.to_vec(),
            rows,
        })
    }

    /// Every prefix that ends in a completion token, i.e. `s_t` with the
    /// current token as its last element.
    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let n = trajs.len();
        let mut rows = Vec::new();
        for (b, t) in trajs.iter().enumerate() {
            let p = t.prompt.len();
            for j in p..p + t.completion.len() {
                rows.push(j * n + b);
            }
        }
        Self {
            seqs: trajs.iter().map(Trajectory::full).collect(),
            rows,
        }
    }

    pub fn seq_refs(&self) -> Vec<&[TokenId]> {
        self.seqs.iter().map(Vec::as_slice).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
