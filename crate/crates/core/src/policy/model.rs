//! The token policy. Its logits double as rescaled soft Q-values: the state
//! value is `v(s) = logsumexp(logits(s))` and `log π(a|s) = logits(s)[a] − v(s)`.

use crate::envs::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{logsumexp_slice, softmax};

use super::net::{NetConfig, RecurrentState, SeqNet};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub vocab: Vocabulary,
    pub net: SeqNet,
}

impl PolicyModel {
    pub fn new(
        vocab: Vocabulary,
        embed_dim: usize,
        hidden_dim: usize,
        layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let config = NetConfig {
            vocab_size: vocab.len(),
            embed_dim,
            hidden_dim,
            layers,
            out_dim: vocab.len(),
        };
        Ok(Self {
            net: SeqNet::new(config, rng)?,
            vocab,
        })
    }

    pub fn from_net(vocab: Vocabulary, net: SeqNet) -> Result<Self> {
        if net.config.vocab_size != vocab.len() || net.config.out_dim != vocab.len() {
            return Err(Error::Shape(format!(
                "network {:?} does not fit a vocabulary of {} tokens",
                net.config,
                vocab.len()
            )));
        }
        Ok(Self { vocab, net })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn logits(&self, state: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.net.head(&self.net.encode(state)?))
    }

    pub fn state_value(&self, state: &[TokenId]) -> Result<f64> {
        Ok(logsumexp_slice(&self.logits(state)?))
    }

    pub fn log_prob(&self, state: &[TokenId], action: TokenId) -> Result<f64> {
        self.vocab.check(action)?;
        let logits = self.logits(state)?;
        Ok(logits[action] - logsumexp_slice(&logits))
    }

    pub fn log_probs(&self, state: &[TokenId]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(state)?))
    }

    pub fn per_token_entropy(&self, state: &[TokenId]) -> Result<f64> {
        Ok(entropy(&self.logits(state)?))
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let v = logsumexp_slice(logits);
    logits.iter().map(|x| x - v).collect()
}

/// Entropy of `softmax(logits)`, clamped at 0 against round-off.
pub fn entropy(logits: &[f64]) -> f64 {
    let lp = log_softmax(logits);
    let h: f64 = lp
        .iter()
        .map(|&l| {
            let p = l.exp();
            if p > 0.0 {
                -p * l
            } else {
                0.0
            }
        })
        .sum();
    h.max(0.0)
}

/// Anything that can score next tokens one step at a time.
pub trait StepModel: Sync {
    type State: Clone + Send;

    fn eos(&self) -> TokenId;
    fn start(&self, prompt: &[TokenId]) -> Result<Self::State>;
    fn advance(&self, state: &Self::State, token: TokenId) -> Result<Self::State>;
    fn next_logits(&self, state: &Self::State) -> Vec<f64>;
}

impl StepModel for PolicyModel {
    type State = RecurrentState;

    fn eos(&self) -> TokenId {
        self.vocab.eos()
    }

    fn start(&self, prompt: &[TokenId]) -> Result<RecurrentState> {
        self.net.encode(prompt)
    }

    fn advance(&self, state: &RecurrentState, token: TokenId) -> Result<RecurrentState> {
        self.net.advance(state, token)
    }

    fn next_logits(&self, state: &RecurrentState) -> Vec<f64> {
        self.net.head(state)
    }
}

/// Softmax with max subtraction, then a sampled index.
pub(crate) fn sample_index(logits: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    use rand::Rng as _;
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let probs = softmax(&scaled);
    let mut u = rng.random::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    // round-off left a sliver of mass; fall back to the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
