//! A stacked Elman (tanh) recurrent network over token prefixes.
//!
//! The same network serves as the policy (one output per vocabulary token)
//! and as the scalar discriminator and value heads used by GAIL. There are
//! two forward routes: a batched one on an autodiff [`Graph`] for training
//! and a plain incremental one for decoding. Both perform the same floating
//! point operations in the same order and agree bit-for-bit.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::envs::vocab::{TokenId, PAD};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::Rng;
use crate::tensor::{matmul_acc, Tensor};

pub const ARCHITECTURE: &str = "elman-tanh-rnn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub out_dim: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.layers,
            self.out_dim,
        ]
        .contains(&0)
        {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Hidden activations of every layer after some prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<Vec<f64>>,
}

/// Graph outputs for a padded batch of sequences.
///
/// Row `t * batch + b` of `outputs` is the head output after sequence `b`
/// consumed its token at position `t`. Rows past a sequence's end are
/// computed on padding and must be ignored.
#[derive(Debug, Clone, Copy)]
pub struct BatchOutputs {
    pub outputs: Var,
    pub steps: usize,
    pub batch: usize,
}

impl BatchOutputs {
    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqNet {
    pub config: NetConfig,
    pub params: ParamStore,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

impl SeqNet {
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let mut params = ParamStore::new();
        params.insert("embed", uniform(&[v, e], 1.0, rng));
        for l in 0..config.layers {
            let fan_in = if l == 0 { e } else { h };
            params.insert(
                format!("rnn{l}.w_in"),
                uniform(&[fan_in, h], (6.0 / (fan_in + h) as f64).sqrt(), rng),
            );
            params.insert(
                format!("rnn{l}.w_rec"),
                uniform(&[h, h], (3.0 / (2 * h) as f64).sqrt(), rng),
            );
            params.insert(format!("rnn{l}.bias"), Tensor::zeros(&[h]));
        }
        params.insert(
            "head.w",
            uniform(&[h, config.out_dim], (6.0 / (h + config.out_dim) as f64).sqrt(), rng),
        );
        params.insert("head.b", Tensor::zeros(&[config.out_dim]));
        Ok(Self { config, params })
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::stream(0, "shape-template");
        let template = Self::new(config, &mut rng)?;
        if template.params.names() != params.names() {
            return Err(Error::Checkpoint(format!(
                "parameter names {:?} do not match architecture {:?}",
                params.names(),
                template.params.names()
            )));
        }
        for ((name, a), b) in template.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn zero_head(&mut self) {
        for name in ["head.w", "head.b"] {
            if let Some(t) = self.params.get_mut(name) {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Copies embedding and recurrent weights from `other` (same encoder dims).
    pub fn copy_encoder_from(&mut self, other: &SeqNet) -> Result<()> {
        for (name, t) in other.params.iter() {
            if name.starts_with("head.") {
                continue;
            }
            let dst = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("missing encoder parameter `{name}`")))?;
            if dst.shape() != t.shape() {
                return Err(Error::Shape(format!("encoder parameter `{name}` shape mismatch")));
            }
            *dst = t.clone();
        }
        Ok(())
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("parameter present by construction")
    }

    fn check_token(&self, t: TokenId) -> Result<()> {
        if t < self.config.vocab_size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id: t,
                size: self.config.vocab_size,
            })
        }
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState {
            hidden: vec![vec![0.0; self.config.hidden_dim]; self.config.layers],
        }
    }

    /// Consumes one token.
    pub fn advance(&self, state: &RecurrentState, token: TokenId) -> Result<RecurrentState> {
        self.check_token(token)?;
        let (e, h) = (self.config.embed_dim, self.config.hidden_dim);
        let mut x: Vec<f64> = self.p("embed").data()[token * e..(token + 1) * e].to_vec();
        let mut hidden = Vec::with_capacity(self.config.layers);
        for (l, prev) in state.hidden.iter().enumerate() {
            let w_in = self.p(&format!("rnn{l}.w_in"));
            let w_rec = self.p(&format!("rnn{l}.w_rec"));
            let bias = self.p(&format!("rnn{l}.bias")).data();
            let mut a = vec![0.0; h];
            matmul_acc(&x, w_in.data(), &mut a, 1, x.len(), h);
            let mut r = vec![0.0; h];
            matmul_acc(prev, w_rec.data(), &mut r, 1, h, h);
            let next: Vec<f64> = a
                .iter()
                .zip(&r)
                .zip(bias)
                .map(|((a, r), b)| ((a + r) + b).tanh())
                .collect();
            x = next.clone();
            hidden.push(next);
        }
        Ok(RecurrentState { hidden })
    }

    pub fn encode(&self, tokens: &[TokenId]) -> Result<RecurrentState> {
        let mut s = self.initial_state();
        for &t in tokens {
            s = self.advance(&s, t)?;
        }
        Ok(s)
    }

    /// Head output for the top layer of `state`.
    pub fn head(&self, state: &RecurrentState) -> Vec<f64> {
        let (h, o) = (self.config.hidden_dim, self.config.out_dim);
        let top = state.hidden.last().expect("at least one layer");
        let mut out = vec![0.0; o];
        matmul_acc(top, self.p("head.w").data(), &mut out, 1, h, o);
        for (y, b) in out.iter_mut().zip(self.p("head.b").data()) {
            *y += b;
        }
        out
    }

    /// Head outputs after each token of `tokens`.
    pub fn outputs(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        let mut s = self.initial_state();
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            s = self.advance(&s, t)?;
            out.push(self.head(&s));
        }
        Ok(out)
    }

    /// Batched forward on `g`, with parameters bound as `bound`.
    pub fn forward(&self, g: &Graph, bound: &Bound, seqs: &[&[TokenId]]) -> Result<BatchOutputs> {
        let batch = seqs.len();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if batch == 0 || steps == 0 {
            return Err(Error::EmptyBatch("network forward needs a non-empty sequence"));
        }
        for s in seqs {
            for &t in s.iter() {
                self.check_token(t)?;
            }
        }
        let idx = |name: &str| bound.var(self.params.index_of(name).expect("bound parameter"));
        let embed = idx("embed");
        let layers: Vec<(Var, Var, Var)> = (0..self.config.layers)
            .map(|l| {
                (
                    idx(&format!("rnn{l}.w_in")),
                    idx(&format!("rnn{l}.w_rec")),
                    idx(&format!("rnn{l}.bias")),
                )
            })
            .collect();
        let zeros = g.constant(Tensor::zeros(&[batch, self.config.hidden_dim]));
        let mut hidden = vec![zeros; self.config.layers];
        let mut tops = Vec::with_capacity(steps);
        for t in 0..steps {
            let tokens: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            let mut x = g.select_rows(embed, &tokens);
            for (l, &(w_in, w_rec, bias)) in layers.iter().enumerate() {
                let pre = g.add(g.matmul(x, w_in), g.matmul(hidden[l], w_rec));
                hidden[l] = g.tanh(g.add(pre, bias));
                x = hidden[l];
            }
            tops.push(x);
        }
        let stacked = if tops.len() == 1 { tops[0] } else { g.concat(&tops, 0) };
        let outputs = g.add(g.matmul(stacked, idx("head.w")), idx("head.b"));
        Ok(BatchOutputs {
            outputs,
            steps,
            batch,
        })
    }
}
