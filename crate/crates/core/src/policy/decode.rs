//! Temperature sampling, greedy decoding and beam search.

use serde::{Deserialize, Serialize};

use super::model::{argmax, log_softmax, sample_index, StepModel};
use crate::envs::seq::Trajectory;
use crate::envs::vocab::TokenId;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Sample,
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    /// Maximum number of completion tokens.
    pub max_len: usize,
    pub mode: DecodeMode,
    pub beam_size: usize,
    pub length_penalty: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_len: 64,
            mode: DecodeMode::Sample,
            beam_size: 4,
            length_penalty: 0.6,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("sampler max_len must be positive".into()));
        }
        if self.mode == DecodeMode::Sample && !(self.temperature > 0.0) {
            return Err(Error::Config("sampling temperature must be positive".into()));
        }
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Dispatches on `cfg.mode`. Only sampling consumes `rng`.
pub fn decode<M: StepModel>(
    model: &M,
    prompt: &[TokenId],
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Trajectory> {
    match cfg.mode {
        DecodeMode::Sample => sample(model, prompt, cfg, rng),
        DecodeMode::Greedy => greedy(model, prompt, cfg.max_len),
        DecodeMode::Beam => beam_search(model, prompt, cfg),
    }
}

fn unroll<M: StepModel>(
    model: &M,
    prompt: &[TokenId],
    max_len: usize,
    mut pick: impl FnMut(&[f64]) -> usize,
) -> Result<Trajectory> {
    let mut state = model.start(prompt)?;
    let mut completion = Vec::new();
    while completion.len() < max_len {
        let tok = pick(&model.next_logits(&state));
        completion.push(tok);
        if tok == model.eos() {
            break;
        }
        state = model.advance(&state, tok)?;
    }
    Ok(Trajectory::new(prompt.to_vec(), completion, true))
}

/// Draws from `softmax(logits / temperature)` until `<eos>` or `max_len`.
pub fn sample<M: StepModel>(
    model: &M,
    prompt: &[TokenId],
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Trajectory> {
    cfg.validate()?;
    unroll(model, prompt, cfg.max_len, |l| sample_index(l, cfg.temperature, rng))
}

pub fn greedy<M: StepModel>(model: &M, prompt: &[TokenId], max_len: usize) -> Result<Trajectory> {
    unroll(model, prompt, max_len, argmax)
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<TokenId>,
    score: f64,
    state: S,
}

/// `sum_logp / len^length_penalty`.
pub fn normalized_score(sum_logp: f64, len: usize, length_penalty: f64) -> f64 {
    sum_logp / (len as f64).powf(length_penalty)
}

/// Beam search over completions of at most `cfg.max_len` tokens.
///
/// Each step keeps the `beam_size` best extensions by raw log-probability.
/// Extensions ending in `<eos>` use up a slot and leave the beam as finished
/// candidates; the best finished one by [`normalized_score`] wins, so a beam
/// of one is exactly greedy decoding. If nothing finishes, the
/// best unfinished beam is returned with `terminated = false`.
pub fn beam_search<M: StepModel>(
    model: &M,
    prompt: &[TokenId],
    cfg: &SamplerConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let lp = cfg.length_penalty;
    let mut beams = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        state: model.start(prompt)?,
    }];
    let mut best_finished: Option<(f64, Vec<TokenId>)> = None;
    for depth in 1..=cfg.max_len {
        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (bi, h) in beams.iter().enumerate() {
            let logp = log_softmax(&model.next_logits(&h.state));
            for (tok, l) in logp.into_iter().enumerate() {
                candidates.push((h.score + l, bi, tok));
            }
        }
        // stable order: score desc, then beam index, then token id
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(cfg.beam_size);
        for (score, bi, tok) in candidates.into_iter().take(cfg.beam_size) {
            let mut tokens = beams[bi].tokens.clone();
            tokens.push(tok);
            if tok == model.eos() {
                let s = normalized_score(score, depth, lp);
                if best_finished.as_ref().is_none_or(|(b, _)| s > *b) {
                    best_finished = Some((s, tokens));
                }
                continue;
            }
            let state = model.advance(&beams[bi].state, tok)?;
            next.push(Hyp { tokens, score, state });
        }
        if next.is_empty() {
            break;
        }
        beams = next;
    }
    Ok(match best_finished {
        Some((_, tokens)) => Trajectory::new(prompt.to_vec(), tokens, true),
        None => {
            let best = beams
                .iter()
                .max_by(|a, b| {
                    normalized_score(a.score, a.tokens.len(), lp)
                        .total_cmp(&normalized_score(b.score, b.tokens.len(), lp))
                })
                .expect("beam never empty here");
            Trajectory::new(prompt.to_vec(), best.tokens.clone(), false)
        }
    })
}
