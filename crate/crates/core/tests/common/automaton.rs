//! Finite-state step models with hand-set logits, and exhaustive search
//! over their completions.

use rand::Rng as _;
use seqimit_core::envs::{BOS, EOS};
use seqimit_core::policy::StepModel;
use seqimit_core::rng::stream;

pub const A: usize = 3;
pub const B: usize = 4;
pub const NEVER: f64 = -1e9;

/// Finite-state model over `{pad, bos, eos, a, b}`: the state is the last
/// emitted content token (0 at the start), logits come from a table.
#[derive(Clone)]
pub struct Automaton {
    pub logits: Vec<[f64; 5]>,
    pub next: fn(usize, usize) -> usize,
}

impl StepModel for Automaton {
    type State = usize;
    fn eos(&self) -> usize {
        EOS
    }
    fn start(&self, _prompt: &[usize]) -> seqimit_core::Result<usize> {
        Ok(0)
    }
    fn advance(&self, s: &usize, t: usize) -> seqimit_core::Result<usize> {
        Ok((self.next)(*s, t))
    }
    fn next_logits(&self, s: &usize) -> Vec<f64> {
        self.logits[*s].to_vec()
    }
}

pub fn by_last_token(_s: usize, t: usize) -> usize {
    if t == A {
        1
    } else {
        2
    }
}

pub fn probs(eos: f64, a: f64, b: f64) -> [f64; 5] {
    [NEVER, NEVER, eos.ln(), a.ln(), b.ln()]
}

/// Greedy commits to `a` (0.5) and then finds only weak endings; the best
/// sequence starts with the less likely `b`.
pub fn trap() -> Automaton {
    Automaton {
        logits: vec![probs(0.1, 0.5, 0.4), probs(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0), probs(0.98, 0.01, 0.01)],
        next: by_last_token,
    }
}

/// Every `<eos>`-terminated completion of at most `max_len` tokens, scored
/// by the same length-normalized objective; the best one.
pub fn exhaustive<M: StepModel>(m: &M, max_len: usize, length_penalty: f64) -> (f64, Vec<usize>) {
    fn walk<M: StepModel>(
        m: &M,
        state: M::State,
        prefix: &mut Vec<usize>,
        logp: f64,
        max_len: usize,
        lp: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let l = m.next_logits(&state);
        let v = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = v + l.iter().map(|x| (x - v).exp()).sum::<f64>().ln();
        for tok in 0..l.len() {
            let s = logp + l[tok] - z;
            prefix.push(tok);
            if tok == m.eos() {
                let score = s / (prefix.len() as f64).powf(lp);
                if best.as_ref().is_none_or(|b| score > b.0) {
                    *best = Some((score, prefix.clone()));
                }
            } else if prefix.len() < max_len {
                let next = m.advance(&state, tok).unwrap();
                walk(m, next, prefix, s, max_len, lp, best);
            }
            prefix.pop();
        }
    }
    let mut best = None;
    walk(m, m.start(&[BOS]).unwrap(), &mut Vec::new(), 0.0, max_len, length_penalty, &mut best);
    best.unwrap()
}

pub fn random_automaton(seed: u64) -> Automaton {
    let mut rng = stream(seed, "automaton");
    let mut row = || {
        let mut r = [NEVER; 5];
        for x in &mut r[2..] {
            *x = rng.random_range(-2.0..2.0);
        }
        r
    };
    Automaton {
        logits: vec![row(), row(), row()],
        next: by_last_token,
    }
}

