//! The token-level generation MDP: states are prefixes, actions are next
//! tokens, and the dynamics are plain concatenation.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// A prompt and its (generated or reference) completion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt: Vec<TokenId>,
    pub completion: Vec<TokenId>,
    /// The completion ends with `<eos>` or hit the length cap.
    pub terminated: bool,
}

impl Trajectory {
    pub fn new(prompt: Vec<TokenId>, completion: Vec<TokenId>, terminated: bool) -> Self {
        Self {
            prompt,
            completion,
            terminated,
        }
    }

    /// `prompt ++ completion`.
    pub fn full(&self) -> Vec<TokenId> {
        let mut v = self.prompt.clone();
        v.extend_from_slice(&self.completion);
        v
    }

    /// Completion without a trailing `<eos>`.
    pub fn content(&self, eos: TokenId) -> &[TokenId] {
        match self.completion.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.completion,
        }
    }

    pub fn validate(&self, vocab: &Vocabulary, max_completion: usize) -> Result<()> {
        for &t in self.prompt.iter().chain(&self.completion) {
            vocab.check(t)?;
            if t == vocab.pad() {
                return Err(Error::Contract("pad token inside a trajectory".into()));
            }
        }
        if self.completion.len() > max_completion {
            return Err(Error::Contract(format!(
                "completion length {} exceeds maximum {max_completion}",
                self.completion.len()
            )));
        }
        if let Some(pos) = self.completion.iter().position(|&t| t == vocab.eos()) {
            if pos + 1 != self.completion.len() {
                return Err(Error::Contract("tokens after <eos>".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub state: Vec<TokenId>,
    pub action: TokenId,
    pub next_state: Vec<TokenId>,
    pub terminal: bool,
}

/// Deterministic concatenation dynamics with an `<eos>` rule and a cap on
/// the total prefix length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqMdp {
    pub vocab_size: usize,
    pub eos: TokenId,
    pub max_len: usize,
}

impl SeqMdp {
    pub fn new(vocab: &Vocabulary, max_len: usize) -> Self {
        Self {
            vocab_size: vocab.len(),
            eos: vocab.eos(),
            max_len,
        }
    }

    pub fn is_terminal(&self, state: &[TokenId]) -> bool {
        state.last() == Some(&self.eos) || state.len() >= self.max_len
    }

    pub fn step(&self, state: &[TokenId], action: TokenId) -> Result<Transition> {
        if action >= self.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: action,
                size: self.vocab_size,
            });
        }
        if self.is_terminal(state) {
            return Err(Error::Contract("stepping a terminal state".into()));
        }
        let mut next_state = state.to_vec();
        next_state.push(action);
        let terminal = action == self.eos || next_state.len() >= self.max_len;
        Ok(Transition {
            state: state.to_vec(),
            action,
            next_state,
            terminal,
        })
    }
}

/// One transition per completion token; only the last one can be terminal.
pub fn trajectory_to_transitions(traj: &Trajectory) -> Vec<Transition> {
    let n = traj.completion.len();
    let mut state = traj.prompt.clone();
    let mut out = Vec::with_capacity(n);
    for (i, &a) in traj.completion.iter().enumerate() {
        let mut next_state = state.clone();
        next_state.push(a);
        out.push(Transition {
            state: std::mem::replace(&mut state, next_state.clone()),
            action: a,
            next_state,
            terminal: i + 1 == n && traj.terminated,
        });
    }
    out
}

/// Inverse of [`trajectory_to_transitions`].
pub fn transitions_to_trajectory(prompt: &[TokenId], transitions: &[Transition]) -> Trajectory {
    Trajectory {
        prompt: prompt.to_vec(),
        completion: transitions.iter().map(|t| t.action).collect(),
        terminated: transitions.last().is_some_and(|t| t.terminal),
    }
}

fn ids_to_string(ids: &[TokenId]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{id}");
    }
    s
}

fn parse_ids(field: &str, line: usize) -> Result<Vec<TokenId>> {
    field
        .split_whitespace()
        .map(|t| {
            t.parse::<TokenId>().map_err(|_| Error::Dataset {
                line,
                msg: format!("bad token id `{t}`"),
            })
        })
        .collect()
}

/// Writes one trajectory per line:
/// `prompt-ids<TAB>completion-ids<TAB>terminated`, ids space-separated,
/// `terminated` as `1` or `0`.
pub fn write_dataset<W: Write>(mut w: W, data: &[Trajectory]) -> std::io::Result<()> {
    for t in data {
        writeln!(
            w,
            "{}\t{}\t{}",
            ids_to_string(&t.prompt),
            ids_to_string(&t.completion),
            u8::from(t.terminated)
        )?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Dataset {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Dataset {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let terminated = match fields[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Dataset {
                    line: i + 1,
                    msg: format!("bad terminated flag `{other}`"),
                })
            }
        };
        out.push(Trajectory {
            prompt: parse_ids(fields[0], i + 1)?,
            completion: parse_ids(fields[1], i + 1)?,
            terminated,
        });
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, data: &[Trajectory]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(std::io::BufWriter::new(f), data).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(f))
}
