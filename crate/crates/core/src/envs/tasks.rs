//! Small synthetic generation tasks with programmatic checkers.
//!
//! Every prompt has the form `[<bos>, content..., <sep>]`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::seq::Trajectory;
use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    Reverse,
    ModularSum,
    MultiReference,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::ModularSum => "modular-sum",
            TaskKind::MultiReference => "multi-reference",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "modular-sum" => Ok(TaskKind::ModularSum),
            "multi-reference" => Ok(TaskKind::MultiReference),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected copy, reverse, modular-sum or multi-reference)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    /// Alphabet size for copy/reverse.
    pub symbols: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub modulus: usize,
    pub operands: usize,
    pub topics: usize,
    /// Dataset frequency of each paraphrase in the multi-reference task.
    pub paraphrase_weights: Vec<f64>,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            symbols: 8,
            min_len: 2,
            max_len: 6,
            modulus: 10,
            operands: 2,
            topics: 8,
            paraphrase_weights: vec![0.55, 0.25, 0.12, 0.08],
        }
    }
}

pub const PARAPHRASES: usize = 4;
const TOPIC_WORDS: usize = 5;
/// Rotation offsets of the four paraphrases; each starts with a different word.
const ROTATIONS: [usize; PARAPHRASES] = [0, 2, 4, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub params: TaskParams,
    pub vocab: Vocabulary,
    sep: TokenId,
    first_symbol: TokenId,
    first_topic: TokenId,
    plus: TokenId,
}

impl SyntheticTask {
    pub fn new(kind: TaskKind, params: TaskParams) -> Result<Self> {
        let p = &params;
        match kind {
            TaskKind::Copy | TaskKind::Reverse => {
                if p.symbols == 0 || p.min_len == 0 || p.min_len > p.max_len {
                    return Err(Error::Config("need symbols ≥ 1 and 1 ≤ min_len ≤ max_len".into()));
                }
            }
            TaskKind::ModularSum => {
                if p.modulus < 2 || p.operands == 0 {
                    return Err(Error::Config("need modulus ≥ 2 and operands ≥ 1".into()));
                }
            }
            TaskKind::MultiReference => {
                if p.topics == 0
                    || p.paraphrase_weights.len() != PARAPHRASES
                    || p.paraphrase_weights.iter().any(|w| !(*w > 0.0))
                {
                    return Err(Error::Config(format!(
                        "need topics ≥ 1 and {PARAPHRASES} positive paraphrase weights"
                    )));
                }
            }
        }
        let mut symbols: Vec<String> = vec!["<sep>".into()];
        let (mut first_topic, mut plus) = (0, 0);
        match kind {
            TaskKind::Copy | TaskKind::Reverse => {
                symbols.extend((0..p.symbols).map(|i| format!("s{i}")));
            }
            TaskKind::ModularSum => {
                symbols.extend((0..p.modulus).map(|i| i.to_string()));
                plus = 4 + p.modulus;
                symbols.push("+".into());
            }
            TaskKind::MultiReference => {
                symbols.extend((0..p.topics * TOPIC_WORDS).map(|i| format!("w{i}")));
                first_topic = 4 + p.topics * TOPIC_WORDS;
                symbols.extend((0..p.topics).map(|i| format!("T{i}")));
            }
        }
        let vocab = Vocabulary::new(symbols)?;
        Ok(Self {
            kind,
            params,
            sep: 3,
            first_symbol: 4,
            first_topic,
            plus,
            vocab,
        })
    }

    pub fn sep(&self) -> TokenId {
        self.sep
    }

    fn eos(&self) -> TokenId {
        self.vocab.eos()
    }

    fn digit(&self, d: usize) -> TokenId {
        self.first_symbol + d
    }

    fn frame(&self, content: &[TokenId]) -> Vec<TokenId> {
        let mut p = Vec::with_capacity(content.len() + 2);
        p.push(self.vocab.bos());
        p.extend_from_slice(content);
        p.push(self.sep);
        p
    }

    /// Content between `<bos>` and `<sep>`, if the prompt is framed.
    fn unframe<'a>(&self, prompt: &'a [TokenId]) -> Option<&'a [TokenId]> {
        match prompt {
            [b, rest @ .., s] if *b == self.vocab.bos() && *s == self.sep => Some(rest),
            _ => None,
        }
    }

    pub fn modular_sum_prompt(&self, operands: &[usize]) -> Vec<TokenId> {
        let mut content = Vec::new();
        for (i, &x) in operands.iter().enumerate() {
            if i > 0 {
                content.push(self.plus);
            }
            content.push(self.digit(x % self.params.modulus));
        }
        self.frame(&content)
    }

    pub fn topic_prompt(&self, topic: usize) -> Vec<TokenId> {
        self.frame(&[self.first_topic + topic])
    }

    /// The `j`-th paraphrase (without `<eos>`) for a topic.
    pub fn paraphrase(&self, topic: usize, j: usize) -> Vec<TokenId> {
        (0..TOPIC_WORDS)
            .map(|i| self.first_symbol + topic * TOPIC_WORDS + (i + ROTATIONS[j]) % TOPIC_WORDS)
            .collect()
    }

    fn topic_of(&self, prompt: &[TokenId]) -> Option<usize> {
        match self.unframe(prompt)? {
            [t] if *t >= self.first_topic && *t < self.first_topic + self.params.topics => {
                Some(t - self.first_topic)
            }
            _ => None,
        }
    }

    fn sum_target(&self, prompt: &[TokenId]) -> Option<usize> {
        let content = self.unframe(prompt)?;
        let m = self.params.modulus;
        let mut total = 0;
        for (i, &t) in content.iter().enumerate() {
            if i % 2 == 1 {
                if t != self.plus {
                    return None;
                }
            } else if (self.first_symbol..self.first_symbol + m).contains(&t) {
                total += t - self.first_symbol;
            } else {
                return None;
            }
        }
        (content.len() % 2 == 1).then_some(total % m)
    }

    /// Every correct completion (each ending in `<eos>`).
    pub fn references(&self, prompt: &[TokenId]) -> Vec<Vec<TokenId>> {
        let with_eos = |mut v: Vec<TokenId>| {
            v.push(self.eos());
            v
        };
        match self.kind {
            TaskKind::Copy => self
                .unframe(prompt)
                .map(|c| vec![with_eos(c.to_vec())])
                .unwrap_or_default(),
            TaskKind::Reverse => self
                .unframe(prompt)
                .map(|c| vec![with_eos(c.iter().rev().copied().collect())])
                .unwrap_or_default(),
            TaskKind::ModularSum => self
                .sum_target(prompt)
                .map(|d| vec![vec![self.digit(d), self.eos()]])
                .unwrap_or_default(),
            TaskKind::MultiReference => self
                .topic_of(prompt)
                .map(|t| {
                    (0..PARAPHRASES)
                        .map(|j| with_eos(self.paraphrase(t, j)))
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    /// Exact match against any reference.
    pub fn answer_checker(&self, prompt: &[TokenId], completion: &[TokenId]) -> bool {
        self.references(prompt).iter().any(|r| r == completion)
    }

    /// Graded score in `[0, 1]`; equals 1 exactly when the answer checks.
    ///
    /// Sequence tasks score the fraction of aligned positions that agree with
    /// the best reference (over the longer of the two lengths). Modular sums
    /// score the circular distance of the first answer digit to the target,
    /// halved when the answer is not exactly `[digit, <eos>]`.
    pub fn metric(&self, prompt: &[TokenId], completion: &[TokenId]) -> f64 {
        if self.kind == TaskKind::ModularSum {
            let Some(target) = self.sum_target(prompt) else {
                return 0.0;
            };
            let m = self.params.modulus;
            let Some(&first) = completion.first() else {
                return 0.0;
            };
            if !(self.first_symbol..self.first_symbol + m).contains(&first) {
                return 0.0;
            }
            let d = first - self.first_symbol;
            let diff = d.abs_diff(target);
            let dist = diff.min(m - diff) as f64;
            let closeness = 1.0 - dist / (m / 2) as f64;
            let well_formed = completion.len() == 2 && completion[1] == self.eos();
            return if well_formed { closeness } else { 0.5 * closeness };
        }
        self.references(prompt)
            .iter()
            .map(|r| {
                let hits = r.iter().zip(completion).filter(|(a, b)| a == b).count();
                hits as f64 / r.len().max(completion.len()) as f64
            })
            .fold(0.0, f64::max)
    }

    fn sample_content(&self, rng: &mut Rng) -> Vec<TokenId> {
        let p = &self.params;
        let len = rng.random_range(p.min_len..=p.max_len);
        (0..len)
            .map(|_| self.first_symbol + rng.random_range(0..p.symbols))
            .collect()
    }

    fn sample_paraphrase(&self, rng: &mut Rng, exclude: Option<usize>) -> usize {
        let w = &self.params.paraphrase_weights;
        let total: f64 = (0..PARAPHRASES)
            .filter(|&j| Some(j) != exclude)
            .map(|j| w[j])
            .sum();
        let mut u = rng.random::<f64>() * total;
        let mut last = 0;
        for j in (0..PARAPHRASES).filter(|&j| Some(j) != exclude) {
            last = j;
            if u < w[j] {
                return j;
            }
            u -= w[j];
        }
        last
    }

    /// A fresh prompt. Multi-reference prompts cycle through topics by `index`.
    pub fn sample_prompt(&self, rng: &mut Rng, index: usize) -> Vec<TokenId> {
        match self.kind {
            TaskKind::Copy | TaskKind::Reverse => self.frame(&self.sample_content(rng)),
            TaskKind::ModularSum => {
                let ops: Vec<usize> = (0..self.params.operands)
                    .map(|_| rng.random_range(0..self.params.modulus))
                    .collect();
                self.modular_sum_prompt(&ops)
            }
            TaskKind::MultiReference => self.topic_prompt(index % self.params.topics),
        }
    }

    /// `n` demonstrations, deterministic in `seed`.
    ///
    /// Multi-reference paraphrases are drawn with the configured weights; the
    /// second occurrence of a topic never repeats the first, so every topic
    /// seen twice has at least two distinct references in the data.
    pub fn gen_dataset(&self, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
        if n == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        let mut rng = stream(seed, "dataset");
        let mut first_choice: Vec<Option<usize>> = vec![None; self.params.topics.max(1)];
        let mut seen = vec![0usize; self.params.topics.max(1)];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let prompt = self.sample_prompt(&mut rng, i);
            let completion = if self.kind == TaskKind::MultiReference {
                let t = i % self.params.topics;
                let exclude = if seen[t] == 1 { first_choice[t] } else { None };
                let j = self.sample_paraphrase(&mut rng, exclude);
                if seen[t] == 0 {
                    first_choice[t] = Some(j);
                }
                seen[t] += 1;
                let mut c = self.paraphrase(t, j);
                c.push(self.eos());
                c
            } else {
                self.references(&prompt).swap_remove(0)
            };
            out.push(Trajectory::new(prompt, completion, true));
        }
        Ok(out)
    }

    /// Longest reference completion over the task's prompt space.
    pub fn max_completion_len(&self) -> usize {
        match self.kind {
            TaskKind::Copy | TaskKind::Reverse => self.params.max_len + 1,
            TaskKind::ModularSum => 2,
            TaskKind::MultiReference => TOPIC_WORDS + 1,
        }
    }
}
