//! Diversity, accuracy and rank-correlation metrics.

use std::collections::HashMap;

use crate::envs::seq::Trajectory;
use crate::envs::tasks::SyntheticTask;
use crate::envs::vocab::TokenId;
use crate::error::{Error, Result};

fn ngram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU of `hyp` against `refs` with uniform weights over orders
/// `1..=max_ngram`, clipped counts, the closest-reference-length brevity
/// penalty and no smoothing.
pub fn bleu(hyp: &[TokenId], refs: &[&[TokenId]], max_ngram: usize) -> f64 {
    if hyp.is_empty() || refs.is_empty() || max_ngram == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_ngram {
        let hc = ngram_counts(hyp, n);
        let total: usize = hc.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let clipped: usize = hc
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln() / max_ngram as f64;
    }
    let h = hyp.len();
    // closest reference length, shorter one on ties
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(h), l))
        .expect("non-empty refs");
    let bp = if h > r { 1.0 } else { (1.0 - r as f64 / h as f64).exp() };
    bp * log_sum.exp()
}

/// Mean BLEU of each sample against all the others.
pub fn self_bleu(samples: &[Vec<TokenId>], max_ngram: usize) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Contract(format!(
            "self-BLEU needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(Vec::is_empty) {
        return Err(Error::Contract("self-BLEU samples must be non-empty".into()));
    }
    let total: f64 = (0..samples.len())
        .map(|i| {
            let refs: Vec<&[TokenId]> = samples
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s.as_slice())
                .collect();
            bleu(&samples[i], &refs, max_ngram)
        })
        .sum();
    Ok(total / samples.len() as f64)
}

pub fn task_accuracy(trajs: &[Trajectory], task: &SyntheticTask) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::EmptyBatch("accuracy over no trajectories"));
    }
    let ok = trajs
        .iter()
        .filter(|t| task.answer_checker(&t.prompt, &t.completion))
        .count();
    Ok(ok as f64 / trajs.len() as f64)
}

/// 1-based fractional ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    // one square root, so identical rankings give exactly ±1
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average ranks for ties.
///
/// Returns `Ok(None)` when either argument has no rank variance, where the
/// coefficient is undefined.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::Contract(format!(
            "spearman needs two equal-length lists of at least 3 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::Contract("spearman input contains NaN".into()));
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys));
    if rho.is_none() {
        log::warn!("spearman correlation undefined: constant ranks in one argument");
    }
    Ok(rho)
}
