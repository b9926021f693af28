//! Shared fixtures: small random models and batches, a per-state reference
//! evaluation of the objectives, and central finite differences.

#![allow(dead_code)]

pub mod automaton;

use rand::Rng as _;
use seqimit_core::envs::{Trajectory, Vocabulary, BOS, EOS};
use seqimit_core::policy::PolicyModel;
use seqimit_core::rng::{stream, Rng};
use seqimit_core::tensor::{logsumexp_slice, Tensor};

/// A vocabulary of exactly `size` tokens (3 specials plus symbols).
pub fn vocab(size: usize) -> Vocabulary {
    assert!(size > 3);
    Vocabulary::new((3..size).map(|i| format!("t{i}"))).unwrap()
}

pub fn random_model(size: usize, layers: usize, seed: u64) -> PolicyModel {
    let mut m = PolicyModel::new(vocab(size), 4, 5, layers, &mut stream(seed, "init")).unwrap();
    // default init keeps logits near zero; spread them so the check is not degenerate
    let mut rng = stream(seed, "spread");
    for t in m.net.params.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.5..0.5);
        }
    }
    m
}

pub fn uniform_model(size: usize) -> PolicyModel {
    let mut m = PolicyModel::new(vocab(size), 3, 3, 1, &mut stream(0, "init")).unwrap();
    m.net.zero_head();
    m
}

/// Random trajectories over the non-special tokens; about half end in `<eos>`.
pub fn random_batch(rng: &mut Rng, size: usize, count: usize, max_len: usize) -> Vec<Trajectory> {
    (0..count)
        .map(|_| {
            let p = rng.random_range(0..3);
            let mut prompt = vec![BOS];
            prompt.extend((0..p).map(|_| rng.random_range(3..size)));
            let n = rng.random_range(1..=max_len);
            let mut completion: Vec<usize> = (0..n).map(|_| rng.random_range(3..size)).collect();
            let terminated = rng.random_bool(0.5);
            if terminated {
                *completion.last_mut().unwrap() = EOS;
            }
            Trajectory::new(prompt, completion, terminated)
        })
        .collect()
}

/// Per-token quantities computed state by state from `PolicyModel::logits`.
pub struct RefToken {
    pub log_pi: f64,
    pub v: f64,
    /// `None` for a terminal successor.
    pub v_next: Option<f64>,
    pub entropy: f64,
}

pub fn ref_tokens(model: &PolicyModel, traj: &Trajectory) -> Vec<RefToken> {
    let full = traj.full();
    let p = traj.prompt.len();
    let n = traj.completion.len();
    (0..n)
        .map(|i| {
            let logits = model.logits(&full[..p + i]).unwrap();
            let v = logsumexp_slice(&logits);
            let probs: Vec<f64> = logits.iter().map(|l| (l - v).exp()).collect();
            let entropy = -probs.iter().zip(&logits).map(|(q, l)| q * (l - v)).sum::<f64>();
            let terminal = i + 1 == n && traj.terminated;
            let v_next = (!terminal).then(|| logsumexp_slice(&model.logits(&full[..p + i + 1]).unwrap()));
            RefToken {
                log_pi: logits[traj.completion[i]] - v,
                v,
                v_next,
                entropy,
            }
        })
        .collect()
}

pub fn ref_all(model: &PolicyModel, batch: &[Trajectory]) -> Vec<RefToken> {
    batch.iter().flat_map(|t| ref_tokens(model, t)).collect()
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn delta(t: &RefToken, c: f64, gamma: f64) -> f64 {
    t.v + c * t.log_pi - gamma * t.v_next.unwrap_or(0.0)
}

pub fn ref_mle(model: &PolicyModel, batch: &[Trajectory]) -> f64 {
    mean(ref_all(model, batch).iter().map(|t| -t.log_pi))
}

pub fn ref_offline(model: &PolicyModel, batch: &[Trajectory], lambda: f64, gamma: f64) -> f64 {
    let toks = ref_all(model, batch);
    mean(toks.iter().map(|t| lambda * delta(t, 1.0, gamma).powi(2) - t.log_pi))
}

pub fn ref_online(
    model: &PolicyModel,
    expert: &[Trajectory],
    online: &[Trajectory],
    lambda: f64,
    gamma: f64,
    alpha: f64,
) -> f64 {
    let c = 1.0 / (1.0 - alpha);
    let e = ref_all(model, expert);
    let o = ref_all(model, online);
    let td_e = mean(e.iter().map(|t| delta(t, c, gamma).powi(2)));
    let td_o = if o.is_empty() {
        0.0
    } else {
        mean(o.iter().map(|t| delta(t, c, gamma).powi(2)))
    };
    lambda * ((1.0 - alpha) * td_e + alpha * td_o) + mean(e.iter().map(|t| -t.log_pi))
}

/// Central differences of `loss` with respect to every scalar of `params`.
pub fn finite_differences(
    params: &[Tensor],
    h: f64,
    mut loss: impl FnMut(&[Tensor]) -> f64,
) -> Vec<Vec<f64>> {
    let mut work = params.to_vec();
    (0..params.len())
        .map(|i| {
            (0..params[i].len())
                .map(|j| {
                    let x = params[i].data()[j];
                    work[i].data_mut()[j] = x + h;
                    let up = loss(&work);
                    work[i].data_mut()[j] = x - h;
                    let down = loss(&work);
                    work[i].data_mut()[j] = x;
                    (up - down) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Vec<f64>], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        for (&x, &y) in a.data().iter().zip(n) {
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(floor));
        }
    }
    worst
}

pub fn with_params(model: &PolicyModel, params: &[Tensor]) -> PolicyModel {
    let mut m = model.clone();
    m.net.params.tensors_mut().clone_from_slice(params);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Mle,
    EntropyMle,
    IqlOffline,
    IqlOnline,
    Gail,
}

pub const ALL_OBJECTIVES: [Objective; 5] = [
    Objective::Mle,
    Objective::EntropyMle,
    Objective::IqlOffline,
    Objective::IqlOnline,
    Objective::Gail,
];

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-4;

/// Worst relative disagreement between analytic and finite-difference
/// gradients for `objective` on a random vocab-8, 2-layer model.
///
/// For GAIL this covers the policy parameters (advantages and the critic
/// are held fixed, as in the update) and, separately, the discriminator.
pub fn gradient_error(objective: Objective, seed: u64) -> f64 {
    use seqimit_core::objectives::gail::{discriminator_graph, policy_graph, score_rollout};
    use seqimit_core::objectives::iql::{entropy_mle_graph, mle_graph, offline_graph, online_graph};
    use seqimit_core::objectives::{
        entropy_regularized_mle_loss, gail_discriminator_loss, gail_policy_loss, iqlearn_offline_loss,
        iqlearn_online_loss, mle_loss, value_and_grad, GailWeights, IqlConfig, ScalarNet, SeqBatch, StateBatch,
    };
    use seqimit_core::autodiff::Graph;

    const V: usize = 8;
    let model = random_model(V, 2, seed);
    let mut rng = stream(seed, "fd-batch");
    let batch = random_batch(&mut rng, V, 3, 4);
    let online = random_batch(&mut rng, V, 2, 4);
    let sb = SeqBatch::from_trajectories(&batch).unwrap();
    let ob = SeqBatch::from_trajectories(&online).unwrap();
    let params = model.net.params.tensors().to_vec();
    let offline_cfg = IqlConfig { lambda: 0.7, gamma: 0.9, alpha: 0.0 };
    let online_cfg = IqlConfig { lambda: 0.7, gamma: 1.0, alpha: 0.3 };

    let (analytic, numeric) = match objective {
        Objective::Mle => (
            value_and_grad(&model, |g, b| mle_graph(g, b, &model, &sb)).unwrap().1,
            finite_differences(&params, FD_STEP, |p| mle_loss(&batch, &with_params(&model, p)).unwrap().total),
        ),
        Objective::EntropyMle => (
            value_and_grad(&model, |g, b| entropy_mle_graph(g, b, &model, &sb, 0.3)).unwrap().1,
            finite_differences(&params, FD_STEP, |p| {
                entropy_regularized_mle_loss(&batch, &with_params(&model, p), 0.3).unwrap().total
            }),
        ),
        Objective::IqlOffline => (
            value_and_grad(&model, |g, b| offline_graph(g, b, &model, &sb, &offline_cfg)).unwrap().1,
            finite_differences(&params, FD_STEP, |p| {
                iqlearn_offline_loss(&batch, &with_params(&model, p), &offline_cfg).unwrap().total
            }),
        ),
        Objective::IqlOnline => (
            value_and_grad(&model, |g, b| online_graph(g, b, &model, &sb, &ob, &online_cfg)).unwrap().1,
            finite_differences(&params, FD_STEP, |p| {
                iqlearn_online_loss(&batch, &online, &with_params(&model, p), &online_cfg).unwrap().total
            }),
        ),
        Objective::Gail => {
            let mut nets = stream(seed, "fd-nets");
            let mut disc = ScalarNet::new(V, 4, 5, 2, &mut nets).unwrap();
            let mut value = ScalarNet::new(V, 4, 5, 2, &mut nets).unwrap();
            for t in disc.net.params.tensors_mut().iter_mut().chain(value.net.params.tensors_mut()) {
                for x in t.data_mut() {
                    *x += nets.random_range(-0.5..0.5);
                }
            }
            let initial = random_model(V, 2, seed + 1_000);
            let rollouts: Vec<_> = online.iter().cloned().map(|t| score_rollout(&disc, t).unwrap()).collect();
            let w = GailWeights { kl_weight: 0.4, mle_weight: 0.2, gamma: 0.95 };

            let g = Graph::new();
            let pb = model.net.params.bind(&g);
            let vb = value.net.params.bind(&g);
            let lg = policy_graph(&g, &pb, &vb, &model, &value, &initial, &rollouts, Some(&sb), &w).unwrap();
            let analytic = g.backward(lg.total).unwrap().wrt_all(&pb.vars);
            let numeric = finite_differences(&params, FD_STEP, |p| {
                gail_policy_loss(&rollouts, &value, &w, &initial, &with_params(&model, p), &batch)
                    .unwrap()
                    .total
            });
            let policy_err = max_relative_error(&analytic, &numeric, FD_FLOOR);

            let prefixes = |ts: &[Trajectory]| -> Vec<Vec<usize>> {
                ts.iter().flat_map(|t| {
                    let full = t.full();
                    (t.prompt.len() + 1..=full.len()).map(move |k| full[..k].to_vec())
                }).collect()
            };
            let es = StateBatch::from_prefixes(&prefixes(&batch)).unwrap();
            let ps = StateBatch::from_prefixes(&prefixes(&online)).unwrap();
            let g = Graph::new();
            let db = disc.net.params.bind(&g);
            let loss = discriminator_graph(&g, &db, &disc, &es, &ps).unwrap();
            let analytic = g.backward(loss).unwrap().wrt_all(&db.vars);
            let dparams = disc.net.params.tensors().to_vec();
            let numeric = finite_differences(&dparams, FD_STEP, |p| {
                let mut d = disc.clone();
                d.net.params.tensors_mut().clone_from_slice(p);
                gail_discriminator_loss(&es, &ps, &d).unwrap()
            });
            return policy_err.max(max_relative_error(&analytic, &numeric, FD_FLOOR));
        }
    };
    max_relative_error(&analytic, &numeric, FD_FLOOR)
}
