mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng as _;
use seqimit_core::envs::{Trajectory, BOS, EOS};
use seqimit_core::objectives::gail::{
    discriminator_accuracy, gail_reward_from_logit, reward_to_go, score_rollout, standardize,
};
use seqimit_core::objectives::iql::online_graph;
use seqimit_core::objectives::*;
use seqimit_core::policy::{sample, SamplerConfig, StepModel};
use seqimit_core::rng::stream;
use seqimit_core::tensor::logsumexp_slice;

const LN4: f64 = std::f64::consts::LN_2 * 2.0;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn seq(prompt: &[usize], completion: &[usize], terminated: bool) -> Trajectory {
    Trajectory::new(prompt.to_vec(), completion.to_vec(), terminated)
}

#[test]
fn mle_of_a_uniform_policy_is_ln_vocab() {
    let m = uniform_model(4);
    let out = mle_loss(&[seq(&[BOS], &[3, 3, EOS], true)], &m).unwrap();
    assert!((out.total - LN4).abs() < 1e-12);
    assert_eq!(out.token_count, 3);
    assert_eq!(out.mle_term, out.total);
}

#[test]
fn mle_of_a_peaked_policy_vanishes() {
    let mut m = uniform_model(6);
    m.net.params.get_mut("head.b").unwrap().data_mut()[4] = 60.0;
    let out = mle_loss(&[seq(&[BOS], &[4, 4, 4], false)], &m).unwrap();
    assert!(out.total < 1e-20, "{}", out.total);
}

#[test]
fn mle_averages_over_all_tokens() {
    let m = random_model(7, 1, 3);
    let batch = vec![seq(&[BOS, 5], &[3, EOS], true), seq(&[BOS], &[4, 6, 5, 3], false)];
    let mut hand = 0.0;
    for t in &batch {
        let full = t.full();
        for i in 0..t.completion.len() {
            let l = m.logits(&full[..t.prompt.len() + i]).unwrap();
            hand += logsumexp_slice(&l) - l[t.completion[i]];
        }
    }
    let out = mle_loss(&batch, &m).unwrap();
    assert_eq!(out.token_count, 6);
    assert!(close(out.total, hand / 6.0, 1e-12), "{} vs {}", out.total, hand / 6.0);
}

#[test]
fn empty_batches_are_errors() {
    let m = uniform_model(4);
    assert!(mle_loss(&[], &m).is_err());
    assert!(mle_loss(&[seq(&[BOS], &[], false)], &m).is_err());
    let cfg = IqlConfig::default();
    assert!(iqlearn_offline_loss(&[], &m, &cfg).is_err());
}

#[test]
fn entropy_regularizer() {
    let m = random_model(7, 2, 11);
    let batch = random_batch(&mut stream(11, "b"), 7, 4, 5);
    let mle = mle_loss(&batch, &m).unwrap();
    let zero = entropy_regularized_mle_loss(&batch, &m, 0.0).unwrap();
    assert_eq!(zero.total, mle.total);

    let u = uniform_model(4);
    let ub = [seq(&[BOS], &[3, 3, EOS], true)];
    assert!(entropy_regularized_mle_loss(&ub, &u, 1.0).unwrap().total.abs() < 1e-12);

    let out = entropy_regularized_mle_loss(&batch, &m, 0.1).unwrap();
    let toks = ref_all(&m, &batch);
    let h = mean(toks.iter().map(|t| t.entropy));
    assert!(close(out.total, ref_mle(&m, &batch) - 0.1 * h, 1e-12));
    assert!(close(out.entropy_term, 0.1 * h, 1e-12));
    assert!(close(out.total, out.mle_term - out.entropy_term, 1e-12));
    assert!(entropy_regularized_mle_loss(&batch, &m, -1.0).is_err());
}

#[test]
fn offline_at_lambda_zero_is_mle_bit_for_bit() {
    for seed in 0..10 {
        let m = random_model(8, 2, seed);
        let batch = random_batch(&mut stream(seed, "b"), 8, 5, 6);
        let cfg = IqlConfig { lambda: 0.0, ..Default::default() };
        let iql = iqlearn_offline_loss(&batch, &m, &cfg).unwrap();
        let mle = mle_loss(&batch, &m).unwrap();
        assert_eq!(iql.total.to_bits(), mle.total.to_bits());
        assert_eq!(iql.td_term, 0.0);
    }
}

#[test]
fn offline_uniform_substitutions() {
    let m = uniform_model(4);
    for lambda in [0.0, 0.5, 2.0] {
        let cfg = IqlConfig { lambda, gamma: 1.0, alpha: 0.0 };
        // non-terminal: δ = ln4 − ln4 − ln4
        let out = iqlearn_offline_loss(&[seq(&[BOS], &[3], false)], &m, &cfg).unwrap();
        assert!(close(out.total, lambda * LN4 * LN4 + LN4, 1e-14), "{}", out.total);
        // terminal successor has value 0: δ = ln4 − ln4 − 0
        let out = iqlearn_offline_loss(&[seq(&[BOS], &[EOS], true)], &m, &cfg).unwrap();
        assert!(close(out.total, LN4, 1e-14));
        assert_eq!(out.td_term, 0.0);
    }
    assert!((1.9218 - LN4 * LN4).abs() < 1e-4);
}

#[test]
fn offline_matches_the_per_state_reference() {
    for seed in 0..10 {
        let m = random_model(8, 2, seed);
        let batch = random_batch(&mut stream(seed, "b"), 8, 4, 5);
        for (lambda, gamma) in [(0.1, 1.0), (1.3, 0.9), (0.5, 0.0)] {
            let cfg = IqlConfig { lambda, gamma, alpha: 0.0 };
            let out = iqlearn_offline_loss(&batch, &m, &cfg).unwrap();
            assert!(close(out.total, ref_offline(&m, &batch, lambda, gamma), 1e-12));
            assert!(close(out.total, out.td_term + out.mle_term, 1e-14));
        }
    }
}

#[test]
fn online_matches_the_per_state_reference() {
    for seed in 0..10 {
        let m = random_model(8, 2, seed);
        let mut rng = stream(seed, "b");
        let e = random_batch(&mut rng, 8, 3, 5);
        let o = random_batch(&mut rng, 8, 3, 5);
        for alpha in [0.1, 0.5, 0.9] {
            let cfg = IqlConfig { lambda: 0.4, gamma: 1.0, alpha };
            let out = iqlearn_online_loss(&e, &o, &m, &cfg).unwrap();
            assert!(close(out.total, ref_online(&m, &e, &o, 0.4, 1.0, alpha), 1e-12));
        }
    }
}

#[test]
fn online_uniform_substitution() {
    let m = uniform_model(4);
    let cfg = IqlConfig { lambda: 0.3, gamma: 1.0, alpha: 0.5 };
    let t = [seq(&[BOS], &[3], false)];
    // c = 2: δ = ln4 + 2·(−ln4) − ln4 = −2 ln4 on both batches
    let out = iqlearn_online_loss(&t, &t, &m, &cfg).unwrap();
    assert!(close(out.total, 0.3 * (2.0 * LN4).powi(2) + LN4, 1e-14));
}

#[test]
fn online_approaches_offline_as_alpha_vanishes() {
    let m = random_model(8, 2, 5);
    let mut rng = stream(5, "b");
    let e = random_batch(&mut rng, 8, 4, 5);
    let o = random_batch(&mut rng, 8, 4, 5);
    let off = iqlearn_offline_loss(&e, &m, &IqlConfig { lambda: 0.5, gamma: 1.0, alpha: 0.0 }).unwrap();
    let mut last = f64::INFINITY;
    for alpha in [1e-3, 1e-6, 1e-9, 1e-12] {
        let on = iqlearn_online_loss(&e, &o, &m, &IqlConfig { lambda: 0.5, gamma: 1.0, alpha }).unwrap();
        let gap = (on.total - off.total).abs();
        assert!(gap <= last, "gap grew at alpha={alpha}");
        last = gap;
    }
    assert!(last < 1e-6);
}

#[test]
fn online_tokens_never_reach_the_likelihood_term() {
    let m = random_model(8, 2, 9);
    let mut rng = stream(9, "b");
    let e = random_batch(&mut rng, 8, 3, 5);
    let o1 = random_batch(&mut rng, 8, 3, 5);
    let o2 = random_batch(&mut rng, 8, 5, 5);
    let cfg = IqlConfig { lambda: 0.5, gamma: 1.0, alpha: 0.2 };
    let a = iqlearn_online_loss(&e, &o1, &m, &cfg).unwrap();
    let b = iqlearn_online_loss(&e, &o2, &m, &cfg).unwrap();
    let mle = mle_loss(&e, &m).unwrap();
    assert_eq!(a.mle_term, mle.mle_term);
    assert_eq!(b.mle_term, mle.mle_term);

    // with the TD term switched off the gradient cannot depend on the online batch
    let cfg0 = IqlConfig { lambda: 0.0, ..cfg };
    let eb = SeqBatch::from_trajectories(&e).unwrap();
    let grads = |o: &[Trajectory]| {
        let ob = SeqBatch::from_trajectories(o).unwrap();
        value_and_grad(&m, |g, bd| online_graph(g, bd, &m, &eb, &ob, &cfg0)).unwrap().1
    };
    assert_eq!(grads(&o1), grads(&o2));
}

#[test]
fn online_mixing_needs_online_tokens() {
    let m = uniform_model(5);
    let e = [seq(&[BOS], &[3, EOS], true)];
    let cfg = IqlConfig { lambda: 0.5, gamma: 1.0, alpha: 0.2 };
    assert!(matches!(
        iqlearn_online_loss(&e, &[], &m, &cfg),
        Err(seqimit_core::Error::EmptyBatch(_))
    ));
    assert!(iqlearn_online_loss(&e, &[], &m, &IqlConfig { alpha: 0.0, ..cfg }).is_ok());
    assert!(iqlearn_online_loss(&e, &e, &m, &IqlConfig { alpha: 1.0, ..cfg }).is_err());
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for obj in ALL_OBJECTIVES {
        for seed in 0..3 {
            let err = gradient_error(obj, seed);
            assert!(err < 1e-4, "{obj:?} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn rewards_of_a_uniform_policy() {
    let m = uniform_model(4);
    let cfg = IqlConfig { lambda: 0.3, gamma: 1.0, alpha: 0.0 };
    let r = extract_rewards(&m, &seq(&[BOS], &[3, 3, EOS], true), &cfg).unwrap();
    assert!(close(r.per_step[0], -0.3 * LN4, 1e-14));
    assert!(close(r.per_step[1], -0.3 * LN4, 1e-14));
    // last step: q − 0
    assert!(r.per_step[2].abs() < 1e-14);
    assert!(close(r.total_return, r.per_step.iter().sum(), 1e-15));
}

#[test]
fn total_return_telescopes_at_gamma_one() {
    // Σ (q_t − v_{t+1}) = Σ log π_t + v_0 when the episode terminates
    for seed in 0..5 {
        let m = random_model(8, 2, seed);
        for t in random_batch(&mut stream(seed, "b"), 8, 6, 6).iter().filter(|t| t.terminated) {
            let toks = ref_tokens(&m, t);
            let expect = toks.iter().map(|x| x.log_pi).sum::<f64>() + toks[0].v;
            let r = extract_rewards(&m, t, &IqlConfig { lambda: 1.0, gamma: 1.0, alpha: 0.0 }).unwrap();
            assert!(close(r.total_return, expect, 1e-12));
        }
    }
}

/// A tabular soft-Q policy over completions of at most `depth` tokens,
/// solved by backward soft value iteration for a fixed reward table.
struct SoftQTable {
    vocab: usize,
    depth: usize,
    gamma: f64,
}

impl SoftQTable {
    fn reward(&self, prefix: &[usize], a: usize) -> f64 {
        let mut h: u64 = 1469598103934665603;
        for &t in prefix.iter().chain(std::iter::once(&a)) {
            h = (h ^ t as u64).wrapping_mul(1099511628211);
        }
        (h % 1000) as f64 / 250.0 - 2.0
    }

    fn terminal(&self, prefix_len: usize, a: usize) -> bool {
        a == EOS || prefix_len + 1 == self.depth
    }

    fn q(&self, prefix: &[usize]) -> Vec<f64> {
        (0..self.vocab)
            .map(|a| {
                let r = self.reward(prefix, a);
                if self.terminal(prefix.len(), a) {
                    r
                } else {
                    let mut next = prefix.to_vec();
                    next.push(a);
                    r + self.gamma * logsumexp_slice(&self.q(&next))
                }
            })
            .collect()
    }
}

impl StepModel for SoftQTable {
    type State = Vec<usize>;
    fn eos(&self) -> usize {
        EOS
    }
    fn start(&self, _prompt: &[usize]) -> seqimit_core::Result<Vec<usize>> {
        Ok(Vec::new())
    }
    fn advance(&self, s: &Vec<usize>, t: usize) -> seqimit_core::Result<Vec<usize>> {
        let mut n = s.clone();
        n.push(t);
        Ok(n)
    }
    fn next_logits(&self, s: &Vec<usize>) -> Vec<f64> {
        self.q(s)
    }
}

#[test]
fn rewards_recover_the_soft_value_iteration_reward() {
    for gamma in [1.0, 0.9] {
        let table = SoftQTable { vocab: 5, depth: 4, gamma };
        let cfg = IqlConfig { lambda: 1.0, gamma, alpha: 0.0 };
        let s = SamplerConfig { max_len: table.depth, ..Default::default() };
        let mut rng = stream(1, "soft-vi");
        for _ in 0..50 {
            let t = sample(&table, &[BOS], &s, &mut rng).unwrap();
            let r = extract_rewards(&table, &t, &cfg).unwrap();
            for (i, &a) in t.completion.iter().enumerate() {
                let want = table.reward(&t.completion[..i], a);
                assert!((r.per_step[i] - want).abs() < 1e-8, "{} vs {want}", r.per_step[i]);
            }
        }
    }
}

#[test]
fn gail_reward_values() {
    assert!((gail_reward_from_logit(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((gail_reward_from_logit(1.0) - 1.31326).abs() < 1e-5);
    let tiny = gail_reward_from_logit(-50.0);
    assert!(tiny > 0.0 && tiny < 1e-21);
    for i in 0..=1000 {
        let d = -50.0 + i as f64 * 0.1;
        assert!(gail_reward_from_logit(d) > 0.0);
    }
    // monotone
    assert!(gail_reward_from_logit(2.0) > gail_reward_from_logit(1.9));
}

fn states(ts: &[Trajectory]) -> StateBatch {
    let prefixes: Vec<Vec<usize>> = ts
        .iter()
        .flat_map(|t| {
            let full = t.full();
            (t.prompt.len() + 1..=full.len()).map(move |k| full[..k].to_vec())
        })
        .collect();
    StateBatch::from_prefixes(&prefixes).unwrap()
}

/// One layer, width one: the embedding of a state's last token sets `D`.
fn separating_disc(expert_tok: usize, policy_tok: usize, scale: f64) -> Discriminator {
    let mut d = ScalarNet::new(6, 1, 1, 1, &mut stream(0, "d")).unwrap();
    let p = &mut d.net.params;
    p.get_mut("embed").unwrap().data_mut().fill(0.0);
    p.get_mut("embed").unwrap().data_mut()[expert_tok] = 20.0;
    p.get_mut("embed").unwrap().data_mut()[policy_tok] = -20.0;
    p.get_mut("rnn0.w_in").unwrap().data_mut()[0] = 1.0;
    p.get_mut("rnn0.w_rec").unwrap().data_mut()[0] = 0.0;
    p.get_mut("rnn0.bias").unwrap().data_mut()[0] = 0.0;
    p.get_mut("head.w").unwrap().data_mut()[0] = scale;
    p.get_mut("head.b").unwrap().data_mut()[0] = 0.0;
    d
}

#[test]
fn discriminator_loss_limits() {
    let expert = states(&[seq(&[BOS], &[3, 3], false)]);
    let policy = states(&[seq(&[BOS], &[4, 4, 4], false)]);
    let mut zero = ScalarNet::new(6, 3, 3, 1, &mut stream(0, "d")).unwrap();
    zero.net.zero_head();
    let l = gail_discriminator_loss(&expert, &policy, &zero).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

    let sep = separating_disc(3, 4, 20.0);
    assert!((sep.score(&[BOS, 3]).unwrap() - 20.0).abs() < 1e-6);
    assert!((sep.score(&[BOS, 3, 4]).unwrap() + 20.0).abs() < 1e-6);
    let l = gail_discriminator_loss(&expert, &policy, &sep).unwrap();
    assert!(l < 1e-8, "{l}");
    assert_eq!(discriminator_accuracy(&sep, &expert, &policy).unwrap(), 1.0);
    let flipped = separating_disc(4, 3, 20.0);
    assert_eq!(discriminator_accuracy(&flipped, &expert, &policy).unwrap(), 0.0);
}

#[test]
fn discriminator_loss_matches_hand_bce() {
    let sp = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    for seed in 0..10 {
        let mut rng = stream(seed, "d");
        let mut d = ScalarNet::new(8, 4, 5, 2, &mut rng).unwrap();
        for t in d.net.params.tensors_mut() {
            for x in t.data_mut() {
                *x += rng.random_range(-1.0..1.0);
            }
        }
        let e = random_batch(&mut rng, 8, 3, 4);
        let p = random_batch(&mut rng, 8, 4, 4);
        let (es, ps) = (states(&e), states(&p));
        let mut hand = 0.0;
        let mut n = 0;
        for s in &es.seqs {
            hand += sp(-d.score(s).unwrap());
            n += 1;
        }
        for s in &ps.seqs {
            hand += sp(d.score(s).unwrap());
            n += 1;
        }
        let got = gail_discriminator_loss(&es, &ps, &d).unwrap();
        assert!((got - hand / n as f64).abs() < 1e-10);
    }
}

fn gail_fixture(seed: u64) -> (PolicyFixture, Vec<Trajectory>) {
    let model = random_model(8, 2, seed);
    let mut rng = stream(seed, "g");
    let mut value = ScalarNet::new(8, 4, 5, 2, &mut rng).unwrap();
    value.net.zero_head();
    let rollouts = random_batch(&mut rng, 8, 4, 5);
    let expert = random_batch(&mut rng, 8, 3, 5);
    (PolicyFixture { model, value, rollouts }, expert)
}

struct PolicyFixture {
    model: seqimit_core::policy::PolicyModel,
    value: ValueNet,
    rollouts: Vec<Trajectory>,
}

impl PolicyFixture {
    fn scored(&self, reward: impl Fn(usize, usize) -> f64) -> Vec<ScoredRollout> {
        self.rollouts
            .iter()
            .enumerate()
            .map(|(i, t)| ScoredRollout {
                traj: t.clone(),
                rewards: (0..t.completion.len()).map(|k| reward(i, k)).collect(),
            })
            .collect()
    }
}

#[test]
fn kl_to_an_identical_anchor_is_zero() {
    let (f, expert) = gail_fixture(1);
    let w = GailWeights { kl_weight: 5.0, mle_weight: 0.0, gamma: 1.0 };
    let rs = f.scored(|i, k| (i + k) as f64);
    let out = gail_policy_loss(&rs, &f.value, &w, &f.model, &f.model, &expert).unwrap();
    assert_eq!(out.kl_term, 0.0);
    let other = random_model(8, 2, 99);
    let out = gail_policy_loss(&rs, &f.value, &w, &other, &f.model, &expert).unwrap();
    assert!(out.kl_term > 0.0);
}

#[test]
fn constant_returns_leave_no_policy_gradient_signal() {
    let (f, expert) = gail_fixture(2);
    // γ = 0 makes each step's return its own reward
    let w = GailWeights { kl_weight: 0.0, mle_weight: 0.0, gamma: 0.0 };
    let out = gail_policy_loss(&f.scored(|_, _| 0.7), &f.value, &w, &f.model, &f.model, &expert).unwrap();
    assert_eq!(out.policy_term, 0.0);
}

#[test]
fn policy_term_is_invariant_to_positive_affine_reward_shifts() {
    for seed in 0..5 {
        let (f, expert) = gail_fixture(seed);
        let w = GailWeights { kl_weight: 0.0, mle_weight: 0.0, gamma: 0.0 };
        let mut rng = stream(seed, "r");
        let base: Vec<Vec<f64>> = f.rollouts.iter().map(|t| (0..t.completion.len()).map(|_| rng.random_range(0.0..3.0)).collect()).collect();
        let a = gail_policy_loss(&f.scored(|i, k| base[i][k]), &f.value, &w, &f.model, &f.model, &expert).unwrap();
        let b = gail_policy_loss(&f.scored(|i, k| 3.5 * base[i][k] + 2.0), &f.value, &w, &f.model, &f.model, &expert).unwrap();
        assert!((a.policy_term - b.policy_term).abs() < 1e-12);

        // per-sample |Â·log π| ranking keeps its argmax
        let flat: Vec<f64> = base.iter().flatten().copied().collect();
        let shifted: Vec<f64> = flat.iter().map(|r| 3.5 * r + 2.0).collect();
        let argmax = |v: &[f64]| {
            let s = standardize(v);
            (0..s.len()).max_by(|&i, &j| s[i].abs().total_cmp(&s[j].abs())).unwrap()
        };
        assert_eq!(argmax(&flat), argmax(&shifted));
    }
}

#[test]
fn rollout_scoring_and_returns() {
    let d = separating_disc(3, 4, 2.0);
    let s = score_rollout(&d, seq(&[BOS], &[3, 4, EOS], true)).unwrap();
    assert_eq!(s.rewards.len(), 3);
    assert!((s.rewards[0] - gail_reward_from_logit(d.score(&[BOS, 3]).unwrap())).abs() < 1e-15);
    assert!(s.rewards[0] > s.rewards[1]);
    assert_eq!(reward_to_go(&[1.0, 2.0, 3.0], 1.0), vec![6.0, 5.0, 3.0]);
    assert_eq!(reward_to_go(&[1.0, 2.0, 3.0], 0.5), vec![1.0 + 0.5 * (2.0 + 0.5 * 3.0), 2.0 + 1.5, 3.0]);
    assert_eq!(standardize(&[2.0, 2.0]), vec![0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_zero_equivalence_holds_for_any_batch(seed in 0u64..10_000, n in 1usize..6, len in 1usize..7) {
        let m = random_model(8, 1, seed);
        let batch = random_batch(&mut stream(seed, "b"), 8, n, len);
        let iql = iqlearn_offline_loss(&batch, &m, &IqlConfig { lambda: 0.0, gamma: 0.7, alpha: 0.0 }).unwrap();
        prop_assert_eq!(iql.total.to_bits(), mle_loss(&batch, &m).unwrap().total.to_bits());
    }

    #[test]
    fn rewards_are_linear_in_lambda(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let m = random_model(8, 1, seed);
        let t = random_batch(&mut stream(seed, "b"), 8, 1, 6).remove(0);
        let cfg = IqlConfig { lambda: 0.3, gamma: 0.9, alpha: 0.0 };
        let a = extract_rewards(&m, &t, &cfg).unwrap();
        let b = extract_rewards(&m, &t, &IqlConfig { lambda: 0.3 * c, ..cfg }).unwrap();
        for (x, y) in a.per_step.iter().zip(&b.per_step) {
            prop_assert!((x * c - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        prop_assert!((a.total_return * c - b.total_return).abs() <= 1e-11 * b.total_return.abs().max(1.0));
    }

    #[test]
    fn td_residual_shifts_by_one_minus_gamma_times_c(seed in 0u64..10_000, shift in -5.0f64..5.0, gamma in 0.0f64..=1.0) {
        // adding `shift` to every logit (through the head bias) moves v by
        // `shift` everywhere and leaves log π unchanged
        let m = random_model(8, 1, seed);
        let t = random_batch(&mut stream(seed, "b"), 8, 1, 5).remove(0);
        let mut shifted = m.clone();
        for b in shifted.net.params.get_mut("head.b").unwrap().data_mut() {
            *b += shift;
        }
        let a = ref_tokens(&m, &t);
        let b = ref_tokens(&shifted, &t);
        for (x, y) in a.iter().zip(&b) {
            let want = if x.v_next.is_some() { (1.0 - gamma) * shift } else { shift };
            prop_assert!((delta(y, 1.0, gamma) - delta(x, 1.0, gamma) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn standardized_advantages_are_affine_invariant(xs in prop::collection::vec(-10.0f64..10.0, 2..20), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let s = standardize(&xs);
        let t = standardize(&xs.iter().map(|x| a * x + b).collect::<Vec<_>>());
        for (p, q) in s.iter().zip(&t) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }
}
