use super::*;
use crate::policy::{PolicyShape, Tier};
use crate::rng::stream;
use rand_distr::{Distribution, Normal};

fn shape(v: usize, n: usize, l: usize) -> PolicyShape {
    PolicyShape {
        tier: Tier::Tiny,
        vocab_size: v,
        embed_dim: 3,
        n_queries: n,
        max_query_len: l,
    }
}

fn random_params(s: PolicyShape, seed: u64, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(s);
    let mut rng = stream(seed, 11, 0);
    let n = Normal::new(0.0, scale).unwrap();
    p.as_mut_slice().iter_mut().for_each(|x| *x = n.sample(&mut rng));
    p
}

fn user(features: Vec<f64>) -> PreparedUser {
    PreparedUser {
        user_id: 0,
        features,
        themes: vec![],
        search_queries: vec![],
        behavior_tokens: vec![],
        heldout: vec![],
    }
}

fn group(params: &PolicyParams, u: &PreparedUser, seqs: &[Vec<usize>], rewards: &[f64]) -> RolloutGroup {
    let ctx = params.context(&u.features).unwrap();
    let rollouts = seqs
        .iter()
        .map(|s| {
            let logprobs = (0..s.len())
                .map(|t| {
                    let d = policy::next_token_dist(params, &ctx, &s[..t], false).unwrap();
                    d[s[t]].ln()
                })
                .collect();
            Rollout {
                tokens: s.clone(),
                logprobs,
                parsed: policy::parse(params, s),
            }
        })
        .collect();
    RolloutGroup {
        user_id: 0,
        rollouts,
        rewards: rewards
            .iter()
            .map(|&r| RewardVector {
                composite: r,
                ..RewardVector::default()
            })
            .collect(),
        advantages: advantages(rewards).unwrap(),
    }
}

#[test]
fn advantage_examples() {
    let a = advantages(&[0.8, 0.5, 0.2]).unwrap();
    for (x, y) in a.iter().zip([0.3, 0.0, -0.3]) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(advantages(&[0.4; 5]).unwrap(), vec![0.0; 5]);
    assert_eq!(advantages(&[1.0, 0.0]).unwrap(), vec![0.5, -0.5]);
    assert!(matches!(advantages(&[1.0]), Err(Error::Input(_))));
}

#[test]
fn advantages_sum_to_zero_and_ignore_shifts() {
    let mut rng = stream(3, 3, 3);
    use rand::Rng as _;
    for _ in 0..200 {
        let g = rng.gen_range(2..12);
        let r: Vec<f64> = (0..g).map(|_| rng.gen::<f64>()).collect();
        let a = advantages(&r).unwrap();
        assert!(a.iter().sum::<f64>().abs() < 1e-9);
        let shifted: Vec<f64> = r.iter().map(|x| x + 0.37).collect();
        for (x, y) in a.iter().zip(advantages(&shifted).unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn clip_arithmetic() {
    let (v, active) = clipped_term(1.5, 1.0, 0.2);
    assert!((v - 1.2).abs() < 1e-12 && !active);
    let (v, active) = clipped_term(0.5, -1.0, 0.2);
    assert!((v + 0.8).abs() < 1e-12 && !active);
    let (v, active) = clipped_term(1.0, 0.7, 0.2);
    assert!(v == 0.7 && active);
    let s = surrogate(&[-1.0, -2.0], &[-1.0, -2.0], 0.4, 0.2, RatioMode::PerToken);
    assert_eq!(s.weights, vec![0.4, 0.4]);
    assert_eq!(s.clipped, 0);
    assert!((s.value - 0.8).abs() < 1e-12);
    let s = surrogate(&[-1.0, -2.0], &[-1.0, -2.0], 0.4, 0.2, RatioMode::PerSequence);
    assert!((s.value - 0.4).abs() < 1e-12);
}

#[test]
fn kl_closed_form_and_nonnegative() {
    let kl = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]);
    let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
    assert!((kl - oracle).abs() < 1e-12);
    assert!((kl - 0.5108).abs() < 1e-4);
    let s = shape(6, 2, 2);
    for seed in 0..1000 {
        let a = random_params(s, seed, 0.5);
        let b = random_params(s, seed + 5000, 0.5);
        let toks = [0, 1, 3, 2, 4];
        assert!(kl_to_ref(&a, &b, &[0.1, 0.2, 0.3], &toks).unwrap() >= 0.0);
    }
    let a = random_params(s, 1, 0.5);
    assert_eq!(kl_to_ref(&a, &a, &[0.1, 0.2, 0.3], &[0, 3, 1, 4]).unwrap(), 0.0);
}

fn config(eps: f64, beta: f64, mode: RatioMode) -> GrpoConfig {
    GrpoConfig {
        clip_eps: eps,
        kl_beta: beta,
        ratio_mode: mode,
        ..GrpoConfig::default()
    }
}

#[test]
fn constant_rewards_without_kl_give_zero_gradient() {
    let s = shape(7, 2, 2);
    let p = random_params(s, 2, 0.5);
    let u = user(vec![0.3, -0.1, 0.2]);
    let g = group(&p, &u, &[vec![0, 4, 1, 5], vec![2, 5]], &[0.6, 0.6]);
    let (grad, stats) = group_gradient(&p, &p, &u, &g, &config(0.2, 0.0, RatioMode::PerToken)).unwrap();
    assert!(grad.0.iter().all(|&x| x == 0.0));
    assert_eq!(stats.clipped, 0);
}

/// With an unbounded clip and no KL, the per-sequence surrogate gradient
/// equals the REINFORCE-with-baseline estimate assembled independently.
#[test]
fn surrogate_matches_reinforce_oracle() {
    let s = shape(6, 2, 1);
    let u = user(vec![0.5, 0.1, -0.4]);
    let seqs = vec![vec![0, 3, 1, 4], vec![2, 3, 2, 4], vec![1, 4], vec![0, 3, 0, 4]];
    let rewards = [0.9, 0.3, 0.0, 0.55];
    for seed in 0..5 {
        let old = random_params(s, seed, 0.4);
        let mut theta = old.clone();
        // move theta off old so ratios differ from one
        for (i, x) in theta.as_mut_slice().iter_mut().enumerate() {
            *x += 0.01 * ((i % 7) as f64 - 3.0);
        }
        let g = group(&old, &u, &seqs, &rewards);
        let (grad, _) = group_gradient(&theta, &theta, &u, &g, &config(1e12, 0.0, RatioMode::PerSequence)).unwrap();

        let ctx_new = theta.context(&u.features).unwrap();
        let ctx_old = old.context(&u.features).unwrap();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let mut oracle = vec![0.0; grad.0.len()];
        for (seq, r) in seqs.iter().zip(rewards) {
            let rho = (policy::logprob(&theta, &ctx_new, seq).unwrap()
                - policy::logprob(&old, &ctx_old, seq).unwrap())
            .exp();
            let score = policy::grad_weighted_loglik(&theta, &ctx_new, seq, &vec![1.0; seq.len()]).unwrap();
            for (o, gi) in oracle.iter_mut().zip(&score.0) {
                *o += (r - mean) * rho * gi / seqs.len() as f64;
            }
        }
        for (a, b) in grad.0.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn bandit_step_moves_toward_better_arm() {
    // single-token sequences over V=4 (one content token plus specials)
    let s = shape(4, 1, 1);
    let p = PolicyParams::zeros(s);
    let u = user(vec![0.0; 3]);
    let g = group(&p, &u, &[vec![0], vec![2]], &[1.0, 0.0]);
    let (grad, stats) = group_gradient(&p, &p, &u, &g, &config(0.2, 0.0, RatioMode::PerToken)).unwrap();
    assert_eq!(stats.clipped, 0);
    // at uniform p: (1/G) sum_g A_g (onehot(y_g) - p) = (e0 - e2) / 4
    let ob = s.layout().out_b;
    let expected = [0.25, 0.0, -0.25, 0.0];
    for (j, e) in expected.iter().enumerate() {
        assert!((grad.0[ob + j] - e).abs() < 1e-12);
    }
    let mut q = p.clone();
    let mut opt = Adam::new(q.as_slice().len(), 0.1);
    opt.ascend(&mut q, &grad);
    let ctx = q.context(&u.features).unwrap();
    let d = policy::next_token_dist(&q, &ctx, &[], false).unwrap();
    assert!(d[0] > 0.25 && d[2] < 0.25);
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let s = shape(6, 2, 2);
    let u = user(vec![0.2, -0.3, 0.4]);
    let theta = random_params(s, 8, 0.4);
    let reference = random_params(s, 9, 0.4);
    let seqs = vec![vec![0, 1, 3, 2, 4], vec![1, 3, 0, 4]];
    // zero advantages isolate the KL term
    let g = group(&theta, &u, &seqs, &[0.5, 0.5]);
    let beta = 0.7;
    let (grad, _) = group_gradient(&theta, &reference, &u, &g, &config(0.2, beta, RatioMode::PerToken)).unwrap();
    let objective = |p: &PolicyParams| {
        -beta
            * seqs
                .iter()
                .map(|sq| kl_to_ref(p, &reference, &u.features, sq).unwrap())
                .sum::<f64>()
            / seqs.len() as f64
    };
    let h = 1e-5;
    let mut err = 0.0;
    let mut norm = 0.0;
    for i in 0..theta.as_slice().len() {
        let mut a = theta.clone();
        a.as_mut_slice()[i] += h;
        let mut b = theta.clone();
        b.as_mut_slice()[i] -= h;
        let num = (objective(&a) - objective(&b)) / (2.0 * h);
        err += (num - grad.0[i]).powi(2);
        norm += num * num;
    }
    assert!(err.sqrt() / norm.sqrt() < 1e-5, "{}", err.sqrt() / norm.sqrt());
}
