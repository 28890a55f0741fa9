use super::*;
use crate::policy::{grad_weighted_loglik, PolicyShape};
use crate::rng::stream;
use rand_distr::{Distribution, Normal};

fn shape(tier: Tier) -> PolicyShape {
    PolicyShape {
        tier,
        vocab_size: 6,
        embed_dim: 3,
        n_queries: 2,
        max_query_len: 2,
    }
}

fn random_params(s: PolicyShape, seed: u64, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(s);
    let mut rng = stream(seed, 11, 0);
    let n = Normal::new(0.0, scale).unwrap();
    p.as_mut_slice().iter_mut().for_each(|x| *x = n.sample(&mut rng));
    p
}

fn user() -> PreparedUser {
    PreparedUser {
        user_id: 0,
        features: vec![0.3, -0.2, 0.5],
        themes: vec![],
        search_queries: vec![],
        behavior_tokens: vec![],
        heldout: vec![],
    }
}

#[test]
fn closed_form_reverse_kl() {
    let kl = reverse_kl(&[0.5, 0.5], &[0.9, 0.1]);
    assert!((kl - 0.5108).abs() < 1e-4, "{kl}");
    assert_eq!(reverse_kl(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
}

#[test]
fn reverse_kl_nonnegative_on_random_pairs() {
    let mut rng = stream(3, 5, 0);
    let n = Normal::new(0.0, 2.0).unwrap();
    for _ in 0..1000 {
        let mut p: Vec<f64> = (0..5).map(|_| n.sample(&mut rng)).map(f64::exp).collect();
        let mut q: Vec<f64> = (0..5).map(|_| n.sample(&mut rng)).map(f64::exp).collect();
        let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
        p.iter_mut().for_each(|x| *x /= sp);
        q.iter_mut().for_each(|x| *x /= sq);
        assert!(reverse_kl(&p, &q) >= 0.0);
    }
}

#[test]
fn copy_of_teacher_has_zero_loss_and_gradient() {
    let t = random_params(shape(Tier::Tiny), 1, 0.3);
    let (loss, g) = reverse_kl_grad(&t, &t, &user(), &[0, 1, 4, 2, 5]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.norm() < 1e-12, "{}", g.norm());
}

#[test]
fn reverse_kl_gradient_matches_finite_differences() {
    let s = random_params(shape(Tier::Tiny), 2, 0.3);
    let t = random_params(shape(Tier::Small), 3, 0.3);
    let u = user();
    let tokens = [1, 0, 4, 3, 5];
    let (_, g) = reverse_kl_grad(&s, &t, &u, &tokens).unwrap();
    let h = 1e-6;
    let mut num = vec![0.0; g.0.len()];
    for (i, slot) in num.iter_mut().enumerate() {
        let mut plus = s.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = s.clone();
        minus.as_mut_slice()[i] -= h;
        let lp = reverse_kl_grad(&plus, &t, &u, &tokens).unwrap().0;
        let lm = reverse_kl_grad(&minus, &t, &u, &tokens).unwrap().0;
        *slot = (lp - lm) / (2.0 * h);
    }
    let diff: f64 = num.iter().zip(&g.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / scale < 1e-5, "relative error {}", diff / scale);
}

#[test]
fn supervised_gradient_is_negated_loglik_gradient() {
    let s = random_params(shape(Tier::Tiny), 4, 0.3);
    let u = user();
    let tokens = [2, 4, 1, 5];
    let (nll, g) = nll_grad(&s, &u, &tokens).unwrap();
    let ctx = s.context(&u.features).unwrap();
    let reference = grad_weighted_loglik(&s, &ctx, &tokens, &[1.0; 4]).unwrap();
    assert_eq!(g, reference);
    let lp = crate::policy::logprob(&s, &ctx, &tokens).unwrap();
    assert!((nll + lp).abs() < 1e-12);
}

#[test]
fn mismatched_vocabulary_is_a_config_error() {
    let s = random_params(shape(Tier::Tiny), 1, 0.3);
    let mut other = shape(Tier::Tiny);
    other.vocab_size = 7;
    let t = random_params(other, 1, 0.3);
    let err = reverse_kl_grad(&s, &t, &user(), &[0]).unwrap_err();
    assert_eq!(err.kind(), "config");
    assert_eq!(Distiller::new(s, &t, DistillConfig::default()).unwrap_err().kind(), "config");
}

#[test]
fn zero_duration_throughput_is_an_error() {
    let s = random_params(shape(Tier::Tiny), 1, 0.3);
    let err = measure_throughput(&s, &[user()], Duration::ZERO).unwrap_err();
    assert_eq!(err.kind(), "input");
    let t = measure_throughput(&s, &[user()], Duration::from_millis(20)).unwrap();
    assert!(t.users > 0 && t.users_per_second > 0.0);
    assert_eq!(t.tier, Tier::Tiny);
}
