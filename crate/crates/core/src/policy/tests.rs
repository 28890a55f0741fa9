use super::*;
use crate::rng::stream;

fn shape(tier: Tier, v: usize, d: usize, n: usize, l: usize) -> PolicyShape {
    PolicyShape {
        tier,
        vocab_size: v,
        embed_dim: d,
        n_queries: n,
        max_query_len: l,
    }
}

fn random_params(s: PolicyShape, seed: u64, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(s);
    let mut rng = stream(seed, 1, 2);
    let n = Normal::new(0.0, scale).unwrap();
    p.as_mut_slice().iter_mut().for_each(|x| *x = n.sample(&mut rng));
    p
}

fn ctx_for(p: &PolicyParams, seed: u64) -> ContextVector {
    let mut rng = stream(seed, 3, 4);
    let n = Normal::new(0.0, 0.5).unwrap();
    let f: Vec<f64> = (0..p.shape().embed_dim).map(|_| n.sample(&mut rng)).collect();
    p.context(&f).unwrap()
}

#[test]
fn tier_dimensions() {
    assert_eq!((Tier::Tiny.hidden(), Tier::Tiny.layers()), (16, 1));
    assert_eq!((Tier::Small.hidden(), Tier::Small.layers()), (32, 1));
    assert_eq!((Tier::Base.hidden(), Tier::Base.layers()), (64, 2));
    assert_eq!((Tier::Large.hidden(), Tier::Large.layers()), (128, 2));
    for t in Tier::ALL {
        assert_eq!(t.to_string().parse::<Tier>().unwrap(), t);
    }
    assert!("huge".parse::<Tier>().is_err());
}

#[test]
fn zero_params_give_uniform() {
    let p = PolicyParams::zeros(shape(Tier::Small, 9, 5, 2, 3));
    let ctx = p.context(&[0.3; 5]).unwrap();
    let d = next_token_dist(&p, &ctx, &[], false).unwrap();
    for x in d {
        assert!((x - 1.0 / 9.0).abs() < 1e-15);
    }
    let toks = [0, 1, 6, 2, 7];
    let lp = logprob(&p, &ctx, &toks).unwrap();
    assert!((lp + 5.0 * 9f64.ln()).abs() < 1e-12);
}

#[test]
fn distributions_are_normalized_and_positive() {
    for seed in 0..20 {
        let p = random_params(shape(Tier::Base, 11, 4, 3, 2), seed, 0.8);
        let ctx = ctx_for(&p, seed);
        let d = next_token_dist(&p, &ctx, &[1, 2, 8], false).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(d.iter().all(|&x| x > 0.0));
    }
}

#[test]
fn mask_rules() {
    let s = shape(Tier::Tiny, 8, 3, 2, 2);
    let p = random_params(s, 5, 0.5);
    let ctx = ctx_for(&p, 5);
    let (sep, eos, pad) = (s.sep(), s.eos(), s.pad());
    let d0 = next_token_dist(&p, &ctx, &[], true).unwrap();
    assert_eq!((d0[sep], d0[eos], d0[pad]), (0.0, 0.0, 0.0));
    assert!((d0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // full first query: only SEP
    let d = next_token_dist(&p, &ctx, &[0, 1], true).unwrap();
    assert!((d[sep] - 1.0).abs() < 1e-12);
    // inside the last query: content or EOS, never SEP
    let d = next_token_dist(&p, &ctx, &[0, sep, 2], true).unwrap();
    assert_eq!(d[sep], 0.0);
    assert!(d[eos] > 0.0);
}

#[test]
fn prefix_cap_and_unknown_tokens() {
    let s = shape(Tier::Tiny, 6, 3, 2, 2);
    let p = PolicyParams::zeros(s);
    let ctx = p.context(&[0.0; 3]).unwrap();
    assert_eq!(s.max_tokens(), 6);
    assert!(next_token_dist(&p, &ctx, &[0; 5], false).is_ok());
    assert!(matches!(next_token_dist(&p, &ctx, &[0; 6], false), Err(Error::Input(_))));
    assert!(matches!(logprob(&p, &ctx, &[6]), Err(Error::Input(_))));
}

#[test]
fn context_mean_invariances() {
    let emb = Embedder::hashing(8);
    let s = shape(Tier::Tiny, 6, 8, 2, 2);
    let p = random_params(s, 9, 0.3);
    let mk = |payloads: &[&str]| CleanedBehaviors {
        events: Vec::new(),
        embeddings: payloads.iter().map(|t| emb.embed(t).unwrap()).collect(),
    };
    let one = encode_context(&p, &emb, &mk(&["nvidia earnings"])).unwrap();
    let two = encode_context(&p, &emb, &mk(&["nvidia earnings", "nvidia earnings"])).unwrap();
    assert_eq!(one, two);
    let direct = p.context(emb.embed("nvidia earnings").unwrap().as_slice()).unwrap();
    assert_eq!(one, direct);
    let ab = encode_context(&p, &emb, &mk(&["tsmc", "chip foundry"])).unwrap();
    let ba = encode_context(&p, &emb, &mk(&["chip foundry", "tsmc"])).unwrap();
    for (x, y) in ab.hidden.iter().zip(&ba.hidden) {
        assert!((x - y).abs() < 1e-15);
    }
    assert!(matches!(encode_context(&p, &emb, &mk(&[])), Err(Error::Input(_))));
}

/// Brute-force enumeration: all sequences of length <= T partition into
/// ones that stop (hit EOS) and ones cut at length T.
#[test]
fn logprob_enumeration_sums_to_one() {
    for (v, t_max) in [(4usize, 2usize), (4, 3)] {
        // n=1, max_len chosen so the cap equals t_max
        let s = shape(Tier::Tiny, v, 2, 1, t_max - 1);
        assert_eq!(s.max_tokens(), t_max);
        let p = random_params(s, 11, 0.7);
        let ctx = ctx_for(&p, 11);
        let mut total = 0.0;
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(prefix) = stack.pop() {
            for tok in 0..v {
                let mut seq = prefix.clone();
                seq.push(tok);
                if tok == s.eos() || seq.len() == t_max {
                    total += logprob(&p, &ctx, &seq).unwrap().exp();
                } else {
                    stack.push(seq);
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-12, "V={v} T={t_max}: {total}");
    }
}

#[test]
fn sampled_logprobs_match_scoring() {
    let s = shape(Tier::Base, 10, 4, 3, 2);
    let p = random_params(s, 3, 0.5);
    let ctx = ctx_for(&p, 3);
    let mut rng = stream(1, 2, 3);
    for _ in 0..20 {
        let r = sample(&p, &ctx, DecodeOptions::inference(1.3), &mut rng);
        let lp = logprob(&p, &ctx, &r.tokens).unwrap();
        assert!((lp - r.total_logprob()).abs() < 1e-10);
        assert!(r.is_valid(), "masked decoding must parse: {:?}", r.tokens);
        assert!(r.tokens.len() <= s.max_tokens());
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let s = shape(Tier::Small, 10, 4, 3, 2);
    let p = random_params(s, 4, 0.5);
    let ctx = ctx_for(&p, 4);
    let a = sample(&p, &ctx, DecodeOptions::training(), &mut stream(9, 9, 9));
    let b = sample(&p, &ctx, DecodeOptions::training(), &mut stream(9, 9, 9));
    assert_eq!(a, b);
}

#[test]
fn low_temperature_is_greedy() {
    let s = shape(Tier::Small, 10, 4, 3, 2);
    for seed in 0..5 {
        let p = random_params(s, seed, 1.0);
        let ctx = ctx_for(&p, seed);
        let g = greedy(&p, &ctx, true);
        let opts = DecodeOptions::inference(1e-6);
        let r = sample(&p, &ctx, opts, &mut stream(seed, 0, 0));
        assert_eq!(g.tokens, r.tokens);
    }
}

#[test]
fn uniform_sampling_frequencies_within_three_sigma() {
    let v = 8;
    let s = shape(Tier::Tiny, v, 2, 1, 1);
    let p = PolicyParams::zeros(s);
    let ctx = p.context(&[0.0; 2]).unwrap();
    let mut rng = stream(21, 0, 0);
    let n = 1000;
    let mut counts = vec![0usize; v];
    for _ in 0..n {
        let r = sample(&p, &ctx, DecodeOptions::training(), &mut rng);
        counts[r.tokens[0]] += 1;
    }
    let q = 1.0 / v as f64;
    let sigma = (n as f64 * q * (1.0 - q)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * q).abs() <= 3.0 * sigma, "{c}");
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    let p = random_params(shape(Tier::Base, 12, 6, 3, 2), 1, 0.3);
    p.save(&path).unwrap();
    assert_eq!(PolicyParams::load(&path).unwrap(), p);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(PolicyParams::load(&path), Err(Error::Parse { .. })));
    std::fs::write(&path, b"nope").unwrap();
    assert!(PolicyParams::load(&path).is_err());
}

fn fd_check(s: PolicyShape, seed: u64) -> f64 {
    let p = random_params(s, seed, 0.4);
    let feats: Vec<f64> = ctx_for(&p, seed).features;
    let mut rng = stream(seed, 5, 5);
    let len = 1 + rng.gen_range(0..s.max_tokens());
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..s.vocab_size)).collect();
    let weights: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ctx = p.context(&feats).unwrap();
    let g = grad_weighted_loglik(&p, &ctx, &tokens, &weights).unwrap();
    let objective = |q: &PolicyParams| {
        let c = q.context(&feats).unwrap();
        let trace = forward_trace(q, &c, &tokens);
        let v = s.vocab_size;
        tokens
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(t, (&y, &w))| w * trace.probs[t * v + y].ln())
            .sum::<f64>()
    };
    let h = 1e-4;
    let mut num = Vec::with_capacity(p.as_slice().len());
    for i in 0..p.as_slice().len() {
        let mut a = p.clone();
        a.as_mut_slice()[i] += h;
        let mut b = p.clone();
        b.as_mut_slice()[i] -= h;
        num.push((objective(&a) - objective(&b)) / (2.0 * h));
    }
    let diff: f64 = g.0.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

use rand::Rng as _;

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = fd_check(shape(Tier::Tiny, 7, 3, 2, 2), seed);
        assert!(e < 1e-4, "tiny seed {seed}: {e}");
    }
    let e = fd_check(shape(Tier::Base, 5, 2, 2, 1), 7);
    assert!(e < 1e-4, "two-layer: {e}");
}

#[test]
fn gradient_is_linear_in_weights() {
    let s = shape(Tier::Small, 9, 4, 2, 3);
    let p = random_params(s, 2, 0.4);
    let ctx = ctx_for(&p, 2);
    let tokens = [0, 3, 6, 1, 7];
    let w = [0.3, -0.2, 1.0, 0.5, -0.7];
    let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
    let g1 = grad_weighted_loglik(&p, &ctx, &tokens, &w).unwrap();
    let g2 = grad_weighted_loglik(&p, &ctx, &tokens, &w2).unwrap();
    for (a, b) in g1.0.iter().zip(&g2.0) {
        assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
    let z = grad_weighted_loglik(&p, &ctx, &tokens, &[0.0; 5]).unwrap();
    assert!(z.0.iter().all(|&x| x == 0.0));
    assert!(matches!(
        grad_weighted_loglik(&p, &ctx, &tokens, &[1.0; 4]),
        Err(Error::Input(_))
    ));
}
