use super::*;
use crate::config::Config;
use crate::embedding::normalize;
use crate::index::IndexParams;
use crate::world::{generate_world, NewsArticle};
use rand::Rng as _;

fn brute_recall(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut rel = relevant.to_vec();
    rel.sort_unstable();
    rel.dedup();
    let mut hits = 0;
    for r in &rel {
        if ranked[..k.min(ranked.len())].contains(r) {
            hits += 1;
        }
    }
    hits as f64 / rel.len() as f64
}

fn brute_ndcg(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut rel = relevant.to_vec();
    rel.sort_unstable();
    rel.dedup();
    let mut dcg = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if i < k && rel.contains(id) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let mut ideal = 0.0;
    for i in 0..rel.len().min(k) {
        ideal += 1.0 / ((i + 2) as f64).log2();
    }
    dcg / ideal
}

fn brute_mrr(ranked: &[usize], relevant: &[usize]) -> f64 {
    for (i, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

#[test]
fn metrics_match_brute_force_on_random_instances() {
    let mut rng = rng::stream(1, 99, 0);
    for _ in 0..1000 {
        let universe = rng.gen_range(5..40);
        let len = rng.gen_range(0..=universe.min(15));
        let ranked: Vec<usize> = rand::seq::index::sample(&mut rng, universe, len).into_vec();
        let nrel = rng.gen_range(1..=universe.min(12));
        let relevant: Vec<usize> = rand::seq::index::sample(&mut rng, universe, nrel).into_vec();
        for k in [1, 5, 10] {
            assert!((recall_at_k(&ranked, &relevant, k).unwrap() - brute_recall(&ranked, &relevant, k)).abs() < 1e-12);
            assert!((ndcg_at_k(&ranked, &relevant, k).unwrap() - brute_ndcg(&ranked, &relevant, k)).abs() < 1e-12);
        }
        assert!((mrr(&ranked, &relevant).unwrap() - brute_mrr(&ranked, &relevant)).abs() < 1e-12);
    }
}

#[test]
fn metric_examples() {
    let ndcg = ndcg_at_k(&[7, 1, 8, 2, 3], &[7, 8], 5).unwrap();
    assert!((ndcg - 0.9197).abs() < 1e-4, "{ndcg}");
    assert_eq!(ndcg_at_k(&[1, 2], &[1, 2], 5), Some(1.0));
    assert_eq!(ndcg_at_k(&[3, 4], &[1, 2], 5), Some(0.0));
    assert_eq!(recall_at_k(&[1, 2, 3], &[2, 9], 10), Some(0.5));
    assert_eq!(mrr(&[5, 6, 2], &[2]), Some(1.0 / 3.0));
    assert_eq!(recall_at_k(&[1], &[], 10), None);
    assert_eq!(mrr(&[1], &[]), None);
}

fn random_articles(n: usize, dim: usize, seed: u64) -> Vec<NewsArticle> {
    let mut rng = rng::stream(seed, 98, 0);
    (0..n)
        .map(|id| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            normalize(&mut v);
            NewsArticle {
                id,
                topic_id: 0,
                title_tokens: vec![],
                embedding: Embedding(v),
            }
        })
        .collect()
}

#[test]
fn pooling_matches_brute_force_max_score() {
    let articles = random_articles(60, 4, 3);
    let index = Index::build(&articles, &IndexParams::default()).unwrap();
    let queries: Vec<Embedding> = random_articles(3, 4, 4).into_iter().map(|a| a.embedding).collect();
    let k = 5;
    let pooled = retrieve_for_user(&queries, &index, k).unwrap();

    let mut oracle: Vec<SearchHit> = Vec::new();
    for q in &queries {
        let mut all: Vec<SearchHit> = articles
            .iter()
            .map(|a| SearchHit {
                article_id: a.id,
                score: dot(&q.0, &a.embedding.0),
            })
            .collect();
        all.sort_by(hit_order);
        for h in all.into_iter().take(k) {
            match oracle.iter_mut().find(|o| o.article_id == h.article_id) {
                Some(o) => o.score = o.score.max(h.score),
                None => oracle.push(h),
            }
        }
    }
    oracle.sort_by(hit_order);
    assert_eq!(pooled.len(), oracle.len());
    for (a, b) in pooled.iter().zip(&oracle) {
        assert_eq!(a.article_id, b.article_id);
        assert!((a.score - b.score).abs() < 1e-12);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn small_services() -> Services {
    let mut config = Config::default();
    config.world.topics = 4;
    config.world.articles = 200;
    config.world.users = 40;
    let world = generate_world(&config.world, 3).unwrap();
    Services::build(world, &config).unwrap()
}

#[test]
fn best_of_n_keeps_the_highest_composite() {
    let services = small_services();
    let params = PolicyParams::init(services.shape(crate::policy::Tier::Tiny), 5, 0.5);
    let rewards = services.reward_model().unwrap();
    let user = &services.users[0];
    let n = 6;
    let (best, score) = best_of_n(&params, user, n, &services, &rewards, 1.0, &mut rng::stream(2, 3, 4)).unwrap();

    let mut rng = rng::stream(2, 3, 4);
    let ctx = params.context(&user.features).unwrap();
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            let r = policy::sample(&params, &ctx, DecodeOptions::inference(1.0), &mut rng);
            score_rollout(&r, user, &services, &rewards).unwrap().composite
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(score.composite, max);
    assert!(scores.iter().all(|s| *s <= score.composite));
    assert!(!best.tokens.is_empty());
    assert_eq!(
        best_of_n(&params, user, 0, &services, &rewards, 1.0, &mut rng).unwrap_err().kind(),
        "input"
    );
}

#[test]
fn evaluation_is_deterministic_and_aggregates_rows() {
    let services = small_services();
    let params = PolicyParams::init(services.shape(crate::policy::Tier::Tiny), 5, 0.5);
    let mut config = crate::config::EvalConfig::default();
    config.users = 20;
    config.n = 2;
    let a = run_eval(&params, &services, &config, "fp").unwrap();
    let b = run_eval(&params, &services, &config, "fp").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    let n = a.rows.len() as f64;
    assert!(n > 0.0);
    let mean10 = a.rows.iter().map(|r| r.metrics.recall10).sum::<f64>() / n;
    assert!((a.aggregate.recall10 - mean10).abs() < 1e-12);
    let reward = a.rows.iter().map(|r| r.reward).sum::<f64>() / n;
    assert!((a.mean_reward - reward).abs() < 1e-12);
    assert_eq!(a.rows.len() + a.skipped, 20);
    let csv = a.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER);
    assert!(lines.last().unwrap().starts_with("all,"));
}

#[test]
fn verbatim_uses_at_most_n_queries() {
    let services = small_services();
    let report = eval_verbatim(&services, &crate::config::EvalConfig::default()).unwrap();
    assert!(report.rows.iter().all(|r| r.queries.len() <= services.n_queries));
}
