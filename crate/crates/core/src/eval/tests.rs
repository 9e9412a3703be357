use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::fgnn::{ModelConfig, ModelParams};
use crate::graphs::build_global_graph;
use crate::ingest::Session;
use crate::rng;

/// Scores every item by a fixed random draw per (input, item).
struct RandomScores {
    m: usize,
    seed: u64,
}

impl Recommender for RandomScores {
    fn num_items(&self) -> usize {
        self.m
    }
    fn scores(&self, input: &[usize]) -> Result<Vec<f64>> {
        let mut r = rng::stream(rng::content_seed(self.seed, input), &[]);
        Ok((0..self.m).map(|_| r.gen()).collect())
    }
}

/// Knows every label in advance.
struct Oracle {
    m: usize,
    answers: std::collections::HashMap<Vec<usize>, usize>,
}

impl Recommender for Oracle {
    fn num_items(&self) -> usize {
        self.m
    }
    fn scores(&self, input: &[usize]) -> Result<Vec<f64>> {
        let mut s = vec![0.0; self.m];
        s[self.answers[input]] = 1.0;
        Ok(s)
    }
}

#[test]
fn metric_examples() {
    let ranked = RankedList {
        items: vec![5, 2, 9],
    };
    assert_eq!(recall_at_k(&ranked, 2, 2), 1.0);
    assert_eq!(recall_at_k(&ranked, 9, 2), 0.0);
    assert_eq!(mrr_at_k(&ranked, 5, 20), 1.0);
    let long = RankedList {
        items: (0..30).collect(),
    };
    assert_eq!(mrr_at_k(&long, 3, 20), 0.25);
    assert_eq!(mrr_at_k(&long, 20, 20), 0.0);
    let full = RankedList::from_scores(&[0.3, 0.1, 0.2], None);
    for label in 0..3 {
        assert_eq!(recall_at_k(&full, label, 3), 1.0);
    }
}

#[test]
fn ties_break_by_index() {
    let r = RankedList::from_scores(&[1.0, 3.0, 1.0, 3.0, 2.0], None);
    assert_eq!(r.items, vec![1, 3, 4, 0, 2]);
    assert_eq!(
        RankedList::from_scores(&[1.0, 3.0, 1.0, 3.0, 2.0], Some(2)).items,
        vec![1, 3]
    );
    for (label, rank) in [(1, 1), (3, 2), (4, 3), (0, 4), (2, 5)] {
        assert_eq!(rank_of_label(&[1.0, 3.0, 1.0, 3.0, 2.0], label), rank);
    }
}

fn brute_force(scores: &[f64], label: usize, k: usize) -> (f64, f64) {
    // full insertion sort with the documented tie rule
    let mut order: Vec<usize> = Vec::new();
    for i in 0..scores.len() {
        let pos = order
            .iter()
            .position(|&j| scores[i] > scores[j] || (scores[i] == scores[j] && i < j))
            .unwrap_or(order.len());
        order.insert(pos, i);
    }
    let rank = order.iter().position(|&j| j == label).unwrap() + 1;
    if rank <= k {
        (1.0, 1.0 / rank as f64)
    } else {
        (0.0, 0.0)
    }
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng::stream(99, &[]);
    for _ in 0..1000 {
        let m = r.gen_range(1..60);
        // coarse scores force frequent ties
        let scores: Vec<f64> = (0..m).map(|_| r.gen_range(0..8) as f64).collect();
        let label = r.gen_range(0..m);
        let k = r.gen_range(1..25);
        let (rec, mrr) = brute_force(&scores, label, k);
        let ranked = RankedList::from_scores(&scores, Some(k));
        assert_eq!(recall_at_k(&ranked, label, k), rec);
        assert_eq!(mrr_at_k(&ranked, label, k), mrr);
        let full = RankedList::from_scores(&scores, None);
        assert_eq!(full.rank_of(label).unwrap(), rank_of_label(&scores, label));
        assert!(mrr <= rec);
    }
}

fn random_examples(n: usize, m: usize, seed: u64) -> Vec<Example> {
    let mut r = rng::stream(seed, &[]);
    (0..n)
        .map(|_| {
            let len = r.gen_range(1..10);
            Example {
                input: (0..len).map(|_| r.gen_range(0..m)).collect(),
                label: r.gen_range(0..m),
            }
        })
        .collect()
}

#[test]
fn random_model_recall_matches_expectation() {
    let test = random_examples(20_000, 1000, 3);
    let rep = evaluate(&RandomScores { m: 1000, seed: 1 }, &test, &DEFAULT_KS).unwrap();
    // binomial standard deviation of the mean is about 0.001
    let r20 = rep.recall(20).unwrap();
    assert!((r20 - 0.02).abs() < 0.004, "{r20}");
    assert!((rep.recall(5).unwrap() - 0.005).abs() < 0.002);
    assert_eq!(rep.short.count + rep.long.count, rep.count);
}

#[test]
fn perfect_model_scores_one() {
    let test = random_examples(500, 50, 4);
    let answers = test.iter().map(|e| (e.input.clone(), e.label)).collect();
    let rep = evaluate(
        &Oracle { m: 50, answers },
        &dedup_inputs(&test),
        &DEFAULT_KS,
    )
    .unwrap();
    for m in &rep.metrics {
        assert_eq!((m.recall, m.mrr), (1.0, 1.0));
    }
}

fn dedup_inputs(test: &[Example]) -> Vec<Example> {
    let mut map = std::collections::HashMap::new();
    for e in test {
        map.insert(e.input.clone(), e.label);
    }
    test.iter()
        .filter(|e| map[&e.input] == e.label)
        .cloned()
        .collect()
}

#[test]
fn report_has_requested_cutoffs() {
    let test = random_examples(50, 30, 5);
    let rep = evaluate(
        &RandomScores { m: 30, seed: 0 },
        &test,
        &parse_ks("5,10,20").unwrap(),
    )
    .unwrap();
    let ks: Vec<usize> = rep.metrics.iter().map(|m| m.k).collect();
    assert_eq!(ks, vec![5, 10, 20]);
    let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    assert_eq!(json["metrics"].as_array().unwrap().len(), 3);
    let table = rep.to_table();
    assert!(table.starts_with("subset"));
    assert!(table.contains("MRR@20"));
    assert_eq!(table.lines().count(), 4);
    assert!(parse_ks("5,,10").is_err());
    assert!(parse_ks("0").is_err());
}

#[test]
fn fgnn_evaluation_ignores_test_order() {
    let sessions: Vec<Session> = [
        vec![0, 1, 2, 3],
        vec![1, 4, 5],
        vec![2, 6, 7, 1],
        vec![3, 8, 9, 0],
        vec![5, 6, 0],
    ]
    .into_iter()
    .map(|s| Session::new(s, 0.0))
    .collect();
    let global = build_global_graph(&sessions);
    let config = ModelConfig {
        dim: 4,
        layers: 2,
        heads: 2,
        readout_steps: 2,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config, 10, 0.5, 3).unwrap();
    let model = FgnnRecommender {
        params: &params,
        global: &global,
        sampling: TrainConfig::default(),
    };
    let mut test: Vec<Example> = random_examples(230, 10, 8);
    let a = evaluate(&model, &test, &DEFAULT_KS).unwrap();
    test.reverse();
    let b = evaluate(&model, &test, &DEFAULT_KS).unwrap();
    assert_eq!(a, b);
    // batched scores equal one-at-a-time scores exactly
    let single = model.scores(&test[3].input).unwrap();
    let batched = model
        .score_batch(&[&test[0].input, &test[3].input])
        .unwrap();
    assert_eq!(single, batched[1]);
}

proptest! {
    #[test]
    fn report_invariants(n in 1usize..200, m in 1usize..40, seed in any::<u64>()) {
        let test = random_examples(n, m, seed);
        let rep = evaluate(&RandomScores { m, seed }, &test, &DEFAULT_KS).unwrap();
        let mut prev = (0.0, 0.0);
        for km in &rep.metrics {
            prop_assert!(0.0 <= km.mrr && km.mrr <= km.recall && km.recall <= 1.0);
            prop_assert!(km.recall >= prev.0 && km.mrr >= prev.1);
            prev = (km.recall, km.mrr);
        }
        prop_assert_eq!(rep.short.count + rep.long.count, n as u64);
        let hits: Vec<u64> = rep.metrics.iter().map(|k| k.hits).collect();
        let parts: Vec<u64> = rep.short.metrics.iter().zip(&rep.long.metrics).map(|(a, b)| a.hits + b.hits).collect();
        prop_assert_eq!(hits, parts);
    }
}
