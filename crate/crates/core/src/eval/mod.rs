//! Ranking metrics, evaluation of recommenders over test examples, simple
//! baselines and the cross-session correlation analysis.

mod baselines;
mod correlation;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use baselines::{ItemKnn, Pop, SPop, ITEMKNN_LAMBDA};
pub use correlation::{pearson, session_correlation, CorrelationReport, DEFAULT_MAX_PAIRS};

use crate::error::{Error, Result};
use crate::fgnn::{forward_logits, GraphBatchView, ModelParams};
use crate::graphs::GlobalGraph;
use crate::ingest::{Example, ItemIndex};
use crate::tensor::Tape;
use crate::train::{eval_bcs_seed, example_view, TrainConfig};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];
/// Inputs at most this long fall in the short bucket.
pub const SHORT_MAX_LEN: usize = 5;

/// Items ordered by descending score, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub items: Vec<ItemIndex>,
}

impl RankedList {
    /// The first `k` entries of the full ordering (all of it for `None`).
    pub fn from_scores(scores: &[f64], k: Option<usize>) -> Self {
        let mut items: Vec<ItemIndex> = (0..scores.len()).collect();
        let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
        let k = k.unwrap_or(scores.len()).min(scores.len());
        if k < items.len() && k > 0 {
            items.select_nth_unstable_by(k - 1, cmp);
            items.truncate(k);
        }
        items.sort_by(cmp);
        items.truncate(k);
        RankedList { items }
    }

    /// 1-based position of `item`, if listed.
    pub fn rank_of(&self, item: ItemIndex) -> Option<usize> {
        self.items.iter().position(|&i| i == item).map(|p| p + 1)
    }
}

/// 1-based rank `label` would take in [`RankedList::from_scores`], without
/// sorting.
pub fn rank_of_label(scores: &[f64], label: ItemIndex) -> usize {
    let s = scores[label];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, v)| v.total_cmp(&s).is_gt() || (v.total_cmp(&s).is_eq() && j < label))
        .count()
}

pub fn recall_at_k(ranked: &RankedList, label: ItemIndex, k: usize) -> f64 {
    match ranked.rank_of(label) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn mrr_at_k(ranked: &RankedList, label: ItemIndex, k: usize) -> f64 {
    match ranked.rank_of(label) {
        Some(r) if r <= k => 1.0 / r as f64,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub hits: u64,
    pub recall: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub count: u64,
    pub metrics: Vec<KMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub count: u64,
    pub metrics: Vec<KMetrics>,
    /// Inputs of length at most 5.
    pub short: BucketReport,
    pub long: BucketReport,
}

/// Histogram of ranks up to the largest K. Metrics derived from it do not
/// depend on the order examples were added in.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCounts {
    count: u64,
    hist: Vec<u64>,
}

impl RankCounts {
    pub fn new(max_k: usize) -> Self {
        RankCounts {
            count: 0,
            hist: vec![0; max_k],
        }
    }

    pub fn add(&mut self, rank: usize) {
        self.count += 1;
        if rank <= self.hist.len() {
            self.hist[rank - 1] += 1;
        }
    }

    pub fn merge(&mut self, other: &RankCounts) {
        self.count += other.count;
        self.hist
            .iter_mut()
            .zip(&other.hist)
            .for_each(|(a, b)| *a += b);
    }

    pub fn bucket(&self, ks: &[usize]) -> BucketReport {
        let n = self.count.max(1) as f64;
        let metrics = ks
            .iter()
            .map(|&k| {
                let hits: u64 = self.hist[..k].iter().sum();
                let rr: f64 = self.hist[..k]
                    .iter()
                    .enumerate()
                    .map(|(r, &c)| c as f64 / (r + 1) as f64)
                    .sum();
                KMetrics {
                    k,
                    hits,
                    recall: hits as f64 / n,
                    mrr: rr / n,
                }
            })
            .collect();
        BucketReport {
            count: self.count,
            metrics,
        }
    }
}

/// Anything that scores every item as the next click of a session prefix.
pub trait Recommender {
    fn num_items(&self) -> usize;

    fn scores(&self, input: &[ItemIndex]) -> Result<Vec<f64>>;

    fn score_batch(&self, inputs: &[&[ItemIndex]]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|i| self.scores(i)).collect()
    }
}

/// The trained model scored on evaluation-time BCS graphs.
pub struct FgnnRecommender<'a> {
    pub params: &'a ModelParams,
    pub global: &'a GlobalGraph,
    pub sampling: TrainConfig,
}

impl Recommender for FgnnRecommender<'_> {
    fn num_items(&self) -> usize {
        self.params.num_items()
    }

    fn scores(&self, input: &[ItemIndex]) -> Result<Vec<f64>> {
        Ok(self.score_batch(&[input])?.remove(0))
    }

    fn score_batch(&self, inputs: &[&[ItemIndex]]) -> Result<Vec<Vec<f64>>> {
        let views = inputs
            .iter()
            .map(|i| {
                example_view(
                    self.global,
                    i,
                    &self.sampling,
                    eval_bcs_seed(self.sampling.seed, i),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let view = GraphBatchView::batch(&views)?;
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let logits = tape.value(forward_logits(&tape, &view, &vars, self.params.config())?);
        let m = self.params.num_items();
        Ok(logits.chunks(m).map(<[f64]>::to_vec).collect())
    }
}

const EVAL_BATCH: usize = 100;

pub fn evaluate(model: &dyn Recommender, test: &[Example], ks: &[usize]) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!(
            "cut-offs must be positive, got {ks:?}"
        )));
    }
    let max_k = *ks.iter().max().unwrap();
    let m = model.num_items();
    let (mut short, mut long) = (RankCounts::new(max_k), RankCounts::new(max_k));
    for chunk in test.chunks(EVAL_BATCH) {
        let inputs: Vec<&[ItemIndex]> = chunk.iter().map(|e| e.input.as_slice()).collect();
        let scores = model.score_batch(&inputs)?;
        for (e, s) in chunk.iter().zip(scores) {
            if e.label >= m || s.len() != m {
                return Err(Error::Vocab {
                    index: e.label,
                    size: m,
                });
            }
            let rank = rank_of_label(&s, e.label);
            if e.input.len() <= SHORT_MAX_LEN {
                short.add(rank);
            } else {
                long.add(rank);
            }
        }
    }
    let mut all = short.clone();
    all.merge(&long);
    let overall = all.bucket(ks);
    Ok(EvalReport {
        ks: ks.to_vec(),
        count: overall.count,
        metrics: overall.metrics,
        short: short.bucket(ks),
        long: long.bucket(ks),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.recall)
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.mrr)
    }

    /// Plain-text table, metrics in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        write!(out, "{:<8}{:>8}", "subset", "n").unwrap();
        for k in &self.ks {
            write!(out, "{:>9}{:>9}", format!("R@{k}"), format!("MRR@{k}")).unwrap();
        }
        out.push('\n');
        let rows = [
            ("all", self.count, &self.metrics),
            ("short", self.short.count, &self.short.metrics),
            ("long", self.long.count, &self.long.metrics),
        ];
        for (name, n, metrics) in rows {
            write!(out, "{name:<8}{n:>8}").unwrap();
            for m in metrics {
                write!(out, "{:>9.2}{:>9.2}", 100.0 * m.recall, 100.0 * m.mrr).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a comma-separated cut-off list such as `5,10,20`.
pub fn parse_ks(text: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad cut-off {t:?}")))
        })
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!("bad cut-off list {text:?}")));
    }
    Ok(ks)
}

#[cfg(test)]
mod tests;
