use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ItemIndex, Session};
use crate::rng;

pub const DEFAULT_MAX_PAIRS: usize = 1_000_000;
const BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Pairs of sessions sharing at least one item.
    pub qualifying_pairs: u64,
    /// Pairs whose coefficient entered the statistics.
    pub evaluated_pairs: u64,
    /// Sampled pairs skipped for a zero-variance vector.
    pub skipped_pairs: u64,
    pub mean: f64,
    /// Lower bin edges from −1 in steps of 0.05, with counts.
    pub histogram: Vec<(f64, u64)>,
    /// True when only a sample of the qualifying pairs was evaluated.
    pub sampled: bool,
}

/// Sparse count vector of a session.
fn counts(s: &Session) -> HashMap<ItemIndex, f64> {
    let mut c = HashMap::new();
    for &i in &s.items {
        *c.entry(i).or_insert(0.0) += 1.0;
    }
    c
}

/// Pearson correlation of two item-count vectors over a vocabulary of
/// `dim` items; `None` when either vector is constant.
pub fn pearson(
    a: &HashMap<ItemIndex, f64>,
    b: &HashMap<ItemIndex, f64>,
    dim: usize,
) -> Option<f64> {
    let n = dim as f64;
    let (sa, sb): (f64, f64) = (a.values().sum(), b.values().sum());
    let (qa, qb): (f64, f64) = (
        a.values().map(|v| v * v).sum(),
        b.values().map(|v| v * v).sum(),
    );
    let dot: f64 = a.iter().filter_map(|(i, v)| b.get(i).map(|w| v * w)).sum();
    let var_a = qa - sa * sa / n;
    let var_b = qb - sb * sb / n;
    if var_a <= 1e-12 * qa.max(1.0) || var_b <= 1e-12 * qb.max(1.0) {
        return None;
    }
    Some((dot - sa * sb / n) / (var_a * var_b).sqrt())
}

/// Correlation between sessions that share at least one item. Beyond
/// `max_pairs` qualifying pairs, a uniform reservoir sample is used.
pub fn session_correlation(
    sessions: &[Session],
    vocab_size: usize,
    max_pairs: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    if sessions.len() < 2 {
        return Err(Error::Precondition(
            "correlation needs at least two sessions".into(),
        ));
    }
    if max_pairs == 0 {
        return Err(Error::Config("max_pairs must be positive".into()));
    }
    let mut by_item: HashMap<ItemIndex, Vec<usize>> = HashMap::new();
    for (k, s) in sessions.iter().enumerate() {
        let mut items = s.items.clone();
        items.sort_unstable();
        items.dedup();
        for i in items {
            by_item.entry(i).or_default().push(k);
        }
    }

    let mut r = rng::stream(seed, &[0xC011]);
    let mut reservoir: Vec<(usize, usize)> = Vec::new();
    let mut seen: u64 = 0;
    let mut partners: Vec<usize> = Vec::new();
    for (a, s) in sessions.iter().enumerate() {
        partners.clear();
        for i in &s.items {
            partners.extend(by_item[i].iter().copied().filter(|&b| b > a));
        }
        partners.sort_unstable();
        partners.dedup();
        for &b in &partners {
            seen += 1;
            if reservoir.len() < max_pairs {
                reservoir.push((a, b));
            } else {
                let j = r.gen_range(0..seen);
                if (j as usize) < max_pairs {
                    reservoir[j as usize] = (a, b);
                }
            }
        }
    }

    let bins = (2.0 / BIN_WIDTH).round() as usize;
    let mut histogram: Vec<(f64, u64)> = (0..bins)
        .map(|k| (-1.0 + k as f64 * BIN_WIDTH, 0))
        .collect();
    let (mut sum, mut evaluated, mut skipped) = (0.0, 0u64, 0u64);
    reservoir.sort_unstable();
    for (a, b) in reservoir {
        match pearson(&counts(&sessions[a]), &counts(&sessions[b]), vocab_size) {
            Some(rho) => {
                let bin = (((rho + 1.0) / BIN_WIDTH).floor() as usize).min(bins - 1);
                histogram[bin].1 += 1;
                sum += rho;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(CorrelationReport {
        qualifying_pairs: seen,
        evaluated_pairs: evaluated,
        skipped_pairs: skipped,
        mean: if evaluated > 0 {
            sum / evaluated as f64
        } else {
            f64::NAN
        },
        histogram,
        sampled: seen > max_pairs as u64,
    })
}
