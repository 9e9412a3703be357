use std::collections::HashMap;

use super::Recommender;
use crate::error::Result;
use crate::ingest::{ItemIndex, Session};

/// Shrinkage added to the cosine denominator of [`ItemKnn`], damping
/// similarities between rarely seen items.
pub const ITEMKNN_LAMBDA: f64 = 20.0;

fn item_counts(sessions: &[Session], num_items: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_items];
    for s in sessions {
        for &i in &s.items {
            if i < num_items {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Global popularity.
#[derive(Debug, Clone)]
pub struct Pop {
    counts: Vec<u64>,
}

impl Pop {
    pub fn fit(sessions: &[Session], num_items: usize) -> Self {
        Pop {
            counts: item_counts(sessions, num_items),
        }
    }
}

impl Recommender for Pop {
    fn num_items(&self) -> usize {
        self.counts.len()
    }

    fn scores(&self, _input: &[ItemIndex]) -> Result<Vec<f64>> {
        Ok(self.counts.iter().map(|&c| c as f64).collect())
    }
}

/// Popularity within the session, global popularity breaking ties.
#[derive(Debug, Clone)]
pub struct SPop {
    pop: Pop,
}

impl SPop {
    pub fn fit(sessions: &[Session], num_items: usize) -> Self {
        SPop {
            pop: Pop::fit(sessions, num_items),
        }
    }
}

impl Recommender for SPop {
    fn num_items(&self) -> usize {
        self.pop.num_items()
    }

    fn scores(&self, input: &[ItemIndex]) -> Result<Vec<f64>> {
        // session counts dominate: scale them past any global count
        let scale = 1.0 + self.pop.counts.iter().copied().max().unwrap_or(0) as f64;
        let mut scores: Vec<f64> = self.pop.counts.iter().map(|&c| c as f64).collect();
        for &i in input {
            if i < scores.len() {
                scores[i] += scale;
            }
        }
        Ok(scores)
    }
}

/// Item-to-item cosine similarity of session incidence vectors, scored
/// against the last known item of the session.
#[derive(Debug, Clone)]
pub struct ItemKnn {
    occurrences: Vec<u64>,
    co: Vec<HashMap<ItemIndex, u64>>,
    lambda: f64,
}

impl ItemKnn {
    pub fn fit(sessions: &[Session], num_items: usize, lambda: f64) -> Self {
        let mut occurrences = vec![0u64; num_items];
        let mut co = vec![HashMap::new(); num_items];
        for s in sessions {
            let mut distinct: Vec<ItemIndex> =
                s.items.iter().copied().filter(|&i| i < num_items).collect();
            distinct.sort_unstable();
            distinct.dedup();
            for (a, &i) in distinct.iter().enumerate() {
                occurrences[i] += 1;
                for &j in &distinct[a + 1..] {
                    *co[i].entry(j).or_insert(0) += 1;
                    *co[j].entry(i).or_insert(0) += 1;
                }
            }
        }
        ItemKnn {
            occurrences,
            co,
            lambda,
        }
    }

    pub fn similarity(&self, i: ItemIndex, j: ItemIndex) -> f64 {
        let shared = self.co[i].get(&j).copied().unwrap_or(0) as f64;
        let norm = (self.occurrences[i] as f64 * self.occurrences[j] as f64).sqrt();
        shared / (norm + self.lambda)
    }
}

impl Recommender for ItemKnn {
    fn num_items(&self) -> usize {
        self.occurrences.len()
    }

    fn scores(&self, input: &[ItemIndex]) -> Result<Vec<f64>> {
        let m = self.num_items();
        let mut scores = vec![0.0; m];
        let known = input
            .iter()
            .rev()
            .copied()
            .find(|&i| i < m && self.occurrences[i] > 0);
        if let Some(last) = known {
            for &j in self.co[last].keys() {
                scores[j] = self.similarity(last, j);
            }
            scores[last] = -1.0;
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::RankedList;

    fn sessions(lists: &[&[usize]]) -> Vec<Session> {
        lists
            .iter()
            .map(|l| Session::new(l.to_vec(), 0.0))
            .collect()
    }

    fn ranking(r: &dyn Recommender, input: &[usize]) -> Vec<usize> {
        RankedList::from_scores(&r.scores(input).unwrap(), None).items
    }

    #[test]
    fn pop_orders_by_frequency() {
        // a = 1 three times, b = 0 once
        let pop = Pop::fit(&sessions(&[&[1, 1], &[1, 0]]), 3);
        assert_eq!(ranking(&pop, &[2]), vec![1, 0, 2]);
    }

    #[test]
    fn spop_prefers_session_items() {
        let spop = SPop::fit(&sessions(&[&[3, 3, 3, 3], &[2, 3]]), 4);
        assert_eq!(ranking(&spop, &[0, 0, 1]), vec![0, 1, 3, 2]);
    }

    #[test]
    fn itemknn_prefers_co_occurring_items() {
        // item 1 appears in every session of item 0; item 2 in none
        let corpus = sessions(&[&[0, 1], &[1, 0, 3], &[2, 3], &[2, 4], &[0, 1, 4]]);
        let knn = ItemKnn::fit(&corpus, 5, ITEMKNN_LAMBDA);
        let s = knn.scores(&[3, 0]).unwrap();
        assert!(s[1] > s[2]);
        assert!(s[1] > s[3] && s[3] > 0.0);
        assert_eq!(*ranking(&knn, &[3, 0]).last().unwrap(), 0);
        assert!((knn.similarity(0, 1) - 3.0 / (3.0 + 20.0)).abs() < 1e-15);
    }

    #[test]
    fn itemknn_skips_unknown_items() {
        let knn = ItemKnn::fit(&sessions(&[&[0, 1]]), 3, ITEMKNN_LAMBDA);
        assert_eq!(knn.scores(&[0, 2]).unwrap(), knn.scores(&[0]).unwrap());
        assert_eq!(knn.scores(&[2]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn deterministic_fit() {
        let corpus = sessions(&[&[0, 1, 2], &[2, 1], &[3, 1]]);
        let a = ItemKnn::fit(&corpus, 4, 20.0).scores(&[1]).unwrap();
        let b = ItemKnn::fit(&corpus, 4, 20.0).scores(&[1]).unwrap();
        assert_eq!(a, b);
    }
}
