//! Synthetic click sessions from a first-order Markov chain, used to check
//! that the model can learn a known transition structure.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{augment, Example, Session};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub items: usize,
    pub sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of the fixed successor; the rest is split evenly over
    /// `alternates` other items.
    pub p_successor: f64,
    pub alternates: usize,
    /// Trailing share of sessions used for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            items: 200,
            sessions: 5000,
            min_len: 2,
            max_len: 8,
            p_successor: 0.8,
            alternates: 2,
            test_fraction: 0.1,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    /// `successor[i]` is the likely next item after `i`.
    pub successor: Vec<usize>,
    pub alternates: Vec<Vec<usize>>,
    pub p_successor: f64,
}

impl MarkovChain {
    pub fn next<R: Rng>(&self, item: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let alts = &self.alternates[item];
        if u < self.p_successor || alts.is_empty() {
            return self.successor[item];
        }
        let share = (1.0 - self.p_successor) / alts.len() as f64;
        let k = (((u - self.p_successor) / share) as usize).min(alts.len() - 1);
        alts[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub num_items: usize,
    pub chain: MarkovChain,
    pub train_sessions: Vec<Session>,
    pub test_sessions: Vec<Session>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn markov_chain(cfg: &ChainConfig) -> Result<SyntheticData> {
    if cfg.items < cfg.alternates + 2 || cfg.min_len < 2 || cfg.max_len < cfg.min_len {
        return Err(Error::Config(format!(
            "invalid chain configuration {cfg:?}"
        )));
    }
    if !(0.0..=1.0).contains(&cfg.p_successor) || !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::Config("chain probabilities out of range".into()));
    }
    let mut r = rng::stream(cfg.seed, &[0xC4A1]);
    let mut successor: Vec<usize> = (0..cfg.items).collect();
    // a derangement keeps every item from succeeding itself
    loop {
        successor.shuffle(&mut r);
        if successor.iter().enumerate().all(|(i, &s)| i != s) {
            break;
        }
    }
    let alternates = (0..cfg.items)
        .map(|i| {
            let pool: Vec<usize> = (0..cfg.items)
                .filter(|&j| j != i && j != successor[i])
                .collect();
            pool.choose_multiple(&mut r, cfg.alternates)
                .copied()
                .collect()
        })
        .collect();
    let chain = MarkovChain {
        successor,
        alternates,
        p_successor: cfg.p_successor,
    };

    let sessions: Vec<Session> = (0..cfg.sessions)
        .map(|s| {
            let len = r.gen_range(cfg.min_len..=cfg.max_len);
            let mut items = vec![r.gen_range(0..cfg.items)];
            while items.len() < len {
                items.push(chain.next(*items.last().unwrap(), &mut r));
            }
            Session::new(items, s as f64)
        })
        .collect();
    let n_test = (cfg.sessions as f64 * cfg.test_fraction).round() as usize;
    let (train_sessions, test_sessions) = sessions.split_at(cfg.sessions - n_test);
    let examples = |ss: &[Session]| -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for s in ss {
            out.extend(augment(s)?);
        }
        Ok(out)
    };
    Ok(SyntheticData {
        num_items: cfg.items,
        train: examples(train_sessions)?,
        test: examples(test_sessions)?,
        chain,
        train_sessions: train_sessions.to_vec(),
        test_sessions: test_sessions.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_frequencies() {
        let data = markov_chain(&ChainConfig::default()).unwrap();
        let (mut hits, mut total) = (0usize, 0usize);
        for s in &data.train_sessions {
            for w in s.items.windows(2) {
                let ok = w[1] == data.chain.successor[w[0]]
                    || data.chain.alternates[w[0]].contains(&w[1]);
                assert!(ok);
                hits += usize::from(w[1] == data.chain.successor[w[0]]);
                total += 1;
            }
        }
        let share = hits as f64 / total as f64;
        assert!((share - 0.8).abs() < 0.01, "{share}");
        assert_eq!(data.test_sessions.len(), 500);
        let expected: usize = data.test_sessions.iter().map(|s| s.len() - 1).sum();
        assert_eq!(data.test.len(), expected);
    }

    #[test]
    fn deterministic() {
        let cfg = ChainConfig {
            sessions: 50,
            ..ChainConfig::default()
        };
        assert_eq!(markov_chain(&cfg).unwrap(), markov_chain(&cfg).unwrap());
    }
}
