//! Click-stream ingestion: parsing, session grouping, frequency filtering,
//! prefix augmentation and recency splits.

mod dataset;
mod parse;

pub use dataset::{
    preprocess, read_dataset, write_dataset, DatasetFiles, DatasetStats, PreparedDataset,
    PreprocessOptions, STATS_FILE, TEST_FILE, TRAIN_FILE, TRAIN_SESSIONS_FILE, VOCAB_FILE,
};
pub use parse::{parse_clicks, ClickFormat, ParsedClicks, RawClick};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense item index in `[0, m)`.
pub type ItemIndex = usize;

/// Minimum global occurrence count for an item to survive filtering.
pub const MIN_ITEM_COUNT: usize = 5;

/// A session keyed by raw item identifiers, before vocabulary remapping.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSession {
    pub id: String,
    pub items: Vec<String>,
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub items: Vec<ItemIndex>,
    pub end_time: f64,
}

impl Session {
    pub fn new(items: Vec<ItemIndex>, end_time: f64) -> Self {
        Session { items, end_time }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One training or test case: a session prefix and the item that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub input: Vec<ItemIndex>,
    pub label: ItemIndex,
}

/// Bijection between raw item ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, ItemIndex>,
    raw: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `raw`, assigning the next free one if unseen.
    pub fn insert(&mut self, raw: &str) -> ItemIndex {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len();
        self.index.insert(raw.to_string(), i);
        self.raw.push(raw.to_string());
        i
    }

    pub fn index_of(&self, raw: &str) -> Option<ItemIndex> {
        self.index.get(raw).copied()
    }

    pub fn raw_id(&self, index: ItemIndex) -> Option<&str> {
        self.raw.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Raw id → index, ordered by raw id for stable output.
    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<&str, ItemIndex> = self
            .raw
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        Ok(serde_json::to_string_pretty(&map)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, ItemIndex> = serde_json::from_str(text)?;
        let mut raw = vec![None; map.len()];
        for (id, &i) in &map {
            let slot = raw
                .get_mut(i)
                .ok_or_else(|| Error::Format(format!("vocabulary index {i} out of range")))?;
            if slot.replace(id.clone()).is_some() {
                return Err(Error::Format(format!(
                    "vocabulary index {i} assigned twice"
                )));
            }
        }
        let raw: Vec<String> = raw.into_iter().map(Option::unwrap).collect();
        let index = raw
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i))
            .collect();
        Ok(Vocabulary { index, raw })
    }
}

/// Groups clicks into sessions. Sessions appear in order of their first click
/// in the input; clicks inside a session are ordered by their order key,
/// stable on ties.
pub fn group_sessions(clicks: &[RawClick]) -> Vec<RawSession> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<&RawClick>> = Vec::new();
    for c in clicks {
        let i = *slot.entry(c.session_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[i].push(c);
    }
    groups
        .into_iter()
        .map(|mut g| {
            g.sort_by(|a, b| a.order.total_cmp(&b.order));
            RawSession {
                id: g[0].session_id.clone(),
                end_time: g
                    .iter()
                    .map(|c| c.timestamp)
                    .fold(f64::NEG_INFINITY, f64::max),
                items: g.iter().map(|c| c.item_id.clone()).collect(),
            }
        })
        .collect()
}

/// Drops items seen fewer than [`MIN_ITEM_COUNT`] times in the input corpus,
/// then drops sessions left shorter than two items, and remaps the survivors
/// through a fresh vocabulary (indices assigned in order of first appearance).
pub fn filter_dataset(sessions: &[RawSession]) -> Result<(Vec<Session>, Vocabulary)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sessions {
        for item in &s.items {
            *counts.entry(item.as_str()).or_default() += 1;
        }
    }
    let mut vocab = Vocabulary::new();
    let mut out = Vec::new();
    for s in sessions {
        let kept: Vec<&String> = s
            .items
            .iter()
            .filter(|i| counts[i.as_str()] >= MIN_ITEM_COUNT)
            .collect();
        if kept.len() < 2 {
            continue;
        }
        let items = kept.into_iter().map(|i| vocab.insert(i)).collect();
        out.push(Session::new(items, s.end_time));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((out, vocab))
}

/// Splits a session of length n into its n − 1 (prefix, next item) pairs,
/// shortest prefix first.
pub fn augment(session: &Session) -> Result<Vec<Example>> {
    let n = session.len();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "augment needs a session of length >= 2, got {n}"
        )));
    }
    Ok((1..n)
        .map(|i| Example {
            input: session.items[..i].to_vec(),
            label: session.items[i],
        })
        .collect())
}

/// Keeps the ⌈fraction · N⌉ most recent sessions (by end time; earlier input
/// position wins ties), preserving input order.
pub fn recency_split(sessions: &[Session], fraction: f64) -> Result<Vec<Session>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "recency fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let keep = (fraction * sessions.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.sort_by(|&a, &b| {
        sessions[b]
            .end_time
            .total_cmp(&sessions[a].end_time)
            .then(a.cmp(&b))
    });
    let mut chosen = order[..keep.min(order.len())].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| sessions[i].clone()).collect())
}
