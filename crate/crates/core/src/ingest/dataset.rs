use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    augment, filter_dataset, group_sessions, recency_split, Example, ItemIndex, RawClick, Session,
    Vocabulary,
};
use crate::error::{Error, Result};

const SECONDS_PER_DAY: f64 = 86_400.0;

pub const VOCAB_FILE: &str = "vocab.json";
pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const TRAIN_SESSIONS_FILE: &str = "train_sessions.txt";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOptions {
    /// Fraction of the most recent training sessions to keep.
    pub recency_fraction: f64,
    /// Sessions ending within this many days of the last click form the test split.
    pub test_days: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            recency_fraction: 1.0,
            test_days: 1.0,
        }
    }
}

/// Summary mirroring the usual dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub clicks: usize,
    /// Augmented training examples.
    pub train_sessions: usize,
    /// Augmented test examples that survived vocabulary filtering.
    pub test_sessions: usize,
    pub items: usize,
    pub avg_length: f64,
    pub raw_train_sessions: usize,
    pub raw_test_sessions: usize,
    pub dropped_test_examples: usize,
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub vocab: Vocabulary,
    pub train_sessions: Vec<Session>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub stats: DatasetStats,
}

/// Full preprocessing: group, filter on the whole corpus, split off the
/// trailing test window, keep the recent training fraction, then build the
/// training vocabulary. Test examples touching items outside it are dropped.
pub fn preprocess(
    clicks: &[RawClick],
    skipped_rows: usize,
    opts: &PreprocessOptions,
) -> Result<PreparedDataset> {
    let raw = group_sessions(clicks);
    let (sessions, full_vocab) = filter_dataset(&raw)?;

    let last = sessions
        .iter()
        .map(|s| s.end_time)
        .fold(f64::NEG_INFINITY, f64::max);
    let cutoff = last - opts.test_days * SECONDS_PER_DAY;
    let (test_sessions, train_all): (Vec<Session>, Vec<Session>) =
        sessions.into_iter().partition(|s| s.end_time > cutoff);
    if train_all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_recent = recency_split(&train_all, opts.recency_fraction)?;

    let mut vocab = Vocabulary::new();
    let remap = |s: &Session, vocab: &mut Vocabulary| -> Session {
        let items = s
            .items
            .iter()
            .map(|&i| vocab.insert(full_vocab.raw_id(i).expect("filtered index")))
            .collect();
        Session::new(items, s.end_time)
    };
    let train_sessions: Vec<Session> = train_recent.iter().map(|s| remap(s, &mut vocab)).collect();

    let mut train = Vec::new();
    for s in &train_sessions {
        train.extend(augment(s)?);
    }

    let mut test = Vec::new();
    let mut dropped = 0;
    for s in &test_sessions {
        let mapped: Vec<Option<ItemIndex>> = s
            .items
            .iter()
            .map(|&i| vocab.index_of(full_vocab.raw_id(i).expect("filtered index")))
            .collect();
        for i in 1..mapped.len() {
            match (
                mapped[..i].iter().copied().collect::<Option<Vec<_>>>(),
                mapped[i],
            ) {
                (Some(input), Some(label)) => test.push(Example { input, label }),
                _ => dropped += 1,
            }
        }
    }

    let clicks: usize = train_sessions
        .iter()
        .chain(&test_sessions)
        .map(Session::len)
        .sum();
    let n_sessions = train_sessions.len() + test_sessions.len();
    let stats = DatasetStats {
        clicks,
        train_sessions: train.len(),
        test_sessions: test.len(),
        items: vocab.len(),
        avg_length: clicks as f64 / n_sessions as f64,
        raw_train_sessions: train_sessions.len(),
        raw_test_sessions: test_sessions.len(),
        dropped_test_examples: dropped,
        skipped_rows,
    };
    Ok(PreparedDataset {
        vocab,
        train_sessions,
        train,
        test,
        stats,
    })
}

fn join(items: &[ItemIndex]) -> String {
    let mut s = String::new();
    for (k, i) in items.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        write!(s, "{i}").unwrap();
    }
    s
}

fn examples_text(examples: &[Example]) -> String {
    let mut out = String::new();
    for e in examples {
        writeln!(out, "{}\t{}", join(&e.input), e.label).unwrap();
    }
    out
}

pub fn write_dataset(dir: &Path, data: &PreparedDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(VOCAB_FILE), data.vocab.to_json()?)?;
    fs::write(dir.join(TRAIN_FILE), examples_text(&data.train))?;
    fs::write(dir.join(TEST_FILE), examples_text(&data.test))?;
    let mut sessions = String::new();
    for s in &data.train_sessions {
        writeln!(sessions, "{}\t{}", join(&s.items), s.end_time).unwrap();
    }
    fs::write(dir.join(TRAIN_SESSIONS_FILE), sessions)?;
    fs::write(
        dir.join(STATS_FILE),
        serde_json::to_string_pretty(&data.stats)? + "\n",
    )?;
    Ok(())
}

/// What the later pipeline stages read back from a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFiles {
    pub vocab_size: usize,
    pub train_sessions: Vec<Session>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

fn parse_indices(text: &str, what: &str) -> Result<Vec<ItemIndex>> {
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Format(format!("bad item index {t:?} in {what}")))
        })
        .collect()
}

fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path)?;
    let what = path.display().to_string();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (input, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("missing tab in {what}")))?;
            let input = parse_indices(input, &what)?;
            let label = parse_indices(label, &what)?;
            match (input.is_empty(), label.as_slice()) {
                (false, [l]) => Ok(Example { input, label: *l }),
                _ => Err(Error::Format(format!(
                    "malformed example {line:?} in {what}"
                ))),
            }
        })
        .collect()
}

pub fn read_dataset(dir: &Path) -> Result<DatasetFiles> {
    let vocab = Vocabulary::from_json(&fs::read_to_string(dir.join(VOCAB_FILE))?)?;
    let train = read_examples(&dir.join(TRAIN_FILE))?;
    let test = read_examples(&dir.join(TEST_FILE))?;
    let text = fs::read_to_string(dir.join(TRAIN_SESSIONS_FILE))?;
    let mut train_sessions = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (items, end) = line.split_once('\t').unwrap_or((line, "0"));
        let end_time = end
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad end time {end:?}")))?;
        train_sessions.push(Session::new(
            parse_indices(items, TRAIN_SESSIONS_FILE)?,
            end_time,
        ));
    }
    let m = vocab.len();
    let all_items = train_sessions.iter().flat_map(|s| s.items.iter()).chain(
        train
            .iter()
            .chain(&test)
            .flat_map(|e| e.input.iter().chain([&e.label])),
    );
    for &i in all_items {
        if i >= m {
            return Err(Error::Vocab { index: i, size: m });
        }
    }
    Ok(DatasetFiles {
        vocab_size: m,
        train_sessions,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn click(s: &str, item: &str, t: f64) -> RawClick {
        RawClick {
            session_id: s.into(),
            timestamp: t,
            order: t,
            item_id: item.into(),
        }
    }

    #[test]
    fn test_window_and_unknown_items() {
        let day = SECONDS_PER_DAY;
        let mut clicks = Vec::new();
        for s in 0..5 {
            clicks.push(click(&format!("t{s}"), "a", s as f64));
            clicks.push(click(&format!("t{s}"), "b", s as f64 + 1.0));
        }
        // e reaches the count threshold but only ever appears in test sessions
        for k in 0..8 {
            clicks.push(click(
                "late",
                if k % 2 == 0 { "a" } else { "e" },
                10.0 * day + k as f64,
            ));
        }
        clicks.push(click("late2", "e", 10.0 * day));
        clicks.push(click("late2", "b", 10.0 * day + 1.0));
        let data = preprocess(&clicks, 0, &PreprocessOptions::default()).unwrap();
        assert_eq!(data.stats.raw_train_sessions, 5);
        assert_eq!(data.stats.raw_test_sessions, 2);
        assert_eq!(data.vocab.len(), 2);
        // every test example of both late sessions touches e
        assert!(data.test.is_empty());
        assert_eq!(data.stats.dropped_test_examples, 7 + 1);
    }

    #[test]
    fn write_then_read() {
        let mut clicks = Vec::new();
        for s in 0..6 {
            for (k, item) in ["a", "b", "c"].iter().enumerate() {
                clicks.push(click(&format!("s{s}"), item, (s * 10 + k) as f64));
            }
        }
        let opts = PreprocessOptions {
            recency_fraction: 1.0,
            test_days: 20.0 / SECONDS_PER_DAY,
        };
        let data = preprocess(&clicks, 0, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.vocab_size, 3);
        assert_eq!(back.train, data.train);
        assert_eq!(back.test, data.test);
        assert_eq!(back.train_sessions, data.train_sessions);
    }
}
