use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};

use crate::error::{Error, Result};

/// Share of unparseable rows above which a source is rejected.
const MAX_SKIP_RATIO: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClickFormat {
    /// `session,ISO-8601 timestamp,item,category`
    Yoochoose,
    /// `sessionId;userId;itemId;timeframe;eventdate`
    Diginetica,
    /// `session,item,timestamp-seconds`
    Generic,
}

impl ClickFormat {
    pub fn delimiter(self) -> char {
        match self {
            ClickFormat::Diginetica => ';',
            _ => ',',
        }
    }

    /// Length of the trailing window, in days, that forms the test split.
    pub fn default_test_days(self) -> f64 {
        match self {
            ClickFormat::Diginetica => 7.0,
            _ => 1.0,
        }
    }
}

impl FromStr for ClickFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yoochoose" => Ok(ClickFormat::Yoochoose),
            "diginetica" => Ok(ClickFormat::Diginetica),
            "generic" => Ok(ClickFormat::Generic),
            other => Err(Error::Config(format!("unknown click format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawClick {
    pub session_id: String,
    /// Seconds since the epoch; drives recency.
    pub timestamp: f64,
    /// Key that orders clicks inside a session.
    pub order: f64,
    pub item_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedClicks {
    pub clicks: Vec<RawClick>,
    pub skipped: usize,
}

fn parse_row(line: &str, format: ClickFormat) -> Option<RawClick> {
    let fields: Vec<&str> = line.split(format.delimiter()).map(str::trim).collect();
    let nonempty = |s: &str| (!s.is_empty()).then(|| s.to_string());
    let finite = |v: f64| (v.is_finite() && v >= 0.0).then_some(v);
    match format {
        ClickFormat::Yoochoose => {
            let [session, ts, item, ..] = fields.as_slice() else {
                return None;
            };
            let t = DateTime::parse_from_rfc3339(ts).ok()?;
            let secs = finite(t.timestamp_millis() as f64 / 1000.0)?;
            Some(RawClick {
                session_id: nonempty(session)?,
                timestamp: secs,
                order: secs,
                item_id: nonempty(item)?,
            })
        }
        ClickFormat::Diginetica => {
            let [session, _user, item, timeframe, date, ..] = fields.as_slice() else {
                return None;
            };
            let day = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
            let secs = finite(day.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64)?;
            Some(RawClick {
                session_id: nonempty(session)?,
                timestamp: secs,
                order: finite(timeframe.parse().ok()?)?,
                item_id: nonempty(item)?,
            })
        }
        ClickFormat::Generic => {
            let [session, item, ts, ..] = fields.as_slice() else {
                return None;
            };
            let secs = finite(ts.parse().ok()?)?;
            Some(RawClick {
                session_id: nonempty(session)?,
                timestamp: secs,
                order: secs,
                item_id: nonempty(item)?,
            })
        }
    }
}

/// Parses one click per data row, in file order. A first line that does not
/// parse is taken as a header. Other unparseable rows are skipped and counted;
/// more than 10% skipped rows rejects the source.
pub fn parse_clicks<R: BufRead>(source: R, format: ClickFormat) -> Result<ParsedClicks> {
    let mut out = ParsedClicks::default();
    let mut rows = 0usize;
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(&line, format) {
            Some(click) => {
                rows += 1;
                out.clicks.push(click);
            }
            None if lineno == 0 => {}
            None => {
                rows += 1;
                out.skipped += 1;
            }
        }
    }
    if rows > 0 && out.skipped as f64 > MAX_SKIP_RATIO * rows as f64 {
        return Err(Error::MalformedInput {
            skipped: out.skipped,
            total: rows,
        });
    }
    Ok(out)
}
