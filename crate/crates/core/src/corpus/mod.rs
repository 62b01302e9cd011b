//! Headline and price ingestion.
//!
//! Headlines arrive as JSONL, one record per line:
//!
//! ```text
//! {"text": "...", "tickers": ["AAPL"], "published_at": "2022-01-03T09:30:00-05:00", "source": "yahoo", "prominence": 0.9}
//! ```
//!
//! `prominence` is optional. Records tagged with more than two tickers are
//! dropped, the remaining tickers are restricted to the configured universe,
//! and duplicates by (normalized text, publication instant) are removed
//! keeping the first occurrence. Each surviving headline is assigned an
//! effective trading date through [`TradingCalendar::effective_date`].

mod calendar;
mod prices;

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calendar::{CalendarError, TradingCalendar, DEFAULT_CUTOFF, DEFAULT_TIMEZONE};
pub use prices::{ingest_prices, PriceTable};

use crate::util::sha256_hex;

/// Headlines tagged with more tickers than this are not attributable to a single name.
pub const MAX_TICKERS: usize = 2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: malformed headline record: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: no headlines left after filtering")]
    EmptyCorpus { path: String },
    #[error("{path}: row {row}: {message}")]
    InvalidPriceRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: row {row}: duplicate close for ({ticker}, {date})")]
    DuplicatePrice {
        path: String,
        row: usize,
        ticker: String,
        date: NaiveDate,
    },
    #[error("close for ({ticker}, {date}) is not on a trading date")]
    OffCalendarPrice { ticker: String, date: NaiveDate },
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

/// The tickers a study is restricted to. An unrestricted universe accepts every symbol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Universe(Option<BTreeSet<String>>);

impl Universe {
    pub fn unrestricted() -> Self {
        Self(None)
    }

    pub fn new<I, S>(tickers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(Some(
            tickers
                .into_iter()
                .map(|t| normalize_ticker(t.as_ref()))
                .collect(),
        ))
    }

    pub fn contains(&self, ticker: &str) -> bool {
        self.0.as_ref().is_none_or(|set| set.contains(ticker))
    }
}

fn normalize_ticker(t: &str) -> String {
    t.trim().to_ascii_uppercase()
}

/// Trims and collapses internal whitespace runs (newlines included) to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Deterministic id from normalized text and publication instant.
pub fn headline_id(normalized_text: &str, published_at: &DateTime<FixedOffset>) -> String {
    let instant = published_at
        .with_timezone(&Utc)
        .to_rfc3339_opts(SecondsFormat::AutoSi, true);
    let mut key = String::with_capacity(normalized_text.len() + instant.len() + 1);
    key.push_str(normalized_text);
    key.push('\u{1f}');
    key.push_str(&instant);
    sha256_hex(key.as_bytes())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub id: String,
    pub text: String,
    pub tickers: BTreeSet<String>,
    pub published_at: DateTime<FixedOffset>,
    pub source: String,
    pub effective_date: NaiveDate,
}

#[derive(Debug, Deserialize)]
struct RawHeadline {
    text: String,
    tickers: Vec<String>,
    published_at: DateTime<FixedOffset>,
    source: String,
    #[serde(default)]
    prominence: Option<f64>,
}

/// Counts of what happened to each input record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub empty_text: usize,
    pub too_many_tickers: usize,
    pub outside_universe: usize,
    pub below_prominence: usize,
    pub duplicates: usize,
    pub outside_calendar: usize,
    pub kept: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub headlines: Vec<Headline>,
    pub stats: IngestStats,
}

pub fn ingest_headlines(
    path: &Path,
    universe: &Universe,
    prominence_floor: f64,
    calendar: &TradingCalendar,
) -> Result<Ingested, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    read_headlines(
        BufReader::new(file),
        &display,
        universe,
        prominence_floor,
        calendar,
    )
}

/// Same as [`ingest_headlines`] over any line reader; `origin` is used in error messages.
pub fn read_headlines<R: BufRead>(
    reader: R,
    origin: &str,
    universe: &Universe,
    prominence_floor: f64,
    calendar: &TradingCalendar,
) -> Result<Ingested, CorpusError> {
    let mut stats = IngestStats::default();
    let mut seen: HashSet<(String, DateTime<Utc>)> = HashSet::new();
    let mut headlines = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: origin.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawHeadline =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                path: origin.to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        stats.records += 1;

        let text = normalize_text(&raw.text);
        if text.is_empty() {
            stats.empty_text += 1;
            continue;
        }
        let tagged: BTreeSet<String> = raw
            .tickers
            .iter()
            .map(|t| normalize_ticker(t))
            .filter(|t| !t.is_empty())
            .collect();
        if tagged.len() > MAX_TICKERS {
            stats.too_many_tickers += 1;
            continue;
        }
        let tickers: BTreeSet<String> = tagged
            .into_iter()
            .filter(|t| universe.contains(t))
            .collect();
        if tickers.is_empty() {
            stats.outside_universe += 1;
            continue;
        }
        if matches!(raw.prominence, Some(p) if p < prominence_floor) {
            stats.below_prominence += 1;
            continue;
        }
        if !seen.insert((text.clone(), raw.published_at.with_timezone(&Utc))) {
            stats.duplicates += 1;
            continue;
        }
        let effective_date = match calendar.effective_date(&raw.published_at) {
            Ok(d) => d,
            Err(CalendarError::OutOfRange { .. }) => {
                stats.outside_calendar += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        headlines.push(Headline {
            id: headline_id(&text, &raw.published_at),
            text,
            tickers,
            published_at: raw.published_at,
            source: raw.source,
            effective_date,
        });
    }

    if stats.outside_calendar > 0 {
        log::warn!(
            "{origin}: {} headline(s) fall outside the trading calendar and were skipped",
            stats.outside_calendar
        );
    }
    if headlines.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: origin.to_string(),
        });
    }
    headlines.sort_by(|a, b| {
        a.published_at
            .cmp(&b.published_at)
            .then_with(|| a.id.cmp(&b.id))
    });
    stats.kept = headlines.len();
    Ok(Ingested { headlines, stats })
}

/// Writes headlines as JSONL. The output is itself valid ingest input.
pub fn write_headlines(path: &Path, headlines: &[Headline]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for h in headlines {
        let line = serde_json::to_string(h).expect("headline serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a canonical headline file written by [`write_headlines`].
pub fn read_canonical_headlines(path: &Path) -> Result<Vec<Headline>, CorpusError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal() -> TradingCalendar {
        let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        TradingCalendar::weekdays(
            d("2022-01-03"),
            d("2022-01-31"),
            DEFAULT_CUTOFF,
            DEFAULT_TIMEZONE,
        )
        .unwrap()
    }

    fn ingest(body: &str, universe: &Universe) -> Result<Ingested, CorpusError> {
        read_headlines(body.as_bytes(), "test.jsonl", universe, 0.8, &cal())
    }

    #[test]
    fn duplicates_by_text_and_timestamp_collapse() {
        let body = r#"{"text": "Apple beats", "tickers": ["AAPL"], "published_at": "2022-01-04T10:00:00-05:00", "source": "a"}
{"text": "  Apple   beats ", "tickers": ["AAPL"], "published_at": "2022-01-04T15:00:00Z", "source": "b"}
{"text": "Apple beats", "tickers": ["AAPL"], "published_at": "2022-01-04T11:00:00-05:00", "source": "c"}"#;
        let out = ingest(body, &Universe::unrestricted()).unwrap();
        assert_eq!(out.headlines.len(), 2);
        assert_eq!(out.stats.duplicates, 1);
        // First occurrence wins.
        assert_eq!(out.headlines[0].source, "a");
    }

    #[test]
    fn three_tickers_dropped() {
        let body = r#"{"text": "Big tech rally", "tickers": ["AAPL", "MSFT", "GOOG"], "published_at": "2022-01-04T10:00:00-05:00", "source": "a"}
{"text": "Duo", "tickers": ["AAPL", "MSFT"], "published_at": "2022-01-04T10:00:00-05:00", "source": "a"}"#;
        let out = ingest(body, &Universe::unrestricted()).unwrap();
        assert_eq!(out.headlines.len(), 1);
        assert_eq!(out.headlines[0].tickers.len(), 2);
        assert_eq!(out.stats.too_many_tickers, 1);
    }

    #[test]
    fn prominence_floor_is_inclusive_and_optional() {
        let body = r#"{"text": "at floor", "tickers": ["AAPL"], "published_at": "2022-01-04T10:00:00-05:00", "source": "aylien", "prominence": 0.8}
{"text": "below", "tickers": ["AAPL"], "published_at": "2022-01-04T10:00:00-05:00", "source": "aylien", "prominence": 0.79}
{"text": "no field", "tickers": ["AAPL"], "published_at": "2022-01-04T10:00:00-05:00", "source": "yahoo"}"#;
        let out = ingest(body, &Universe::unrestricted()).unwrap();
        let texts: Vec<_> = out.headlines.iter().map(|h| h.text.as_str()).collect();
        assert!(texts.contains(&"at floor"));
        assert!(texts.contains(&"no field"));
        assert!(!texts.contains(&"below"));
    }

    #[test]
    fn tickers_restricted_to_universe() {
        let body = r#"{"text": "x", "tickers": ["AAPL", "ZZZZ"], "published_at": "2022-01-04T10:00:00-05:00", "source": "a"}
{"text": "y", "tickers": ["ZZZZ"], "published_at": "2022-01-04T10:00:00-05:00", "source": "a"}"#;
        let out = ingest(body, &Universe::new(["aapl", "msft"])).unwrap();
        assert_eq!(out.headlines.len(), 1);
        assert_eq!(
            out.headlines[0].tickers,
            BTreeSet::from(["AAPL".to_string()])
        );
        assert_eq!(out.stats.outside_universe, 1);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let body = "{\"text\": \"ok\", \"tickers\": [\"A\"], \"published_at\": \"2022-01-04T10:00:00Z\", \"source\": \"s\"}\n\n{not json";
        match ingest(body, &Universe::unrestricted()) {
            Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed line error, got {other:?}"),
        }
    }

    #[test]
    fn empty_result_is_an_error() {
        let body = r#"{"text": "   ", "tickers": ["AAPL"], "published_at": "2022-01-04T10:00:00-05:00", "source": "a"}"#;
        assert!(matches!(
            ingest(body, &Universe::unrestricted()),
            Err(CorpusError::EmptyCorpus { .. })
        ));
    }

    #[test]
    fn output_order_and_effective_dates() {
        let body = r#"{"text": "late", "tickers": ["A"], "published_at": "2022-01-07T16:00:00-05:00", "source": "a"}
{"text": "early", "tickers": ["A"], "published_at": "2022-01-04T09:00:00-05:00", "source": "a"}"#;
        let out = ingest(body, &Universe::unrestricted()).unwrap();
        assert_eq!(out.headlines[0].text, "early");
        assert_eq!(out.headlines[1].effective_date.to_string(), "2022-01-10");
    }

    #[test]
    fn reingest_is_idempotent() {
        let body = r#"{"text": "b  headline\nsplit", "tickers": ["A", "B"], "published_at": "2022-01-05T12:00:00+01:00", "source": "a"}
{"text": "a headline", "tickers": ["A"], "published_at": "2022-01-04T09:00:00-05:00", "source": "a", "prominence": 0.95}
{"text": "a headline", "tickers": ["A"], "published_at": "2022-01-04T09:00:00-05:00", "source": "dup"}"#;
        let first = ingest(body, &Universe::unrestricted()).unwrap().headlines;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.jsonl");
        write_headlines(&path, &first).unwrap();
        let second = ingest_headlines(&path, &Universe::unrestricted(), 0.8, &cal())
            .unwrap()
            .headlines;
        assert_eq!(first, second);
        assert_eq!(read_canonical_headlines(&path).unwrap(), first);
    }

    #[test]
    fn id_is_stable_across_offsets() {
        let a = DateTime::parse_from_rfc3339("2022-01-04T10:00:00-05:00").unwrap();
        let b = DateTime::parse_from_rfc3339("2022-01-04T15:00:00Z").unwrap();
        assert_eq!(headline_id("x", &a), headline_id("x", &b));
        assert_ne!(headline_id("x", &a), headline_id("y", &a));
    }
}
