//! Lexical and semantic volatility across repeated generations.
//!
//! Lexical volatility compares the k raw outputs for one headline pairwise:
//! each pair contributes `D/L_i + D/L_j`, where `D` is the character-level
//! Levenshtein distance and `L` the output length in Unicode scalar values
//! (an empty output counts as length 1). The per-headline value is the mean
//! over all `k(k-1)/2` pairs.
//!
//! Semantic volatility is the max-min range of a sentiment score across
//! runs, at feed level (one headline) and ticker level (mean label of a
//! ticker's headlines on one trading date).

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Headline;
use crate::parser::{FeedSentiment, Label};
use crate::util::format_temperature;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 runs, got {0}")]
    InsufficientRuns(usize),
    #[error("sentiment refers to unknown headline {0}")]
    DanglingHeadline(String),
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

/// Character-level Levenshtein distance with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `D/L_a + D/L_b` for one pair of outputs.
pub fn pair_term(a: &str, b: &str) -> f64 {
    let d = edit_distance(a, b) as f64;
    let la = a.chars().count().max(1) as f64;
    let lb = b.chars().count().max(1) as f64;
    d / la + d / lb
}

/// Mean pair term over all unordered pairs of the k outputs.
pub fn lexical_volatility<S: AsRef<str>>(outputs: &[S]) -> Result<f64, MetricsError> {
    let k = outputs.len();
    if k < 2 {
        return Err(MetricsError::InsufficientRuns(k));
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += pair_term(outputs[i].as_ref(), outputs[j].as_ref());
        }
    }
    Ok(sum / (k * (k - 1) / 2) as f64)
}

/// max(labels) - min(labels).
pub fn feed_range(labels: &[Label]) -> Result<f64, MetricsError> {
    if labels.len() < 2 {
        return Err(MetricsError::InsufficientRuns(labels.len()));
    }
    let max = labels.iter().map(|l| l.value()).max().expect("non-empty");
    let min = labels.iter().map(|l| l.value()).min().expect("non-empty");
    Ok(f64::from(max - min))
}

fn score_range(scores: &[f64]) -> Result<f64, MetricsError> {
    if scores.len() < 2 {
        return Err(MetricsError::InsufficientRuns(scores.len()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerDayScore {
    pub ticker: String,
    pub date: NaiveDate,
    pub temperature: f64,
    pub run_index: usize,
    /// Mean feed label over the ticker's headlines that day, in `[-1, 1]`.
    pub score: f64,
    pub headline_count: usize,
}

/// Averages feed labels per (ticker, effective date, temperature, run).
/// A headline tagged with two tickers counts toward both.
pub fn ticker_day_scores(
    feed: &[FeedSentiment],
    headlines: &[Headline],
) -> Result<Vec<TickerDayScore>, MetricsError> {
    let by_id: BTreeMap<&str, &Headline> = headlines.iter().map(|h| (h.id.as_str(), h)).collect();
    // (ticker, date, temperature key, run) -> (temperature, label sum, count)
    type Key<'a> = (&'a str, NaiveDate, String, usize);
    let mut acc: BTreeMap<Key, (f64, i64, usize)> = BTreeMap::new();
    for s in feed {
        let h = by_id
            .get(s.headline_id.as_str())
            .ok_or_else(|| MetricsError::DanglingHeadline(s.headline_id.clone()))?;
        for ticker in &h.tickers {
            let slot = acc
                .entry((
                    ticker.as_str(),
                    h.effective_date,
                    format_temperature(s.temperature),
                    s.run_index,
                ))
                .or_insert((s.temperature, 0, 0));
            slot.1 += i64::from(s.label.value());
            slot.2 += 1;
        }
    }
    let mut out: Vec<TickerDayScore> = acc
        .into_iter()
        .map(
            |((ticker, date, _, run_index), (temperature, sum, count))| TickerDayScore {
                ticker: ticker.to_string(),
                date,
                temperature,
                run_index,
                score: sum as f64 / count as f64,
                headline_count: count,
            },
        )
        .collect();
    out.sort_by(|a, b| {
        a.temperature
            .total_cmp(&b.temperature)
            .then(a.run_index.cmp(&b.run_index))
            .then(a.date.cmp(&b.date))
            .then_with(|| a.ticker.cmp(&b.ticker))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalStat {
    pub headline_id: String,
    pub temperature: f64,
    pub mean_pair_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Feed,
    Ticker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticStat {
    pub level: Level,
    /// Headline id, or `TICKER@YYYY-MM-DD` at ticker level.
    pub key: String,
    pub temperature: f64,
    pub range: f64,
}

/// Groups values by (key, temperature) in run order.
fn by_key_and_temperature<'a, T>(
    items: impl Iterator<Item = (&'a str, f64, usize, T)>,
) -> BTreeMap<(String, String), (f64, BTreeMap<usize, T>)> {
    let mut groups: BTreeMap<(String, String), (f64, BTreeMap<usize, T>)> = BTreeMap::new();
    for (key, t, run, value) in items {
        groups
            .entry((key.to_string(), format_temperature(t)))
            .or_insert_with(|| (t, BTreeMap::new()))
            .1
            .insert(run, value);
    }
    groups
}

/// Per-headline lexical volatility. Groups with fewer than two runs are skipped.
pub fn lexical_stats(feed: &[FeedSentiment]) -> Vec<LexicalStat> {
    by_key_and_temperature(feed.iter().map(|s| {
        (
            s.headline_id.as_str(),
            s.temperature,
            s.run_index,
            s.raw_fragment.as_str(),
        )
    }))
    .into_iter()
    .filter_map(|((id, _), (t, runs))| {
        let outputs: Vec<&str> = runs.into_values().collect();
        lexical_volatility(&outputs).ok().map(|v| LexicalStat {
            headline_id: id,
            temperature: t,
            mean_pair_distance: v,
        })
    })
    .collect()
}

pub fn feed_range_stats(feed: &[FeedSentiment]) -> Vec<SemanticStat> {
    by_key_and_temperature(
        feed.iter()
            .map(|s| (s.headline_id.as_str(), s.temperature, s.run_index, s.label)),
    )
    .into_iter()
    .filter_map(|((id, _), (t, runs))| {
        let labels: Vec<Label> = runs.into_values().collect();
        feed_range(&labels).ok().map(|range| SemanticStat {
            level: Level::Feed,
            key: id,
            temperature: t,
            range,
        })
    })
    .collect()
}

pub fn ticker_range_stats(scores: &[TickerDayScore]) -> Vec<SemanticStat> {
    let keyed: Vec<(String, &TickerDayScore)> = scores
        .iter()
        .map(|s| (format!("{}@{}", s.ticker, s.date), s))
        .collect();
    by_key_and_temperature(
        keyed
            .iter()
            .map(|(k, s)| (k.as_str(), s.temperature, s.run_index, s.score)),
    )
    .into_iter()
    .filter_map(|((key, _), (t, runs))| {
        let values: Vec<f64> = runs.into_values().collect();
        score_range(&values).ok().map(|range| SemanticStat {
            level: Level::Ticker,
            key,
            temperature: t,
            range,
        })
    })
    .collect()
}

/// Corpus-level means for one temperature. `None` when nothing was measurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityRow {
    pub temperature: f64,
    pub lexical_mean: Option<f64>,
    pub feed_range_mean: Option<f64>,
    pub ticker_range_mean: Option<f64>,
    pub headlines: usize,
    pub ticker_days: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

pub fn corpus_volatility_report(
    lexical: &[LexicalStat],
    semantic: &[SemanticStat],
    temperatures: &[f64],
) -> Vec<VolatilityRow> {
    temperatures
        .iter()
        .map(|&t| {
            let key = format_temperature(t);
            let at = |x: f64| format_temperature(x) == key;
            let (lexical_mean, n_lex) = mean(
                lexical
                    .iter()
                    .filter(|s| at(s.temperature))
                    .map(|s| s.mean_pair_distance),
            );
            let (feed_range_mean, n_feed) = mean(
                semantic
                    .iter()
                    .filter(|s| s.level == Level::Feed && at(s.temperature))
                    .map(|s| s.range),
            );
            let (ticker_range_mean, ticker_days) = mean(
                semantic
                    .iter()
                    .filter(|s| s.level == Level::Ticker && at(s.temperature))
                    .map(|s| s.range),
            );
            VolatilityRow {
                temperature: t,
                lexical_mean,
                feed_range_mean,
                ticker_range_mean,
                headlines: n_lex.max(n_feed),
                ticker_days,
            }
        })
        .collect()
}

/// Everything the volatility stage produces for one response set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityReport {
    pub cache_digest: String,
    pub rows: Vec<VolatilityRow>,
}

/// Runs the whole volatility computation over parsed sentiments.
pub fn volatility_rows(
    feed: &[FeedSentiment],
    headlines: &[Headline],
    temperatures: &[f64],
) -> Result<(Vec<VolatilityRow>, Vec<TickerDayScore>), MetricsError> {
    let scores = ticker_day_scores(feed, headlines)?;
    let lexical = lexical_stats(feed);
    let mut semantic = feed_range_stats(feed);
    semantic.extend(ticker_range_stats(&scores));
    Ok((
        corpus_volatility_report(&lexical, &semantic, temperatures),
        scores,
    ))
}

/// Tidy `temperature,metric,level,value` rows; unmeasurable cells are omitted.
pub fn write_volatility_csv(path: &Path, rows: &[VolatilityRow]) -> Result<(), MetricsError> {
    let err = |message: String| MetricsError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    w.write_record(["temperature", "metric", "level", "value"])
        .map_err(|e| err(e.to_string()))?;
    for r in rows {
        let t = format_temperature(r.temperature);
        for (metric, level, value) in [
            ("lexical_mean", "feed", r.lexical_mean),
            ("semantic_range_mean", "feed", r.feed_range_mean),
            ("semantic_range_mean", "ticker", r.ticker_range_mean),
        ] {
            if let Some(v) = value {
                w.write_record([t.as_str(), metric, level, &v.to_string()])
                    .map_err(|e| err(e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn write_ticker_scores_csv(path: &Path, scores: &[TickerDayScore]) -> Result<(), MetricsError> {
    let err = |message: String| MetricsError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    for s in scores {
        w.serialize(s).map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}
