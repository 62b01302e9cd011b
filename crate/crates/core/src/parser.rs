//! Rule-based sentiment extraction from raw model text.
//!
//! Matching is case-insensitive over alphabetic tokens. A sentiment word is
//! negated when the token `not` occurs at most three tokens before it, so
//! "not negative", "not very negative" and "not at all negative" are all
//! negations while "not sure, but negative" is not. Precedence:
//!
//! 1. a negated "negative" gives +1
//! 2. a negated "positive" gives -1
//! 3. a bare "positive" gives +1, a bare "negative" gives -1
//! 4. anything else, including both bare words together, gives 0
//!
//! The confidence is the first number in `[0, 1]` after the deciding token
//! (or after "neutral" for a 0 label).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::LlmResponse;
use crate::prompt::{PromptJob, PromptStyle};

const NEGATION_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Negative,
    Neutral,
    Positive,
}

impl Label {
    pub fn value(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Neutral => 0,
            Label::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.value()
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Label::Negative),
            0 => Ok(Label::Neutral),
            1 => Ok(Label::Positive),
            other => Err(format!("label must be -1, 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedSentiment {
    pub headline_id: String,
    pub temperature: f64,
    pub run_index: usize,
    pub label: Label,
    pub confidence: Option<f64>,
    pub raw_fragment: String,
}

struct Token<'a> {
    word: &'a str,
    end: usize,
}

fn tokens(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphabetic(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token {
                    word: &text[s..i],
                    end: i,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token {
            word: &text[s..],
            end: text.len(),
        });
    }
    out
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?|\.\d+").expect("valid regex"))
}

fn confidence_after(text: &str, offset: usize) -> Option<f64> {
    number_re()
        .find_iter(&text[offset..])
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .find(|v| (0.0..=1.0).contains(v))
}

/// Classifies one response fragment. Never fails: unrecognized text is `(Neutral, None)`.
pub fn extract_label(fragment: &str) -> (Label, Option<f64>) {
    let toks = tokens(fragment);
    let is = |t: &Token<'_>, w: &str| t.word.eq_ignore_ascii_case(w);
    let negated = |idx: usize| {
        toks[idx.saturating_sub(NEGATION_WINDOW)..idx]
            .iter()
            .any(|t| is(t, "not"))
    };

    let (mut neg_negated, mut pos_negated, mut bare_pos, mut bare_neg, mut neutral) =
        (None, None, None, None, None);
    for (i, t) in toks.iter().enumerate() {
        if is(t, "negative") {
            if negated(i) {
                neg_negated.get_or_insert(i);
            } else {
                bare_neg.get_or_insert(i);
            }
        } else if is(t, "positive") {
            if negated(i) {
                pos_negated.get_or_insert(i);
            } else {
                bare_pos.get_or_insert(i);
            }
        } else if is(t, "neutral") {
            neutral.get_or_insert(i);
        }
    }

    let (label, anchor) = if let Some(i) = neg_negated {
        (Label::Positive, Some(i))
    } else if let Some(i) = pos_negated {
        (Label::Negative, Some(i))
    } else {
        match (bare_pos, bare_neg) {
            (Some(i), None) => (Label::Positive, Some(i)),
            (None, Some(i)) => (Label::Negative, Some(i)),
            (Some(_), Some(_)) => (Label::Neutral, None),
            (None, None) => (Label::Neutral, neutral),
        }
    };
    let confidence = anchor.and_then(|i| confidence_after(fragment, toks[i].end));
    (label, confidence)
}

fn index_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*[.):]\s*(.*?)\s*$").expect("valid regex"))
}

/// Fragments of a batch response aligned to the expected headline ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchSplit {
    /// One entry per expected id, in order. Missing indexes carry an empty fragment.
    pub fragments: Vec<(String, String)>,
    pub missing: Vec<usize>,
    pub duplicates: Vec<usize>,
    pub out_of_range: Vec<usize>,
}

impl BatchSplit {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.duplicates.is_empty() && self.out_of_range.is_empty()
    }
}

/// Splits a numbered response (`1. ...`, `1) ...`, `1: ...`) by index. First occurrence wins.
pub fn split_batch(raw_text: &str, expected: &[String]) -> BatchSplit {
    let mut found: Vec<Option<String>> = vec![None; expected.len()];
    let mut split = BatchSplit::default();
    for line in raw_text.lines() {
        let Some(caps) = index_line_re().captures(line) else {
            continue;
        };
        let idx = match caps[1].parse::<usize>() {
            Ok(n) if (1..=expected.len()).contains(&n) => n,
            Ok(n) => {
                split.out_of_range.push(n);
                continue;
            }
            Err(_) => continue,
        };
        let slot = &mut found[idx - 1];
        if slot.is_some() {
            log::debug!("duplicate batch index {idx}; keeping first occurrence");
            split.duplicates.push(idx);
        } else {
            *slot = Some(caps[2].to_string());
        }
    }
    split.fragments = expected
        .iter()
        .zip(found)
        .enumerate()
        .map(|(i, (id, frag))| {
            if frag.is_none() {
                split.missing.push(i + 1);
            }
            (id.clone(), frag.unwrap_or_default())
        })
        .collect();
    split
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("response {prompt_hash} does not match any prompt job")]
    UnknownPrompt { prompt_hash: String },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

/// Coverage problems found while splitting one batch response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageIssue {
    pub prompt_hash: String,
    pub temperature: f64,
    pub run_index: usize,
    pub missing: Vec<usize>,
    pub duplicates: Vec<usize>,
    pub out_of_range: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Parsed {
    pub sentiments: Vec<FeedSentiment>,
    pub coverage: Vec<CoverageIssue>,
}

/// Turns every response into per-headline sentiments, ordered by (headline, temperature, run).
pub fn parse_responses(
    jobs: &[PromptJob],
    responses: &[LlmResponse],
) -> Result<Parsed, ParseError> {
    // Distinct headlines can render to the same prompt; each job gets the shared response.
    let mut by_hash: HashMap<String, Vec<&PromptJob>> = HashMap::new();
    for j in jobs {
        by_hash.entry(j.prompt_hash()).or_default().push(j);
    }
    let mut parsed = Parsed::default();
    for r in responses {
        let matched = by_hash
            .get(&r.prompt_hash)
            .ok_or_else(|| ParseError::UnknownPrompt {
                prompt_hash: r.prompt_hash.clone(),
            })?;
        for job in matched {
            let fragments = match job.style {
                PromptStyle::Single => vec![(job.headline_ids[0].clone(), r.raw_text.clone())],
                PromptStyle::Batch => {
                    let split = split_batch(&r.raw_text, &job.headline_ids);
                    if !split.is_clean() {
                        parsed.coverage.push(CoverageIssue {
                            prompt_hash: r.prompt_hash.clone(),
                            temperature: r.temperature,
                            run_index: r.run_index,
                            missing: split.missing.clone(),
                            duplicates: split.duplicates.clone(),
                            out_of_range: split.out_of_range.clone(),
                        });
                    }
                    split.fragments
                }
            };
            for (headline_id, fragment) in fragments {
                let (label, confidence) = extract_label(&fragment);
                parsed.sentiments.push(FeedSentiment {
                    headline_id,
                    temperature: r.temperature,
                    run_index: r.run_index,
                    label,
                    confidence,
                    raw_fragment: fragment,
                });
            }
        }
    }
    parsed.sentiments.sort_by(|a, b| {
        a.headline_id
            .cmp(&b.headline_id)
            .then(a.temperature.total_cmp(&b.temperature))
            .then(a.run_index.cmp(&b.run_index))
    });
    Ok(parsed)
}

#[derive(Serialize, Deserialize)]
struct FeedRow {
    headline_id: String,
    temperature: f64,
    run: usize,
    label: i8,
    confidence: Option<f64>,
}

/// Writes `headline_id,temperature,run,label,confidence`; absent confidence is an empty cell.
pub fn write_feed_csv(path: &Path, sentiments: &[FeedSentiment]) -> Result<(), ParseError> {
    let err = |e: csv::Error| ParseError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for s in sentiments {
        w.serialize(FeedRow {
            headline_id: s.headline_id.clone(),
            temperature: s.temperature,
            run: s.run_index,
            label: s.label.value(),
            confidence: s.confidence,
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| ParseError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads the CSV back. Fragments are not part of the CSV and come back empty.
pub fn read_feed_csv(path: &Path) -> Result<Vec<FeedSentiment>, ParseError> {
    let err = |message: String| ParseError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    r.deserialize::<FeedRow>()
        .map(|row| {
            let row = row.map_err(|e| err(e.to_string()))?;
            Ok(FeedSentiment {
                headline_id: row.headline_id,
                temperature: row.temperature,
                run_index: row.run,
                label: Label::try_from(row.label).map_err(err)?,
                confidence: row.confidence,
                raw_fragment: String::new(),
            })
        })
        .collect()
}

/// Label counts per value, handy for log lines.
pub fn label_histogram(sentiments: &[FeedSentiment]) -> BTreeMap<i8, usize> {
    let mut h = BTreeMap::new();
    for s in sentiments {
        *h.entry(s.label.value()).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_examples() {
        assert_eq!(
            extract_label("POSITIVE (0.9)"),
            (Label::Positive, Some(0.9))
        );
        assert_eq!(
            extract_label("The sentiment is not negative here."),
            (Label::Positive, None)
        );
        assert_eq!(
            extract_label("I cannot determine the sentiment."),
            (Label::Neutral, None)
        );
        assert_eq!(
            extract_label("neutral (0.55)"),
            (Label::Neutral, Some(0.55))
        );
    }

    #[test]
    fn negation_window() {
        assert_eq!(extract_label("not at all negative").0, Label::Positive);
        assert_eq!(extract_label("not very positive").0, Label::Negative);
        assert_eq!(
            extract_label("not sure at all, negative").0,
            Label::Negative
        );
    }

    #[test]
    fn both_bare_is_ambiguous() {
        assert_eq!(
            extract_label("positive, neutral, or negative"),
            (Label::Neutral, None)
        );
    }

    #[test]
    fn confidence_must_be_unit_interval() {
        assert_eq!(extract_label("Positive (85)"), (Label::Positive, None));
        assert_eq!(
            extract_label("Negative 2 then 0.4"),
            (Label::Negative, Some(0.4))
        );
        // Numbers before the label token do not count.
        assert_eq!(extract_label("0.3 positive"), (Label::Positive, None));
    }

    #[test]
    fn split_direct() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let s = split_batch("1. positive (0.8)\n2. negative (0.7)", &ids);
        assert!(s.is_clean());
        assert_eq!(s.fragments[0], ("a".into(), "positive (0.8)".into()));
        assert_eq!(s.fragments[1], ("b".into(), "negative (0.7)".into()));
    }

    #[test]
    fn split_missing_indexes() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let s = split_batch("2. neutral", &ids);
        assert_eq!(s.missing, vec![1, 3]);
        assert_eq!(s.fragments[0].1, "");
        assert_eq!(extract_label(&s.fragments[0].1).0, Label::Neutral);
        assert_eq!(extract_label(&s.fragments[2].1).0, Label::Neutral);
    }

    #[test]
    fn split_duplicate_first_wins() {
        let ids = vec!["a".to_string()];
        let s = split_batch("1. positive\n1. negative\n7) positive\n1: neutral", &ids);
        assert_eq!(s.fragments[0].1, "positive");
        assert_eq!(s.duplicates, vec![1, 1]);
        assert_eq!(s.out_of_range, vec![7]);
    }

    #[test]
    fn split_accepts_paren_and_colon() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let s = split_batch("  1) Negative (0.6)\n2:Positive", &ids);
        assert_eq!(s.fragments[0].1, "Negative (0.6)");
        assert_eq!(s.fragments[1].1, "Positive");
    }

    #[test]
    fn feed_csv_round_trip() {
        let rows = vec![
            FeedSentiment {
                headline_id: "h1".into(),
                temperature: 0.25,
                run_index: 2,
                label: Label::Negative,
                confidence: Some(0.7),
                raw_fragment: String::new(),
            },
            FeedSentiment {
                headline_id: "h2".into(),
                temperature: 0.0,
                run_index: 0,
                label: Label::Neutral,
                confidence: None,
                raw_fragment: String::new(),
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_feed_csv(f.path(), &rows).unwrap();
        let body = std::fs::read_to_string(f.path()).unwrap();
        assert!(body.starts_with("headline_id,temperature,run,label,confidence\n"));
        assert!(body.contains("h2,0.0,0,0,\n"));
        assert_eq!(read_feed_csv(f.path()).unwrap(), rows);
    }

    fn response(job: &PromptJob, raw: &str) -> LlmResponse {
        LlmResponse {
            prompt_hash: job.prompt_hash(),
            temperature: 0.5,
            run_index: 1,
            raw_text: raw.into(),
            provider: "test".into(),
            model: "m".into(),
            created_at: chrono::DateTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn shared_prompt_feeds_every_headline() {
        let job = |id: &str| PromptJob {
            prompt_text: "same text".into(),
            headline_ids: vec![id.into()],
            style: PromptStyle::Single,
        };
        let jobs = vec![job("h1"), job("h2")];
        let parsed = parse_responses(&jobs, &[response(&jobs[0], "NEGATIVE (0.8)")]).unwrap();
        let ids: Vec<_> = parsed
            .sentiments
            .iter()
            .map(|s| s.headline_id.as_str())
            .collect();
        assert_eq!(ids, vec!["h1", "h2"]);
        assert!(parsed.sentiments.iter().all(|s| s.label == Label::Negative));
    }

    #[test]
    fn batch_coverage_is_reported() {
        let job = PromptJob {
            prompt_text: "batch".into(),
            headline_ids: vec!["a".into(), "b".into()],
            style: PromptStyle::Batch,
        };
        let parsed = parse_responses(
            std::slice::from_ref(&job),
            &[response(&job, "2. positive (0.6)")],
        )
        .unwrap();
        assert_eq!(parsed.sentiments.len(), 2);
        assert_eq!(parsed.coverage.len(), 1);
        assert_eq!(parsed.coverage[0].missing, vec![1]);
    }

    #[test]
    fn unknown_prompt_is_an_error() {
        let job = PromptJob {
            prompt_text: "x".into(),
            headline_ids: vec!["a".into()],
            style: PromptStyle::Single,
        };
        let mut r = response(&job, "positive");
        r.prompt_hash = "beef".into();
        assert!(matches!(
            parse_responses(&[job], &[r]),
            Err(ParseError::UnknownPrompt { .. })
        ));
    }
}
