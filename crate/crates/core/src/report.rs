//! Final experiment summary: the volatility table, the repetition table and
//! enough provenance to tell which response set produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{write_volatility_csv, VolatilityReport, VolatilityRow};
use crate::strategy::{write_table2_csv, RepetitionRow};
use crate::util::format_temperature;

pub const SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";
pub const VOLATILITY_FILE: &str = "fig1_volatility.csv";
pub const STRATEGY_FILE: &str = "table2_strategy.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("volatility report was computed from cache {volatility} but strategy stats from {strategy}; rerun the stale stage")]
    DigestMismatch {
        volatility: String,
        strategy: String,
    },
    #[error("{path}: {message}")]
    Write { path: String, message: String },
}

/// Repetition statistics tagged with the response set they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub cache_digest: String,
    pub rows: Vec<RepetitionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub model: String,
    pub cache_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub failed_requests: usize,
    pub coverage_issues: usize,
    pub dropped_positions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Partial,
}

/// Everything about the run that is not a computed number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    /// Snapshot of the configuration as it was resolved for this experiment.
    pub config: serde_json::Value,
    pub temperatures: Vec<f64>,
    pub provider: String,
    pub model: String,
    pub failures: FailureCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub status: Status,
    /// Configured temperatures missing from either table.
    pub incomplete_temperatures: Vec<f64>,
    pub provenance: Provenance,
    pub conventions: Vec<String>,
    pub config: serde_json::Value,
    pub volatility: Vec<VolatilityRow>,
    pub strategy: Vec<RepetitionRow>,
    pub failures: FailureCounts,
}

fn conventions() -> Vec<String> {
    vec![
        "lexical volatility: mean over run pairs of D/L_i + D/L_j, character Levenshtein distance".into(),
        "semantic range: max - min across runs, averaged over headlines (feed) or ticker-days (ticker)".into(),
        "returns: close-to-close from formation date to next trading date, no costs".into(),
        "sharpe: zero risk-free rate, population std, sqrt(252) annualization".into(),
        "dispersion: sample (n-1) std across runs".into(),
    ]
}

pub fn build_summary(
    volatility: &VolatilityReport,
    strategy: &StrategyStats,
    ctx: &RunContext,
) -> Result<ExperimentSummary, ReportError> {
    if volatility.cache_digest != strategy.cache_digest {
        return Err(ReportError::DigestMismatch {
            volatility: volatility.cache_digest.clone(),
            strategy: strategy.cache_digest.clone(),
        });
    }
    let has_volatility = |t: &str| {
        volatility.rows.iter().any(|r| {
            format_temperature(r.temperature) == t
                && (r.lexical_mean.is_some()
                    || r.feed_range_mean.is_some()
                    || r.ticker_range_mean.is_some())
        })
    };
    let has_strategy = |t: &str| {
        strategy
            .rows
            .iter()
            .any(|r| format_temperature(r.temperature) == t)
    };
    let incomplete: Vec<f64> = ctx
        .temperatures
        .iter()
        .copied()
        .filter(|t| {
            let key = format_temperature(*t);
            !(has_volatility(&key) && has_strategy(&key))
        })
        .collect();
    let status = if incomplete.is_empty() {
        Status::Complete
    } else {
        Status::Partial
    };
    Ok(ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        status,
        incomplete_temperatures: incomplete,
        provenance: Provenance {
            provider: ctx.provider.clone(),
            model: ctx.model.clone(),
            cache_digest: volatility.cache_digest.clone(),
        },
        conventions: conventions(),
        config: ctx.config.clone(),
        volatility: volatility.rows.clone(),
        strategy: strategy.rows.clone(),
        failures: ctx.failures.clone(),
    })
}

/// Writes `summary.json`, `fig1_volatility.csv` and `table2_strategy.csv` into `out_dir`.
pub fn emit_summary(
    volatility: &VolatilityReport,
    strategy: &StrategyStats,
    ctx: &RunContext,
    out_dir: &Path,
) -> Result<ExperimentSummary, ReportError> {
    let summary = build_summary(volatility, strategy, ctx)?;
    let write_err = |path: &Path, e: &dyn std::fmt::Display| ReportError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| write_err(out_dir, &e))?;

    let path = out_dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| write_err(&path, &e))?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| write_err(&path, &e))?;

    let path = out_dir.join(VOLATILITY_FILE);
    write_volatility_csv(&path, &summary.volatility).map_err(|e| write_err(&path, &e))?;

    let path = out_dir.join(STRATEGY_FILE);
    write_table2_csv(&path, &summary.strategy).map_err(|e| write_err(&path, &e))?;

    if summary.status == Status::Partial {
        log::warn!(
            "summary is partial; incomplete temperatures: {:?}",
            summary.incomplete_temperatures
        );
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol_row(t: f64) -> VolatilityRow {
        VolatilityRow {
            temperature: t,
            lexical_mean: Some(0.1 * t + 0.01),
            feed_range_mean: Some(0.2),
            ticker_range_mean: Some(1.0 / 3.0),
            headlines: 10,
            ticker_days: 4,
        }
    }

    fn strat_row(t: f64) -> RepetitionRow {
        RepetitionRow {
            temperature: t,
            runs: 3,
            return_mean: 0.0851,
            return_std: 0.0025,
            sharpe_mean: 1.41,
            sharpe_std: 0.04,
            single_run: false,
        }
    }

    fn ctx(temps: &[f64]) -> RunContext {
        RunContext {
            config: serde_json::json!({"seed": 7, "run": {"repetitions": 3}}),
            temperatures: temps.to_vec(),
            provider: "synthetic".into(),
            model: "toy".into(),
            failures: FailureCounts::default(),
        }
    }

    fn inputs(temps: &[f64]) -> (VolatilityReport, StrategyStats) {
        (
            VolatilityReport {
                cache_digest: "abc".into(),
                rows: temps.iter().map(|t| vol_row(*t)).collect(),
            },
            StrategyStats {
                cache_digest: "abc".into(),
                rows: temps.iter().map(|t| strat_row(*t)).collect(),
            },
        )
    }

    #[test]
    fn complete_grid() {
        let temps = [0.0, 0.5, 1.0];
        let (v, s) = inputs(&temps);
        let summary = build_summary(&v, &s, &ctx(&temps)).unwrap();
        assert_eq!(summary.status, Status::Complete);
        assert_eq!(summary.volatility.len(), 3);
        assert_eq!(summary.strategy.len(), 3);
    }

    #[test]
    fn mismatched_digest_is_rejected() {
        let (v, mut s) = inputs(&[0.0]);
        s.cache_digest = "def".into();
        assert!(matches!(
            build_summary(&v, &s, &ctx(&[0.0])),
            Err(ReportError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn empty_strategy_is_partial() {
        let (v, mut s) = inputs(&[0.0, 1.0]);
        s.rows.clear();
        let summary = build_summary(&v, &s, &ctx(&[0.0, 1.0])).unwrap();
        assert_eq!(summary.status, Status::Partial);
        assert_eq!(summary.incomplete_temperatures, vec![0.0, 1.0]);
    }

    #[test]
    fn emission_is_byte_stable_and_round_trips() {
        let temps = [0.0, 0.25];
        let (v, s) = inputs(&temps);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let summary = emit_summary(&v, &s, &ctx(&temps), &a).unwrap();
        emit_summary(&v, &s, &ctx(&temps), &b).unwrap();
        for f in [SUMMARY_FILE, VOLATILITY_FILE, STRATEGY_FILE] {
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(b.join(f)).unwrap(),
                "{f}"
            );
        }
        let text = std::fs::read_to_string(a.join(SUMMARY_FILE)).unwrap();
        let back: ExperimentSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, summary);
    }
}
