//! Sentiment-deviation long-short strategy and its backtest.
//!
//! Each run's ticker-day scores are compared against a pooled rolling
//! baseline: the mean of every ticker-day score over the preceding
//! `lookback` trading dates. Tickers above the baseline are bought and
//! tickers below it are sold, equal-weight within each side. Positions
//! formed on date `d` earn the close-to-close return from `d` to the next
//! trading date.

mod backtest;
mod signal;
mod stats;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use backtest::{
    backtest_runs, run_backtest, write_daily_returns_csv, write_summary_csv, BacktestResult,
    BacktestWindow, TRADING_DAYS_PER_YEAR,
};
pub use signal::{build_positions, deviation_signal, positions_by_date, Deviations};
pub use stats::{
    format_mean_std, repetition_stats, write_stats_csv, write_table2_csv, RepetitionRow,
};

/// Trading days in one month of lookback.
pub const DEFAULT_LOOKBACK: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub lookback: usize,
    pub long_gross: f64,
    pub short_gross: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            lookback: DEFAULT_LOOKBACK,
            long_gross: 0.5,
            short_gross: 0.5,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lookback == 0 {
            return Err("lookback must be at least 1".into());
        }
        if !(self.long_gross >= 0.0 && self.short_gross >= 0.0) {
            return Err("gross exposures must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub ticker: String,
    pub date: NaiveDate,
    /// Signed fraction of portfolio value.
    pub weight: f64,
}
