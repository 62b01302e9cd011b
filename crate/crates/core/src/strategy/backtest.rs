use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{deviation_signal, positions_by_date, Position, SignalConfig};
use crate::corpus::{PriceTable, TradingCalendar};
use crate::metrics::TickerDayScore;
use crate::util::format_temperature;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Inclusive range of formation dates that make up the return series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktestWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl BacktestWindow {
    /// Everything from the first full lookback window to the last date with a successor.
    pub fn after_warmup(calendar: &TradingCalendar, lookback: usize) -> Self {
        let dates = calendar.dates();
        let last = dates.len().saturating_sub(2);
        Self {
            start: dates[lookback.min(last)],
            end: dates[last],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub temperature: f64,
    pub run_index: usize,
    /// Keyed by formation date; the return is realized at the next trading date's close.
    pub daily_returns: Vec<(NaiveDate, f64)>,
    pub total_return: f64,
    /// Annualized, zero risk-free rate.
    pub sharpe: f64,
    /// The return series had zero dispersion (or was empty); `sharpe` is reported as 0.
    pub sharpe_degenerate: bool,
    /// Positions zeroed because a close was missing.
    pub dropped_positions: usize,
}

impl BacktestResult {
    pub fn from_returns(
        temperature: f64,
        run_index: usize,
        daily_returns: Vec<(NaiveDate, f64)>,
    ) -> Self {
        let total_return = daily_returns
            .iter()
            .fold(1.0, |acc, (_, r)| acc * (1.0 + r))
            - 1.0;
        let (sharpe, sharpe_degenerate) = sharpe_ratio(daily_returns.iter().map(|(_, r)| *r));
        Self {
            temperature,
            run_index,
            daily_returns,
            total_return,
            sharpe,
            sharpe_degenerate,
            dropped_positions: 0,
        }
    }
}

/// `mean / population std * sqrt(252)`. Returns `(0, true)` when every return is identical.
fn sharpe_ratio(returns: impl Iterator<Item = f64> + Clone) -> (f64, bool) {
    let n = returns.clone().count();
    if n == 0 {
        return (0.0, true);
    }
    let first = returns.clone().next().expect("non-empty");
    if returns.clone().all(|r| r == first) {
        return (0.0, true);
    }
    let mean = returns.clone().sum::<f64>() / n as f64;
    let var = returns.map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return (0.0, true);
    }
    (mean / std * TRADING_DAYS_PER_YEAR.sqrt(), false)
}

/// Daily close-to-close backtest.
///
/// For each formation date `d` in the window, `r(d) = sum_i w_i(d) * (close_i(next(d)) / close_i(d) - 1)`.
/// A position whose ticker lacks either close is dropped for that day.
pub fn run_backtest(
    positions: &BTreeMap<NaiveDate, Vec<Position>>,
    prices: &PriceTable,
    calendar: &TradingCalendar,
    window: BacktestWindow,
    temperature: f64,
    run_index: usize,
) -> BacktestResult {
    let mut dropped = 0;
    let mut daily = Vec::new();
    for &d in calendar.dates() {
        if d < window.start || d > window.end {
            continue;
        }
        let Some(next) = calendar.next_after(d) else {
            break;
        };
        let mut r = 0.0;
        for p in positions.get(&d).map(Vec::as_slice).unwrap_or_default() {
            match (prices.close(&p.ticker, d), prices.close(&p.ticker, next)) {
                (Some(c0), Some(c1)) => r += p.weight * (c1 / c0 - 1.0),
                _ => {
                    log::debug!("no close for {} around {d}; position dropped", p.ticker);
                    dropped += 1;
                }
            }
        }
        daily.push((d, r));
    }
    let mut result = BacktestResult::from_returns(temperature, run_index, daily);
    result.dropped_positions = dropped;
    result
}

/// Backtests every (temperature, run) present in `scores`, in parallel.
/// Results are ordered by temperature, then run.
pub fn backtest_runs(
    scores: &[TickerDayScore],
    prices: &PriceTable,
    calendar: &TradingCalendar,
    config: &SignalConfig,
    window: BacktestWindow,
) -> Vec<BacktestResult> {
    let mut groups: BTreeMap<(String, usize), (f64, Vec<TickerDayScore>)> = BTreeMap::new();
    for s in scores {
        groups
            .entry((format_temperature(s.temperature), s.run_index))
            .or_insert_with(|| (s.temperature, Vec::new()))
            .1
            .push(s.clone());
    }
    let mut results: Vec<BacktestResult> = groups
        .into_par_iter()
        .map(|((_, run), (t, run_scores))| {
            let devs = deviation_signal(&run_scores, calendar, config);
            let positions = positions_by_date(&devs, config);
            let result = run_backtest(&positions, prices, calendar, window, t, run);
            if result.dropped_positions > 0 {
                log::warn!(
                    "t={} run={}: {} position(s) dropped for missing prices",
                    format_temperature(t),
                    run,
                    result.dropped_positions
                );
            }
            result
        })
        .collect();
    results.sort_by(|a, b| {
        a.temperature
            .total_cmp(&b.temperature)
            .then(a.run_index.cmp(&b.run_index))
    });
    results
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::other(format!("{}: {e}", path.display()))
}

/// `date,daily_return,cum_return`
pub fn write_daily_returns_csv(path: &Path, result: &BacktestResult) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["date", "daily_return", "cum_return"])
        .map_err(|e| csv_err(path, e))?;
    let mut growth = 1.0;
    for (d, r) in &result.daily_returns {
        growth *= 1.0 + r;
        w.write_record([d.to_string(), r.to_string(), (growth - 1.0).to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()
}

/// `temperature,run,total_return,sharpe`
pub fn write_summary_csv(path: &Path, results: &[BacktestResult]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["temperature", "run", "total_return", "sharpe"])
        .map_err(|e| csv_err(path, e))?;
    for r in results {
        w.write_record([
            format_temperature(r.temperature),
            r.run_index.to_string(),
            r.total_return.to_string(),
            r.sharpe.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DEFAULT_CUTOFF, DEFAULT_TIMEZONE};

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn pos(t: &str, date: NaiveDate, w: f64) -> Position {
        Position {
            ticker: t.into(),
            date,
            weight: w,
        }
    }

    #[test]
    fn one_day_long_short() {
        let cal = TradingCalendar::new(
            vec![d("2022-01-03"), d("2022-01-04")],
            DEFAULT_CUTOFF,
            DEFAULT_TIMEZONE,
        )
        .unwrap();
        let mut prices = PriceTable::new();
        prices.insert("A", d("2022-01-03"), 100.0);
        prices.insert("A", d("2022-01-04"), 102.0);
        prices.insert("B", d("2022-01-03"), 50.0);
        prices.insert("B", d("2022-01-04"), 49.0);
        let positions = BTreeMap::from([(
            d("2022-01-03"),
            vec![
                pos("A", d("2022-01-03"), 0.5),
                pos("B", d("2022-01-03"), -0.5),
            ],
        )]);
        let window = BacktestWindow::after_warmup(&cal, 0);
        let r = run_backtest(&positions, &prices, &cal, window, 0.0, 0);
        assert_eq!(r.daily_returns.len(), 1);
        assert!((r.daily_returns[0].1 - 0.02).abs() < 1e-12);
        assert!((r.total_return - 0.02).abs() < 1e-12);
    }

    #[test]
    fn flat_book_is_flagged() {
        let cal = TradingCalendar::weekdays(
            d("2022-01-03"),
            d("2022-01-31"),
            DEFAULT_CUTOFF,
            DEFAULT_TIMEZONE,
        )
        .unwrap();
        let r = run_backtest(
            &BTreeMap::new(),
            &PriceTable::new(),
            &cal,
            BacktestWindow::after_warmup(&cal, 0),
            0.0,
            0,
        );
        assert_eq!(r.total_return, 0.0);
        assert_eq!(r.sharpe, 0.0);
        assert!(r.sharpe_degenerate);
    }

    #[test]
    fn constant_return_compounds() {
        let start = d("2022-01-03");
        let returns: Vec<_> = (0..252)
            .map(|i| (start + chrono::Duration::days(i), 0.001))
            .collect();
        let r = BacktestResult::from_returns(0.0, 0, returns);
        let expected = 1.001f64.powi(252) - 1.0;
        assert!((r.total_return - expected).abs() < 1e-12);
        assert!((r.total_return - 0.28643404437615).abs() < 1e-12);
        assert!(r.sharpe_degenerate);
        assert_eq!(r.sharpe, 0.0);
    }

    #[test]
    fn missing_price_drops_position() {
        let cal = TradingCalendar::new(
            vec![d("2022-01-03"), d("2022-01-04")],
            DEFAULT_CUTOFF,
            DEFAULT_TIMEZONE,
        )
        .unwrap();
        let mut prices = PriceTable::new();
        prices.insert("A", d("2022-01-03"), 100.0);
        prices.insert("A", d("2022-01-04"), 110.0);
        prices.insert("B", d("2022-01-03"), 50.0);
        let positions = BTreeMap::from([(
            d("2022-01-03"),
            vec![
                pos("A", d("2022-01-03"), 0.5),
                pos("B", d("2022-01-03"), -0.5),
            ],
        )]);
        let r = run_backtest(
            &positions,
            &prices,
            &cal,
            BacktestWindow::after_warmup(&cal, 0),
            0.0,
            0,
        );
        assert_eq!(r.dropped_positions, 1);
        assert!((r.daily_returns[0].1 - 0.05).abs() < 1e-12);
    }

    #[test]
    fn sharpe_uses_population_std() {
        let start = d("2022-01-03");
        let r = BacktestResult::from_returns(
            0.0,
            0,
            vec![(start, 0.01), (start, -0.01), (start, 0.02), (start, 0.0)],
        );
        // mean 0.005, population std sqrt(0.000125)
        let expected = 0.005 / 0.000125f64.sqrt() * 252f64.sqrt();
        assert!((r.sharpe - expected).abs() < 1e-12);
        assert!(!r.sharpe_degenerate);
    }

    #[test]
    fn warmup_window() {
        let cal = TradingCalendar::weekdays(
            d("2022-01-03"),
            d("2022-03-31"),
            DEFAULT_CUTOFF,
            DEFAULT_TIMEZONE,
        )
        .unwrap();
        let w = BacktestWindow::after_warmup(&cal, 21);
        assert_eq!(w.start, cal.dates()[21]);
        assert_eq!(w.end, cal.dates()[cal.len() - 2]);
    }
}
