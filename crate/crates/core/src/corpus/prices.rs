use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{CorpusError, TradingCalendar};

/// Adjusted daily closes keyed by ticker, then date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTable {
    closes: BTreeMap<String, BTreeMap<NaiveDate, f64>>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a close, returning `false` if the (ticker, date) pair already existed.
    pub fn insert(&mut self, ticker: &str, date: NaiveDate, close: f64) -> bool {
        self.closes
            .entry(ticker.to_string())
            .or_default()
            .insert(date, close)
            .is_none()
    }

    pub fn close(&self, ticker: &str, date: NaiveDate) -> Option<f64> {
        self.closes.get(ticker)?.get(&date).copied()
    }

    pub fn len(&self) -> usize {
        self.closes.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.closes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NaiveDate, f64)> {
        self.closes
            .iter()
            .flat_map(|(t, m)| m.iter().map(move |(d, c)| (t.as_str(), *d, *c)))
    }

    /// Earliest and latest dates present in the table.
    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let first = self.closes.values().filter_map(|m| m.keys().next()).min()?;
        let last = self
            .closes
            .values()
            .filter_map(|m| m.keys().next_back())
            .max()?;
        Some((*first, *last))
    }

    /// Every bar must fall on a trading date.
    pub fn check_calendar(&self, calendar: &TradingCalendar) -> Result<(), CorpusError> {
        match self.iter().find(|(_, d, _)| !calendar.contains(*d)) {
            Some((ticker, date, _)) => Err(CorpusError::OffCalendarPrice {
                ticker: ticker.to_string(),
                date,
            }),
            None => Ok(()),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |e: csv::Error| CorpusError::Io {
            path: path.display().to_string(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io_err)?;
        w.write_record(["ticker", "date", "close"])
            .map_err(io_err)?;
        for (t, d, c) in self.iter() {
            w.write_record([t.to_string(), d.to_string(), c.to_string()])
                .map_err(io_err)?;
        }
        w.flush().map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    ticker: String,
    date: NaiveDate,
    close: f64,
}

/// Loads a `ticker,date,close` CSV. Rows are numbered as file lines (header is line 1).
pub fn ingest_prices(path: &Path) -> Result<PriceTable, CorpusError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CorpusError::Io {
            path: display.clone(),
            source: e.into(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::InvalidPriceRow {
            path: display.clone(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut table = PriceTable::new();
    let mut record = csv::StringRecord::new();
    loop {
        let row = reader.position().line() as usize;
        let more = reader
            .read_record(&mut record)
            .map_err(|e| CorpusError::InvalidPriceRow {
                path: display.clone(),
                row,
                message: e.to_string(),
            })?;
        if !more {
            break;
        }
        let row = record.position().map_or(row, |p| p.line() as usize);
        let bar: PriceRow =
            record
                .deserialize(Some(&headers))
                .map_err(|e| CorpusError::InvalidPriceRow {
                    path: display.clone(),
                    row,
                    message: e.to_string(),
                })?;
        if !(bar.close.is_finite() && bar.close > 0.0) {
            return Err(CorpusError::InvalidPriceRow {
                path: display,
                row,
                message: format!("close must be positive, got {}", bar.close),
            });
        }
        let ticker = bar.ticker.trim().to_ascii_uppercase();
        if !table.insert(&ticker, bar.date, bar.close) {
            return Err(CorpusError::DuplicatePrice {
                path: display,
                row,
                ticker,
                date: bar.date,
            });
        }
    }
    Ok(table)
}
