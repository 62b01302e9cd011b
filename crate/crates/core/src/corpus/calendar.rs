use std::fs;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, TimeZone, Weekday};
use chrono_tz::Tz;
use thiserror::Error;

/// Default end-of-day cutoff: news at or after this local time is not actionable the same day.
pub const DEFAULT_CUTOFF: NaiveTime = match NaiveTime::from_hms_opt(15, 0, 0) {
    Some(t) => t,
    None => panic!("15:00 is a valid time"),
};

pub const DEFAULT_TIMEZONE: Tz = chrono_tz::America::New_York;

#[derive(Debug, Error)]
pub enum CalendarError {
    #[error("trading calendar is empty")]
    Empty,
    #[error("trading dates must be strictly increasing: {prev} is followed by {next}")]
    NotIncreasing { prev: NaiveDate, next: NaiveDate },
    #[error("{timestamp} falls outside the trading calendar ({first} .. {last})")]
    OutOfRange {
        timestamp: String,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("{path}: line {line}: invalid date {value:?}")]
    BadDate {
        path: String,
        line: usize,
        value: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Ordered trading dates plus the exchange-local cutoff used to map news onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
    cutoff: NaiveTime,
    timezone: Tz,
}

impl TradingCalendar {
    pub fn new(
        dates: Vec<NaiveDate>,
        cutoff: NaiveTime,
        timezone: Tz,
    ) -> Result<Self, CalendarError> {
        if dates.is_empty() {
            return Err(CalendarError::Empty);
        }
        for pair in dates.windows(2) {
            if pair[0] >= pair[1] {
                return Err(CalendarError::NotIncreasing {
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        Ok(Self {
            dates,
            cutoff,
            timezone,
        })
    }

    /// Every Monday..Friday in `[start, end]`. Used when no calendar file is supplied.
    pub fn weekdays(
        start: NaiveDate,
        end: NaiveDate,
        cutoff: NaiveTime,
        timezone: Tz,
    ) -> Result<Self, CalendarError> {
        let dates = start
            .iter_days()
            .take_while(|d| *d <= end)
            .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
            .collect();
        Self::new(dates, cutoff, timezone)
    }

    /// Reads one ISO date per line. Blank lines and a leading `date` header are skipped.
    pub fn from_csv(path: &Path, cutoff: NaiveTime, timezone: Tz) -> Result<Self, CalendarError> {
        let display = path.display().to_string();
        let body = fs::read_to_string(path).map_err(|source| CalendarError::Io {
            path: display.clone(),
            source,
        })?;
        let mut dates = Vec::new();
        for (i, line) in body.lines().enumerate() {
            let value = line.trim();
            if value.is_empty() || (i == 0 && value.eq_ignore_ascii_case("date")) {
                continue;
            }
            let date = NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| {
                CalendarError::BadDate {
                    path: display.clone(),
                    line: i + 1,
                    value: value.to_string(),
                }
            })?;
            dates.push(date);
        }
        Self::new(dates, cutoff, timezone)
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::from("date\n");
        for d in &self.dates {
            out.push_str(&d.format("%Y-%m-%d").to_string());
            out.push('\n');
        }
        fs::write(path, out)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn cutoff(&self) -> NaiveTime {
        self.cutoff
    }

    pub fn timezone(&self) -> Tz {
        self.timezone
    }

    pub fn first(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn last(&self) -> NaiveDate {
        self.dates[self.dates.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.index_of(date).is_some()
    }

    /// First trading date strictly after `date`.
    pub fn next_after(&self, date: NaiveDate) -> Option<NaiveDate> {
        let idx = self.dates.partition_point(|d| *d <= date);
        self.dates.get(idx).copied()
    }

    /// Maps a publication timestamp to its next actionable trading date.
    ///
    /// The timestamp is converted to the exchange timezone first. A headline
    /// published strictly before the cutoff on a trading day is effective
    /// that day; anything at or after the cutoff, or on a non-trading day,
    /// rolls to the next trading date.
    pub fn effective_date<Z: TimeZone>(
        &self,
        published_at: &DateTime<Z>,
    ) -> Result<NaiveDate, CalendarError> {
        let local = published_at.with_timezone(&self.timezone);
        let date = local.date_naive();
        let out_of_range = || CalendarError::OutOfRange {
            timestamp: local.to_rfc3339(),
            first: self.first(),
            last: self.last(),
        };
        if date < self.first() {
            return Err(out_of_range());
        }
        if self.contains(date) && local.time() < self.cutoff {
            return Ok(date);
        }
        self.next_after(date).ok_or_else(out_of_range)
    }
}
