//! Synthetic study inputs: a headline feed with planted labels, a trading
//! calendar and closes whose next-day drift follows the planted sentiment.
//!
//! Used by the `demo` command and the acceptance suite. Nothing here is
//! meant to look like real market data.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{
    headline_id, normalize_text, PriceTable, TradingCalendar, DEFAULT_CUTOFF, DEFAULT_TIMEZONE,
};
use crate::parser::Label;
use crate::util::sha256_hex;

const POSITIVE: [&str; 6] = [
    "{T} beats quarterly earnings estimates",
    "{T} raises full-year guidance",
    "{T} wins major government contract",
    "Analysts upgrade {T} to buy",
    "{T} announces record buyback",
    "{T} shares jump on strong demand",
];
const NEGATIVE: [&str; 6] = [
    "{T} misses revenue forecasts",
    "{T} cuts outlook amid weak demand",
    "Regulators open probe into {T}",
    "{T} recalls flagship product",
    "Analysts downgrade {T} to sell",
    "{T} shares slide after CEO exit",
];
const NEUTRAL: [&str; 6] = [
    "{T} to present at industry conference",
    "{T} schedules annual shareholder meeting",
    "{T} names new board member",
    "{T} files routine quarterly report",
    "{T} confirms dividend date",
    "{T} opens regional office",
];

#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub tickers: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub headlines_per_day: usize,
    /// Next-day return added per unit of mean planted label.
    pub drift: f64,
    /// Daily idiosyncratic volatility.
    pub volatility: f64,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            tickers: ["AAPL", "MSFT", "AMZN", "NVDA", "JPM", "XOM", "PFE", "KO"]
                .map(String::from)
                .to_vec(),
            start: NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2022, 6, 30).expect("valid date"),
            headlines_per_day: 8,
            drift: 0.004,
            volatility: 0.01,
            seed: 7,
        }
    }
}

/// One raw feed record, in the ingest input schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoHeadline {
    pub text: String,
    pub tickers: Vec<String>,
    pub published_at: chrono::DateTime<FixedOffset>,
    pub source: String,
    pub prominence: f64,
}

impl DemoHeadline {
    pub fn id(&self) -> String {
        headline_id(&normalize_text(&self.text), &self.published_at)
    }
}

#[derive(Debug, Clone)]
pub struct DemoData {
    pub calendar: TradingCalendar,
    pub headlines: Vec<DemoHeadline>,
    pub planted: BTreeMap<String, Label>,
    pub prices: PriceTable,
}

fn label_from_u(u: f64) -> Label {
    if u < 0.4 {
        Label::Positive
    } else if u < 0.7 {
        Label::Neutral
    } else {
        Label::Negative
    }
}

/// Label for a headline with no planted file entry: a fixed function of the seed and id.
pub fn derived_label(seed: u64, headline_id: &str) -> Label {
    let digest = sha256_hex(format!("{seed}\u{1f}{headline_id}").as_bytes());
    let bits = u64::from_str_radix(&digest[..13], 16).expect("hex digest");
    label_from_u(bits as f64 / (1u64 << 52) as f64)
}

/// Builds a full demo corpus. Deterministic in `spec`.
pub fn generate(spec: &DemoSpec) -> DemoData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let calendar =
        TradingCalendar::weekdays(spec.start, spec.end, DEFAULT_CUTOFF, DEFAULT_TIMEZONE)
            .expect("demo range contains weekdays");

    let mut headlines = Vec::new();
    let mut planted = BTreeMap::new();
    // (ticker, effective date) -> planted label values
    let mut signal: HashMap<(String, NaiveDate), Vec<f64>> = HashMap::new();
    let mut day = spec.start;
    while day <= spec.end {
        let count = if calendar.contains(day) {
            spec.headlines_per_day
        } else {
            spec.headlines_per_day / 4
        };
        for _ in 0..count {
            let label = label_from_u(rng.gen());
            let bank = match label {
                Label::Positive => &POSITIVE,
                Label::Neutral => &NEUTRAL,
                Label::Negative => &NEGATIVE,
            };
            let ticker = spec
                .tickers
                .choose(&mut rng)
                .expect("at least one ticker")
                .clone();
            let text = format!(
                "{}, {}",
                bank.choose(&mut rng)
                    .expect("non-empty bank")
                    .replace("{T}", &ticker),
                day.format("%b %-d")
            );
            let minutes = rng.gen_range(6 * 60..21 * 60);
            let local = day.and_time(NaiveTime::MIN) + Duration::minutes(minutes);
            let Some(at) = DEFAULT_TIMEZONE.from_local_datetime(&local).single() else {
                continue;
            };
            let published_at = at.fixed_offset();
            let Ok(effective) = calendar.effective_date(&published_at) else {
                continue;
            };
            let h = DemoHeadline {
                text,
                tickers: vec![ticker.clone()],
                published_at,
                source: "demo-wire".into(),
                prominence: (rng.gen::<f64>() * 100.0).round() / 100.0,
            };
            let id = h.id();
            if planted.insert(id, label).is_some() {
                continue;
            }
            signal
                .entry((ticker, effective))
                .or_default()
                .push(label.as_f64());
            headlines.push(h);
        }
        day += Duration::days(1);
    }

    let mut prices = PriceTable::new();
    for ticker in &spec.tickers {
        let mut close = 50.0 + rng.gen::<f64>() * 150.0;
        for (i, d) in calendar.dates().iter().enumerate() {
            prices.insert(ticker, *d, (close * 1e4).round() / 1e4);
            if i + 1 == calendar.len() {
                break;
            }
            let tilt = signal
                .get(&(ticker.clone(), *d))
                .map_or(0.0, |v| v.iter().sum::<f64>() / v.len() as f64);
            // Uniform shock with standard deviation `volatility`.
            let shock = (rng.gen::<f64>() * 2.0 - 1.0) * 3f64.sqrt() * spec.volatility;
            close *= 1.0 + spec.drift * tilt + shock;
        }
    }
    DemoData {
        calendar,
        headlines,
        planted,
        prices,
    }
}

pub fn write_planted_csv(path: &Path, planted: &BTreeMap<String, Label>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    w.write_record(["headline_id", "label"])
        .map_err(std::io::Error::other)?;
    for (id, label) in planted {
        w.write_record([id.as_str(), &label.value().to_string()])
            .map_err(std::io::Error::other)?;
    }
    w.flush()
}

pub fn read_planted_csv(path: &Path) -> std::io::Result<HashMap<String, Label>> {
    let mut r = csv::Reader::from_path(path).map_err(std::io::Error::other)?;
    let mut out = HashMap::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(std::io::Error::other)?;
        let bad = || {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!(
                    "{}: row {}: expected headline_id,label",
                    path.display(),
                    row + 2
                ),
            )
        };
        let id = rec.get(0).ok_or_else(bad)?;
        let value: i8 = rec
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(bad)?;
        let label = Label::try_from(value).map_err(|_| bad())?;
        out.insert(id.to_string(), label);
    }
    Ok(out)
}

/// Files written by [`write_demo`].
#[derive(Debug, Clone)]
pub struct DemoPaths {
    pub headlines: PathBuf,
    pub prices: PathBuf,
    pub calendar: PathBuf,
    pub planted: PathBuf,
}

pub fn write_demo(dir: &Path, data: &DemoData) -> std::io::Result<DemoPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = DemoPaths {
        headlines: dir.join("headlines.jsonl"),
        prices: dir.join("prices.csv"),
        calendar: dir.join("calendar.csv"),
        planted: dir.join("planted.csv"),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(&paths.headlines)?);
    for h in &data.headlines {
        serde_json::to_writer(&mut f, h)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    data.prices
        .write_csv(&paths.prices)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    data.calendar.write_csv(&paths.calendar)?;
    write_planted_csv(&paths.planted, &data.planted)?;
    Ok(paths)
}
