use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::{Position, SignalConfig};
use crate::corpus::TradingCalendar;
use crate::metrics::TickerDayScore;

/// Date -> ticker -> score minus the pooled baseline.
pub type Deviations = BTreeMap<NaiveDate, BTreeMap<String, f64>>;

/// Deviation of each ticker-day score from the pooled mean of all ticker-day
/// scores over the `lookback` trading dates strictly before that day.
///
/// `scores` must come from a single (temperature, run). Dates whose lookback
/// window holds no scores are skipped.
pub fn deviation_signal(
    scores: &[TickerDayScore],
    calendar: &TradingCalendar,
    config: &SignalConfig,
) -> Deviations {
    let mut by_date: BTreeMap<NaiveDate, Vec<(&str, f64)>> = BTreeMap::new();
    for s in scores {
        by_date
            .entry(s.date)
            .or_default()
            .push((s.ticker.as_str(), s.score));
    }
    let dates = calendar.dates();
    let mut out = Deviations::new();
    for (date, today) in &by_date {
        let Some(idx) = calendar.index_of(*date) else {
            log::warn!("scores on non-trading date {date} ignored");
            continue;
        };
        let window = &dates[idx.saturating_sub(config.lookback)..idx];
        let (sum, n) = window
            .iter()
            .filter_map(|d| by_date.get(d))
            .flatten()
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        if n == 0 {
            continue;
        }
        let baseline = sum / n as f64;
        out.insert(
            *date,
            today
                .iter()
                .map(|(t, v)| (t.to_string(), v - baseline))
                .collect(),
        );
    }
    out
}

/// Equal-weight long the positive deviations and short the negative ones.
/// Zero deviations get no position.
pub fn build_positions(
    date: NaiveDate,
    deviations: &BTreeMap<String, f64>,
    config: &SignalConfig,
) -> Vec<Position> {
    let longs = deviations.values().filter(|v| **v > 0.0).count();
    let shorts = deviations.values().filter(|v| **v < 0.0).count();
    deviations
        .iter()
        .filter_map(|(ticker, v)| {
            let weight = if *v > 0.0 {
                config.long_gross / longs as f64
            } else if *v < 0.0 {
                -config.short_gross / shorts as f64
            } else {
                return None;
            };
            Some(Position {
                ticker: ticker.clone(),
                date,
                weight,
            })
        })
        .collect()
}

pub fn positions_by_date(
    deviations: &Deviations,
    config: &SignalConfig,
) -> BTreeMap<NaiveDate, Vec<Position>> {
    deviations
        .iter()
        .map(|(d, devs)| (*d, build_positions(*d, devs, config)))
        .filter(|(_, p)| !p.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DEFAULT_CUTOFF, DEFAULT_TIMEZONE};
    use proptest::prelude::*;

    fn cal(n: usize) -> TradingCalendar {
        let start = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let end = start + chrono::Duration::days(n as i64 * 2);
        let c = TradingCalendar::weekdays(start, end, DEFAULT_CUTOFF, DEFAULT_TIMEZONE).unwrap();
        TradingCalendar::new(c.dates()[..n].to_vec(), DEFAULT_CUTOFF, DEFAULT_TIMEZONE).unwrap()
    }

    fn score(ticker: &str, date: NaiveDate, v: f64) -> TickerDayScore {
        TickerDayScore {
            ticker: ticker.into(),
            date,
            temperature: 0.0,
            run_index: 0,
            score: v,
            headline_count: 1,
        }
    }

    #[test]
    fn zero_baseline() {
        let c = cal(5);
        let d = c.dates();
        let scores = vec![
            score("A", d[0], 0.0),
            score("B", d[1], 0.0),
            score("A", d[2], 1.0),
        ];
        let dev = deviation_signal(&scores, &c, &SignalConfig::default());
        assert_eq!(dev[&d[2]]["A"], 1.0);
        // The first date has no history and is skipped.
        assert!(!dev.contains_key(&d[0]));
    }

    #[test]
    fn constant_scores_cancel() {
        let c = cal(30);
        let scores: Vec<_> = c
            .dates()
            .iter()
            .flat_map(|d| [score("A", *d, 0.3), score("B", *d, 0.3)])
            .collect();
        let dev = deviation_signal(&scores, &c, &SignalConfig::default());
        assert_eq!(dev.len(), 29);
        assert!(dev
            .values()
            .flat_map(|m| m.values())
            .all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn lookback_window_is_bounded() {
        let c = cal(6);
        let d = c.dates();
        let scores = vec![
            score("A", d[0], 1.0),
            score("A", d[1], -1.0),
            score("A", d[2], -1.0),
            score("B", d[3], 0.5),
        ];
        let cfg = SignalConfig {
            lookback: 2,
            ..SignalConfig::default()
        };
        let dev = deviation_signal(&scores, &c, &cfg);
        // Window for d[3] is d[1], d[2]: baseline -1.
        assert_eq!(dev[&d[3]]["B"], 1.5);
    }

    #[test]
    fn position_examples() {
        let d = NaiveDate::from_ymd_opt(2022, 1, 4).unwrap();
        let cfg = SignalConfig::default();
        let devs = BTreeMap::from([("A".to_string(), 0.4), ("B".to_string(), -0.2)]);
        let p = build_positions(d, &devs, &cfg);
        assert_eq!(
            p.iter().map(|p| p.weight).collect::<Vec<_>>(),
            vec![0.5, -0.5]
        );

        let devs = BTreeMap::from([("A".to_string(), 0.4), ("B".to_string(), 0.1)]);
        let p = build_positions(d, &devs, &cfg);
        assert_eq!(
            p.iter().map(|p| p.weight).collect::<Vec<_>>(),
            vec![0.25, 0.25]
        );

        let devs = BTreeMap::from([("A".to_string(), 0.0), ("B".to_string(), 0.0)]);
        assert!(build_positions(d, &devs, &cfg).is_empty());
    }

    proptest! {
        #[test]
        fn gross_caps_hold(devs in prop::collection::btree_map("[A-F]", -1.0f64..1.0, 0..6),
                           long in 0.0f64..2.0, short in 0.0f64..2.0) {
            let cfg = SignalConfig { lookback: 21, long_gross: long, short_gross: short };
            let d = NaiveDate::from_ymd_opt(2022, 1, 4).unwrap();
            let p = build_positions(d, &devs, &cfg);
            let gl: f64 = p.iter().map(|p| p.weight.max(0.0)).sum();
            let gs: f64 = p.iter().map(|p| (-p.weight).max(0.0)).sum();
            prop_assert!(gl <= long + 1e-9);
            prop_assert!(gs <= short + 1e-9);
        }

        #[test]
        fn raising_a_score_never_lowers_its_weight(
            values in prop::collection::vec(-1.0f64..1.0, 10),
            which in 0usize..2, bump in 0.0f64..2.0,
        ) {
            let c = cal(5);
            let d = c.dates();
            let mut scores = Vec::new();
            for (i, v) in values.iter().enumerate() {
                scores.push(score(["A", "B"][i % 2], d[i / 2], *v));
            }
            let cfg = SignalConfig::default();
            let target = d[4];
            let weight_of = |scores: &[TickerDayScore]| {
                let dev = deviation_signal(scores, &c, &cfg);
                let pos = dev.get(&target).map(|m| build_positions(target, m, &cfg)).unwrap_or_default();
                pos.iter().find(|p| p.ticker == ["A", "B"][which]).map_or(0.0, |p| p.weight)
            };
            let before = weight_of(&scores);
            let mut bumped = scores.clone();
            let idx = bumped.iter().position(|s| s.date == target && s.ticker == ["A", "B"][which]).unwrap();
            bumped[idx].score += bump;
            prop_assert!(weight_of(&bumped) >= before);
        }
    }
}
