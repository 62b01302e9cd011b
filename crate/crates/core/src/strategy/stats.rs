use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BacktestResult;
use crate::util::format_temperature;

/// Dispersion of backtest outcomes across repetitions at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRow {
    pub temperature: f64,
    pub runs: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub sharpe_mean: f64,
    pub sharpe_std: f64,
    /// Only one run: the std columns are 0 by convention, not measured.
    pub single_run: bool,
}

fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample mean and (n-1) standard deviation of total return and Sharpe per temperature.
pub fn repetition_stats(results: &[BacktestResult]) -> Vec<RepetitionRow> {
    let mut groups: BTreeMap<String, (f64, Vec<&BacktestResult>)> = BTreeMap::new();
    for r in results {
        groups
            .entry(format_temperature(r.temperature))
            .or_insert_with(|| (r.temperature, Vec::new()))
            .1
            .push(r);
    }
    let mut rows: Vec<RepetitionRow> = groups
        .into_values()
        .map(|(temperature, runs)| {
            let returns: Vec<f64> = runs.iter().map(|r| r.total_return).collect();
            let sharpes: Vec<f64> = runs.iter().map(|r| r.sharpe).collect();
            let (return_mean, return_std) = mean_and_sample_std(&returns);
            let (sharpe_mean, sharpe_std) = mean_and_sample_std(&sharpes);
            RepetitionRow {
                temperature,
                runs: runs.len(),
                return_mean,
                return_std,
                sharpe_mean,
                sharpe_std,
                single_run: runs.len() == 1,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
    rows
}

/// `"8.51 ± 0.25"`
pub fn format_mean_std(mean: f64, std: f64, decimals: usize) -> String {
    format!("{mean:.decimals$} \u{00b1} {std:.decimals$}")
}

/// Tidy form: one row per temperature, returns as fractions.
pub fn write_stats_csv(path: &Path, rows: &[RepetitionRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Wide form: a `Ret(%)` row and a `Sharpe` row, one `mean ± std` column per temperature.
pub fn write_table2_csv(path: &Path, rows: &[RepetitionRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    let mut header = vec!["metric".to_string()];
    header.extend(
        rows.iter()
            .map(|r| format!("t = {}", format_temperature(r.temperature))),
    );
    w.write_record(&header).map_err(std::io::Error::other)?;
    let mut ret = vec!["Ret(%)".to_string()];
    ret.extend(
        rows.iter()
            .map(|r| format_mean_std(r.return_mean * 100.0, r.return_std * 100.0, 2)),
    );
    w.write_record(&ret).map_err(std::io::Error::other)?;
    let mut sharpe = vec!["Sharpe".to_string()];
    sharpe.extend(
        rows.iter()
            .map(|r| format_mean_std(r.sharpe_mean, r.sharpe_std, 2)),
    );
    w.write_record(&sharpe).map_err(std::io::Error::other)?;
    w.flush()
}
