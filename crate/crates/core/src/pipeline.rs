//! The experiment as a chain of stages over one output directory.
//!
//! Each stage reads its predecessors' files from `paths.output`, writes its
//! own, and can be rerun alone. Stage outputs depend only on stage inputs and
//! the config; run statistics (cache hits, provider calls) are returned to the
//! caller rather than written, so a rerun reproduces every file byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{
    ingest_headlines, ingest_prices, read_canonical_headlines, write_headlines, Headline,
    IngestStats, PriceTable, TradingCalendar, Universe,
};
use crate::gateway::{
    cache_digest, DirStore, FailedRequest, Gateway, GridStats, HttpChatProvider, LlmResponse,
    Provider, ReplayProvider, SyntheticProvider, SystemClock,
};
use crate::metrics::{
    volatility_rows, write_ticker_scores_csv, write_volatility_csv, TickerDayScore,
    VolatilityReport,
};
use crate::parser::{
    label_histogram, parse_responses, write_feed_csv, CoverageIssue, FeedSentiment,
};
use crate::prompt::{
    batch_order, render_batch, render_single, BatchTemplate, PromptJob, PromptStyle, SingleTemplate,
};
use crate::report::{
    emit_summary, ExperimentSummary, FailureCounts, RunContext, Status, StrategyStats,
};
use crate::strategy::{
    backtest_runs, repetition_stats, write_daily_returns_csv, write_stats_csv, write_summary_csv,
    BacktestWindow,
};
use crate::synth::{derived_label, read_planted_csv};
use crate::util::{format_temperature, read_jsonl, write_jsonl};

/// Output file names, relative to `paths.output`.
pub mod files {
    pub const HEADLINES: &str = "headlines.jsonl";
    pub const PRICES: &str = "prices.csv";
    pub const CALENDAR: &str = "calendar.csv";
    pub const INGEST_META: &str = "ingest.json";
    pub const PROMPTS: &str = "prompts.jsonl";
    pub const RESPONSES: &str = "responses.jsonl";
    pub const FAILURES: &str = "failures.jsonl";
    pub const QUERY_META: &str = "query.json";
    pub const SENTIMENTS: &str = "sentiments.jsonl";
    pub const FEED: &str = "feed.csv";
    pub const COVERAGE: &str = "coverage.jsonl";
    pub const PARSE_META: &str = "parse.json";
    pub const VOLATILITY: &str = "volatility.json";
    pub const VOLATILITY_CSV: &str = "volatility.csv";
    pub const TICKER_SCORES: &str = "ticker_scores.jsonl";
    pub const TICKER_SCORES_CSV: &str = "ticker_scores.csv";
    pub const BACKTEST_DIR: &str = "backtest";
    pub const BACKTEST_META: &str = "backtest.json";
    pub const STRATEGY_STATS: &str = "strategy_stats.json";
    pub const STRATEGY_STATS_CSV: &str = "strategy_stats.csv";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Query,
    Parse,
    Metrics,
    Backtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Query,
        Stage::Parse,
        Stage::Metrics,
        Stage::Backtest,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Query => "query",
            Stage::Parse => "parse",
            Stage::Metrics => "metrics",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }

    /// Process exit status when this stage fails.
    pub fn exit_code(self) -> i32 {
        10 + self as i32
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exit status for configuration errors.
pub const CONFIG_EXIT_CODE: i32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: missing {}; run `llmvol {prior}` first", path.display())]
    MissingArtifact {
        stage: Stage,
        path: PathBuf,
        prior: Stage,
    },
    #[error("{stage}: {message}")]
    Failed { stage: Stage, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => CONFIG_EXIT_CODE,
            PipelineError::MissingArtifact { stage, .. } | PipelineError::Failed { stage, .. } => {
                stage.exit_code()
            }
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Config(_) => None,
            PipelineError::MissingArtifact { stage, .. } | PipelineError::Failed { stage, .. } => {
                Some(*stage)
            }
        }
    }
}

fn fail(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::Failed {
        stage,
        message: e.to_string(),
    }
}

/// Path of an output file that `prior` must already have produced.
fn require(
    config: &PipelineConfig,
    stage: Stage,
    prior: Stage,
    name: &str,
) -> Result<PathBuf, PipelineError> {
    let path = config.paths.output.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact { stage, path, prior })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> std::io::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}

fn output_dir(config: &PipelineConfig, stage: Stage) -> Result<&Path, PipelineError> {
    let dir = config.paths.output.as_path();
    std::fs::create_dir_all(dir).map_err(|e| fail(stage)(&format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub stats: IngestStats,
    pub tickers: BTreeSet<String>,
    pub price_rows: usize,
    pub trading_dates: usize,
}

/// Trading dates from the configured calendar file, or the dates that carry a close.
fn source_calendar(
    config: &PipelineConfig,
    prices: &PriceTable,
) -> Result<TradingCalendar, PipelineError> {
    let err = fail(Stage::Ingest);
    let cutoff = config.corpus.cutoff_time()?;
    let tz = config.corpus.tz()?;
    match &config.paths.calendar {
        Some(path) => TradingCalendar::from_csv(path, cutoff, tz).map_err(|e| err(&e)),
        None => {
            let dates: BTreeSet<_> = prices.iter().map(|(_, d, _)| d).collect();
            TradingCalendar::new(dates.into_iter().collect(), cutoff, tz).map_err(|e| err(&e))
        }
    }
}

fn stage_calendar(config: &PipelineConfig, stage: Stage) -> Result<TradingCalendar, PipelineError> {
    let path = require(config, stage, Stage::Ingest, files::CALENDAR)?;
    TradingCalendar::from_csv(&path, config.corpus.cutoff_time()?, config.corpus.tz()?)
        .map_err(|e| fail(stage)(&e))
}

pub fn ingest(config: &PipelineConfig) -> Result<IngestMeta, PipelineError> {
    let err = fail(Stage::Ingest);
    let out = output_dir(config, Stage::Ingest)?;
    let prices = ingest_prices(&config.paths.prices).map_err(|e| err(&e))?;
    let calendar = source_calendar(config, &prices)?;
    prices.check_calendar(&calendar).map_err(|e| err(&e))?;
    let universe = if config.universe.tickers.is_empty() {
        Universe::unrestricted()
    } else {
        Universe::new(&config.universe.tickers)
    };
    let ingested = ingest_headlines(
        &config.paths.headlines,
        &universe,
        config.corpus.prominence_floor,
        &calendar,
    )
    .map_err(|e| err(&e))?;

    write_headlines(&out.join(files::HEADLINES), &ingested.headlines).map_err(|e| err(&e))?;
    prices
        .write_csv(&out.join(files::PRICES))
        .map_err(|e| err(&e))?;
    calendar
        .write_csv(&out.join(files::CALENDAR))
        .map_err(|e| err(&e))?;
    let meta = IngestMeta {
        tickers: ingested
            .headlines
            .iter()
            .flat_map(|h| h.tickers.iter().cloned())
            .collect(),
        stats: ingested.stats,
        price_rows: prices.len(),
        trading_dates: calendar.len(),
    };
    write_json(&out.join(files::INGEST_META), &meta).map_err(|e| err(&e))?;
    Ok(meta)
}

/// Prompt jobs for the configured style and template.
pub fn render_jobs(
    config: &PipelineConfig,
    headlines: &[Headline],
) -> Result<Vec<PromptJob>, PipelineError> {
    let err = fail(Stage::Query);
    match config.prompt.style {
        PromptStyle::Single => {
            let template = match &config.prompt.template {
                Some(path) => SingleTemplate::load(path).map_err(|e| err(&e))?,
                None => SingleTemplate::default(),
            };
            Ok(headlines
                .iter()
                .map(|h| render_single(h, &template))
                .collect())
        }
        PromptStyle::Batch => {
            let template = match &config.prompt.template {
                Some(path) => BatchTemplate::load(path).map_err(|e| err(&e))?,
                None => BatchTemplate::default(),
            };
            let mut ordered = headlines.to_vec();
            batch_order(&mut ordered);
            render_batch(&ordered, config.prompt.batch_size, &template).map_err(|e| err(&e))
        }
    }
}

/// The provider named by `run.provider`.
pub fn build_provider(
    config: &PipelineConfig,
    headlines: &[Headline],
) -> Result<Box<dyn Provider>, PipelineError> {
    let err = fail(Stage::Query);
    match config.run.provider.as_str() {
        "synthetic" => {
            let synthetic = &config.provider.synthetic;
            let mut planted = match &synthetic.planted {
                Some(path) => read_planted_csv(path).map_err(|e| err(&e))?,
                None => HashMap::new(),
            };
            for h in headlines {
                planted
                    .entry(h.id.clone())
                    .or_insert_with(|| derived_label(config.seed, &h.id));
            }
            Ok(Box::new(SyntheticProvider::new(
                synthetic.noise.clone(),
                config.seed,
                planted,
            )))
        }
        "replay" => {
            let replay = config
                .provider
                .replay
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("missing [provider.replay]".into()))?;
            let archive = ReplayProvider::load(&replay.archive)
                .map_err(|e| err(&format!("{}: {e}", replay.archive.display())))?;
            Ok(Box::new(archive))
        }
        "http" => {
            let http = config
                .provider
                .http
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("missing [provider.http]".into()))?;
            let provider = HttpChatProvider::new(
                "http",
                &http.base_url,
                http.token_env.as_deref(),
                Duration::from_secs(http.timeout_secs),
            )
            .map_err(|e| err(&e))?;
            Ok(Box::new(provider))
        }
        other => Err(ConfigError::Invalid(format!("unknown provider {other:?}")).into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub provider: String,
    pub model: String,
    pub cache_digest: String,
    pub prompts: usize,
    pub responses: usize,
    pub failed: usize,
}

/// What the query stage did, beyond what it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub meta: QueryMeta,
    pub stats: GridStats,
}

pub fn query(config: &PipelineConfig) -> Result<QueryRun, PipelineError> {
    let provider = {
        let path = require(config, Stage::Query, Stage::Ingest, files::HEADLINES)?;
        let headlines = read_canonical_headlines(&path).map_err(|e| fail(Stage::Query)(&e))?;
        build_provider(config, &headlines)?
    };
    query_with(config, provider.as_ref())
}

/// The query stage against an explicit provider.
pub fn query_with(
    config: &PipelineConfig,
    provider: &dyn Provider,
) -> Result<QueryRun, PipelineError> {
    let err = fail(Stage::Query);
    let path = require(config, Stage::Query, Stage::Ingest, files::HEADLINES)?;
    let out = output_dir(config, Stage::Query)?;
    let headlines = read_canonical_headlines(&path).map_err(|e| err(&e))?;
    let jobs = render_jobs(config, &headlines)?;
    write_jsonl(&out.join(files::PROMPTS), &jobs).map_err(|e| err(&e))?;

    let store = DirStore::new(&config.paths.cache);
    let clock = SystemClock::new();
    let gateway = Gateway {
        provider,
        store: &store,
        clock: &clock,
    };
    let outcome = gateway
        .execute_grid(&jobs, &config.run)
        .map_err(|e| err(&e))?;
    write_jsonl(&out.join(files::RESPONSES), &outcome.responses).map_err(|e| err(&e))?;
    write_jsonl(&out.join(files::FAILURES), &outcome.failures).map_err(|e| err(&e))?;
    let meta = QueryMeta {
        provider: provider.name().to_string(),
        model: config.run.model.clone(),
        cache_digest: cache_digest(&outcome.responses),
        prompts: jobs.len(),
        responses: outcome.responses.len(),
        failed: outcome.failures.len(),
    };
    write_json(&out.join(files::QUERY_META), &meta).map_err(|e| err(&e))?;
    if !outcome.failures.is_empty() {
        log::warn!(
            "{} request(s) failed; see {}",
            outcome.failures.len(),
            out.join(files::FAILURES).display()
        );
    }
    Ok(QueryRun {
        meta,
        stats: outcome.stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseMeta {
    pub cache_digest: String,
    pub sentiments: usize,
    pub coverage_issues: usize,
    pub labels: BTreeMap<i8, usize>,
}

pub fn parse(config: &PipelineConfig) -> Result<ParseMeta, PipelineError> {
    let err = fail(Stage::Parse);
    let prompts = require(config, Stage::Parse, Stage::Query, files::PROMPTS)?;
    let responses = require(config, Stage::Parse, Stage::Query, files::RESPONSES)?;
    let out = output_dir(config, Stage::Parse)?;
    let jobs: Vec<PromptJob> = read_jsonl(&prompts).map_err(|e| err(&e))?;
    let responses: Vec<LlmResponse> = read_jsonl(&responses).map_err(|e| err(&e))?;
    let parsed = parse_responses(&jobs, &responses).map_err(|e| err(&e))?;

    write_jsonl(&out.join(files::SENTIMENTS), &parsed.sentiments).map_err(|e| err(&e))?;
    write_feed_csv(&out.join(files::FEED), &parsed.sentiments).map_err(|e| err(&e))?;
    write_jsonl(&out.join(files::COVERAGE), &parsed.coverage).map_err(|e| err(&e))?;
    let meta = ParseMeta {
        cache_digest: cache_digest(&responses),
        sentiments: parsed.sentiments.len(),
        coverage_issues: parsed.coverage.len(),
        labels: label_histogram(&parsed.sentiments),
    };
    write_json(&out.join(files::PARSE_META), &meta).map_err(|e| err(&e))?;
    Ok(meta)
}

pub fn metrics(config: &PipelineConfig) -> Result<VolatilityReport, PipelineError> {
    let err = fail(Stage::Metrics);
    let sentiments = require(config, Stage::Metrics, Stage::Parse, files::SENTIMENTS)?;
    let parse_meta = require(config, Stage::Metrics, Stage::Parse, files::PARSE_META)?;
    let headlines = require(config, Stage::Metrics, Stage::Ingest, files::HEADLINES)?;
    let out = output_dir(config, Stage::Metrics)?;
    let feed: Vec<FeedSentiment> = read_jsonl(&sentiments).map_err(|e| err(&e))?;
    let parse_meta: ParseMeta = read_json(&parse_meta).map_err(|e| err(&e))?;
    let headlines = read_canonical_headlines(&headlines).map_err(|e| err(&e))?;

    let (rows, scores) =
        volatility_rows(&feed, &headlines, &config.run.temperatures).map_err(|e| err(&e))?;
    let report = VolatilityReport {
        cache_digest: parse_meta.cache_digest,
        rows,
    };
    write_json(&out.join(files::VOLATILITY), &report).map_err(|e| err(&e))?;
    write_volatility_csv(&out.join(files::VOLATILITY_CSV), &report.rows).map_err(|e| err(&e))?;
    write_jsonl(&out.join(files::TICKER_SCORES), &scores).map_err(|e| err(&e))?;
    write_ticker_scores_csv(&out.join(files::TICKER_SCORES_CSV), &scores).map_err(|e| err(&e))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestMeta {
    pub cache_digest: String,
    pub window: BacktestWindow,
    pub runs: usize,
    pub dropped_positions: usize,
}

fn run_file_name(temperature: f64, run: usize) -> String {
    format!("t{}_run{run}.csv", format_temperature(temperature))
}

pub fn backtest(config: &PipelineConfig) -> Result<StrategyStats, PipelineError> {
    let err = fail(Stage::Backtest);
    let scores = require(
        config,
        Stage::Backtest,
        Stage::Metrics,
        files::TICKER_SCORES,
    )?;
    let volatility = require(config, Stage::Backtest, Stage::Metrics, files::VOLATILITY)?;
    let prices = require(config, Stage::Backtest, Stage::Ingest, files::PRICES)?;
    let calendar = stage_calendar(config, Stage::Backtest)?;
    let out = output_dir(config, Stage::Backtest)?;
    let scores: Vec<TickerDayScore> = read_jsonl(&scores).map_err(|e| err(&e))?;
    let volatility: VolatilityReport = read_json(&volatility).map_err(|e| err(&e))?;
    let prices = ingest_prices(&prices).map_err(|e| err(&e))?;
    if calendar.len() < 2 {
        return Err(err(&"calendar needs at least two trading dates"));
    }

    let mut window = BacktestWindow::after_warmup(&calendar, config.signal.lookback);
    if let Some(start) = config.backtest.start {
        window.start = start;
    }
    if let Some(end) = config.backtest.end {
        window.end = end;
    }
    let results = backtest_runs(&scores, &prices, &calendar, &config.signal, window);

    let dir = out.join(files::BACKTEST_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| err(&e))?;
    for r in &results {
        write_daily_returns_csv(&dir.join(run_file_name(r.temperature, r.run_index)), r)
            .map_err(|e| err(&e))?;
    }
    write_summary_csv(&dir.join("summary.csv"), &results).map_err(|e| err(&e))?;
    let stats = StrategyStats {
        cache_digest: volatility.cache_digest.clone(),
        rows: repetition_stats(&results),
    };
    write_json(&out.join(files::STRATEGY_STATS), &stats).map_err(|e| err(&e))?;
    write_stats_csv(&out.join(files::STRATEGY_STATS_CSV), &stats.rows).map_err(|e| err(&e))?;
    let meta = BacktestMeta {
        cache_digest: volatility.cache_digest,
        window,
        runs: results.len(),
        dropped_positions: results.iter().map(|r| r.dropped_positions).sum(),
    };
    write_json(&out.join(files::BACKTEST_META), &meta).map_err(|e| err(&e))?;
    Ok(stats)
}

pub fn report(config: &PipelineConfig) -> Result<ExperimentSummary, PipelineError> {
    let err = fail(Stage::Report);
    let volatility = require(config, Stage::Report, Stage::Metrics, files::VOLATILITY)?;
    let strategy = require(
        config,
        Stage::Report,
        Stage::Backtest,
        files::STRATEGY_STATS,
    )?;
    let backtest_meta = require(config, Stage::Report, Stage::Backtest, files::BACKTEST_META)?;
    let parse_meta = require(config, Stage::Report, Stage::Parse, files::PARSE_META)?;
    let query_meta = require(config, Stage::Report, Stage::Query, files::QUERY_META)?;
    let out = output_dir(config, Stage::Report)?;

    let volatility: VolatilityReport = read_json(&volatility).map_err(|e| err(&e))?;
    let strategy: StrategyStats = read_json(&strategy).map_err(|e| err(&e))?;
    let backtest_meta: BacktestMeta = read_json(&backtest_meta).map_err(|e| err(&e))?;
    let parse_meta: ParseMeta = read_json(&parse_meta).map_err(|e| err(&e))?;
    let query_meta: QueryMeta = read_json(&query_meta).map_err(|e| err(&e))?;
    let ctx = RunContext {
        config: config.snapshot(),
        temperatures: config.run.temperatures.clone(),
        provider: query_meta.provider,
        model: query_meta.model,
        failures: FailureCounts {
            failed_requests: query_meta.failed,
            coverage_issues: parse_meta.coverage_issues,
            dropped_positions: backtest_meta.dropped_positions,
        },
    };
    let summary = emit_summary(&volatility, &strategy, &ctx, out).map_err(|e| err(&e))?;
    if summary.status == Status::Partial {
        log::warn!("experiment summary is partial");
    }
    Ok(summary)
}

/// One line per stage outcome, for the caller to print.
pub type StageLog = Vec<(Stage, String)>;

pub fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<String, PipelineError> {
    Ok(match stage {
        Stage::Ingest => {
            let m = ingest(config)?;
            format!(
                "{} of {} headlines kept, {} tickers, {} trading dates",
                m.stats.kept,
                m.stats.records,
                m.tickers.len(),
                m.trading_dates
            )
        }
        Stage::Query => {
            let q = query(config)?;
            format!(
                "{} tasks, {} cache hits, {} provider calls, {} retries, {} failed",
                q.stats.tasks,
                q.stats.cache_hits,
                q.stats.provider_calls,
                q.stats.retries,
                q.stats.failed
            )
        }
        Stage::Parse => {
            let p = parse(config)?;
            format!(
                "{} sentiments, {} coverage issues",
                p.sentiments, p.coverage_issues
            )
        }
        Stage::Metrics => {
            let r = metrics(config)?;
            format!("{} temperature rows", r.rows.len())
        }
        Stage::Backtest => {
            let s = backtest(config)?;
            format!("{} temperature rows", s.rows.len())
        }
        Stage::Report => {
            let s = report(config)?;
            format!("summary {:?}", s.status).to_lowercase()
        }
    })
}

/// Every stage in order, stopping at the first failure.
pub fn run_all(config: &PipelineConfig) -> Result<StageLog, PipelineError> {
    let mut log = Vec::new();
    for stage in Stage::ALL {
        log.push((stage, run_stage(config, stage)?));
    }
    Ok(log)
}

/// Human-readable description of what `stages` would read and write.
pub fn plan(config: &PipelineConfig, stages: &[Stage]) -> Vec<String> {
    let out = config.paths.output.display();
    let run = &config.run;
    let temps: Vec<String> = run
        .temperatures
        .iter()
        .map(|t| format_temperature(*t))
        .collect();
    stages
        .iter()
        .map(|stage| match stage {
            Stage::Ingest => format!(
                "ingest: {} + {} -> {out}/{{{}, {}, {}}}",
                config.paths.headlines.display(),
                config.paths.prices.display(),
                files::HEADLINES,
                files::PRICES,
                files::CALENDAR
            ),
            Stage::Query => format!(
                "query: {} prompts x temperatures [{}] x {} runs via {} ({}), cache {} -> {out}/{}",
                match config.prompt.style {
                    PromptStyle::Single => "single".to_string(),
                    PromptStyle::Batch => format!("batch({})", config.prompt.batch_size),
                },
                temps.join(", "),
                run.repetitions,
                run.provider,
                run.model,
                config.paths.cache.display(),
                files::RESPONSES
            ),
            Stage::Parse => format!(
                "parse: {out}/{} -> {out}/{}",
                files::RESPONSES,
                files::SENTIMENTS
            ),
            Stage::Metrics => format!(
                "metrics: {out}/{} -> {out}/{}",
                files::SENTIMENTS,
                files::VOLATILITY
            ),
            Stage::Backtest => format!(
                "backtest: {out}/{} with lookback {} -> {out}/{}",
                files::TICKER_SCORES,
                config.signal.lookback,
                files::STRATEGY_STATS
            ),
            Stage::Report => format!("report: -> {out}/summary.json"),
        })
        .collect()
}

/// Failure manifest of the last query stage.
pub fn read_failures(config: &PipelineConfig) -> std::io::Result<Vec<FailedRequest>> {
    read_jsonl(&config.paths.output.join(files::FAILURES))
}

/// Coverage issues of the last parse stage.
pub fn read_coverage(config: &PipelineConfig) -> std::io::Result<Vec<CoverageIssue>> {
    read_jsonl(&config.paths.output.join(files::COVERAGE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Paths, EXAMPLE_CONFIG};
    use crate::gateway::NoiseSchedule;
    use crate::synth::{generate, write_demo, DemoSpec};
    use chrono::NaiveDate;

    fn demo_config(dir: &Path) -> PipelineConfig {
        let spec = DemoSpec {
            tickers: vec!["AAA".into(), "BBB".into(), "CCC".into()],
            end: NaiveDate::from_ymd_opt(2022, 3, 15).unwrap(),
            headlines_per_day: 3,
            ..DemoSpec::default()
        };
        let paths = write_demo(&dir.join("data"), &generate(&spec)).unwrap();
        let mut c = PipelineConfig::from_toml(EXAMPLE_CONFIG, "example").unwrap();
        c.paths = Paths {
            headlines: paths.headlines,
            prices: paths.prices,
            calendar: Some(paths.calendar),
            cache: dir.join("cache"),
            output: dir.join("out"),
        };
        c.provider.synthetic.planted = Some(paths.planted);
        c.provider.synthetic.noise = NoiseSchedule::Linear {
            at_zero: 0.0,
            per_unit: 0.4,
        };
        c.run.temperatures = vec![0.0, 1.0];
        c.run.max_in_flight = 2;
        c
    }

    #[test]
    fn stages_in_order_and_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = demo_config(dir.path());
        run_all(&config).unwrap();
        let out = &config.paths.output;
        let snapshot = |names: &[&str]| -> Vec<Vec<u8>> {
            names
                .iter()
                .map(|n| std::fs::read(out.join(n)).unwrap())
                .collect()
        };
        let names = [
            files::HEADLINES,
            files::RESPONSES,
            files::QUERY_META,
            files::SENTIMENTS,
            files::VOLATILITY,
            files::STRATEGY_STATS,
            "summary.json",
            "table2_strategy.csv",
        ];
        let first = snapshot(&names);
        run_all(&config).unwrap();
        assert_eq!(first, snapshot(&names));

        let summary: ExperimentSummary = read_json(&out.join("summary.json")).unwrap();
        assert_eq!(summary.status, Status::Complete);
        assert_eq!(summary.volatility.len(), 2);
        assert_eq!(summary.strategy.len(), 2);
        // No noise at temperature 0.
        assert_eq!(summary.volatility[0].lexical_mean, Some(0.0));
        assert!(summary.volatility[1].lexical_mean.unwrap() > 0.0);
    }

    #[test]
    fn missing_upstream_names_the_prior_stage() {
        let dir = tempfile::tempdir().unwrap();
        let config = demo_config(dir.path());
        let e = metrics(&config).unwrap_err();
        assert!(matches!(
            e,
            PipelineError::MissingArtifact {
                prior: Stage::Parse,
                ..
            }
        ));
        assert!(e.to_string().contains("llmvol parse"));
        assert_eq!(e.exit_code(), Stage::Metrics.exit_code());
    }

    #[test]
    fn warm_cache_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let config = demo_config(dir.path());
        ingest(&config).unwrap();
        let cold = query(&config).unwrap();
        assert!(cold.stats.provider_calls > 0);
        let warm = query(&config).unwrap();
        assert_eq!(warm.stats.provider_calls, 0);
        assert_eq!(warm.meta, cold.meta);
    }

    #[test]
    fn batch_style_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = demo_config(dir.path());
        config.prompt.style = PromptStyle::Batch;
        config.prompt.batch_size = 7;
        run_all(&config).unwrap();
        let meta: ParseMeta = read_json(&config.paths.output.join(files::PARSE_META)).unwrap();
        assert_eq!(meta.coverage_issues, 0);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let mut codes: Vec<i32> = Stage::ALL.iter().map(|s| s.exit_code()).collect();
        codes.push(CONFIG_EXIT_CODE);
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 7);
    }

    #[test]
    fn plan_lists_each_stage() {
        let c = PipelineConfig::from_toml(EXAMPLE_CONFIG, "example").unwrap();
        let plan = plan(&c, &Stage::ALL);
        assert_eq!(plan.len(), 6);
        assert!(plan[1].contains("x 3 runs via synthetic"));
    }
}
