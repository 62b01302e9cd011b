//! Declarative experiment configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{NoiseSchedule, RunConfig};
use crate::prompt::{PromptStyle, DEFAULT_BATCH_SIZE};
use crate::strategy::SignalConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub headlines: PathBuf,
    pub prices: PathBuf,
    /// One `date` per line. Without it, the trading dates are the dates that carry a close.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar: Option<PathBuf>,
    #[serde(default = "default_cache")]
    pub cache: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_cache() -> PathBuf {
    PathBuf::from("cache")
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseConfig {
    /// Empty means every ticker is in scope.
    pub tickers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub prominence_floor: f64,
    /// Exchange-local `HH:MM`.
    pub cutoff: String,
    pub timezone: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            prominence_floor: 0.0,
            cutoff: "15:00".into(),
            timezone: "America/New_York".into(),
        }
    }
}

impl CorpusConfig {
    pub fn cutoff_time(&self) -> Result<NaiveTime, ConfigError> {
        NaiveTime::parse_from_str(&self.cutoff, "%H:%M").map_err(|_| {
            ConfigError::Invalid(format!("corpus.cutoff {:?} is not HH:MM", self.cutoff))
        })
    }

    pub fn tz(&self) -> Result<Tz, ConfigError> {
        self.timezone.parse().map_err(|_| {
            ConfigError::Invalid(format!("corpus.timezone {:?} is unknown", self.timezone))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub style: PromptStyle,
    /// Custom template file; the built-in one for `style` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    pub batch_size: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            style: PromptStyle::Single,
            template: None,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub noise: NoiseSchedule,
    /// `headline_id,label` file. Headlines not listed get a label derived from the seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted: Option<PathBuf>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            noise: NoiseSchedule::Linear {
                at_zero: 0.02,
                per_unit: 0.3,
            },
            planted: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    /// JSONL of previously recorded responses.
    pub archive: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfigs {
    pub synthetic: SyntheticConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplayConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub universe: UniverseConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub provider: ProviderConfigs,
    #[serde(default)]
    pub signal: SignalConfig,
    #[serde(default)]
    pub backtest: BacktestConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Reads, resolves relative paths against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.headlines);
        fix(&mut self.paths.prices);
        fix(&mut self.paths.cache);
        fix(&mut self.paths.output);
        for p in [
            self.paths.calendar.as_mut(),
            self.prompt.template.as_mut(),
            self.provider.synthetic.planted.as_mut(),
            self.provider.replay.as_mut().map(|r| &mut r.archive),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.signal.validate().map_err(ConfigError::Invalid)?;
        self.corpus.cutoff_time()?;
        self.corpus.tz()?;
        if self.prompt.batch_size == 0 {
            return Err(ConfigError::Invalid(
                "prompt.batch_size must be at least 1".into(),
            ));
        }
        match self.run.provider.as_str() {
            "synthetic" => {}
            "replay" if self.provider.replay.is_none() => {
                return Err(ConfigError::Invalid(
                    "run.provider = \"replay\" needs [provider.replay]".into(),
                ))
            }
            "replay" => {}
            "http" if self.provider.http.is_none() => {
                return Err(ConfigError::Invalid(
                    "run.provider = \"http\" needs [provider.http]".into(),
                ))
            }
            "http" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown provider {other:?}; expected synthetic, replay or http"
                )))
            }
        }
        if let (Some(s), Some(e)) = (self.backtest.start, self.backtest.end) {
            if s > e {
                return Err(ConfigError::Invalid(format!(
                    "backtest.start {s} is after backtest.end {e}"
                )));
            }
        }
        Ok(())
    }

    /// The resolved configuration as JSON, for the summary snapshot.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Commented example written by `llmvol demo`.
pub const EXAMPLE_CONFIG: &str = r#"# Experiment seed. Feeds the synthetic provider and seed-derived planted labels.
seed = 7

[paths]
headlines = "data/headlines.jsonl"   # raw feed, one JSON record per line
prices = "data/prices.csv"           # ticker,date,close
calendar = "data/calendar.csv"       # optional; defaults to the dates that carry a close
cache = "cache"                      # response cache, safe to share between runs
output = "out"                       # every stage writes here

[universe]
tickers = []                         # empty: keep every ticker

[corpus]
prominence_floor = 0.0
cutoff = "15:00"                     # headlines at or after this local time count for the next session
timezone = "America/New_York"

[prompt]
style = "single"                     # "single" or "batch"
# template = "my_template.txt"
batch_size = 50

[run]
temperatures = [0.0, 0.25, 0.5, 1.0]
repetitions = 3
provider = "synthetic"               # "synthetic", "replay" or "http"
model = "synthetic-v1"
rate_limit = 60                      # requests per minute for remote providers, 0 = unlimited
max_retries = 3
max_in_flight = 4

[provider.synthetic]
noise = { kind = "linear", at_zero = 0.02, per_unit = 0.3 }
planted = "data/planted.csv"

# [provider.replay]
# archive = "archive/responses.jsonl"

# [provider.http]
# base_url = "https://api.example.com/v1"
# token_env = "LLM_API_TOKEN"
# timeout_secs = 60

[signal]
lookback = 21                        # trading days in the pooled baseline
long_gross = 0.5
short_gross = 0.5

[backtest]
# start = "2022-02-01"
# end = "2022-06-29"
"#;
