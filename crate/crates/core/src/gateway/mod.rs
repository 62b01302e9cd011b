//! Runs prompt jobs over a (temperature x repetition) grid against a pluggable provider.
//!
//! Every successful generation is written to the response store before the
//! grid moves on, so an interrupted run resumes from where it stopped.
//! Requests that still fail after the retry budget are collected in a
//! failure manifest instead of aborting the run.

mod cache;
mod http;
mod pacing;
mod replay;
mod synthetic;

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, DirStore, MemoryStore, ResponseStore};
pub use http::HttpChatProvider;
pub use pacing::{Clock, ManualClock, RateLimiter, RetryPolicy, SystemClock};
pub use replay::ReplayProvider;
pub use synthetic::{
    NoiseSchedule, SyntheticProvider, Variant, CANONICAL_CONFIDENCE, VARIANT_BANK,
};

use crate::prompt::PromptJob;
use crate::util::{format_temperature, sha256_hex};

pub const MAX_TEMPERATURE: f64 = 2.0;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("response cache {path}: {message}")]
    Cache { path: String, message: String },
}

impl GatewayError {
    pub(crate) fn cache(path: &Path, e: impl std::fmt::Display) -> Self {
        GatewayError::Cache {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    /// Worth retrying: rate limiting, timeouts, 5xx.
    #[error("transient provider error: {0}")]
    Transient(String),
    #[error("provider error: {0}")]
    Fatal(String),
    #[error(
        "replay miss for (prompt_hash={prompt_hash}, temperature={temperature}, run={run_index})"
    )]
    ReplayMiss {
        prompt_hash: String,
        temperature: String,
        run_index: usize,
    },
    #[error("no planted label for headline {0}")]
    MissingPlanted(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub job: &'a PromptJob,
    pub prompt_hash: &'a str,
    pub temperature: f64,
    pub run_index: usize,
    pub model: &'a str,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// Remote providers are subject to the rate limiter.
    fn is_remote(&self) -> bool {
        false
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub temperatures: Vec<f64>,
    pub repetitions: usize,
    pub provider: String,
    pub model: String,
    /// Requests per minute; 0 disables limiting.
    pub rate_limit: u32,
    pub max_retries: u32,
    pub max_in_flight: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            temperatures: vec![0.0, 0.25, 0.5, 1.0],
            repetitions: 3,
            provider: "synthetic".into(),
            model: "synthetic-v1".into(),
            rate_limit: 60,
            max_retries: 3,
            max_in_flight: 4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidConfig(m));
        if self.temperatures.is_empty() {
            return bad("temperatures must not be empty".into());
        }
        let mut seen = HashSet::new();
        for t in &self.temperatures {
            if !(0.0..=MAX_TEMPERATURE).contains(t) {
                return bad(format!("temperature {t} outside [0, {MAX_TEMPERATURE}]"));
            }
            if !seen.insert(format_temperature(*t)) {
                return bad(format!("temperature {t} listed twice"));
            }
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        Ok(())
    }
}

/// One generation for one (prompt, temperature, run) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub prompt_hash: String,
    pub temperature: f64,
    pub run_index: usize,
    pub raw_text: String,
    pub provider: String,
    pub model: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRequest {
    pub prompt_hash: String,
    pub headline_ids: Vec<String>,
    pub temperature: f64,
    pub run_index: usize,
    pub provider: String,
    pub model: String,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridStats {
    pub tasks: usize,
    pub cache_hits: usize,
    pub provider_calls: usize,
    pub retries: usize,
    pub failed: usize,
    /// Jobs dropped because an identical prompt was already in the grid.
    pub duplicate_prompts: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    /// Ordered by job, then temperature (config order), then run.
    pub responses: Vec<LlmResponse>,
    pub failures: Vec<FailedRequest>,
    pub stats: GridStats,
}

struct Task<'a> {
    job: &'a PromptJob,
    prompt_hash: &'a str,
    temperature: f64,
    run_index: usize,
}

enum TaskResult {
    Done(LlmResponse),
    Failed(FailedRequest),
}

/// Shared pieces of a grid execution.
pub struct Gateway<'a> {
    pub provider: &'a dyn Provider,
    pub store: &'a dyn ResponseStore,
    pub clock: &'a dyn Clock,
}

impl Gateway<'_> {
    /// Produces one response or failure for every (unique job, temperature, run).
    ///
    /// Jobs with identical prompt text share cache keys and are queried once.
    pub fn execute_grid(
        &self,
        jobs: &[PromptJob],
        config: &RunConfig,
    ) -> Result<GridOutcome, GatewayError> {
        config.validate()?;
        let hashes: Vec<String> = jobs.iter().map(PromptJob::prompt_hash).collect();
        let mut seen = HashSet::new();
        let mut duplicate_prompts = 0;
        let mut tasks = Vec::new();
        for (job, hash) in jobs.iter().zip(&hashes) {
            if !seen.insert(hash.as_str()) {
                duplicate_prompts += 1;
                continue;
            }
            for &temperature in &config.temperatures {
                for run_index in 0..config.repetitions {
                    tasks.push(Task {
                        job,
                        prompt_hash: hash,
                        temperature,
                        run_index,
                    });
                }
            }
        }

        let limiter = RateLimiter::per_minute(config.rate_limit);
        let retry = RetryPolicy::new(config.max_retries);
        let counters = Counters::default();
        let results: Mutex<Vec<Option<Result<TaskResult, GatewayError>>>> =
            Mutex::new((0..tasks.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = config.max_in_flight.min(tasks.len()).max(1);

        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(task) = tasks.get(i) else { break };
                    let out = self.run_task(task, config, &limiter, &retry, &counters);
                    let failed = out.is_err();
                    results.lock().expect("results lock")[i] = Some(out);
                    if failed {
                        // Cache errors are fatal; stop handing out work.
                        next.store(tasks.len(), Ordering::Relaxed);
                    }
                });
            }
        });

        let mut outcome = GridOutcome {
            stats: GridStats {
                tasks: tasks.len(),
                cache_hits: counters.cache_hits.load(Ordering::Relaxed),
                provider_calls: counters.provider_calls.load(Ordering::Relaxed),
                retries: counters.retries.load(Ordering::Relaxed),
                failed: 0,
                duplicate_prompts,
            },
            ..GridOutcome::default()
        };
        for r in results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .flatten()
        {
            match r? {
                TaskResult::Done(resp) => outcome.responses.push(resp),
                TaskResult::Failed(f) => outcome.failures.push(f),
            }
        }
        outcome.stats.failed = outcome.failures.len();
        Ok(outcome)
    }

    fn run_task(
        &self,
        task: &Task<'_>,
        config: &RunConfig,
        limiter: &RateLimiter,
        retry: &RetryPolicy,
        counters: &Counters,
    ) -> Result<TaskResult, GatewayError> {
        let provider = self.provider.name();
        let key = CacheKey::new(
            provider,
            &config.model,
            task.temperature,
            task.run_index,
            task.prompt_hash,
        );
        if let Some(hit) = self.store.get(&key)? {
            counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(TaskResult::Done(hit));
        }
        let request = GenerationRequest {
            job: task.job,
            prompt_hash: task.prompt_hash,
            temperature: task.temperature,
            run_index: task.run_index,
            model: &config.model,
        };
        let mut attempt = 0u32;
        loop {
            if self.provider.is_remote() {
                limiter.acquire(self.clock);
            }
            counters.provider_calls.fetch_add(1, Ordering::Relaxed);
            match self.provider.generate(&request) {
                Ok(raw_text) => {
                    let response = LlmResponse {
                        prompt_hash: task.prompt_hash.to_string(),
                        temperature: task.temperature,
                        run_index: task.run_index,
                        raw_text,
                        provider: provider.to_string(),
                        model: config.model.clone(),
                        created_at: self.clock.utc_now(),
                    };
                    self.store.put(&response)?;
                    return Ok(TaskResult::Done(response));
                }
                Err(e) if e.is_retryable() && attempt < retry.max_retries => {
                    let delay = retry.delay(attempt);
                    log::warn!(
                        "{provider}: {e}; retry {} of {} for {} (t={}, run={}) in {delay:?}",
                        attempt + 1,
                        retry.max_retries,
                        &task.prompt_hash[..12.min(task.prompt_hash.len())],
                        format_temperature(task.temperature),
                        task.run_index
                    );
                    counters.retries.fetch_add(1, Ordering::Relaxed);
                    self.clock.sleep(delay);
                    attempt += 1;
                }
                Err(e) => {
                    log::error!(
                        "{provider}: giving up on {} after {} attempt(s): {e}",
                        task.prompt_hash,
                        attempt + 1
                    );
                    return Ok(TaskResult::Failed(FailedRequest {
                        prompt_hash: task.prompt_hash.to_string(),
                        headline_ids: task.job.headline_ids.clone(),
                        temperature: task.temperature,
                        run_index: task.run_index,
                        provider: provider.to_string(),
                        model: config.model.clone(),
                        attempts: attempt + 1,
                        error: e.to_string(),
                    }));
                }
            }
        }
    }
}

#[derive(Default)]
struct Counters {
    cache_hits: AtomicUsize,
    provider_calls: AtomicUsize,
    retries: AtomicUsize,
}

/// Order-independent digest over the identifying fields and text of a response set.
pub fn cache_digest(responses: &[LlmResponse]) -> String {
    let mut lines: Vec<String> = responses
        .iter()
        .map(|r| {
            format!(
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.provider,
                r.model,
                format_temperature(r.temperature),
                r.run_index,
                r.prompt_hash,
                sha256_hex(r.raw_text.as_bytes())
            )
        })
        .collect();
    lines.sort();
    sha256_hex(lines.join("\n").as_bytes())
}
