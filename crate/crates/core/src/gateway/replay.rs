use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{GenerationRequest, LlmResponse, Provider, ProviderError};
use crate::util::{format_temperature, read_jsonl};

/// Serves archived generations byte-for-byte.
///
/// The archive is keyed by (prompt_hash, temperature, run_index). Any
/// JSONL file of [`LlmResponse`] records, such as a previous run's
/// `responses.jsonl`, can be loaded as an archive.
#[derive(Debug, Clone, Default)]
pub struct ReplayProvider {
    archive: HashMap<(String, String, usize), String>,
}

#[derive(Deserialize)]
struct ArchiveRecord {
    prompt_hash: String,
    temperature: f64,
    run_index: usize,
    raw_text: String,
}

impl ReplayProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        prompt_hash: &str,
        temperature: f64,
        run_index: usize,
        raw_text: impl Into<String>,
    ) {
        self.archive.insert(
            (
                prompt_hash.to_string(),
                format_temperature(temperature),
                run_index,
            ),
            raw_text.into(),
        );
    }

    pub fn from_responses<'a>(responses: impl IntoIterator<Item = &'a LlmResponse>) -> Self {
        let mut p = Self::new();
        for r in responses {
            p.insert(
                &r.prompt_hash,
                r.temperature,
                r.run_index,
                r.raw_text.clone(),
            );
        }
        p
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let records: Vec<ArchiveRecord> = read_jsonl(path)?;
        let mut p = Self::new();
        for r in records {
            p.insert(&r.prompt_hash, r.temperature, r.run_index, r.raw_text);
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.archive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archive.is_empty()
    }
}

impl Provider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        let key = (
            request.prompt_hash.to_string(),
            format_temperature(request.temperature),
            request.run_index,
        );
        self.archive
            .get(&key)
            .cloned()
            .ok_or(ProviderError::ReplayMiss {
                prompt_hash: key.0,
                temperature: key.1,
                run_index: key.2,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{PromptJob, PromptStyle};

    fn request<'a>(job: &'a PromptJob, hash: &'a str, run: usize) -> GenerationRequest<'a> {
        GenerationRequest {
            job,
            prompt_hash: hash,
            temperature: 0.5,
            run_index: run,
            model: "m",
        }
    }

    fn job() -> PromptJob {
        PromptJob {
            prompt_text: "p".into(),
            headline_ids: vec!["h".into()],
            style: PromptStyle::Single,
        }
    }

    #[test]
    fn returns_archived_bytes() {
        let mut p = ReplayProvider::new();
        p.insert("abc", 0.5, 1, "POSITIVE (0.9)");
        let j = job();
        assert_eq!(
            p.generate(&request(&j, "abc", 1)).unwrap(),
            "POSITIVE (0.9)"
        );
        assert_eq!(
            p.generate(&request(&j, "abc", 1)).unwrap(),
            p.generate(&request(&j, "abc", 1)).unwrap()
        );
    }

    #[test]
    fn miss_names_the_tuple() {
        let p = ReplayProvider::new();
        let j = job();
        let err = p.generate(&request(&j, "nope", 2)).unwrap_err();
        assert_eq!(
            err,
            ProviderError::ReplayMiss {
                prompt_hash: "nope".into(),
                temperature: "0.5".into(),
                run_index: 2
            }
        );
        assert!(err.to_string().contains("nope"));
        assert!(!err.is_retryable());
    }

    #[test]
    fn loads_response_jsonl() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(
            f.path(),
            "{\"prompt_hash\":\"abc\",\"temperature\":0.5,\"run_index\":0,\"raw_text\":\"neutral \\u00e9\",\"provider\":\"x\",\"model\":\"m\",\"created_at\":\"2024-01-01T00:00:00Z\"}\n",
        )
        .unwrap();
        let p = ReplayProvider::load(f.path()).unwrap();
        let j = job();
        assert_eq!(p.generate(&request(&j, "abc", 0)).unwrap(), "neutral é");
    }
}
