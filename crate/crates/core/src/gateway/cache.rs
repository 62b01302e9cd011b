use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{GatewayError, LlmResponse};
use crate::util::format_temperature;

/// Identity of one cached generation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub provider: String,
    pub model: String,
    pub temperature: String,
    pub run_index: usize,
    pub prompt_hash: String,
}

impl CacheKey {
    pub fn new(
        provider: &str,
        model: &str,
        temperature: f64,
        run_index: usize,
        prompt_hash: &str,
    ) -> Self {
        Self {
            provider: provider.to_string(),
            model: model.to_string(),
            temperature: format_temperature(temperature),
            run_index,
            prompt_hash: prompt_hash.to_string(),
        }
    }

    pub fn of(response: &LlmResponse) -> Self {
        Self::new(
            &response.provider,
            &response.model,
            response.temperature,
            response.run_index,
            &response.prompt_hash,
        )
    }
}

pub trait ResponseStore: Send + Sync {
    fn get(&self, key: &CacheKey) -> Result<Option<LlmResponse>, GatewayError>;
    fn put(&self, response: &LlmResponse) -> Result<(), GatewayError>;
}

/// In-process store for tests and throwaway experiments.
#[derive(Debug, Default)]
pub struct MemoryStore {
    entries: Mutex<HashMap<CacheKey, LlmResponse>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseStore for MemoryStore {
    fn get(&self, key: &CacheKey) -> Result<Option<LlmResponse>, GatewayError> {
        Ok(self.entries.lock().expect("store lock").get(key).cloned())
    }

    fn put(&self, response: &LlmResponse) -> Result<(), GatewayError> {
        self.entries
            .lock()
            .expect("store lock")
            .insert(CacheKey::of(response), response.clone());
        Ok(())
    }
}

/// One JSON file per response at
/// `<root>/<provider>/<model>/<temperature>/<run>/<prompt_hash>.json`.
///
/// Writes go through a temp file in the target directory followed by a
/// rename, so concurrent writers never expose a partial file.
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

/// Keeps path components to `[A-Za-z0-9._-]`; model names like `org/model` become `org_model`.
fn component(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    match cleaned.as_str() {
        "" | "." | ".." => format!("_{cleaned}"),
        _ => cleaned,
    }
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root
            .join(component(&key.provider))
            .join(component(&key.model))
            .join(component(&key.temperature))
            .join(key.run_index.to_string())
            .join(format!("{}.json", component(&key.prompt_hash)))
    }
}

impl ResponseStore for DirStore {
    fn get(&self, key: &CacheKey) -> Result<Option<LlmResponse>, GatewayError> {
        let path = self.path_for(key);
        let body = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::cache(&path, e)),
        };
        let response: LlmResponse =
            serde_json::from_slice(&body).map_err(|e| GatewayError::cache(&path, e))?;
        Ok(Some(response))
    }

    fn put(&self, response: &LlmResponse) -> Result<(), GatewayError> {
        let path = self.path_for(&CacheKey::of(response));
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| GatewayError::cache(dir, e))?;
        let mut tmp =
            tempfile::NamedTempFile::new_in(dir).map_err(|e| GatewayError::cache(dir, e))?;
        let body = serde_json::to_vec_pretty(response).expect("response serializes");
        tmp.write_all(&body)
            .and_then(|_| tmp.write_all(b"\n"))
            .map_err(|e| GatewayError::cache(&path, e))?;
        tmp.persist(&path)
            .map_err(|e| GatewayError::cache(&path, e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};

    fn response(model: &str, t: f64, run: usize) -> LlmResponse {
        LlmResponse {
            prompt_hash: "ab12".into(),
            temperature: t,
            run_index: run,
            raw_text: "POSITIVE (0.9)".into(),
            provider: "synthetic".into(),
            model: model.into(),
            created_at: DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
        }
    }

    #[test]
    fn layout_matches_contract() {
        let store = DirStore::new("cache");
        let key = CacheKey::of(&response("meta/llama-2-7b", 0.25, 2));
        assert_eq!(
            store.path_for(&key),
            PathBuf::from("cache/synthetic/meta_llama-2-7b/0.25/2/ab12.json")
        );
    }

    #[test]
    fn dir_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = DirStore::new(dir.path());
        let r = response("m", 1.0, 0);
        let key = CacheKey::of(&r);
        assert_eq!(store.get(&key).unwrap(), None);
        store.put(&r).unwrap();
        assert_eq!(store.get(&key).unwrap(), Some(r.clone()));
        assert!(dir.path().join("synthetic/m/1/0/ab12.json").exists());
        // Negative zero shares the zero directory.
        assert_eq!(
            CacheKey::new("p", "m", -0.0, 0, "h"),
            CacheKey::new("p", "m", 0.0, 0, "h")
        );
    }

    #[test]
    fn concurrent_puts_are_safe() {
        let dir = tempfile::tempdir().unwrap();
        let store = DirStore::new(dir.path());
        std::thread::scope(|s| {
            for run in 0..8 {
                let store = &store;
                s.spawn(move || {
                    for _ in 0..20 {
                        store.put(&response("m", 0.5, run % 2)).unwrap();
                    }
                });
            }
        });
        for run in 0..2 {
            let key = CacheKey::of(&response("m", 0.5, run));
            assert!(store.get(&key).unwrap().is_some());
        }
    }
}
