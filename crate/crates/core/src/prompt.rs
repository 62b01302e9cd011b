//! Prompt rendering for single-headline and numbered batch prompts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Headline;
use crate::util::sha256_hex;

pub const HEADLINE_PLACEHOLDER: &str = "{HEADLINE}";
pub const BATCH_ITEM_PLACEHOLDER: &str = "{HEADLINE_i}";
pub const BATCH_INDEX_PLACEHOLDER: &str = "{i}";
pub const DEFAULT_BATCH_SIZE: usize = 50;

/// Instruction-tuned single-headline template with `[INST]` wrapper.
pub const LLAMA_SINGLE_TEMPLATE: &str = include_str!("../templates/llama_single.txt");
/// Numbered batch template; the `{i}. {HEADLINE_i}` line repeats once per headline.
pub const GPT_BATCH_TEMPLATE: &str = include_str!("../templates/gpt_batch.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error(
        "single template must contain exactly one {HEADLINE_PLACEHOLDER} placeholder, found {0}"
    )]
    SinglePlaceholder(usize),
    #[error(
        "batch template must contain exactly one line with {BATCH_ITEM_PLACEHOLDER}, found {0}"
    )]
    BatchItemLine(usize),
    #[error("batch item line must start with `{{i}}.`, `{{i}})` or `{{i}}:`, got {0:?}")]
    BatchItemPrefix(String),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("cannot read template {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    Single,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptJob {
    pub prompt_text: String,
    /// Headline ids in prompt order; batch line `n.` belongs to `headline_ids[n - 1]`.
    pub headline_ids: Vec<String>,
    pub style: PromptStyle,
}

impl PromptJob {
    /// Hex SHA-256 of the UTF-8 prompt bytes.
    pub fn prompt_hash(&self) -> String {
        sha256_hex(self.prompt_text.as_bytes())
    }
}

/// A validated single-headline template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleTemplate(String);

impl SingleTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        let n = text.matches(HEADLINE_PLACEHOLDER).count();
        if n != 1 {
            return Err(PromptError::SinglePlaceholder(n));
        }
        Ok(Self(text))
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::new(read_template(path)?)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for SingleTemplate {
    fn default() -> Self {
        Self::new(LLAMA_SINGLE_TEMPLATE).expect("bundled single template is valid")
    }
}

/// A validated batch template: header, one repeating item line, footer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchTemplate {
    header: String,
    item: String,
    footer: String,
}

impl BatchTemplate {
    pub fn new(text: &str) -> Result<Self, PromptError> {
        let lines: Vec<&str> = text.split('\n').collect();
        let item_lines: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.contains(BATCH_ITEM_PLACEHOLDER))
            .map(|(i, _)| i)
            .collect();
        if item_lines.len() != 1 {
            return Err(PromptError::BatchItemLine(item_lines.len()));
        }
        let at = item_lines[0];
        let item = lines[at];
        let delimited = item
            .strip_prefix(BATCH_INDEX_PLACEHOLDER)
            .and_then(|rest| rest.chars().next())
            .is_some_and(|c| matches!(c, '.' | ')' | ':'));
        if !delimited {
            return Err(PromptError::BatchItemPrefix(item.to_string()));
        }
        Ok(Self {
            header: lines[..at].join("\n"),
            item: item.to_string(),
            footer: lines[at + 1..].join("\n"),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::new(&read_template(path)?)
    }

    fn render(&self, texts: &[&str]) -> String {
        let mut out = String::new();
        out.push_str(&self.header);
        for (i, text) in texts.iter().enumerate() {
            out.push('\n');
            // The index goes in first so a headline containing "{i}" is left alone.
            let line = self
                .item
                .replacen(BATCH_INDEX_PLACEHOLDER, &(i + 1).to_string(), 1)
                .replacen(BATCH_ITEM_PLACEHOLDER, &flatten(text), 1);
            out.push_str(&line);
        }
        out.push('\n');
        out.push_str(&self.footer);
        out
    }
}

impl Default for BatchTemplate {
    fn default() -> Self {
        Self::new(GPT_BATCH_TEMPLATE).expect("bundled batch template is valid")
    }
}

fn read_template(path: &Path) -> Result<String, PromptError> {
    fs::read_to_string(path).map_err(|e| PromptError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Collapses any whitespace run, newlines included, to one space.
fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_single(headline: &Headline, template: &SingleTemplate) -> PromptJob {
    PromptJob {
        prompt_text: template.0.replacen(HEADLINE_PLACEHOLDER, &headline.text, 1),
        headline_ids: vec![headline.id.clone()],
        style: PromptStyle::Single,
    }
}

/// Chunks headlines in order into numbered batch prompts; the last chunk may be short.
pub fn render_batch(
    headlines: &[Headline],
    batch_size: usize,
    template: &BatchTemplate,
) -> Result<Vec<PromptJob>, PromptError> {
    if batch_size == 0 {
        return Err(PromptError::ZeroBatchSize);
    }
    Ok(headlines
        .chunks(batch_size)
        .map(|chunk| {
            let texts: Vec<&str> = chunk.iter().map(|h| h.text.as_str()).collect();
            PromptJob {
                prompt_text: template.render(&texts),
                headline_ids: chunk.iter().map(|h| h.id.clone()).collect(),
                style: PromptStyle::Batch,
            }
        })
        .collect())
}

/// Orders headlines for batching: effective date, then id.
pub fn batch_order(headlines: &mut [Headline]) {
    headlines.sort_by(|a, b| {
        a.effective_date
            .cmp(&b.effective_date)
            .then_with(|| a.id.cmp(&b.id))
    });
}
