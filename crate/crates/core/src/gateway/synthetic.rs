use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{GenerationRequest, Provider, ProviderError};
use crate::parser::Label;
use crate::prompt::PromptStyle;
use crate::util::format_temperature;

pub const CANONICAL_CONFIDENCE: &str = "0.9";

/// One entry of the noise bank: the text and the label it is meant to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub text: &'static str,
    pub label: Label,
}

const fn v(text: &'static str, label: Label) -> Variant {
    Variant { text, label }
}

/// Phrasings drawn uniformly when a generation is noisy.
pub const VARIANT_BANK: [Variant; 12] = [
    v("POSITIVE (0.9)", Label::Positive),
    v("Positive (0.75)", Label::Positive),
    v(
        "The sentiment is positive, confidence 0.6.",
        Label::Positive,
    ),
    v("not negative (0.55)", Label::Positive),
    v("NEGATIVE (0.9)", Label::Negative),
    v("negative (0.7)", Label::Negative),
    v(
        "The headline is not positive for the company (0.65).",
        Label::Negative,
    ),
    v("NEUTRAL (0.9)", Label::Neutral),
    v("Neutral (0.5)", Label::Neutral),
    v(
        "I cannot determine the sentiment of this text.",
        Label::Neutral,
    ),
    v(
        "Mixed: both positive and negative aspects (0.5).",
        Label::Neutral,
    ),
    v("SENTIMENT_LABEL (CONFIDENCE)", Label::Neutral),
];

fn canonical(label: Label) -> &'static str {
    match label {
        Label::Positive => "POSITIVE (0.9)",
        Label::Neutral => "NEUTRAL (0.9)",
        Label::Negative => "NEGATIVE (0.9)",
    }
}

/// Probability that a generation departs from the planted label's canonical phrasing.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSchedule {
    Constant {
        epsilon: f64,
    },
    /// `at_zero + per_unit * temperature`, clamped to `[0, 1]`.
    Linear {
        at_zero: f64,
        per_unit: f64,
    },
}

impl NoiseSchedule {
    pub fn constant(epsilon: f64) -> Self {
        NoiseSchedule::Constant { epsilon }
    }

    pub fn at(&self, temperature: f64) -> f64 {
        let raw = match *self {
            NoiseSchedule::Constant { epsilon } => epsilon,
            NoiseSchedule::Linear { at_zero, per_unit } => at_zero + per_unit * temperature,
        };
        raw.clamp(0.0, 1.0)
    }
}

/// Offline stand-in for a model. With probability `1 - noise` it answers the
/// planted label in canonical form; otherwise it picks uniformly from
/// [`VARIANT_BANK`]. Every draw is a pure function of
/// (seed, prompt hash, temperature, run, headline id).
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    schedule: NoiseSchedule,
    seed: u64,
    planted: HashMap<String, Label>,
}

impl SyntheticProvider {
    pub fn new(schedule: NoiseSchedule, seed: u64, planted: HashMap<String, Label>) -> Self {
        Self {
            schedule,
            seed,
            planted,
        }
    }

    fn rng(&self, request: &GenerationRequest<'_>, headline_id: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for part in [
            request.prompt_hash,
            &format_temperature(request.temperature),
            &request.run_index.to_string(),
            headline_id,
        ] {
            h.update([0x1f]);
            h.update(part.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn phrase(
        &self,
        request: &GenerationRequest<'_>,
        headline_id: &str,
    ) -> Result<&'static str, ProviderError> {
        let label = *self
            .planted
            .get(headline_id)
            .ok_or_else(|| ProviderError::MissingPlanted(headline_id.to_string()))?;
        let noise = self.schedule.at(request.temperature);
        let mut rng = self.rng(request, headline_id);
        let u: f64 = rng.gen();
        Ok(if u < noise {
            VARIANT_BANK[rng.gen_range(0..VARIANT_BANK.len())].text
        } else {
            canonical(label)
        })
    }
}

impl Provider for SyntheticProvider {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        let ids = &request.job.headline_ids;
        match request.job.style {
            PromptStyle::Single => {
                let id = ids.first().ok_or_else(|| {
                    ProviderError::Fatal("single prompt without a headline".into())
                })?;
                Ok(self.phrase(request, id)?.to_string())
            }
            PromptStyle::Batch => {
                let mut lines = Vec::with_capacity(ids.len());
                for (i, id) in ids.iter().enumerate() {
                    lines.push(format!("{}. {}", i + 1, self.phrase(request, id)?));
                }
                Ok(lines.join("\n"))
            }
        }
    }
}
