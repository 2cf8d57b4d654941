//! Synthetic supervision: prompt rendering, LLM clients, output parsing,
//! quality control and dataset assembly.

mod client;
mod dataset;
mod prompt;
mod quality;

pub use client::{
    stub_reserved_chars, CompletionRequest, HttpClientConfig, HttpLlmClient, LlmClient,
    StubClient,
};
pub use dataset::{
    build_dataset, generate_samples, BuildConfig, BuildReport, GenerationOutcome, QcParams,
    VariantCounts,
};
pub use prompt::{parse_llm_output, render_prompt, PromptMessages, CONTEXT_ANCHOR_SUFFIX, SYSTEM_PROMPT};
pub use quality::{ambiguous_skills, dedup, ngram_diversity_violations, DedupOutcome, Violation};

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::Skill;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Single,
    MultiConstrained,
    MultiRandom,
    None,
}

impl Variant {
    pub fn skill_count(self) -> usize {
        match self {
            Variant::None => 0,
            Variant::Single => 1,
            Variant::MultiConstrained | Variant::MultiRandom => 2,
        }
    }

    pub fn partition(self) -> Partition {
        match self {
            Variant::Single => Partition::Single,
            Variant::MultiConstrained | Variant::MultiRandom => Partition::Multi,
            Variant::None => Partition::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::MultiConstrained => "multi_constrained",
            Variant::MultiRandom => "multi_random",
            Variant::None => "none",
        }
    }
}

/// The three named training subsets. Random pairs live in the multi
/// partition and stay distinguishable through their variant tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Single,
    Multi,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Llm,
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    /// Token budget per requested sentence.
    pub max_tokens: u32,
    pub presence_penalty: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 128,
            presence_penalty: 0.0,
        }
    }
}

impl DecodingParams {
    /// The settings listed with the generation scripts (higher temperature,
    /// presence penalty on).
    pub fn appendix() -> Self {
        Self {
            temperature: 0.9,
            presence_penalty: 0.8,
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" | "body" => Ok(Self::default()),
            "appendix" => Ok(Self::appendix()),
            other => Err(Error::invalid(format!("unknown decoding profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::invalid("temperature must be non-negative"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid("top_p must lie in (0, 1]"));
        }
        if self.max_tokens == 0 || self.max_tokens > 512 {
            return Err(Error::invalid("max_tokens must lie in 1..=512"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSpec {
    pub variant: Variant,
    pub skills: Vec<Skill>,
    pub n_sentences: usize,
    pub decoding: DecodingParams,
    /// Ask for role/task anchors; set for skills with many close neighbours.
    pub context_anchors: bool,
    /// Per-request seed forwarded to the client.
    pub seed: u64,
}

impl GenerationSpec {
    pub fn new(variant: Variant, skills: Vec<Skill>, n_sentences: usize) -> Result<Self> {
        let spec = Self {
            variant,
            skills,
            n_sentences,
            decoding: DecodingParams::default(),
            context_anchors: false,
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.skills.len() != self.variant.skill_count() {
            return Err(Error::invalid(format!(
                "variant {} needs {} skill(s), got {}",
                self.variant.as_str(),
                self.variant.skill_count(),
                self.skills.len()
            )));
        }
        if self.n_sentences == 0 {
            return Err(Error::invalid("n_sentences must be at least 1"));
        }
        self.decoding.validate()
    }

    pub fn skill_ids(&self) -> Vec<String> {
        self.skills.iter().map(|s| s.skill_id.clone()).collect()
    }
}

impl fmt::Display for GenerationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}] n={}",
            self.variant.as_str(),
            self.skill_ids().join(","),
            self.n_sentences
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub text: String,
    pub skill_ids: Vec<String>,
    pub variant: Variant,
    pub source: Source,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn new(samples: Vec<SyntheticSample>) -> Self {
        Self { samples }
    }

    pub fn partition(&self, p: Partition) -> Vec<&SyntheticSample> {
        self.samples
            .iter()
            .filter(|s| s.variant.partition() == p)
            .collect()
    }

    pub fn d_single(&self) -> Vec<&SyntheticSample> {
        self.partition(Partition::Single)
    }

    pub fn d_multi(&self) -> Vec<&SyntheticSample> {
        self.partition(Partition::Multi)
    }

    pub fn d_none(&self) -> Vec<&SyntheticSample> {
        self.partition(Partition::None)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, &self.samples)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        Ok(Self::new(crate::io::read_jsonl(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_record_shape() {
        let s = SyntheticSample {
            text: "熟悉Java".into(),
            skill_ids: vec!["a".into(), "b".into()],
            variant: Variant::MultiConstrained,
            source: Source::Stub,
        };
        let line = serde_json::to_string(&s).unwrap();
        assert_eq!(
            line,
            r#"{"text":"熟悉Java","skill_ids":["a","b"],"variant":"multi_constrained","source":"stub"}"#
        );
    }

    #[test]
    fn decoding_profiles() {
        let d = DecodingParams::default();
        assert_eq!((d.temperature, d.top_p, d.max_tokens, d.presence_penalty), (0.7, 0.9, 128, 0.0));
        let a = DecodingParams::profile("appendix").unwrap();
        assert_eq!((a.temperature, a.presence_penalty), (0.9, 0.8));
        assert!(DecodingParams { top_p: 0.0, ..d }.validate().is_err());
        assert!(DecodingParams { max_tokens: 513, ..d }.validate().is_err());
    }

    #[test]
    fn spec_skill_count_must_match_variant() {
        assert!(GenerationSpec::new(Variant::None, vec![], 3).is_ok());
        assert!(GenerationSpec::new(Variant::Single, vec![], 3).is_err());
        assert!(GenerationSpec::new(Variant::None, vec![], 0).is_err());
    }
}
