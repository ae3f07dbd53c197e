//! Dataset ingestion and few-shot sampling.
//!
//! Loaders for the VQA question/annotation pair files and the visual
//! entailment jsonl format, the answer vocabulary, the question-type
//! taxonomy, and the seeded pool/episode sampler used by few-shot training.

mod fewshot;
mod snli;
mod taxonomy;
mod vocab;
mod vqa;

pub use fewshot::{
    split_episode, Episode, EpisodeManifest, FewShotPool, PoolManifest, PoolOptions, Way, WayKey,
};
pub use snli::{load_snli_ve, write_snli_ve, EntailLabel, VeExample};
pub use taxonomy::{Taxonomy, FALLBACK_QUESTION_TYPE};
pub use vocab::AnswerVocabulary;
pub use vqa::{load_vqa_split, VqaExample};

use serde::{Deserialize, Serialize};

/// Opaque reference to an image. The toolkit never decodes pixels itself;
/// encoder adapters interpret the string (a path, a dataset id, or one of the
/// reserved refs below).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        ImageRef(s.into())
    }

    /// Reference for a VQA image id.
    pub fn vqa(image_id: u64) -> Self {
        ImageRef(format!("vqa:{image_id}"))
    }

    /// Reference for a Flickr30K image id as used by the entailment data.
    pub fn flickr(id: &str) -> Self {
        ImageRef(format!("flickr:{id}"))
    }

    /// The reserved all-black image used as an information-free control.
    /// Adapters must map this to the embedding of a uniformly black input.
    pub fn black() -> Self {
        ImageRef("__black__".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ImageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// The three answer categories the VQA annotations distinguish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerType {
    #[serde(rename = "yes/no")]
    YesNo,
    #[serde(rename = "number")]
    Number,
    #[serde(rename = "other")]
    Other,
}

impl AnswerType {
    pub const ALL: [AnswerType; 3] = [AnswerType::YesNo, AnswerType::Number, AnswerType::Other];

    pub fn as_str(&self) -> &'static str {
        match self {
            AnswerType::YesNo => "yes/no",
            AnswerType::Number => "number",
            AnswerType::Other => "other",
        }
    }
}

impl std::fmt::Display for AnswerType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AnswerType {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes/no" => Ok(AnswerType::YesNo),
            "number" => Ok(AnswerType::Number),
            "other" => Ok(AnswerType::Other),
            other => Err(crate::Error::InvalidInput(format!(
                "unknown answer type {other:?} (expected yes/no, number, or other)"
            ))),
        }
    }
}
