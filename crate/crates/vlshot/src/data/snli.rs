//! Visual entailment data (SNLI-VE style jsonl).

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ImageRef;
use crate::{Error, Result};

/// The three-way entailment labels, in the fixed index order used by the
/// transfer classifier's output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntailLabel {
    #[serde(rename = "entailment")]
    Entailment,
    #[serde(rename = "neutral")]
    Neutral,
    #[serde(rename = "contradiction")]
    Contradiction,
}

impl EntailLabel {
    pub const ALL: [EntailLabel; 3] = [
        EntailLabel::Entailment,
        EntailLabel::Neutral,
        EntailLabel::Contradiction,
    ];

    pub fn index(&self) -> usize {
        match self {
            EntailLabel::Entailment => 0,
            EntailLabel::Neutral => 1,
            EntailLabel::Contradiction => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EntailLabel::Entailment => "entailment",
            EntailLabel::Neutral => "neutral",
            EntailLabel::Contradiction => "contradiction",
        }
    }
}

impl std::fmt::Display for EntailLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One premise-image / text-premise / hypothesis triple.
///
/// The image premise and the text premise describe the same scene, which is
/// what makes cross-modality substitution meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VeExample {
    pub pair_id: String,
    pub image: ImageRef,
    /// Text premise (the caption the hypothesis was written against).
    pub premise: String,
    pub hypothesis: String,
    pub label: EntailLabel,
}

#[derive(Deserialize)]
struct VeRecord {
    #[serde(rename = "pairID")]
    pair_id: String,
    #[serde(rename = "Flickr30K_ID")]
    flickr30k_id: String,
    sentence1: String,
    sentence2: String,
    gold_label: String,
}

/// Load a jsonl visual-entailment split. Records whose `gold_label` is not
/// one of the three classes (e.g. `-` for unresolved annotator disagreement)
/// are skipped, matching the usual treatment of such rows.
pub fn load_snli_ve(path: &Path) -> Result<Vec<VeExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VeRecord = serde_json::from_str(&line).map_err(|e| {
            Error::malformed("entailment jsonl", path, format!("line {}: {e}", lineno + 1))
        })?;
        let label = match rec.gold_label.as_str() {
            "entailment" => EntailLabel::Entailment,
            "neutral" => EntailLabel::Neutral,
            "contradiction" => EntailLabel::Contradiction,
            "-" => continue,
            other => {
                return Err(Error::malformed(
                    "entailment jsonl",
                    path,
                    format!("line {}: unknown gold_label {other:?}", lineno + 1),
                ))
            }
        };
        examples.push(VeExample {
            pair_id: rec.pair_id,
            image: ImageRef::flickr(&rec.flickr30k_id),
            premise: rec.sentence1,
            hypothesis: rec.sentence2,
            label,
        });
    }
    Ok(examples)
}

/// Write examples back out in the same jsonl schema `load_snli_ve` reads.
/// Mostly useful for materializing synthetic fixtures that the run commands
/// can consume like real splits.
pub fn write_snli_ve(path: &Path, examples: &[VeExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        let flickr_id = ex
            .image
            .as_str()
            .strip_prefix("flickr:")
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "entailment images use flickr ids, got {}",
                    ex.image.as_str()
                ))
            })?;
        let record = serde_json::json!({
            "pairID": ex.pair_id,
            "Flickr30K_ID": flickr_id,
            "sentence1": ex.premise,
            "sentence2": ex.hypothesis,
            "gold_label": ex.label.as_str(),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
