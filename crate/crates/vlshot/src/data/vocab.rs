//! Answer vocabulary.
//!
//! A plain-text file, one answer per line, order-significant: the line index
//! is the vocabulary index used for deterministic tie-breaking in top-k
//! filtering. The canonical VQA list has 3,129 entries but the type works
//! with any size.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::util::hex;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AnswerVocabulary {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    /// Build from an ordered list of answers. Empty entries and duplicates
    /// are rejected — a duplicate would make vocabulary-index tie-breaking
    /// ambiguous.
    pub fn new(entries: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if entry.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "vocabulary entry {i} is empty"
                )));
            }
            if index.insert(entry.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary entry {entry:?}"
                )));
            }
        }
        Ok(AnswerVocabulary { entries, index })
    }

    /// Load from a file with one answer per line. Trailing newlines are
    /// tolerated; interior blank lines are not (they would silently shift
    /// every later index).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines: Vec<&str> = text.lines().collect();
        while lines.last().is_some_and(|l| l.trim().is_empty()) {
            lines.pop();
        }
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                return Err(Error::malformed(
                    "vocabulary file",
                    path,
                    format!("blank line {} inside the list", i + 1),
                ));
            }
        }
        Self::new(lines.into_iter().map(str::to_string).collect())
            .map_err(|e| Error::malformed("vocabulary file", path, e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.entries.get(i).map(String::as_str)
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn contains(&self, answer: &str) -> bool {
        self.index.contains_key(answer)
    }

    /// Content hash over the ordered entries; part of the filtered-set cache
    /// key so cached rankings are never reused across vocabularies.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for entry in &self.entries {
            hasher.update(entry.as_bytes());
            hasher.update([0u8]);
        }
        hex(&hasher.finalize())
    }
}
