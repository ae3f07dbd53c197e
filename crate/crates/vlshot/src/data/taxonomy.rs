//! Question-type taxonomy and longest-prefix classification.

use std::collections::BTreeSet;
use std::path::Path;

use crate::{Error, Result};

/// The taxonomy entry that absorbs questions matching no other prefix.
pub const FALLBACK_QUESTION_TYPE: &str = "none of the above";

/// An ordered set of lowercase question-type prefixes.
///
/// Classification is longest-matching-prefix on the lowercased question, with
/// matches required to end at a word boundary (so "is the" never claims an
/// "is there ..." question). Questions matching nothing fall back to
/// [`FALLBACK_QUESTION_TYPE`].
#[derive(Debug, Clone)]
pub struct Taxonomy {
    entries: Vec<String>,
}

impl Taxonomy {
    /// Build from entries; duplicates and empty entries are rejected.
    pub fn new(entries: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            let norm = e.trim().to_lowercase();
            if norm.is_empty() {
                return Err(Error::InvalidInput("empty taxonomy entry".into()));
            }
            if !seen.insert(norm.clone()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate taxonomy entry {norm:?}"
                )));
            }
        }
        Ok(Taxonomy {
            entries: entries.iter().map(|e| e.trim().to_lowercase()).collect(),
        })
    }

    /// Load a taxonomy file: one type per line, blank lines ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(entries).map_err(|e| Error::malformed("taxonomy file", path, e.to_string()))
    }

    /// The canonical 65-type VQA taxonomy shipped with the crate.
    pub fn builtin() -> Self {
        static FILE: &str = include_str!("../../data/question_types.txt");
        let entries = FILE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(entries).expect("builtin taxonomy is well-formed")
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

    pub fn contains(&self, entry: &str) -> bool {
        self.entries.iter().any(|e| e == entry)
    }

    /// Classify a question by longest matching prefix (word-boundary aware,
    /// case-insensitive). Returns [`FALLBACK_QUESTION_TYPE`] when nothing
    /// matches.
    pub fn classify(&self, question: &str) -> &str {
        let q = question.to_lowercase();
        let mut best: Option<&String> = None;
        for entry in &self.entries {
            if entry == FALLBACK_QUESTION_TYPE {
                continue;
            }
            if prefix_at_word_boundary(&q, entry)
                && best.is_none_or(|b| entry.len() > b.len())
            {
                best = Some(entry);
            }
        }
        best.map(String::as_str).unwrap_or(FALLBACK_QUESTION_TYPE)
    }

    /// All (question type, answer type) pairs this taxonomy spans, including
    /// the fallback type if absent from the entry list. With the canonical
    /// 65-entry list this yields 195 ways.
    pub fn way_keys(&self) -> Vec<(String, super::AnswerType)> {
        let mut types: Vec<&str> = self.entries.iter().map(String::as_str).collect();
        if !self.contains(FALLBACK_QUESTION_TYPE) {
            types.push(FALLBACK_QUESTION_TYPE);
        }
        types.sort_unstable();
        let mut keys = Vec::with_capacity(types.len() * super::AnswerType::ALL.len());
        for t in types {
            for at in super::AnswerType::ALL {
                keys.push((t.to_string(), at));
            }
        }
        keys
    }
}

/// True when `text` starts with `prefix` and the match ends at a word
/// boundary (end of text or a non-alphanumeric character).
fn prefix_at_word_boundary(text: &str, prefix: &str) -> bool {
    if !text.starts_with(prefix) {
        return false;
    }
    match text[prefix.len()..].chars().next() {
        None => true,
        Some(c) => !c.is_alphanumeric(),
    }
}
