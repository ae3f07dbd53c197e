//! Demonstration bank: per-question-type exemplar (question, statement)
//! pairs used to prime the infilling LM.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{mask_count, MASK};
use crate::{Error, Result};

/// One demonstration: a question and its hand-written statement form.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DemoPair {
    pub question: String,
    pub statement: String,
}

/// Yes/no demonstrations come in polarity pairs: affirmative restatements and
/// negated restatements of the question.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct YesNoDemoSet {
    pub positive: Vec<DemoPair>,
    pub negative: Vec<DemoPair>,
}

#[derive(Deserialize)]
struct BankFile {
    #[serde(default)]
    wh: Vec<WhEntry>,
    #[serde(default)]
    yesno: Vec<YesNoEntry>,
}

#[derive(Deserialize)]
struct WhEntry {
    question_type: String,
    demos: Vec<DemoPair>,
}

#[derive(Deserialize)]
struct YesNoEntry {
    question_type: String,
    positive: Vec<DemoPair>,
    negative: Vec<DemoPair>,
}

/// Demonstrations keyed by question type, looked up by the longest type key
/// that prefixes the question (word-boundary aware, case-insensitive).
#[derive(Debug, Clone)]
pub struct DemonstrationBank {
    wh: BTreeMap<String, Vec<DemoPair>>,
    yesno: BTreeMap<String, YesNoDemoSet>,
}

impl DemonstrationBank {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::malformed("demo bank", path, e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: BankFile = toml::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("demo bank parse: {e}")))?;
        let mut wh = BTreeMap::new();
        for entry in file.wh {
            let key = entry.question_type.trim().to_lowercase();
            if key.is_empty() {
                return Err(Error::InvalidInput("empty wh question_type".into()));
            }
            if entry.demos.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "wh entry {key:?} has no demos"
                )));
            }
            for d in &entry.demos {
                if mask_count(&d.statement) != 1 {
                    return Err(Error::InvalidInput(format!(
                        "wh demo statement must contain exactly one {MASK:?}: {:?}",
                        d.statement
                    )));
                }
            }
            if wh.insert(key.clone(), entry.demos).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate wh question_type {key:?}"
                )));
            }
        }
        let mut yesno = BTreeMap::new();
        for entry in file.yesno {
            let key = entry.question_type.trim().to_lowercase();
            if key.is_empty() {
                return Err(Error::InvalidInput("empty yesno question_type".into()));
            }
            if entry.positive.is_empty() || entry.negative.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "yesno entry {key:?} needs both positive and negative demos"
                )));
            }
            for d in entry.positive.iter().chain(&entry.negative) {
                if mask_count(&d.statement) != 0 {
                    return Err(Error::InvalidInput(format!(
                        "yesno demo statement must not contain {MASK:?}: {:?}",
                        d.statement
                    )));
                }
            }
            let set = YesNoDemoSet {
                positive: entry.positive,
                negative: entry.negative,
            };
            if yesno.insert(key.clone(), set).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate yesno question_type {key:?}"
                )));
            }
        }
        if wh.is_empty() && yesno.is_empty() {
            return Err(Error::InvalidInput("demo bank is empty".into()));
        }
        Ok(DemonstrationBank { wh, yesno })
    }

    /// The bank shipped with the crate.
    pub fn builtin() -> Self {
        static FILE: &str = include_str!("../../data/demo_bank.toml");
        Self::from_toml(FILE).expect("builtin demo bank is well-formed")
    }

    pub fn wh_types(&self) -> impl Iterator<Item = &str> {
        self.wh.keys().map(String::as_str)
    }

    pub fn yesno_types(&self) -> impl Iterator<Item = &str> {
        self.yesno.keys().map(String::as_str)
    }

    /// Demos for a question, by longest matching type key.
    pub fn wh_demos(&self, question: &str) -> Option<(&str, &[DemoPair])> {
        longest_prefix_key(self.wh.keys(), question)
            .map(|k| (k.as_str(), self.wh[k].as_slice()))
    }

    pub fn yesno_demos(&self, question: &str) -> Option<(&str, &YesNoDemoSet)> {
        longest_prefix_key(self.yesno.keys(), question).map(|k| (k.as_str(), &self.yesno[k]))
    }
}

/// Longest key that prefixes `question` at a word boundary, case-insensitive.
fn longest_prefix_key<'a>(
    keys: impl Iterator<Item = &'a String>,
    question: &str,
) -> Option<&'a String> {
    let q = question.to_lowercase();
    let mut best: Option<&'a String> = None;
    for key in keys {
        if q.starts_with(key.as_str()) {
            let boundary = match q[key.len()..].chars().next() {
                None => true,
                Some(c) => !c.is_alphanumeric(),
            };
            if boundary && best.is_none_or(|b| key.len() > b.len()) {
                best = Some(key);
            }
        }
    }
    best
}
