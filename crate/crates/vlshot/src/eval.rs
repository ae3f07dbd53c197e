//! Scoring: the consensus VQA metric, answer normalization, aggregate
//! reporting, entailment accuracy, and the question-prefix baseline prompts.

use serde::{Deserialize, Serialize};

use crate::data::{AnswerType, EntailLabel};
use crate::{Error, Result};

/// Outcome of one scored question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResult {
    pub question_id: u64,
    pub answer_type: AnswerType,
    pub prediction: String,
    /// Consensus score in {0, 1/3, 2/3, 1}.
    pub score: f64,
    /// Present when the pipeline degraded for this question instead of
    /// producing a real prediction (the score is then 0).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Mean scores (×100) overall and per answer category. Categories with no
/// questions are absent rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBreakdown {
    pub all: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub yes_no: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub number: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub other: Option<f64>,
    pub questions: usize,
}

/// Normalize an answer for matching: lowercase, strip punctuation (commas
/// and periods between digits are removed outright so "1,000" and "1000"
/// agree; apostrophes survive so contractions keep their identity), drop the
/// articles a/an/the, and collapse whitespace. Idempotent.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut cleaned = String::with_capacity(lower.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() || c == '\'' || c.is_whitespace() {
            cleaned.push(c);
        } else if c == '.' || c == ',' {
            let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
            let next_digit = i + 1 < chars.len() && chars[i + 1].is_ascii_digit();
            if !(prev_digit && next_digit) {
                cleaned.push(' ');
            }
        } else {
            cleaned.push(' ');
        }
    }
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The consensus metric: a prediction earns min(matches / 3, 1) where
/// `matches` counts annotator answers equal to it after normalization. Three
/// agreeing annotators make an answer fully correct.
pub fn vqa_score(prediction: &str, gold_answers: &[String]) -> f64 {
    let pred = normalize_answer(prediction);
    let matches = gold_answers
        .iter()
        .filter(|g| normalize_answer(g) == pred)
        .count();
    (matches as f64 / 3.0).min(1.0)
}

/// Unweighted mean of per-question scores, ×100, with per-category slices.
pub fn aggregate(results: &[VqaResult]) -> Result<EvalBreakdown> {
    if results.is_empty() {
        return Err(Error::InvalidInput(
            "cannot aggregate an empty result set".into(),
        ));
    }
    let mean_pct = |subset: &[&VqaResult]| -> Option<f64> {
        if subset.is_empty() {
            None
        } else {
            Some(subset.iter().map(|r| r.score).sum::<f64>() / subset.len() as f64 * 100.0)
        }
    };
    let slice = |t: AnswerType| -> Vec<&VqaResult> {
        results.iter().filter(|r| r.answer_type == t).collect()
    };
    let all: Vec<&VqaResult> = results.iter().collect();
    Ok(EvalBreakdown {
        all: mean_pct(&all).expect("non-empty checked above"),
        yes_no: mean_pct(&slice(AnswerType::YesNo)),
        number: mean_pct(&slice(AnswerType::Number)),
        other: mean_pct(&slice(AnswerType::Other)),
        questions: results.len(),
    })
}

/// Fraction of correct three-way predictions, ×100.
pub fn entailment_accuracy(predictions: &[EntailLabel], golds: &[EntailLabel]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::InvalidInput("empty prediction set".into()));
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / golds.len() as f64 * 100.0)
}

/// Question-prefix baseline prompts: no template, no filtering, just the
/// question and each candidate answer pasted together.
pub fn build_qip_prompts(question: &str, answers: &[String]) -> Vec<String> {
    answers
        .iter()
        .map(|a| format!("question: {question} answer: {a}"))
        .collect()
}
