//! Demonstration-primed template generation.
//!
//! The request shown to the infilling LM is the type's demonstrations, each
//! as "question statement", followed by the target question and the model's
//! span sentinel. The model's best span that carries exactly one mask slot
//! becomes the template; its mean per-token log-probability becomes the
//! confidence the ensemble arbitrates on.

use super::bank::{DemoPair, DemonstrationBank};
use super::{mask_count, MaskedTemplate, TemplateSource};
use crate::lm::{GenOptions, InfillLm};
use crate::{Error, Result};

/// Assemble the infill request from demonstrations, the target question, and
/// the sentinel. Demonstration text is embedded verbatim.
pub fn build_infill_request(demos: &[DemoPair], question: &str, sentinel: &str) -> String {
    let mut parts = Vec::with_capacity(demos.len() * 2 + 2);
    for d in demos {
        parts.push(d.question.as_str());
        parts.push(d.statement.as_str());
    }
    parts.push(question);
    parts.push(sentinel);
    parts.join(" ")
}

/// Generate a masked template for `question` by demonstration priming.
///
/// Fails (softly, for the caller to fall back on the parsing route) when the
/// bank has no demonstrations for the question's type or when none of the
/// generated spans carries exactly one mask slot.
pub fn generate_template_demo(
    lm: &dyn InfillLm,
    bank: &DemonstrationBank,
    question: &str,
    opts: &GenOptions,
) -> Result<MaskedTemplate> {
    let (_qtype, demos) = bank.wh_demos(question).ok_or_else(|| {
        Error::LanguageModel(format!(
            "no demonstrations for question {question:?}"
        ))
    })?;
    let request = build_infill_request(demos, question, lm.sentinel());
    let spans = lm.generate_spans(&request, opts)?;
    let best = spans
        .iter()
        .filter(|s| mask_count(&s.text) == 1)
        .max_by(|a, b| a.log_prob.total_cmp(&b.log_prob))
        .ok_or_else(|| {
            Error::LanguageModel(format!(
                "none of {} generated spans carried exactly one mask slot",
                spans.len()
            ))
        })?;
    MaskedTemplate::new(
        best.text.clone(),
        TemplateSource::Demo,
        Some(best.mean_token_log_prob()),
    )
}

/// The statement pair for a yes/no question, prompt order (positive,
/// negative) matching answer order ("yes", "no").
#[derive(Debug, Clone, PartialEq)]
pub struct YesNoStatements {
    pub positive: String,
    pub negative: String,
}

/// Generate the affirmative and negated restatements of a yes/no question,
/// each primed with the matching polarity's demonstrations. Spans containing
/// a mask slot are rejected — yes/no statements have no answer slot.
pub fn generate_yesno_statements(
    lm: &dyn InfillLm,
    bank: &DemonstrationBank,
    question: &str,
    opts: &GenOptions,
) -> Result<YesNoStatements> {
    let (_qtype, set) = bank.yesno_demos(question).ok_or_else(|| {
        Error::LanguageModel(format!(
            "no yes/no demonstrations for question {question:?}"
        ))
    })?;
    let gen_side = |demos: &[DemoPair], side: &str| -> Result<String> {
        let request = build_infill_request(demos, question, lm.sentinel());
        let spans = lm.generate_spans(&request, opts)?;
        let best = spans
            .iter()
            .filter(|s| mask_count(&s.text) == 0)
            .max_by(|a, b| a.log_prob.total_cmp(&b.log_prob))
            .ok_or_else(|| {
                Error::LanguageModel(format!(
                    "no usable {side} statement among {} spans",
                    spans.len()
                ))
            })?;
        Ok(best.text.clone())
    };
    Ok(YesNoStatements {
        positive: gen_side(&set.positive, "positive")?,
        negative: gen_side(&set.negative, "negative")?,
    })
}
