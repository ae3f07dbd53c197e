//! Question → masked-statement templates.
//!
//! Two independent converters produce a masked declarative template for a
//! question: [`generate_template_demo`] primes a span-infilling LM with
//! demonstrations of the question's type, and [`question_to_statement`]
//! applies dependency-parse rules directly. [`ensemble_template`] arbitrates
//! between them. Yes/no questions get a positive/negative statement pair
//! instead of a masked template.

mod bank;
mod demo;
mod parsing;

pub use bank::{DemoPair, DemonstrationBank, YesNoDemoSet};
pub use demo::{build_infill_request, generate_template_demo, generate_yesno_statements, YesNoStatements};
pub use parsing::{generate_template_parsing, question_to_statement};

use crate::{Error, Result};

/// The mask token that marks the answer slot in a template.
pub const MASK: &str = "[mask]";

/// How a template was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TemplateSource {
    /// Demonstration-primed LM generation.
    #[serde(rename = "demo")]
    Demo,
    /// Dependency-parse conversion rules.
    #[serde(rename = "parsing")]
    Parsing,
}

/// A declarative statement with exactly one answer slot.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskedTemplate {
    pub text: String,
    pub source: TemplateSource,
    /// Mean per-token log-probability of the generated span; only present
    /// for demo templates (parse rules have no notion of confidence).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confidence: Option<f64>,
}

/// Number of occurrences of the mask token in a string.
pub fn mask_count(text: &str) -> usize {
    text.matches(MASK).count()
}

impl MaskedTemplate {
    /// Build, enforcing the one-mask invariant.
    pub fn new(text: impl Into<String>, source: TemplateSource, confidence: Option<f64>) -> Result<Self> {
        let text = text.into();
        match mask_count(&text) {
            1 => Ok(MaskedTemplate {
                text,
                source,
                confidence,
            }),
            n => Err(Error::InvalidInput(format!(
                "template must contain exactly one {MASK:?}, found {n}: {text:?}"
            ))),
        }
    }

    /// Substitute an answer into the mask slot.
    pub fn fill(&self, answer: &str) -> String {
        self.text.replacen(MASK, answer, 1)
    }
}

/// Arbitrate between the two template sources.
///
/// The demo template wins when its confidence (mean per-token log-prob)
/// reaches `threshold`; otherwise the parsing template is used. Either side
/// may be absent (source disabled or failed for this question); the other is
/// then used unconditionally. Both absent is an error.
pub fn ensemble_template(
    demo: Option<MaskedTemplate>,
    parsing: Option<MaskedTemplate>,
    threshold: f64,
) -> Result<MaskedTemplate> {
    match (demo, parsing) {
        (Some(d), Some(p)) => {
            let confident = d.confidence.is_some_and(|c| c >= threshold);
            Ok(if confident { d } else { p })
        }
        (Some(d), None) => Ok(d),
        (None, Some(p)) => Ok(p),
        (None, None) => Err(Error::InvalidInput(
            "no template available from either source".into(),
        )),
    }
}
