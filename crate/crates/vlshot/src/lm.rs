//! Masked-span language model adapter.
//!
//! Template generation and answer filtering both talk to a span-infilling
//! model (a T5-style encoder/decoder in production) through [`InfillLm`].
//! The trait is deliberately small: generate candidate spans for a sentinel
//! slot, score given spans in that slot, and count tokens. Deterministic
//! in-process implementations live here so the pipelines run without any
//! model weights.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Beam-search style generation settings passed through to the adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenOptions {
    pub num_beams: usize,
    /// How many candidate spans to return (≤ num_beams for beam decoders).
    pub num_return: usize,
    /// Upper bound on generated span length, in model tokens.
    pub max_span_tokens: usize,
}

impl GenOptions {
    /// Decoding budget for template generation.
    pub fn template_generation() -> Self {
        GenOptions {
            num_beams: 20,
            num_return: 10,
            max_span_tokens: 30,
        }
    }

    /// Decoding budget for generative answer search (the optional mode that
    /// generates candidates instead of scoring the whole vocabulary).
    pub fn answer_generation() -> Self {
        GenOptions {
            num_beams: 200,
            num_return: 200,
            max_span_tokens: 6,
        }
    }
}

/// A generated span plus the statistics needed downstream: total
/// log-probability and the token count it was achieved over.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSpan {
    pub text: String,
    pub log_prob: f64,
    pub token_count: usize,
}

impl GeneratedSpan {
    /// Length-normalized confidence: mean per-token log-probability.
    pub fn mean_token_log_prob(&self) -> f64 {
        if self.token_count == 0 {
            f64::NEG_INFINITY
        } else {
            self.log_prob / self.token_count as f64
        }
    }
}

pub trait InfillLm: Send + Sync {
    /// The sentinel string marking the slot to fill, as it must appear in
    /// requests (for T5-family models this is "<extra_id_0>").
    fn sentinel(&self) -> &str;

    /// Generate up to `opts.num_return` candidate spans for the sentinel
    /// slot in `request`, best first.
    fn generate_spans(&self, request: &str, opts: &GenOptions) -> Result<Vec<GeneratedSpan>>;

    /// Log-probability of each candidate filling the sentinel slot of
    /// `context`, in candidate order. Multi-token candidates are scored as
    /// the sum over their tokens (no length normalization).
    fn score_spans(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>>;

    /// Token count of `span` under the model's tokenizer.
    fn span_token_count(&self, span: &str) -> usize;
}

impl<T: InfillLm + ?Sized> InfillLm for &T {
    fn sentinel(&self) -> &str {
        (**self).sentinel()
    }
    fn generate_spans(&self, request: &str, opts: &GenOptions) -> Result<Vec<GeneratedSpan>> {
        (**self).generate_spans(request, opts)
    }
    fn score_spans(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>> {
        (**self).score_spans(context, candidates)
    }
    fn span_token_count(&self, span: &str) -> usize {
        (**self).span_token_count(span)
    }
}

impl InfillLm for Box<dyn InfillLm> {
    fn sentinel(&self) -> &str {
        (**self).sentinel()
    }
    fn generate_spans(&self, request: &str, opts: &GenOptions) -> Result<Vec<GeneratedSpan>> {
        (**self).generate_spans(request, opts)
    }
    fn score_spans(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>> {
        (**self).score_spans(context, candidates)
    }
    fn span_token_count(&self, span: &str) -> usize {
        (**self).span_token_count(span)
    }
}

pub const DEFAULT_SENTINEL: &str = "<extra_id_0>";

/// Deterministic mock: scores come from a seeded hash of (context,
/// candidate), generation returns fixed masked-statement shapes. Tokens are
/// whitespace words. Useful for end-to-end runs without weights.
pub struct SeededLm {
    pub seed: u64,
}

impl SeededLm {
    pub fn new(seed: u64) -> Self {
        SeededLm { seed }
    }

    /// Uniform in (lo, hi), derived from the hash of the labels.
    fn hash_unit(&self, labels: &[&str]) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for l in labels {
            hasher.update((l.len() as u64).to_le_bytes());
            hasher.update(l.as_bytes());
        }
        let digest = hasher.finalize();
        let x = u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl InfillLm for SeededLm {
    fn sentinel(&self) -> &str {
        DEFAULT_SENTINEL
    }

    fn generate_spans(&self, request: &str, opts: &GenOptions) -> Result<Vec<GeneratedSpan>> {
        if !request.contains(DEFAULT_SENTINEL) {
            return Err(Error::LanguageModel(format!(
                "request has no {DEFAULT_SENTINEL} sentinel"
            )));
        }
        // A mix of one-slot statements (template shapes) and slot-free
        // statements (yes/no restatement shapes), so both selection rules
        // downstream find something to pick.
        let shapes = [
            "This is [mask].",
            "It is [mask].",
            "There is [mask] here.",
            "The [mask] is shown.",
            "This is the scene.",
            "It is not so.",
            "There is something here.",
        ];
        let mut spans: Vec<GeneratedSpan> = shapes
            .iter()
            .map(|shape| {
                let log_prob = -5.0 * self.hash_unit(&["gen", request, shape]);
                let token_count = shape.split_whitespace().count();
                GeneratedSpan {
                    text: (*shape).to_string(),
                    log_prob: log_prob * token_count as f64,
                    token_count,
                }
            })
            .collect();
        spans.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        spans.truncate(opts.num_return);
        Ok(spans)
    }

    fn score_spans(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|c| {
                let per_token = -8.0 * self.hash_unit(&["score", context, c]);
                per_token * self.span_token_count(c).max(1) as f64
            })
            .collect())
    }

    fn span_token_count(&self, span: &str) -> usize {
        span.split_whitespace().count()
    }
}

/// Closure-backed mock for tests that need full control of generation and
/// scoring behavior.
pub struct FnLm {
    pub sentinel: String,
    #[allow(clippy::type_complexity)]
    pub generate: Box<dyn Fn(&str, &GenOptions) -> Result<Vec<GeneratedSpan>> + Send + Sync>,
    #[allow(clippy::type_complexity)]
    pub score: Box<dyn Fn(&str, &[String]) -> Result<Vec<f64>> + Send + Sync>,
}

impl FnLm {
    pub fn scoring(score: impl Fn(&str, &[String]) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        FnLm {
            sentinel: DEFAULT_SENTINEL.to_string(),
            generate: Box::new(|_, _| {
                Err(Error::LanguageModel("generation not scripted".into()))
            }),
            score: Box::new(score),
        }
    }

    pub fn generating(
        generate: impl Fn(&str, &GenOptions) -> Result<Vec<GeneratedSpan>> + Send + Sync + 'static,
    ) -> Self {
        FnLm {
            sentinel: DEFAULT_SENTINEL.to_string(),
            generate: Box::new(generate),
            score: Box::new(|_, _| Err(Error::LanguageModel("scoring not scripted".into()))),
        }
    }
}

impl InfillLm for FnLm {
    fn sentinel(&self) -> &str {
        &self.sentinel
    }
    fn generate_spans(&self, request: &str, opts: &GenOptions) -> Result<Vec<GeneratedSpan>> {
        (self.generate)(request, opts)
    }
    fn score_spans(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>> {
        (self.score)(context, candidates)
    }
    fn span_token_count(&self, span: &str) -> usize {
        span.split_whitespace().count()
    }
}

/// Wrapper that counts adapter calls; used to assert caching behavior.
pub struct CountingLm<L> {
    pub inner: L,
    pub generate_calls: Arc<AtomicUsize>,
    pub score_calls: Arc<AtomicUsize>,
    /// Total candidates passed to score_spans (for batch accounting).
    pub scored_candidates: Arc<AtomicUsize>,
}

impl<L: InfillLm> CountingLm<L> {
    pub fn new(inner: L) -> Self {
        CountingLm {
            inner,
            generate_calls: Arc::new(AtomicUsize::new(0)),
            score_calls: Arc::new(AtomicUsize::new(0)),
            scored_candidates: Arc::new(AtomicUsize::new(0)),
        }
    }
}

impl<L: InfillLm> InfillLm for CountingLm<L> {
    fn sentinel(&self) -> &str {
        self.inner.sentinel()
    }
    fn generate_spans(&self, request: &str, opts: &GenOptions) -> Result<Vec<GeneratedSpan>> {
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate_spans(request, opts)
    }
    fn score_spans(&self, context: &str, candidates: &[String]) -> Result<Vec<f64>> {
        self.score_calls.fetch_add(1, Ordering::SeqCst);
        self.scored_candidates
            .fetch_add(candidates.len(), Ordering::SeqCst);
        self.inner.score_spans(context, candidates)
    }
    fn span_token_count(&self, span: &str) -> usize {
        self.inner.span_token_count(span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_options_defaults() {
        let t = GenOptions::template_generation();
        assert_eq!((t.num_beams, t.num_return, t.max_span_tokens), (20, 10, 30));
        let a = GenOptions::answer_generation();
        assert_eq!((a.num_beams, a.num_return, a.max_span_tokens), (200, 200, 6));
    }

    #[test]
    fn mean_token_log_prob_normalizes_by_length() {
        let span = GeneratedSpan {
            text: "a b c".into(),
            log_prob: -3.0,
            token_count: 3,
        };
        assert_eq!(span.mean_token_log_prob(), -1.0);
    }

    #[test]
    fn seeded_lm_is_deterministic_and_sorted() {
        let lm = SeededLm::new(42);
        let req = format!("Some question? {DEFAULT_SENTINEL}");
        let a = lm.generate_spans(&req, &GenOptions::template_generation()).unwrap();
        let b = lm.generate_spans(&req, &GenOptions::template_generation()).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));

        let scores = lm
            .score_spans("The sky is <extra_id_0>.", &["blue".into(), "green".into()])
            .unwrap();
        let again = lm
            .score_spans("The sky is <extra_id_0>.", &["blue".into(), "green".into()])
            .unwrap();
        assert_eq!(scores, again);
        assert!(scores.iter().all(|s| s.is_finite() && *s < 0.0));
    }

    #[test]
    fn seeded_lm_requires_sentinel() {
        let lm = SeededLm::new(0);
        assert!(lm
            .generate_spans("no sentinel here", &GenOptions::template_generation())
            .is_err());
    }

    #[test]
    fn counting_wrapper_counts() {
        let lm = CountingLm::new(SeededLm::new(1));
        let req = format!("q {DEFAULT_SENTINEL}");
        lm.generate_spans(&req, &GenOptions::template_generation()).unwrap();
        lm.score_spans(&req, &["x".into(), "y".into()]).unwrap();
        lm.score_spans(&req, &["z".into()]).unwrap();
        assert_eq!(lm.generate_calls.load(Ordering::SeqCst), 1);
        assert_eq!(lm.score_calls.load(Ordering::SeqCst), 2);
        assert_eq!(lm.scored_candidates.load(Ordering::SeqCst), 3);
    }
}
