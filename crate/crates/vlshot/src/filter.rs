//! Answer filtering: rank the answer vocabulary by how well each entry fills
//! a template's mask slot, keep the top k, and turn survivors into prompts.
//!
//! Filtering can optionally be conditioned on filled demonstrations (support
//! statements with their gold answers substituted in), which is how few-shot
//! context reaches the filter. With no demonstrations that variant reduces
//! exactly to plain filtering.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::AnswerVocabulary;
use crate::lm::{GenOptions, InfillLm};
use crate::template::MaskedTemplate;
use crate::util::sha256_hex;
use crate::{Error, Result};

/// One vocabulary entry with its slot-filling score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub answer: String,
    /// Index in the vocabulary file; the deterministic tie-breaker.
    pub vocab_index: usize,
    /// Total (unnormalized) log-probability of the answer span in the slot.
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    /// How many candidates survive filtering.
    pub k: usize,
    /// Candidates per scoring call to the LM adapter.
    pub batch_size: usize,
    /// Answers tokenizing longer than this are excluded outright.
    pub max_answer_tokens: usize,
    /// At most this many filled demonstrations are prepended to the context.
    pub max_demos: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            k: 200,
            batch_size: 128,
            max_answer_tokens: 6,
            max_demos: 16,
        }
    }
}

/// Scores for the scoreable vocabulary plus the entries excluded for length.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerScores {
    pub scores: Vec<CandidateScore>,
    pub excluded_over_length: Vec<String>,
}

/// The scoring context: optional filled demonstrations, then the template
/// with its mask slot replaced by the model's sentinel.
pub fn build_scoring_context(
    template: &MaskedTemplate,
    demos: &[String],
    sentinel: &str,
    max_demos: usize,
) -> String {
    let mut parts: Vec<&str> = demos.iter().take(max_demos).map(String::as_str).collect();
    let slotted = template.fill(sentinel);
    parts.push(&slotted);
    parts.join(" ")
}

/// Score every vocabulary entry in the template's slot. Entries longer than
/// `max_answer_tokens` are excluded (they could never be produced within the
/// decoding budget); everything else must come back with a finite score.
pub fn score_answers(
    lm: &dyn InfillLm,
    template: &MaskedTemplate,
    vocab: &AnswerVocabulary,
    demos: &[String],
    opts: &FilterOptions,
) -> Result<AnswerScores> {
    if vocab.is_empty() {
        return Err(Error::InvalidInput("empty answer vocabulary".into()));
    }
    let context = build_scoring_context(template, demos, lm.sentinel(), opts.max_demos);

    let mut kept: Vec<(usize, String)> = Vec::with_capacity(vocab.len());
    let mut excluded = Vec::new();
    for (i, answer) in vocab.entries().iter().enumerate() {
        if lm.span_token_count(answer) > opts.max_answer_tokens {
            excluded.push(answer.clone());
        } else {
            kept.push((i, answer.clone()));
        }
    }

    let mut scores = Vec::with_capacity(kept.len());
    for chunk in kept.chunks(opts.batch_size.max(1)) {
        let answers: Vec<String> = chunk.iter().map(|(_, a)| a.clone()).collect();
        let chunk_scores = lm.score_spans(&context, &answers)?;
        if chunk_scores.len() != answers.len() {
            return Err(Error::LanguageModel(format!(
                "adapter returned {} scores for {} candidates",
                chunk_scores.len(),
                answers.len()
            )));
        }
        for ((vocab_index, answer), log_prob) in chunk.iter().cloned().zip(chunk_scores) {
            if !log_prob.is_finite() {
                return Err(Error::LanguageModel(format!(
                    "non-finite score {log_prob} for answer {answer:?}"
                )));
            }
            scores.push(CandidateScore {
                answer,
                vocab_index,
                log_prob,
            });
        }
    }
    Ok(AnswerScores {
        scores,
        excluded_over_length: excluded,
    })
}

/// Keep the k best-scoring candidates, descending by score with ties broken
/// by ascending vocabulary index. `k` larger than the candidate list keeps
/// everything; `k = 0` is rejected.
pub fn filter_top_k(scores: &[CandidateScore], k: usize) -> Result<Vec<CandidateScore>> {
    if k == 0 {
        return Err(Error::InvalidInput("top-k filter requires k ≥ 1".into()));
    }
    let mut sorted: Vec<CandidateScore> = scores.to_vec();
    sorted.sort_by(|a, b| {
        b.log_prob
            .total_cmp(&a.log_prob)
            .then(a.vocab_index.cmp(&b.vocab_index))
    });
    sorted.truncate(k);
    Ok(sorted)
}

/// Score the vocabulary and keep the top k. `demos` may be empty, in which
/// case this is plain (unconditioned) filtering.
pub fn filter_answers(
    lm: &dyn InfillLm,
    template: &MaskedTemplate,
    vocab: &AnswerVocabulary,
    demos: &[String],
    opts: &FilterOptions,
) -> Result<Vec<CandidateScore>> {
    let scored = score_answers(lm, template, vocab, demos, opts)?;
    filter_top_k(&scored.scores, opts.k)
}

/// Generative alternative: instead of scoring the whole vocabulary, generate
/// candidate spans under the answer decoding budget and keep those that are
/// vocabulary entries, ranked by generation score.
pub fn filter_generative(
    lm: &dyn InfillLm,
    template: &MaskedTemplate,
    vocab: &AnswerVocabulary,
    demos: &[String],
    opts: &FilterOptions,
    gen: &GenOptions,
) -> Result<Vec<CandidateScore>> {
    let context = build_scoring_context(template, demos, lm.sentinel(), opts.max_demos);
    let spans = lm.generate_spans(&context, gen)?;
    let mut best: HashMap<usize, CandidateScore> = HashMap::new();
    for span in spans {
        let text = span.text.trim();
        if let Some(vocab_index) = vocab.index_of(text) {
            let entry = best.entry(vocab_index).or_insert_with(|| CandidateScore {
                answer: text.to_string(),
                vocab_index,
                log_prob: f64::NEG_INFINITY,
            });
            if span.log_prob > entry.log_prob {
                entry.log_prob = span.log_prob;
            }
        }
    }
    let collected: Vec<CandidateScore> = best.into_values().collect();
    filter_top_k(&collected, opts.k)
}

/// A template instantiated with each surviving candidate, order preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub prompts: Vec<String>,
    pub answers: Vec<String>,
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Prompt pair for a yes/no question: positive statement answered "yes",
    /// negative statement answered "no".
    pub fn yes_no(positive: String, negative: String) -> Self {
        PromptSet {
            prompts: vec![positive, negative],
            answers: vec!["yes".to_string(), "no".to_string()],
        }
    }

    /// Raw prompt/answer lists (used by the question-prefix baseline). The
    /// two lists must be parallel.
    pub fn from_parts(prompts: Vec<String>, answers: Vec<String>) -> Result<Self> {
        if prompts.len() != answers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} prompts vs {} answers",
                prompts.len(),
                answers.len()
            )));
        }
        if prompts.is_empty() {
            return Err(Error::InvalidInput("empty prompt set".into()));
        }
        Ok(PromptSet { prompts, answers })
    }
}

/// Substitute each candidate into the template.
pub fn assemble_prompts(
    template: &MaskedTemplate,
    candidates: &[CandidateScore],
) -> Result<PromptSet> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "cannot assemble prompts from zero candidates".into(),
        ));
    }
    let prompts = candidates.iter().map(|c| template.fill(&c.answer)).collect();
    let answers = candidates.iter().map(|c| c.answer.clone()).collect();
    Ok(PromptSet { prompts, answers })
}

/// Persistent cache of filtered candidate sets, keyed by everything that
/// determines the result: template text, vocabulary content, demo content,
/// and k. Entries are JSON files committed with an atomic rename.
pub struct FilterCache {
    root: PathBuf,
    memory: Mutex<HashMap<String, Vec<CandidateScore>>>,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    candidates: Vec<CandidateScore>,
}

impl FilterCache {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(FilterCache {
            root,
            memory: Mutex::new(HashMap::new()),
        })
    }

    pub fn key(
        template: &MaskedTemplate,
        vocab: &AnswerVocabulary,
        demos: &[String],
        opts: &FilterOptions,
        mode: &str,
    ) -> String {
        let vocab_hash = vocab.content_hash();
        let mut parts: Vec<&[u8]> = vec![
            template.text.as_bytes(),
            vocab_hash.as_bytes(),
            mode.as_bytes(),
        ];
        let k = opts.k.to_string();
        let max_demos = opts.max_demos.to_string();
        parts.push(k.as_bytes());
        parts.push(max_demos.as_bytes());
        for d in demos.iter().take(opts.max_demos) {
            parts.push(d.as_bytes());
        }
        sha256_hex(&parts)
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<Vec<CandidateScore>> {
        if let Some(hit) = self.memory.lock().expect("cache lock").get(key) {
            return Some(hit.clone());
        }
        let path = self.path_for(key);
        let text = std::fs::read_to_string(path).ok()?;
        let record: CacheRecord = serde_json::from_str(&text).ok()?;
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), record.candidates.clone());
        Some(record.candidates)
    }

    pub fn put(&self, key: &str, candidates: &[CandidateScore]) -> Result<()> {
        let record = CacheRecord {
            candidates: candidates.to_vec(),
        };
        let json = serde_json::to_string(&record)
            .map_err(|e| Error::Cache(format!("serialize: {e}")))?;
        let path = self.path_for(key);
        let tmp = self.root.join(format!(".{key}.tmp"));
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), candidates.to_vec());
        Ok(())
    }
}

/// Filter with an optional cache in front of the LM.
pub fn filter_answers_cached(
    cache: Option<&FilterCache>,
    lm: &dyn InfillLm,
    template: &MaskedTemplate,
    vocab: &AnswerVocabulary,
    demos: &[String],
    opts: &FilterOptions,
) -> Result<Vec<CandidateScore>> {
    let key = FilterCache::key(template, vocab, demos, opts, "exhaustive");
    if let Some(cache) = cache {
        if let Some(hit) = cache.get(&key) {
            return Ok(hit);
        }
    }
    let result = filter_answers(lm, template, vocab, demos, opts)?;
    if let Some(cache) = cache {
        cache.put(&key, &result)?;
    }
    Ok(result)
}
