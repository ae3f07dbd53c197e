//! Image/text dual-encoder adapters and contrastive scoring.
//!
//! A [`DualEncoderBackend`] produces embeddings for images and texts in a
//! shared space and enumerates its parameters (name, shape, kind) so the
//! few-shot trainer can decide what is allowed to move. [`EncoderBundle`]
//! pairs a backend with the learnable logit scale. Scoring is cosine
//! similarity times the logit scale; prediction is the argmax over prompts.
//!
//! Deterministic in-process backends live here too: a seeded hash encoder,
//! a fixture-driven preset encoder, and a marker encoder whose embeddings
//! cluster by a content marker (used for synthetic entailment data).

pub mod cache;
pub mod catalog;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::ImageRef;
use crate::filter::PromptSet;
use crate::util::{derive_seed, sha256_hex};
use crate::{Error, Result};

/// What role a parameter plays, for selective fine-tuning. The distinction
/// between `Bias` and `NormShift` matters for accounting: both are selected
/// by bias-only tuning (they are all literally named `bias`), but only the
/// shifts live inside normalization modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    /// Dense weights, embeddings, projections — frozen by the efficient modes.
    Weight,
    /// Additive bias outside any normalization module.
    Bias,
    /// Normalization gain (γ).
    NormGain,
    /// Normalization shift (β).
    NormShift,
}

impl ParamKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::NormGain => "norm-gain",
            ParamKind::NormShift => "norm-shift",
        }
    }
}

impl std::fmt::Display for ParamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ParamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(ParamKind::Weight),
            "bias" => Ok(ParamKind::Bias),
            "norm-gain" => Ok(ParamKind::NormGain),
            "norm-shift" => Ok(ParamKind::NormShift),
            other => Err(Error::InvalidInput(format!(
                "unknown parameter kind {other:?}"
            ))),
        }
    }
}

/// One named parameter tensor in a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` means the adapter could not classify the parameter; selection
    /// then fails closed rather than guessing.
    pub kind: Option<ParamKind>,
}

impl ParamInfo {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, kind: Option<ParamKind>) -> Self {
        ParamInfo {
            name: name.into(),
            shape,
            kind,
        }
    }

    /// Build with the kind inferred from the checkpoint naming convention.
    pub fn tagged(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let name = name.into();
        let kind = Some(kind_from_name(&name));
        ParamInfo { name, shape, kind }
    }

    pub fn count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Classify a parameter by its checkpoint name, the way fine-tuning scripts
/// traditionally do. The final path segment decides bias vs weight; the
/// module segment before it decides whether the parameter belongs to a
/// normalization layer (`bn*` / `ln*`).
///
/// Two consequences worth spelling out. Attention in-projections
/// (`attn.in_proj_bias`) count as biases even though the segment is not
/// literally `bias`. And a batch norm living inside a downsample path is
/// named `downsample.1`, so its γ is classified as a plain weight (frozen by
/// the efficient modes) while its β still matches the bias rule — selection
/// follows the names, not the module types.
pub fn kind_from_name(name: &str) -> ParamKind {
    let mut segments = name.rsplit('.');
    let last = segments.next().unwrap_or(name);
    let module = segments.next().unwrap_or("");
    let norm_module = module.starts_with("bn") || module.starts_with("ln");
    if last.contains("bias") {
        if norm_module {
            ParamKind::NormShift
        } else {
            ParamKind::Bias
        }
    } else if last.contains("weight") && norm_module {
        ParamKind::NormGain
    } else {
        ParamKind::Weight
    }
}

/// Parameter counts per kind. Errors on any untagged entry — an unclassified
/// parameter must never be silently frozen or silently trained.
pub fn count_by_kind(params: &[ParamInfo]) -> Result<BTreeMap<ParamKind, usize>> {
    let mut counts = BTreeMap::new();
    for p in params {
        let kind = p
            .kind
            .ok_or_else(|| Error::UntaggedParameter(p.name.clone()))?;
        *counts.entry(kind).or_insert(0) += p.count();
    }
    Ok(counts)
}

/// Total size of everything named `bias` (plain biases plus norm shifts).
pub fn bias_named_count(params: &[ParamInfo]) -> Result<usize> {
    let counts = count_by_kind(params)?;
    Ok(counts.get(&ParamKind::Bias).copied().unwrap_or(0)
        + counts.get(&ParamKind::NormShift).copied().unwrap_or(0))
}

/// Total size of the bias + normalization selection (bias, γ, β).
pub fn binor_count(params: &[ParamInfo]) -> Result<usize> {
    let counts = count_by_kind(params)?;
    Ok(counts.get(&ParamKind::Bias).copied().unwrap_or(0)
        + counts.get(&ParamKind::NormShift).copied().unwrap_or(0)
        + counts.get(&ParamKind::NormGain).copied().unwrap_or(0))
}

/// Digest of a parameter enumeration (names, shapes, kinds). Embedding
/// caches are partitioned by this so embeddings from differently-shaped or
/// differently-tagged towers are never mixed.
pub fn parameter_fingerprint(params: &[ParamInfo]) -> String {
    let mut parts: Vec<Vec<u8>> = Vec::with_capacity(params.len());
    for p in params {
        let shape: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
        let kind = p.kind.map(|k| k.as_str()).unwrap_or("untagged");
        parts.push(format!("{}|{}|{}", p.name, shape.join("x"), kind).into_bytes());
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    sha256_hex(&refs)
}

pub trait DualEncoderBackend: Send + Sync {
    /// Stable identifier (architecture name), used to partition caches.
    fn id(&self) -> &str;

    fn embed_dim(&self) -> usize;

    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>>;

    fn encode_text(&self, text: &str) -> Result<Vec<f64>>;

    /// Every parameter tensor of the two towers.
    fn parameters(&self) -> Vec<ParamInfo>;
}

impl<T: DualEncoderBackend + ?Sized> DualEncoderBackend for &T {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn embed_dim(&self) -> usize {
        (**self).embed_dim()
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        (**self).encode_image(image)
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        (**self).encode_text(text)
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        (**self).parameters()
    }
}

impl DualEncoderBackend for Box<dyn DualEncoderBackend> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn embed_dim(&self) -> usize {
        (**self).embed_dim()
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        (**self).encode_image(image)
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        (**self).encode_text(text)
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        (**self).parameters()
    }
}

/// Initial logit scale: the reciprocal of the usual 0.07 temperature.
pub const LOGIT_SCALE_INIT: f64 = 1.0 / 0.07;
/// The multiplier is capped here, mirroring the clamp applied in training.
pub const LOGIT_SCALE_MAX: f64 = 100.0;

/// A backend plus the learnable logit scale. The scale lives outside the
/// tower parameter list: it is a multiplier on cosine similarities, stays
/// trainable in every fine-tuning mode, and is clamped to
/// [`LOGIT_SCALE_MAX`] whenever it is set.
pub struct EncoderBundle {
    backend: Box<dyn DualEncoderBackend>,
    logit_scale: f64,
}

impl EncoderBundle {
    pub fn new(backend: Box<dyn DualEncoderBackend>) -> Self {
        EncoderBundle {
            backend,
            logit_scale: LOGIT_SCALE_INIT,
        }
    }

    pub fn backend(&self) -> &dyn DualEncoderBackend {
        self.backend.as_ref()
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    /// Update the scale, clamping from above. A non-positive scale would
    /// invert or collapse the ranking, so it is rejected outright.
    pub fn set_logit_scale(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::Encoder(format!(
                "logit scale must be positive and finite, got {value}"
            )));
        }
        self.logit_scale = value.min(LOGIT_SCALE_MAX);
        Ok(())
    }

    pub fn alignment_scores(&self, image: &ImageRef, prompts: &[String]) -> Result<Vec<f64>> {
        alignment_scores(self.backend.as_ref(), self.logit_scale, image, prompts)
    }

    pub fn predict(&self, image: &ImageRef, prompts: &PromptSet) -> Result<ZeroShotOutcome> {
        predict_zero_shot(self.backend.as_ref(), self.logit_scale, image, prompts)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "dot of {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit-normalize; a zero (or non-finite) vector has no direction and is an
/// encoder failure, not something to paper over.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::Encoder(format!(
            "cannot normalize embedding with norm {norm}"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let an = l2_normalize(a)?;
    let bn = l2_normalize(b)?;
    dot(&an, &bn)
}

/// Logit-scaled cosine similarity between the image and each prompt.
pub fn alignment_scores(
    backend: &dyn DualEncoderBackend,
    logit_scale: f64,
    image: &ImageRef,
    prompts: &[String],
) -> Result<Vec<f64>> {
    if prompts.is_empty() {
        return Err(Error::InvalidInput("no prompts to score".into()));
    }
    let image_emb = l2_normalize(&backend.encode_image(image)?)?;
    let mut scores = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let text_emb = l2_normalize(&backend.encode_text(prompt)?)?;
        scores.push(logit_scale * dot(&image_emb, &text_emb)?);
    }
    Ok(scores)
}

/// Index of the maximum score; ties go to the earliest index. Rejects empty
/// input and NaN scores (a NaN would make the ranking meaningless).
pub fn argmax_stable(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("argmax of empty score list".into()));
    }
    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate() {
        if s.is_nan() {
            return Err(Error::Encoder(format!("NaN score at index {i}")));
        }
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Outcome of scoring a prompt set against one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotOutcome {
    pub index: usize,
    pub answer: String,
    pub scores: Vec<f64>,
}

pub fn predict_zero_shot(
    backend: &dyn DualEncoderBackend,
    logit_scale: f64,
    image: &ImageRef,
    prompts: &PromptSet,
) -> Result<ZeroShotOutcome> {
    let scores = alignment_scores(backend, logit_scale, image, &prompts.prompts)?;
    let index = argmax_stable(&scores)?;
    Ok(ZeroShotOutcome {
        index,
        answer: prompts.answers[index].clone(),
        scores,
    })
}

/// Small tagged parameter list shared by the mock backends; exercises the
/// same naming convention as the real catalogs.
fn mock_parameter_list(dim: usize) -> Vec<ParamInfo> {
    vec![
        ParamInfo::tagged("proj.weight", vec![dim, dim]),
        ParamInfo::tagged("proj.bias", vec![dim]),
        ParamInfo::tagged("ln.weight", vec![dim]),
        ParamInfo::tagged("ln.bias", vec![dim]),
    ]
}

/// Deterministic mock: embeddings are seeded pseudo-random vectors keyed by
/// the content string, so equal inputs always embed identically and the
/// pipeline runs with no weights at all.
pub struct HashEncoder {
    pub id: String,
    pub seed: u64,
    pub dim: usize,
}

impl HashEncoder {
    pub fn new(id: impl Into<String>, seed: u64, dim: usize) -> Self {
        HashEncoder {
            id: id.into(),
            seed,
            dim,
        }
    }

    fn embed(&self, channel: &str, content: &str) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(self.seed, &[channel, content]));
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

impl DualEncoderBackend for HashEncoder {
    fn id(&self) -> &str {
        &self.id
    }
    fn embed_dim(&self) -> usize {
        self.dim
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        Ok(self.embed("image", image.as_str()))
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed("text", text))
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        mock_parameter_list(self.dim)
    }
}

/// Fixture-driven backend: embeddings are exactly what the test inserted,
/// and unknown inputs are an error. Used to compare scoring against
/// hand-computed expectations.
pub struct PresetEncoder {
    pub id: String,
    dim: usize,
    images: HashMap<String, Vec<f64>>,
    texts: HashMap<String, Vec<f64>>,
}

impl PresetEncoder {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        PresetEncoder {
            id: id.into(),
            dim,
            images: HashMap::new(),
            texts: HashMap::new(),
        }
    }

    pub fn insert_image(&mut self, image: &ImageRef, embedding: Vec<f64>) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "image embedding of {} for dim {}",
                embedding.len(),
                self.dim
            )));
        }
        self.images.insert(image.as_str().to_string(), embedding);
        Ok(())
    }

    pub fn insert_text(&mut self, text: &str, embedding: Vec<f64>) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "text embedding of {} for dim {}",
                embedding.len(),
                self.dim
            )));
        }
        self.texts.insert(text.to_string(), embedding);
        Ok(())
    }
}

impl DualEncoderBackend for PresetEncoder {
    fn id(&self) -> &str {
        &self.id
    }
    fn embed_dim(&self) -> usize {
        self.dim
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        self.images
            .get(image.as_str())
            .cloned()
            .ok_or_else(|| Error::Encoder(format!("no preset embedding for image {image}")))
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.texts
            .get(text)
            .cloned()
            .ok_or_else(|| Error::Encoder(format!("no preset embedding for text {text:?}")))
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        mock_parameter_list(self.dim)
    }
}

/// Synthetic-data backend whose embeddings cluster by a *marker*: the first
/// word of a text, or the first identifier chunk of an image reference. Texts
/// and images sharing a marker land near one unit direction (plus a small
/// content-dependent jitter), so relations between markers are recoverable
/// from either modality — the property cross-modality transfer relies on.
/// The reserved all-black image maps to one fixed marker-free direction.
pub struct MarkerEncoder {
    pub id: String,
    pub seed: u64,
    pub dim: usize,
    /// Jitter magnitude around the marker direction.
    pub noise: f64,
}

impl MarkerEncoder {
    pub fn new(id: impl Into<String>, seed: u64, dim: usize, noise: f64) -> Self {
        MarkerEncoder {
            id: id.into(),
            seed,
            dim,
            noise,
        }
    }

    fn unit_from_labels(&self, labels: &[&str]) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(self.seed, labels));
        let v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).expect("non-degenerate random vector")
    }

    fn marker_of_text(text: &str) -> String {
        text.split_whitespace()
            .next()
            .unwrap_or("")
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase()
    }

    fn marker_of_image(reference: &str) -> String {
        let body = reference.split_once(':').map(|(_, b)| b).unwrap_or(reference);
        body.split(['-', '_', '.'])
            .next()
            .unwrap_or("")
            .to_lowercase()
    }

    fn embed(&self, marker: &str, content: &str) -> Vec<f64> {
        let base = self.unit_from_labels(&["marker", marker]);
        let jitter = self.unit_from_labels(&["jitter", content]);
        base.iter()
            .zip(&jitter)
            .map(|(b, j)| b + self.noise * j)
            .collect()
    }
}

impl DualEncoderBackend for MarkerEncoder {
    fn id(&self) -> &str {
        &self.id
    }
    fn embed_dim(&self) -> usize {
        self.dim
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        if *image == ImageRef::black() {
            // Content-free constant: every black-control call sees the same
            // direction, carrying no information about the example.
            return Ok(self.unit_from_labels(&["black-control"]));
        }
        Ok(self.embed(&Self::marker_of_image(image.as_str()), image.as_str()))
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed(&Self::marker_of_text(text), text))
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        mock_parameter_list(self.dim)
    }
}

/// Wrapper counting encode calls; used to prove caches stop hitting the
/// backend.
pub struct CountingBackend<B> {
    pub inner: B,
    pub image_calls: Arc<AtomicUsize>,
    pub text_calls: Arc<AtomicUsize>,
}

impl<B: DualEncoderBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            image_calls: Arc::new(AtomicUsize::new(0)),
            text_calls: Arc::new(AtomicUsize::new(0)),
        }
    }
}

impl<B: DualEncoderBackend> DualEncoderBackend for CountingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        self.image_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.encode_image(image)
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.text_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.encode_text(text)
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        self.inner.parameters()
    }
}

/// Scripted backend with full closure control (kept simple: preset parameter
/// list, closures for the two encode paths).
pub struct FnBackend {
    pub id: String,
    pub dim: usize,
    pub params: Vec<ParamInfo>,
    #[allow(clippy::type_complexity)]
    pub image_fn: Box<dyn Fn(&ImageRef) -> Result<Vec<f64>> + Send + Sync>,
    #[allow(clippy::type_complexity)]
    pub text_fn: Box<dyn Fn(&str) -> Result<Vec<f64>> + Send + Sync>,
}

impl DualEncoderBackend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }
    fn embed_dim(&self) -> usize {
        self.dim
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        (self.image_fn)(image)
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        (self.text_fn)(text)
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        self.params.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naming_convention_tags() {
        assert_eq!(kind_from_name("visual.conv1.weight"), ParamKind::Weight);
        assert_eq!(kind_from_name("visual.layer1.0.bn1.weight"), ParamKind::NormGain);
        assert_eq!(kind_from_name("visual.layer1.0.bn1.bias"), ParamKind::NormShift);
        assert_eq!(kind_from_name("transformer.resblocks.3.ln_2.weight"), ParamKind::NormGain);
        assert_eq!(kind_from_name("ln_final.bias"), ParamKind::NormShift);
        assert_eq!(kind_from_name("transformer.resblocks.0.attn.in_proj_bias"), ParamKind::Bias);
        assert_eq!(kind_from_name("transformer.resblocks.0.attn.in_proj_weight"), ParamKind::Weight);
        assert_eq!(kind_from_name("visual.attnpool.c_proj.bias"), ParamKind::Bias);
        // the downsample batch norm is named by position, so its γ reads as
        // a plain weight while its β still reads as a bias
        assert_eq!(kind_from_name("visual.layer2.0.downsample.1.weight"), ParamKind::Weight);
        assert_eq!(kind_from_name("visual.layer2.0.downsample.1.bias"), ParamKind::Bias);
        assert_eq!(kind_from_name("token_embedding.weight"), ParamKind::Weight);
        assert_eq!(kind_from_name("text_projection"), ParamKind::Weight);
        assert_eq!(kind_from_name("visual.class_embedding"), ParamKind::Weight);
    }

    #[test]
    fn untagged_parameters_fail_closed() {
        let params = vec![
            ParamInfo::tagged("proj.weight", vec![4, 4]),
            ParamInfo::new("mystery", vec![4], None),
        ];
        let err = count_by_kind(&params).unwrap_err();
        assert!(matches!(err, Error::UntaggedParameter(ref n) if n == "mystery"), "{err}");
    }

    #[test]
    fn kind_counts_and_selections() {
        let params = mock_parameter_list(8);
        let counts = count_by_kind(&params).unwrap();
        assert_eq!(counts[&ParamKind::Weight], 64);
        assert_eq!(counts[&ParamKind::Bias], 8);
        assert_eq!(counts[&ParamKind::NormGain], 8);
        assert_eq!(counts[&ParamKind::NormShift], 8);
        assert_eq!(bias_named_count(&params).unwrap(), 16);
        assert_eq!(binor_count(&params).unwrap(), 24);
    }

    #[test]
    fn logit_scale_init_and_clamp() {
        let mut bundle = EncoderBundle::new(Box::new(HashEncoder::new("mock", 1, 8)));
        assert!((bundle.logit_scale() - 1.0 / 0.07).abs() < 1e-12);
        bundle.set_logit_scale(250.0).unwrap();
        assert_eq!(bundle.logit_scale(), 100.0);
        bundle.set_logit_scale(3.5).unwrap();
        assert_eq!(bundle.logit_scale(), 3.5);
        assert!(bundle.set_logit_scale(0.0).is_err());
        assert!(bundle.set_logit_scale(-2.0).is_err());
        assert!(bundle.set_logit_scale(f64::NAN).is_err());
    }

    #[test]
    fn hash_encoder_is_deterministic_and_content_keyed() {
        let enc = HashEncoder::new("mock", 42, 16);
        let a = enc.encode_text("a cat").unwrap();
        let b = enc.encode_text("a cat").unwrap();
        let c = enc.encode_text("a dog").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
        let img = enc.encode_image(&ImageRef::vqa(7)).unwrap();
        assert_eq!(img, enc.encode_image(&ImageRef::vqa(7)).unwrap());
        // image and text channels are independent even for equal content
        assert_ne!(enc.encode_image(&ImageRef::new("x")).unwrap(), enc.encode_text("x").unwrap());
    }

    #[test]
    fn preset_encoder_serves_fixtures_and_rejects_unknowns() {
        let mut enc = PresetEncoder::new("fixture", 3);
        enc.insert_image(&ImageRef::vqa(1), vec![1.0, 0.0, 0.0]).unwrap();
        enc.insert_text("a red fence", vec![0.9, 0.1, 0.0]).unwrap();
        assert_eq!(enc.encode_image(&ImageRef::vqa(1)).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(enc.encode_image(&ImageRef::vqa(2)).is_err());
        assert!(enc.encode_text("unknown").is_err());
        assert!(enc.insert_text("bad", vec![1.0]).is_err());
    }

    #[test]
    fn scoring_matches_hand_computation_and_scale_invariance() {
        let mut enc = PresetEncoder::new("fixture", 2);
        enc.insert_image(&ImageRef::vqa(1), vec![3.0, 4.0]).unwrap(); // unit: (0.6, 0.8)
        enc.insert_text("p0", vec![1.0, 0.0]).unwrap();
        enc.insert_text("p1", vec![0.0, 2.0]).unwrap();
        let scores = alignment_scores(&enc, 10.0, &ImageRef::vqa(1), &["p0".into(), "p1".into()])
            .unwrap();
        assert!((scores[0] - 6.0).abs() < 1e-12); // 10 * 0.6
        assert!((scores[1] - 8.0).abs() < 1e-12); // 10 * 0.8
        // argmax is invariant to the (positive) scale
        for scale in [0.5, 1.0, 14.0, 100.0] {
            let s = alignment_scores(&enc, scale, &ImageRef::vqa(1), &["p0".into(), "p1".into()])
                .unwrap();
            assert_eq!(argmax_stable(&s).unwrap(), 1);
        }
    }

    #[test]
    fn argmax_breaks_ties_towards_the_first_prompt() {
        assert_eq!(argmax_stable(&[1.0, 3.0, 3.0, 2.0]).unwrap(), 1);
        assert_eq!(argmax_stable(&[2.0]).unwrap(), 0);
        assert!(argmax_stable(&[]).is_err());
        assert!(argmax_stable(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn zero_shot_prediction_returns_the_best_answer() {
        let mut enc = PresetEncoder::new("fixture", 2);
        enc.insert_image(&ImageRef::vqa(9), vec![0.0, 1.0]).unwrap();
        enc.insert_text("The fence is red.", vec![1.0, 0.1]).unwrap();
        enc.insert_text("The fence is blue.", vec![0.1, 1.0]).unwrap();
        let prompts = PromptSet::from_parts(
            vec!["The fence is red.".into(), "The fence is blue.".into()],
            vec!["red".into(), "blue".into()],
        )
        .unwrap();
        let out = predict_zero_shot(&enc, LOGIT_SCALE_INIT, &ImageRef::vqa(9), &prompts).unwrap();
        assert_eq!(out.index, 1);
        assert_eq!(out.answer, "blue");
        assert_eq!(out.scores.len(), 2);
    }

    #[test]
    fn zero_norm_embeddings_are_an_error() {
        let mut enc = PresetEncoder::new("fixture", 2);
        enc.insert_image(&ImageRef::vqa(1), vec![0.0, 0.0]).unwrap();
        enc.insert_text("p", vec![1.0, 0.0]).unwrap();
        assert!(alignment_scores(&enc, 1.0, &ImageRef::vqa(1), &["p".into()]).is_err());
    }

    #[test]
    fn marker_encoder_clusters_by_marker_across_modalities() {
        let enc = MarkerEncoder::new("marker", 5, 32, 0.05);
        let t1 = enc.encode_text("alpha cat sitting").unwrap();
        let t2 = enc.encode_text("alpha dog running").unwrap();
        let t3 = enc.encode_text("beta dog running").unwrap();
        let i1 = enc.encode_image(&ImageRef::flickr("alpha-17")).unwrap();
        let same = cosine(&t1, &t2).unwrap();
        let cross_modal = cosine(&t1, &i1).unwrap();
        let different = cosine(&t1, &t3).unwrap();
        assert!(same > 0.9, "same-marker texts should align, got {same}");
        assert!(cross_modal > 0.9, "image should join its marker cluster, got {cross_modal}");
        assert!(different < 0.5, "different markers should separate, got {different}");
    }

    #[test]
    fn black_control_is_constant_and_content_free() {
        let enc = MarkerEncoder::new("marker", 5, 32, 0.05);
        let b1 = enc.encode_image(&ImageRef::black()).unwrap();
        let b2 = enc.encode_image(&ImageRef::black()).unwrap();
        assert_eq!(b1, b2);
        let alpha = enc.encode_image(&ImageRef::flickr("alpha-17")).unwrap();
        assert_ne!(b1, alpha);
    }

    #[test]
    fn fingerprint_tracks_names_shapes_and_kinds() {
        let a = mock_parameter_list(8);
        let b = mock_parameter_list(16);
        assert_ne!(parameter_fingerprint(&a), parameter_fingerprint(&b));
        let mut c = mock_parameter_list(8);
        c[0].kind = None;
        assert_ne!(parameter_fingerprint(&a), parameter_fingerprint(&c));
        assert_eq!(parameter_fingerprint(&a), parameter_fingerprint(&mock_parameter_list(8)));
    }
}
