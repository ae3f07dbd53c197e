//! Zero- and few-shot vision-language transfer over pluggable dual encoders.
//!
//! The crate covers three workflows that share one contrastive scoring core:
//!
//! * **Zero-shot VQA**: questions are rewritten into masked statement
//!   templates (either by demonstration-primed span infilling or by
//!   dependency-parse rules), an answer vocabulary is filtered down to the
//!   top-k candidates by masked-LM score, each surviving answer fills the
//!   template, and a frozen image/text dual encoder picks the prompt that
//!   best aligns with the image.
//! * **Few-shot fine-tuning**: a handful of labelled examples per question
//!   type are organized into episodes and only the encoder's bias and
//!   normalization parameters are updated (`binor`), with `bitfit` / `full`
//!   variants for comparison.
//! * **Cross-modality entailment transfer**: a small classifier trained on
//!   text-premise/text-hypothesis embedding pairs is evaluated with the
//!   premise swapped for the image embedding (and vice versa), exploiting the
//!   shared embedding space.
//!
//! Encoders, infilling language models, and dependency parsers are adapter
//! traits; deterministic mock implementations live alongside them so every
//! pipeline runs at desk scale without model weights.

pub mod data;
pub mod encoder;
pub mod entail;
pub mod error;
pub mod eval;
pub mod filter;
pub mod lm;
pub mod parse;
pub mod runner;
pub mod template;
pub mod train;
pub(crate) mod util;

pub use error::{Error, Result};
