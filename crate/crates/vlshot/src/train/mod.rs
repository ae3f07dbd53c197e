//! Parameter-efficient episodic fine-tuning.
//!
//! The trainer updates only a selected subset of encoder parameters — by
//! default biases and normalization parameters (`binor`), with `bitfit`
//! (bias-named only) and `full` for comparison — plus the logit scale, which
//! is always trainable regardless of mode. Each epoch draws a fresh episode
//! from the few-shot pool, fits the support shots with a contrastive
//! cross-entropy over each example's candidate prompts, and measures the
//! query shots at the epoch boundary; the best-query state is checkpointed.
//!
//! Everything is seeded and evaluated in a fixed order, so a training run is
//! reproducible bit for bit.

pub mod tape;
mod toy;

pub use toy::{
    select_trainable, selected_parameter_count, Tensor, TensorStore, ToyDualEncoder, TuneMode,
    TOY_DIM,
};

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_episode, FewShotPool, ImageRef, VqaExample};
use crate::encoder::{alignment_scores, argmax_stable, DualEncoderBackend, ParamInfo, LOGIT_SCALE_MAX};
use crate::eval::vqa_score;
use crate::filter::CandidateScore;
use crate::template::MaskedTemplate;
use crate::util::derive_seed;
use crate::{Error, Result};

use tape::{NodeId, Tape};

/// A backend whose parameters live in a [`TensorStore`] and whose towers can
/// run on an autodiff tape.
pub trait TrainableDualEncoder: DualEncoderBackend {
    fn store(&self) -> &TensorStore;

    fn store_mut(&mut self) -> &mut TensorStore;

    fn tape_encode_image(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        image: &ImageRef,
    ) -> Result<NodeId>;

    fn tape_encode_text(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        text: &str,
    ) -> Result<NodeId>;
}

impl TrainableDualEncoder for ToyDualEncoder {
    fn store(&self) -> &TensorStore {
        ToyDualEncoder::store(self)
    }
    fn store_mut(&mut self) -> &mut TensorStore {
        ToyDualEncoder::store_mut(self)
    }
    fn tape_encode_image(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        image: &ImageRef,
    ) -> Result<NodeId> {
        self.tower_on_tape(tape, leaves, self.features_for_image(image))
    }
    fn tape_encode_text(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        text: &str,
    ) -> Result<NodeId> {
        self.tower_on_tape(tape, leaves, self.features_for_text(text))
    }
}

/// One training (or query) example: an image, the candidate prompts with
/// their answers, which candidate is the label, and the human answers used
/// for scoring query predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub image: ImageRef,
    pub prompts: Vec<String>,
    pub answers: Vec<String>,
    pub gold_index: usize,
    pub annotations: Vec<String>,
}

impl TrainItem {
    pub fn new(
        image: ImageRef,
        prompts: Vec<String>,
        answers: Vec<String>,
        gold_index: usize,
        annotations: Vec<String>,
    ) -> Result<Self> {
        if prompts.is_empty() || prompts.len() != answers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} prompts vs {} answers",
                prompts.len(),
                answers.len()
            )));
        }
        if gold_index >= prompts.len() {
            return Err(Error::InvalidInput(format!(
                "gold index {gold_index} out of range for {} prompts",
                prompts.len()
            )));
        }
        Ok(TrainItem {
            image,
            prompts,
            answers,
            gold_index,
            annotations,
        })
    }
}

/// Build the candidate prompts for a labelled example from its filtered
/// answers, injecting the gold answer (appended last) when filtering dropped
/// it — a training example must always contain its own label.
pub fn prompts_with_gold(
    template: &MaskedTemplate,
    candidates: &[CandidateScore],
    gold: &str,
) -> (Vec<String>, Vec<String>, usize) {
    let mut answers: Vec<String> = candidates.iter().map(|c| c.answer.clone()).collect();
    let gold_index = match answers.iter().position(|a| a == gold) {
        Some(i) => i,
        None => {
            answers.push(gold.to_string());
            answers.len() - 1
        }
    };
    let prompts = answers.iter().map(|a| template.fill(a)).collect();
    (prompts, answers, gold_index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TuneMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// L2 penalty folded into the gradient of selected tower parameters
    /// (the logit scale is exempt).
    pub weight_decay: f64,
    /// Global-norm gradient clip over everything being optimized.
    pub clip_norm: f64,
    /// Ways per episode; `None` uses every populated way.
    pub ways_per_epoch: Option<usize>,
    /// Fraction of each way's shots that goes to support (ceil).
    pub support_proportion: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TuneMode::Binor,
            epochs: 30,
            batch_size: 8,
            lr: 2e-5,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weight_decay: 1e-3,
            clip_norm: 2.0,
            ways_per_epoch: None,
            support_proportion: 0.75,
            seed: 0,
        }
    }
}

/// Adam with per-tensor first/second moments, keyed by name. One
/// `begin_step` per optimizer step keeps bias correction shared across all
/// tensors updated in that step.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: usize,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.lr,
            beta1: cfg.adam_betas.0,
            beta2: cfg.adam_betas.1,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Update one tensor in place. `decay` selects whether the L2 term is
    /// added to the gradient before the moment updates.
    pub fn update(&mut self, name: &str, values: &mut [f64], grad: &[f64], decay: bool) -> Result<()> {
        if values.len() != grad.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient of {} for tensor {} of {}",
                grad.len(),
                name,
                values.len()
            )));
        }
        if self.step == 0 {
            return Err(Error::InvalidInput(
                "Adam::update called before begin_step".into(),
            ));
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; values.len()], vec![0.0; values.len()]));
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..values.len() {
            let g = if decay {
                grad[i] + self.weight_decay * values[i]
            } else {
                grad[i]
            };
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Loss and gradients for one batch: mean over examples of the softmax
/// cross-entropy over the example's scaled prompt cosines. Returns the loss,
/// per-tensor gradients, and the logit-scale gradient.
pub fn batch_gradients<T: TrainableDualEncoder>(
    encoder: &T,
    logit_scale: f64,
    batch: &[TrainItem],
) -> Result<(f64, HashMap<String, Vec<f64>>, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let mut tape = Tape::new();
    let leaves = encoder.store().leaves_on(&mut tape);
    let scale_leaf = tape.scalar_leaf(logit_scale);
    let mut losses = Vec::with_capacity(batch.len());
    for item in batch {
        let image = encoder.tape_encode_image(&mut tape, &leaves, &item.image)?;
        let image = tape.l2_normalize(image)?;
        let mut cosines = Vec::with_capacity(item.prompts.len());
        for prompt in &item.prompts {
            let text = encoder.tape_encode_text(&mut tape, &leaves, prompt)?;
            let text = tape.l2_normalize(text)?;
            cosines.push(tape.dot(image, text)?);
        }
        let logits = tape.concat(&cosines)?;
        let logits = tape.scale(scale_leaf, logits)?;
        losses.push(tape.softmax_cross_entropy(logits, item.gold_index)?);
    }
    let loss = tape.mean_of(&losses)?;
    let grads = tape.backward(loss)?;
    let mut by_name = HashMap::with_capacity(leaves.len());
    for (name, id) in &leaves {
        by_name.insert(name.clone(), grads.of(*id).to_vec());
    }
    Ok((tape.scalar(loss)?, by_name, grads.of(scale_leaf)[0]))
}

/// Scale all trainable gradients so their joint norm is at most `max_norm`.
/// Returns the pre-clip norm.
fn clip_gradients(
    grads: &mut HashMap<String, Vec<f64>>,
    trainable: &[String],
    scale_grad: &mut f64,
    max_norm: f64,
) -> f64 {
    let mut sum_sq = *scale_grad * *scale_grad;
    for name in trainable {
        if let Some(g) = grads.get(name) {
            sum_sq += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for name in trainable {
            if let Some(g) = grads.get_mut(name) {
                for x in g.iter_mut() {
                    *x *= factor;
                }
            }
        }
        *scale_grad *= factor;
    }
    norm
}

/// One optimizer step over a batch. Returns the batch loss.
pub fn train_step<T: TrainableDualEncoder>(
    encoder: &mut T,
    logit_scale: &mut f64,
    batch: &[TrainItem],
    trainable: &[String],
    adam: &mut Adam,
    clip_norm: f64,
) -> Result<f64> {
    let (loss, mut grads, mut scale_grad) = batch_gradients(encoder, *logit_scale, batch)?;
    clip_gradients(&mut grads, trainable, &mut scale_grad, clip_norm);
    adam.begin_step();
    for name in trainable {
        let grad = grads
            .remove(name)
            .ok_or_else(|| Error::InvalidInput(format!("no gradient for {name}")))?;
        let values = encoder
            .store_mut()
            .values_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("no tensor named {name}")))?;
        adam.update(name, values, &grad, true)?;
    }
    let mut scale_value = [*logit_scale];
    adam.update("logit_scale", &mut scale_value, &[scale_grad], false)?;
    // the multiplier is capped from above; with the configured step sizes it
    // cannot cross zero
    *logit_scale = scale_value[0].min(LOGIT_SCALE_MAX);
    Ok(loss)
}

/// Mean human-agreement score (0–100) of the argmax predictions over items.
pub fn evaluate_items<B: DualEncoderBackend>(
    backend: &B,
    logit_scale: f64,
    items: &[TrainItem],
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidInput("no items to evaluate".into()));
    }
    let mut total = 0.0;
    for item in items {
        let scores = alignment_scores(backend, logit_scale, &item.image, &item.prompts)?;
        let idx = argmax_stable(&scores)?;
        total += vqa_score(&item.answers[idx], &item.annotations);
    }
    Ok(100.0 * total / items.len() as f64)
}

/// Full snapshot of a training state: every tensor, the logit scale, and
/// where in training it was taken.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub mode: TuneMode,
    pub epoch: usize,
    pub query_score: Option<f64>,
    pub logit_scale: f64,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    mode: String,
    epoch: usize,
    query_score: Option<f64>,
    logit_scale: f64,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    kind: Option<String>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"VLSHCKP1";

impl Checkpoint {
    pub fn capture<T: TrainableDualEncoder>(
        encoder: &T,
        logit_scale: f64,
        mode: TuneMode,
        epoch: usize,
        query_score: Option<f64>,
    ) -> Self {
        Checkpoint {
            mode,
            epoch,
            query_score,
            logit_scale,
            tensors: encoder.store().tensors().to_vec(),
        }
    }

    /// Write the checkpoint back into an encoder. Names and shapes must
    /// match exactly — a checkpoint from a different tower is an error, not
    /// a partial load.
    pub fn apply<T: TrainableDualEncoder>(
        &self,
        encoder: &mut T,
        logit_scale: &mut f64,
    ) -> Result<()> {
        if self.tensors.len() != encoder.store().tensors().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, encoder has {}",
                self.tensors.len(),
                encoder.store().tensors().len()
            )));
        }
        self.apply_delta(encoder, logit_scale)
    }

    /// Write just the tensors present in the checkpoint (names and shapes
    /// still validated), leaving the rest of the encoder untouched. Layered
    /// on an encoder rebuilt from the same initialization, a selected-only
    /// checkpoint reproduces the trained model exactly, because nothing else
    /// ever moved.
    pub fn apply_delta<T: TrainableDualEncoder>(
        &self,
        encoder: &mut T,
        logit_scale: &mut f64,
    ) -> Result<()> {
        for t in &self.tensors {
            let current = encoder.store().get(&t.info.name).ok_or_else(|| {
                Error::Checkpoint(format!("encoder has no tensor {}", t.info.name))
            })?;
            if current.info.shape != t.info.shape {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    t.info.name, current.info.shape, t.info.shape
                )));
            }
        }
        for t in &self.tensors {
            encoder
                .store_mut()
                .values_mut(&t.info.name)
                .expect("validated above")
                .copy_from_slice(&t.values);
        }
        *logit_scale = self.logit_scale;
        Ok(())
    }

    /// Restrict the checkpoint to the parameters its tune mode actually
    /// trained. For bias/normalization tuning this is the artifact worth
    /// shipping — a few hundred values instead of the whole tower; under
    /// full tuning it is the identity.
    pub fn selected_only(&self) -> Checkpoint {
        Checkpoint {
            mode: self.mode,
            epoch: self.epoch,
            query_score: self.query_score,
            logit_scale: self.logit_scale,
            tensors: self
                .tensors
                .iter()
                .filter(|t| t.info.kind.is_some_and(|k| self.mode.selects(k)))
                .cloned()
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            mode: self.mode.as_str().to_string(),
            epoch: self.epoch,
            query_score: self.query_score,
            logit_scale: self.logit_scale,
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorMeta {
                    name: t.info.name.clone(),
                    shape: t.info.shape.clone(),
                    kind: t.info.kind.map(|k| k.as_str().to_string()),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("serialize header: {e}")))?;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        for t in &self.tensors {
            for v in &t.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() < 16 + header_len {
            return Err(Error::Checkpoint("truncated checkpoint header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mode: TuneMode = header.mode.parse()?;
        let mut offset = 16 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for meta in header.tensors {
            let kind = meta.kind.as_deref().map(str::parse).transpose()?;
            let info = ParamInfo::new(meta.name, meta.shape, kind);
            let count = info.count();
            let end = offset + count * 8;
            if bytes.len() < end {
                return Err(Error::Checkpoint(format!(
                    "truncated payload for tensor {}",
                    info.name
                )));
            }
            let values: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset = end;
            tensors.push(Tensor { info, values });
        }
        if offset != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after payload",
                bytes.len() - offset
            )));
        }
        Ok(Checkpoint {
            mode,
            epoch: header.epoch,
            query_score: header.query_score,
            logit_scale: header.logit_scale,
            tensors,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    /// Mean query score; absent when the episode had no query shots.
    pub query_score: Option<f64>,
    pub logit_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TuneMode,
    pub total_steps: usize,
    pub best_epoch: usize,
    pub best_query_score: Option<f64>,
    pub epochs: Vec<EpochStats>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// State at the best query score (final state if no epoch had queries).
    pub best: Checkpoint,
    pub final_state: Checkpoint,
}

/// Episodic fine-tuning over a few-shot pool. `build_item` turns one
/// labelled example into its candidate prompts (the caller owns template
/// generation and answer filtering).
pub fn train_episodic<T, F>(
    encoder: &mut T,
    logit_scale: &mut f64,
    pool: &FewShotPool,
    cfg: &TrainConfig,
    build_item: F,
) -> Result<TrainOutcome>
where
    T: TrainableDualEncoder,
    F: Fn(&VqaExample) -> Result<TrainItem>,
{
    if cfg.epochs == 0 {
        return Err(Error::Config("training needs at least one epoch".into()));
    }
    let trainable = select_trainable(encoder.store(), cfg.mode)?;
    let mut adam = Adam::new(cfg);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 0..cfg.epochs {
        let episode_seed = derive_seed(cfg.seed, &["train-epoch", &epoch.to_string()]);
        let episode = split_episode(pool, cfg.ways_per_epoch, cfg.support_proportion, episode_seed)?;

        let mut support = episode
            .support
            .iter()
            .map(&build_item)
            .collect::<Result<Vec<TrainItem>>>()?;
        let mut order_rng = ChaCha12Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &["batch-order", &epoch.to_string()],
        ));
        support.shuffle(&mut order_rng);

        let mut losses = Vec::new();
        for batch in support.chunks(cfg.batch_size.max(1)) {
            losses.push(train_step(
                encoder,
                logit_scale,
                batch,
                &trainable,
                &mut adam,
                cfg.clip_norm,
            )?);
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;

        let query = episode
            .query
            .iter()
            .map(&build_item)
            .collect::<Result<Vec<TrainItem>>>()?;
        let query_score = if query.is_empty() {
            None
        } else {
            Some(evaluate_items(encoder, *logit_scale, &query)?)
        };

        if let Some(score) = query_score {
            let improved = match &best {
                None => true,
                Some(b) => b.query_score.is_none_or(|prev| score > prev),
            };
            if improved {
                best = Some(Checkpoint::capture(
                    encoder,
                    *logit_scale,
                    cfg.mode,
                    epoch,
                    query_score,
                ));
            }
        }

        epochs.push(EpochStats {
            epoch,
            steps: losses.len(),
            mean_loss,
            query_score,
            logit_scale: *logit_scale,
        });
    }

    let final_state = Checkpoint::capture(
        encoder,
        *logit_scale,
        cfg.mode,
        cfg.epochs - 1,
        epochs.last().and_then(|e| e.query_score),
    );
    let best = best.unwrap_or_else(|| final_state.clone());
    let report = TrainReport {
        mode: cfg.mode,
        total_steps: adam.step_count(),
        best_epoch: best.epoch,
        best_query_score: best.query_score,
        epochs,
    };
    Ok(TrainOutcome {
        report,
        best,
        final_state,
    })
}

/// Non-episodic loop: repeatedly fit the same items (chunked into batches)
/// for `steps` optimizer steps. Used for overfitting comparisons between
/// modes and for quick desk-scale studies.
pub fn train_on_items<T: TrainableDualEncoder>(
    encoder: &mut T,
    logit_scale: &mut f64,
    items: &[TrainItem],
    cfg: &TrainConfig,
    steps: usize,
) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::InvalidInput("no items to train on".into()));
    }
    let trainable = select_trainable(encoder.store(), cfg.mode)?;
    let mut adam = Adam::new(cfg);
    let mut losses = Vec::with_capacity(steps);
    let batches: Vec<&[TrainItem]> = items.chunks(cfg.batch_size.max(1)).collect();
    for step in 0..steps {
        let batch = batches[step % batches.len()];
        losses.push(train_step(
            encoder,
            logit_scale,
            batch,
            &trainable,
            &mut adam,
            cfg.clip_norm,
        )?);
    }
    Ok(losses)
}
