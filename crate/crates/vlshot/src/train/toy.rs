//! Trainable parameter store and the desk-scale dual encoder.
//!
//! [`TensorStore`] holds named, kind-tagged f64 tensors — the mutable
//! counterpart of the parameter catalogs. [`ToyDualEncoder`] is a complete
//! trainable backend at toy scale: a frozen hash featurizer into 4
//! dimensions followed by a shared tower (affine → feature norm → tanh →
//! affine) whose 48 parameters carry the same kind structure as the big
//! towers, so selection logic and freeze guarantees can be tested for real.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::ImageRef;
use crate::encoder::{DualEncoderBackend, ParamInfo, ParamKind};
use crate::util::derive_seed;
use crate::{Error, Result};

use super::tape::{NodeId, Tape};

#[derive(Debug, Clone)]
pub struct Tensor {
    pub info: ParamInfo,
    pub values: Vec<f64>,
}

/// Ordered collection of named tensors. Order is insertion order and is part
/// of the contract: checkpoints serialize values in store order.
#[derive(Debug, Clone, Default)]
pub struct TensorStore {
    tensors: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl TensorStore {
    pub fn new() -> Self {
        TensorStore::default()
    }

    pub fn insert(&mut self, info: ParamInfo, values: Vec<f64>) -> Result<()> {
        if info.count() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} declared {} values, got {}",
                info.name,
                info.count(),
                values.len()
            )));
        }
        if self.by_name.contains_key(&info.name) {
            return Err(Error::InvalidInput(format!(
                "duplicate tensor name {:?}",
                info.name
            )));
        }
        self.by_name.insert(info.name.clone(), self.tensors.len());
        self.tensors.push(Tensor { info, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name).map(|&i| &self.tensors[i])
    }

    pub fn values_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        let idx = *self.by_name.get(name)?;
        Some(&mut self.tensors[idx].values)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        self.tensors.iter().map(|t| t.info.clone()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// Register every tensor as a tape leaf, returning name → node.
    pub fn leaves_on(&self, tape: &mut Tape) -> HashMap<String, NodeId> {
        self.tensors
            .iter()
            .map(|t| (t.info.name.clone(), tape.leaf(t.values.clone())))
            .collect()
    }
}

/// Which parameters a fine-tuning run is allowed to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneMode {
    /// Biases plus both normalization parameters (gain and shift).
    Binor,
    /// Everything literally named bias (plain biases and norm shifts).
    Bitfit,
    /// All parameters.
    Full,
}

impl TuneMode {
    pub fn selects(&self, kind: ParamKind) -> bool {
        match self {
            TuneMode::Binor => matches!(
                kind,
                ParamKind::Bias | ParamKind::NormGain | ParamKind::NormShift
            ),
            TuneMode::Bitfit => matches!(kind, ParamKind::Bias | ParamKind::NormShift),
            TuneMode::Full => true,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TuneMode::Binor => "binor",
            TuneMode::Bitfit => "bitfit",
            TuneMode::Full => "full",
        }
    }
}

impl std::fmt::Display for TuneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binor" => Ok(TuneMode::Binor),
            "bitfit" => Ok(TuneMode::Bitfit),
            "full" => Ok(TuneMode::Full),
            other => Err(Error::Config(format!(
                "unknown tune mode {other:?} (expected binor, bitfit, or full)"
            ))),
        }
    }
}

/// Names of the tensors a mode may update, in store order. Fails closed on
/// any untagged tensor — training must never guess.
pub fn select_trainable(store: &TensorStore, mode: TuneMode) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for t in store.tensors() {
        let kind = t
            .info
            .kind
            .ok_or_else(|| Error::UntaggedParameter(t.info.name.clone()))?;
        if mode.selects(kind) {
            names.push(t.info.name.clone());
        }
    }
    Ok(names)
}

/// Total number of scalar parameters a mode would train (tower only; the
/// logit scale is handled separately and is always trainable).
pub fn selected_parameter_count(store: &TensorStore, mode: TuneMode) -> Result<usize> {
    let names = select_trainable(store, mode)?;
    Ok(names
        .iter()
        .map(|n| store.get(n).expect("selected from store").values.len())
        .sum())
}

pub const TOY_DIM: usize = 4;

/// Desk-scale trainable dual encoder. Images and texts are hashed into
/// 4-dimensional feature vectors (frozen, seeded); a single shared tower
/// maps features to embeddings. Both modalities share the tower, which is
/// what lets few-shot updates move image and text towers coherently at this
/// scale.
pub struct ToyDualEncoder {
    pub seed: u64,
    store: TensorStore,
}

impl ToyDualEncoder {
    pub fn new(seed: u64) -> Self {
        let mut store = TensorStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &["toy-init"]));
        let mut weights = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
        };
        let d = TOY_DIM;
        store
            .insert(ParamInfo::tagged("tower.fc1.weight", vec![d, d]), weights(d * d))
            .expect("fresh store");
        store
            .insert(ParamInfo::tagged("tower.fc1.bias", vec![d]), vec![0.0; d])
            .expect("fresh store");
        store
            .insert(ParamInfo::tagged("tower.ln.weight", vec![d]), vec![1.0; d])
            .expect("fresh store");
        store
            .insert(ParamInfo::tagged("tower.ln.bias", vec![d]), vec![0.0; d])
            .expect("fresh store");
        store
            .insert(ParamInfo::tagged("tower.fc2.weight", vec![d, d]), weights(d * d))
            .expect("fresh store");
        store
            .insert(ParamInfo::tagged("tower.fc2.bias", vec![d]), vec![0.0; d])
            .expect("fresh store");
        ToyDualEncoder { seed, store }
    }

    pub fn store(&self) -> &TensorStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TensorStore {
        &mut self.store
    }

    /// Frozen featurizer: content → 4 values in (−1, 1). Not a parameter.
    fn featurize(&self, channel: &str, content: &str) -> Vec<f64> {
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(self.seed, &["toy-feat", channel, content]));
        (0..TOY_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Tower forward on a tape whose leaves were made with
    /// [`TensorStore::leaves_on`]. The plain encode path reuses this with a
    /// throwaway tape, so scoring and training see identical arithmetic.
    pub fn tower_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        features: Vec<f64>,
    ) -> Result<NodeId> {
        let leaf = |name: &str| -> Result<NodeId> {
            leaves
                .get(name)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("missing tape leaf for {name}")))
        };
        let d = TOY_DIM;
        let x = tape.leaf(features);
        let h = tape.matvec(leaf("tower.fc1.weight")?, d, d, x)?;
        let h = tape.add(h, leaf("tower.fc1.bias")?)?;
        let h = tape.feature_norm(h, leaf("tower.ln.weight")?, leaf("tower.ln.bias")?)?;
        let h = tape.tanh(h);
        let h = tape.matvec(leaf("tower.fc2.weight")?, d, d, h)?;
        tape.add(h, leaf("tower.fc2.bias")?)
    }

    pub fn features_for_image(&self, image: &ImageRef) -> Vec<f64> {
        self.featurize("image", image.as_str())
    }

    pub fn features_for_text(&self, text: &str) -> Vec<f64> {
        self.featurize("text", text)
    }

    fn encode(&self, features: Vec<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let leaves = self.store.leaves_on(&mut tape);
        let out = self.tower_on_tape(&mut tape, &leaves, features)?;
        Ok(tape.value(out).to_vec())
    }
}

impl DualEncoderBackend for ToyDualEncoder {
    fn id(&self) -> &str {
        "toy-4d"
    }
    fn embed_dim(&self) -> usize {
        TOY_DIM
    }
    fn encode_image(&self, image: &ImageRef) -> Result<Vec<f64>> {
        self.encode(self.features_for_image(image))
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.encode(self.features_for_text(text))
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        self.store.param_infos()
    }
}
