//! Declarative experiment runs.
//!
//! A [`RunConfig`] (TOML file, unknown keys rejected) fully describes one
//! run: data paths, backend selection, pipeline knobs, and output locations.
//! Each run family — zero-shot VQA, few-shot fine-tuning, entailment
//! transfer — writes its artifacts plus a [`RunManifest`] recording the
//! resolved config, input hashes, and every artifact path, so [`replay`]
//! can rerun it and (with the deterministic mock backends) reproduce the
//! metric files byte for byte.
//!
//! Inference runs degrade per question: a failed template, filter, or
//! encoding produces an error record with score 0 instead of aborting the
//! run. Configuration problems (bad paths, contradictory flags) abort
//! before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_snli_ve, load_vqa_split, AnswerType, AnswerVocabulary, FewShotPool, PoolOptions,
    Taxonomy, VqaExample,
};
use crate::encoder::cache::CachedBackend;
use crate::encoder::{DualEncoderBackend, EncoderBundle, HashEncoder, MarkerEncoder};
use crate::entail::{
    default_grid, evaluate_entail, fused_examples, grid_search, majority_rate, GridOutcome,
    GridPoint, PremiseMode,
};
use crate::eval::{aggregate, build_qip_prompts, vqa_score, EvalBreakdown, VqaResult};
use crate::filter::{
    assemble_prompts, filter_answers_cached, CandidateScore, FilterCache, FilterOptions,
    PromptSet,
};
use crate::lm::{GenOptions, InfillLm, SeededLm};
use crate::parse::{FileParseProvider, ParseProvider};
use crate::template::{
    ensemble_template, generate_template_demo, generate_template_parsing,
    generate_yesno_statements, DemonstrationBank, MaskedTemplate, YesNoStatements,
};
use crate::train::{
    prompts_with_gold, selected_parameter_count, train_episodic, ToyDualEncoder, TrainConfig,
    TrainItem, TrainReport, TuneMode,
};
use crate::util::hex;
use crate::{Error, Result};

/// Overrides the configured cache root when set.
pub const CACHE_ROOT_ENV: &str = "VLSHOT_CACHE_ROOT";
/// Overrides the configured checkpoint root when set.
pub const CHECKPOINT_ROOT_ENV: &str = "VLSHOT_CHECKPOINT_ROOT";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const BREAKDOWN_FILE: &str = "breakdown.json";
pub const POOL_FILE: &str = "pool.json";
pub const TRACE_FILE: &str = "trace.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub backend: BackendConfig,
    pub tapc: TapcConfig,
    pub fewshot: FewShotConfig,
    pub entailment: EntailmentConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// VQA questions file (official release schema).
    pub questions: Option<PathBuf>,
    /// VQA annotations file (official release schema).
    pub annotations: Option<PathBuf>,
    /// Answer vocabulary, one answer per line.
    pub answer_vocab: Option<PathBuf>,
    /// Question-type prefix list; the built-in taxonomy when absent.
    pub taxonomy: Option<PathBuf>,
    /// Demonstration bank; the built-in bank when absent.
    pub demo_bank: Option<PathBuf>,
    /// Pre-parsed questions (CoNLL-U). Without it the parsing template
    /// route is simply unavailable.
    pub parses: Option<PathBuf>,
    pub snli_train: Option<PathBuf>,
    pub snli_val: Option<PathBuf>,
    pub snli_test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Content-hash embeddings: deterministic, no cross-modal structure.
    Hash,
    /// Marker-clustered embeddings: texts and images sharing a marker
    /// align, enabling transfer experiments.
    Marker,
    /// The small trainable tower (the only kind few-shot runs accept).
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub encoder: EncoderKind,
    pub encoder_seed: u64,
    /// Embedding width for hash/marker encoders (the toy tower has a fixed
    /// width).
    pub embed_dim: usize,
    /// Jitter radius for the marker encoder.
    pub marker_noise: f64,
    pub lm_seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            encoder: EncoderKind::Marker,
            encoder_seed: 17,
            embed_dim: 32,
            marker_noise: 0.05,
            lm_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TapcConfig {
    /// Demo templates below this confidence (mean per-token log-prob) lose
    /// to the parsing template.
    pub ensemble_threshold: f64,
    /// Answers kept by the filter.
    pub k: usize,
    pub filter_batch_size: usize,
    pub max_answer_tokens: usize,
    pub max_demos: usize,
    /// Ablation: score the entire vocabulary instead of the filtered top-k.
    pub no_answer_filter: bool,
    /// Ablation: plain question+answer prompts, no templates, no filter.
    pub qip_baseline: bool,
    /// Ablation: disable demonstration-primed template generation.
    pub no_demo_template: bool,
    /// Ablation: disable the dependency-parse template route.
    pub no_parsing_template: bool,
    /// Per-question inference workers.
    pub workers: usize,
}

impl Default for TapcConfig {
    fn default() -> Self {
        TapcConfig {
            ensemble_threshold: -1.0,
            k: 200,
            filter_batch_size: 128,
            max_answer_tokens: 6,
            max_demos: 16,
            no_answer_filter: false,
            qip_baseline: false,
            no_demo_template: false,
            no_parsing_template: false,
            workers: 1,
        }
    }
}

impl TapcConfig {
    pub fn filter_options(&self) -> FilterOptions {
        FilterOptions {
            k: self.k,
            batch_size: self.filter_batch_size,
            max_answer_tokens: self.max_answer_tokens,
            max_demos: self.max_demos,
        }
    }

    fn ablation_flags(&self) -> Vec<&'static str> {
        [
            ("no_answer_filter", self.no_answer_filter),
            ("qip_baseline", self.qip_baseline),
            ("no_demo_template", self.no_demo_template),
            ("no_parsing_template", self.no_parsing_template),
        ]
        .into_iter()
        .filter_map(|(name, set)| set.then_some(name))
        .collect()
    }

    /// At most one ablation flag may be active — the ablations are defined
    /// one at a time, and combinations (e.g. the question-prefix baseline
    /// with a template route disabled) don't describe any experiment.
    pub fn validate(&self) -> Result<()> {
        let set = self.ablation_flags();
        if set.len() > 1 {
            return Err(Error::Config(format!(
                "ablation flags are mutually exclusive, got {}",
                set.join(" + ")
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("tapc.k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("tapc.workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    /// Shots per way (the K in C-way K-shot).
    pub k: usize,
    /// Ways per episode; absent means every populated way.
    pub ways: Option<usize>,
    /// Fraction of each way's shots used as support.
    pub proportion: f64,
    pub mode: TuneMode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Prepend the shots' filled statements when filtering answers.
    pub use_demo_vocab: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        FewShotConfig {
            k: 16,
            ways: None,
            proportion: t.support_proportion,
            mode: t.mode,
            seed: t.seed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            use_demo_vocab: true,
        }
    }
}

impl FewShotConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ways_per_epoch: self.ways,
            support_proportion: self.proportion,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferDirection {
    /// Train the classifier on text premises, evaluate on image premises.
    TextToImage,
    /// The swapped routing: train on image premises, evaluate on text.
    ImageToText,
}

impl TransferDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransferDirection::TextToImage => "text-to-image",
            TransferDirection::ImageToText => "image-to-text",
        }
    }

    pub fn train_premise(&self) -> PremiseMode {
        match self {
            TransferDirection::TextToImage => PremiseMode::Text,
            TransferDirection::ImageToText => PremiseMode::Image,
        }
    }

    pub fn eval_premise(&self) -> PremiseMode {
        match self {
            TransferDirection::TextToImage => PremiseMode::Image,
            TransferDirection::ImageToText => PremiseMode::Text,
        }
    }
}

impl std::fmt::Display for TransferDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntailmentConfig {
    pub direction: TransferDirection,
    pub epochs: usize,
    /// Hidden widths of the relation classifier.
    pub hidden: (usize, usize),
    pub seed: u64,
    /// Search the full lr × batch × dropout grid; otherwise train the
    /// single point given by `lr`/`batch_size`/`dropout`.
    pub full_grid: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    /// Also evaluate with the all-black image as premise.
    pub masked_control: bool,
    /// Also evaluate with the zero embedding as premise.
    pub zero_control: bool,
}

impl Default for EntailmentConfig {
    fn default() -> Self {
        EntailmentConfig {
            direction: TransferDirection::TextToImage,
            epochs: 20,
            hidden: crate::entail::DEFAULT_HIDDEN,
            seed: 0,
            full_grid: true,
            lr: 3e-6,
            batch_size: 64,
            dropout: 0.1,
            masked_control: true,
            zero_control: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Where run artifacts land. Required by every run command.
    pub dir: Option<PathBuf>,
    /// Filter/embedding cache root; no caching when unset. The
    /// `VLSHOT_CACHE_ROOT` environment variable wins over this value.
    pub cache_root: Option<PathBuf>,
    /// Where checkpoints land (the run dir when unset). The
    /// `VLSHOT_CHECKPOINT_ROOT` environment variable wins over this value.
    pub checkpoint_root: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolved_cache_root(&self) -> Option<PathBuf> {
        std::env::var_os(CACHE_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.output.cache_root.clone())
    }

    pub fn resolved_checkpoint_root(&self) -> Option<PathBuf> {
        std::env::var_os(CHECKPOINT_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.output.checkpoint_root.clone())
    }

    fn out_dir(&self) -> Result<&Path> {
        self.output
            .dir
            .as_deref()
            .ok_or_else(|| Error::Config("output.dir is required".into()))
    }

    fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("data.{name} is required for this command")))
    }
}

// ---------------------------------------------------------------------------
// Manifest

/// Replayable record of one run: what was executed, over which inputs
/// (content-hashed), producing which artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    /// Input path → sha256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    /// Every artifact the run wrote.
    pub outputs: Vec<String>,
    pub wall_ms: u64,
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wall_ms: 0,
        }
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::malformed("run manifest", path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Rerun a manifest's command with its recorded config, redirecting
/// artifacts to `out_dir`. With deterministic backends the metric files of
/// the replay match the original byte for byte.
pub fn replay(manifest: &RunManifest, out_dir: &Path) -> Result<()> {
    let mut config = manifest.config.clone();
    config.output.dir = Some(out_dir.to_path_buf());
    match manifest.command.as_str() {
        "zero-shot-vqa" => run_zero_shot_vqa(&config).map(drop),
        "few-shot-vqa" => run_few_shot(&config).map(drop),
        "entailment" => run_entailment(&config).map(drop),
        other => Err(Error::Config(format!("manifest for unknown command {other:?}"))),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(what, path, e.to_string()))
}

// ---------------------------------------------------------------------------
// The per-question pipeline

/// Everything needed to turn one question into its scored prompt set. Built
/// once per run; each piece is shared read-only across worker threads.
pub struct VqaPipeline<'a> {
    pub lm: &'a dyn InfillLm,
    pub bank: &'a DemonstrationBank,
    pub parses: Option<&'a dyn ParseProvider>,
    pub vocab: &'a AnswerVocabulary,
    pub tapc: &'a TapcConfig,
    pub filter_cache: Option<&'a FilterCache>,
    /// Filled demonstration statements prepended to filter contexts
    /// (populated for few-shot runs, empty otherwise).
    pub demos: &'a [String],
}

impl VqaPipeline<'_> {
    fn yesno_statements(&self, question: &str) -> Result<YesNoStatements> {
        if self.tapc.no_demo_template {
            return Err(Error::InvalidInput(
                "yes/no statements are demonstration-primed, which no_demo_template disables"
                    .into(),
            ));
        }
        generate_yesno_statements(self.lm, self.bank, question, &GenOptions::template_generation())
    }

    /// The ensembled masked template for a non-yes/no question. Each route
    /// fails softly into the other; only both failing is an error.
    pub fn masked_template(&self, question: &str) -> Result<MaskedTemplate> {
        let demo = if self.tapc.no_demo_template {
            None
        } else {
            generate_template_demo(self.lm, self.bank, question, &GenOptions::template_generation())
                .ok()
        };
        let parsing = if self.tapc.no_parsing_template {
            None
        } else {
            self.parses
                .and_then(|p| generate_template_parsing(p, question).ok())
        };
        ensemble_template(demo, parsing, self.tapc.ensemble_threshold)
    }

    fn filtered_candidates(&self, template: &MaskedTemplate) -> Result<Vec<CandidateScore>> {
        if self.tapc.no_answer_filter {
            return Ok(self
                .vocab
                .entries()
                .iter()
                .enumerate()
                .map(|(i, a)| CandidateScore {
                    answer: a.clone(),
                    vocab_index: i,
                    log_prob: 0.0,
                })
                .collect());
        }
        filter_answers_cached(
            self.filter_cache,
            self.lm,
            template,
            self.vocab,
            self.demos,
            &self.tapc.filter_options(),
        )
    }

    /// The prompt set the encoder will score for this question.
    pub fn prompt_set(&self, question: &str, answer_type: AnswerType) -> Result<PromptSet> {
        if self.tapc.qip_baseline {
            let answers: Vec<String> = match answer_type {
                AnswerType::YesNo => vec!["yes".into(), "no".into()],
                _ => self.vocab.entries().to_vec(),
            };
            let prompts = build_qip_prompts(question, &answers);
            return PromptSet::from_parts(prompts, answers);
        }
        if answer_type == AnswerType::YesNo {
            let statements = self.yesno_statements(question)?;
            return Ok(PromptSet::yes_no(statements.positive, statements.negative));
        }
        let template = self.masked_template(question)?;
        let candidates = self.filtered_candidates(&template)?;
        assemble_prompts(&template, &candidates)
    }

    /// The filled statement of a labelled example, used as a filter
    /// demonstration.
    pub fn demo_statement(&self, ex: &VqaExample) -> Result<String> {
        if ex.answer_type == AnswerType::YesNo {
            let statements = self.yesno_statements(&ex.question)?;
            return match ex.multiple_choice_answer.as_str() {
                "yes" => Ok(statements.positive),
                "no" => Ok(statements.negative),
                other => Err(Error::InvalidInput(format!(
                    "yes/no question {} has gold answer {other:?}",
                    ex.question_id
                ))),
            };
        }
        let template = self.masked_template(&ex.question)?;
        Ok(template.fill(&ex.multiple_choice_answer))
    }

    /// A training item for a labelled example: its candidate prompts with
    /// the gold answer guaranteed present.
    pub fn train_item(&self, ex: &VqaExample) -> Result<TrainItem> {
        if ex.answer_type == AnswerType::YesNo {
            let statements = self.yesno_statements(&ex.question)?;
            let answers = vec!["yes".to_string(), "no".to_string()];
            let gold_index = answers
                .iter()
                .position(|a| *a == ex.multiple_choice_answer)
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "yes/no question {} has gold answer {:?}",
                        ex.question_id, ex.multiple_choice_answer
                    ))
                })?;
            return TrainItem::new(
                ex.image_ref(),
                vec![statements.positive, statements.negative],
                answers,
                gold_index,
                ex.answers.clone(),
            );
        }
        let template = self.masked_template(&ex.question)?;
        let candidates = self.filtered_candidates(&template)?;
        let (prompts, answers, gold_index) =
            prompts_with_gold(&template, &candidates, &ex.multiple_choice_answer);
        TrainItem::new(ex.image_ref(), prompts, answers, gold_index, ex.answers.clone())
    }
}

fn build_bundle(cfg: &RunConfig, cache_root: Option<&Path>) -> Result<EncoderBundle> {
    let b = &cfg.backend;
    let raw: Box<dyn DualEncoderBackend> = match b.encoder {
        EncoderKind::Hash => Box::new(HashEncoder::new("hash", b.encoder_seed, b.embed_dim)),
        EncoderKind::Marker => Box::new(MarkerEncoder::new(
            "marker",
            b.encoder_seed,
            b.embed_dim,
            b.marker_noise,
        )),
        EncoderKind::Toy => Box::new(ToyDualEncoder::new(b.encoder_seed)),
    };
    let backend: Box<dyn DualEncoderBackend> = match cache_root {
        Some(root) => Box::new(CachedBackend::new(raw, &root.join("embeddings"))?),
        None => raw,
    };
    Ok(EncoderBundle::new(backend))
}

fn load_bank(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<DemonstrationBank> {
    match &cfg.data.demo_bank {
        Some(path) => {
            manifest.record_input(path)?;
            DemonstrationBank::load(path)
        }
        None => Ok(DemonstrationBank::builtin()),
    }
}

fn load_taxonomy(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<Taxonomy> {
    match &cfg.data.taxonomy {
        Some(path) => {
            manifest.record_input(path)?;
            Taxonomy::load(path)
        }
        None => Ok(Taxonomy::builtin()),
    }
}

fn load_parses(
    cfg: &RunConfig,
    manifest: &mut RunManifest,
) -> Result<Option<FileParseProvider>> {
    match &cfg.data.parses {
        Some(path) => {
            manifest.record_input(path)?;
            Ok(Some(FileParseProvider::load(path)?))
        }
        None => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Zero-shot VQA

#[derive(Debug)]
pub struct ZeroShotArtifacts {
    pub results: Vec<VqaResult>,
    pub breakdown: EvalBreakdown,
    pub results_path: PathBuf,
    pub breakdown_path: PathBuf,
    pub manifest_path: PathBuf,
}

fn answer_one(pipeline: &VqaPipeline, bundle: &EncoderBundle, ex: &VqaExample) -> VqaResult {
    let outcome = pipeline
        .prompt_set(&ex.question, ex.answer_type)
        .and_then(|prompts| bundle.predict(&ex.image_ref(), &prompts));
    match outcome {
        Ok(best) => VqaResult {
            question_id: ex.question_id,
            answer_type: ex.answer_type,
            score: vqa_score(&best.answer, &ex.answers),
            prediction: best.answer,
            error: None,
        },
        Err(e) => VqaResult {
            question_id: ex.question_id,
            answer_type: ex.answer_type,
            prediction: String::new(),
            score: 0.0,
            error: Some(e.to_string()),
        },
    }
}

/// Answer every question, farming them out to `workers` threads. Results
/// keep the input order, so the worker count never changes the output.
fn answer_all(
    pipeline: &VqaPipeline,
    bundle: &EncoderBundle,
    examples: &[VqaExample],
    workers: usize,
) -> Vec<VqaResult> {
    let slots: Mutex<Vec<Option<VqaResult>>> = Mutex::new(vec![None; examples.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(examples.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= examples.len() {
                    break;
                }
                let record = answer_one(pipeline, bundle, &examples[i]);
                slots.lock().expect("no poisoned worker")[i] = Some(record);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned worker")
        .into_iter()
        .map(|r| r.expect("every question answered"))
        .collect()
}

pub fn run_zero_shot_vqa(cfg: &RunConfig) -> Result<ZeroShotArtifacts> {
    let started = Instant::now();
    cfg.tapc.validate()?;
    let out = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut manifest = RunManifest::new("zero-shot-vqa", cfg);

    let questions = cfg.require(&cfg.data.questions, "questions")?;
    let annotations = cfg.require(&cfg.data.annotations, "annotations")?;
    let vocab_path = cfg.require(&cfg.data.answer_vocab, "answer_vocab")?;
    manifest.record_input(questions)?;
    manifest.record_input(annotations)?;
    manifest.record_input(vocab_path)?;

    let examples = load_vqa_split(questions, annotations)?;
    let vocab = AnswerVocabulary::load(vocab_path)?;
    let bank = load_bank(cfg, &mut manifest)?;
    let parses = load_parses(cfg, &mut manifest)?;
    let lm = SeededLm::new(cfg.backend.lm_seed);

    let cache_root = cfg.resolved_cache_root();
    let filter_cache = match &cache_root {
        Some(root) => Some(FilterCache::new(root.join("filter"))?),
        None => None,
    };
    let bundle = build_bundle(cfg, cache_root.as_deref())?;

    let pipeline = VqaPipeline {
        lm: &lm,
        bank: &bank,
        parses: parses.as_ref().map(|p| p as &dyn ParseProvider),
        vocab: &vocab,
        tapc: &cfg.tapc,
        filter_cache: filter_cache.as_ref(),
        demos: &[],
    };

    let results = answer_all(&pipeline, &bundle, &examples, cfg.tapc.workers);
    let breakdown = aggregate(&results)?;

    let results_path = out.join(RESULTS_FILE);
    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r).expect("plain record"));
        lines.push('\n');
    }
    std::fs::write(&results_path, lines).map_err(|e| Error::io(&results_path, e))?;
    let breakdown_path = out.join(BREAKDOWN_FILE);
    write_json(&breakdown_path, &breakdown)?;

    manifest.record_output(&results_path);
    manifest.record_output(&breakdown_path);
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;

    Ok(ZeroShotArtifacts {
        results,
        breakdown,
        results_path,
        breakdown_path,
        manifest_path,
    })
}

// ---------------------------------------------------------------------------
// Few-shot fine-tuning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSummary {
    pub mode: TuneMode,
    pub shots_per_way: usize,
    pub ways: usize,
    pub total_shots: usize,
    /// Tower parameters the mode actually trains (the logit scale is
    /// always trained and not counted here).
    pub trained_parameters: usize,
    pub best_epoch: usize,
    pub best_query_score: Option<f64>,
    pub final_query_score: Option<f64>,
}

#[derive(Debug)]
pub struct FewShotArtifacts {
    pub report: TrainReport,
    pub summary: FewShotSummary,
    pub pool_path: PathBuf,
    pub trace_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub summary_path: PathBuf,
    pub manifest_path: PathBuf,
}

pub fn run_few_shot(cfg: &RunConfig) -> Result<FewShotArtifacts> {
    let started = Instant::now();
    cfg.tapc.validate()?;
    if !cfg.tapc.ablation_flags().is_empty() {
        return Err(Error::Config(format!(
            "few-shot training does not take ablation flags (got {})",
            cfg.tapc.ablation_flags().join(" + ")
        )));
    }
    if cfg.backend.encoder != EncoderKind::Toy {
        return Err(Error::Config(
            "few-shot training needs the trainable toy backend (backend.encoder = \"toy\")"
                .into(),
        ));
    }
    let out = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut manifest = RunManifest::new("few-shot-vqa", cfg);

    let questions = cfg.require(&cfg.data.questions, "questions")?;
    let annotations = cfg.require(&cfg.data.annotations, "annotations")?;
    let vocab_path = cfg.require(&cfg.data.answer_vocab, "answer_vocab")?;
    manifest.record_input(questions)?;
    manifest.record_input(annotations)?;
    manifest.record_input(vocab_path)?;

    let examples = load_vqa_split(questions, annotations)?;
    let vocab = AnswerVocabulary::load(vocab_path)?;
    let taxonomy = load_taxonomy(cfg, &mut manifest)?;
    let bank = load_bank(cfg, &mut manifest)?;
    let parses = load_parses(cfg, &mut manifest)?;
    let lm = SeededLm::new(cfg.backend.lm_seed);

    let cache_root = cfg.resolved_cache_root();
    let filter_cache = match &cache_root {
        Some(root) => Some(FilterCache::new(root.join("filter"))?),
        None => None,
    };

    let pool = FewShotPool::sample(
        &examples,
        &taxonomy,
        PoolOptions {
            k: cfg.fewshot.k,
            seed: cfg.fewshot.seed,
        },
    )?;

    // The shots' own filled statements become filter demonstrations when
    // demo-conditioned filtering is on. They are generated with an empty
    // demo list — statements prime the *answer* filter, not each other.
    let base = VqaPipeline {
        lm: &lm,
        bank: &bank,
        parses: parses.as_ref().map(|p| p as &dyn ParseProvider),
        vocab: &vocab,
        tapc: &cfg.tapc,
        filter_cache: filter_cache.as_ref(),
        demos: &[],
    };
    let mut demos = Vec::new();
    if cfg.fewshot.use_demo_vocab {
        for shot in pool.all_shots() {
            let statement = base.demo_statement(shot).map_err(|e| {
                Error::InvalidInput(format!(
                    "building demonstration for question {}: {e}",
                    shot.question_id
                ))
            })?;
            demos.push(statement);
        }
    }
    let pipeline = VqaPipeline { demos: &demos, ..base };

    let mut items: BTreeMap<u64, TrainItem> = BTreeMap::new();
    for shot in pool.all_shots() {
        let item = pipeline.train_item(shot).map_err(|e| {
            Error::InvalidInput(format!(
                "building training item for question {}: {e}",
                shot.question_id
            ))
        })?;
        items.insert(shot.question_id, item);
    }

    let mut encoder = ToyDualEncoder::new(cfg.backend.encoder_seed);
    let mut logit_scale = crate::encoder::LOGIT_SCALE_INIT;
    let train_cfg = cfg.fewshot.train_config();
    let trained_parameters = selected_parameter_count(encoder.store(), train_cfg.mode)?;
    let outcome = train_episodic(&mut encoder, &mut logit_scale, &pool, &train_cfg, |ex| {
        items
            .get(&ex.question_id)
            .cloned()
            .ok_or_else(|| {
                Error::InvalidInput(format!("no prepared item for question {}", ex.question_id))
            })
    })?;

    let pool_path = out.join(POOL_FILE);
    write_json(&pool_path, &pool.manifest())?;
    let trace_path = out.join(TRACE_FILE);
    write_json(&trace_path, &outcome.report)?;

    let checkpoint_dir = cfg.resolved_checkpoint_root().unwrap_or_else(|| out.clone());
    std::fs::create_dir_all(&checkpoint_dir).map_err(|e| Error::io(&checkpoint_dir, e))?;
    let checkpoint_path = checkpoint_dir.join(CHECKPOINT_FILE);
    outcome.best.selected_only().save(&checkpoint_path)?;

    let final_query_score = outcome
        .report
        .epochs
        .last()
        .and_then(|e| e.query_score);
    let summary = FewShotSummary {
        mode: train_cfg.mode,
        shots_per_way: pool.k,
        ways: pool.ways.len(),
        total_shots: pool.total_shots(),
        trained_parameters,
        best_epoch: outcome.report.best_epoch,
        best_query_score: outcome.report.best_query_score,
        final_query_score,
    };
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;

    manifest.record_output(&pool_path);
    manifest.record_output(&trace_path);
    manifest.record_output(&checkpoint_path);
    manifest.record_output(&summary_path);
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;

    Ok(FewShotArtifacts {
        report: outcome.report,
        summary,
        pool_path,
        trace_path,
        checkpoint_path,
        summary_path,
        manifest_path,
    })
}

// ---------------------------------------------------------------------------
// Entailment transfer

/// The cross-modality transfer outcome: how the classifier selected on the
/// training modality performs once the premise switches modality, against
/// the information-free controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub direction: TransferDirection,
    pub train_examples: usize,
    pub val_examples: usize,
    pub test_examples: usize,
    pub grid: Vec<GridOutcome>,
    pub best: GridOutcome,
    /// Validation accuracy in the training modality.
    pub val_accuracy: f64,
    /// Test accuracy with the premise modality swapped.
    pub test_accuracy: f64,
    /// Share of the most frequent test label.
    pub majority_rate: f64,
    /// Test accuracy with the all-black image as premise.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub black_control_accuracy: Option<f64>,
    /// Test accuracy with the zero embedding as premise.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub zero_control_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct EntailArtifacts {
    pub report: TransferReport,
    pub report_path: PathBuf,
    pub manifest_path: PathBuf,
}

pub fn run_entailment(cfg: &RunConfig) -> Result<EntailArtifacts> {
    let started = Instant::now();
    let out = cfg.out_dir()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut manifest = RunManifest::new("entailment", cfg);

    let train_path = cfg.require(&cfg.data.snli_train, "snli_train")?;
    let val_path = cfg.require(&cfg.data.snli_val, "snli_val")?;
    let test_path = cfg.require(&cfg.data.snli_test, "snli_test")?;
    manifest.record_input(train_path)?;
    manifest.record_input(val_path)?;
    manifest.record_input(test_path)?;

    let train_raw = load_snli_ve(train_path)?;
    let val_raw = load_snli_ve(val_path)?;
    let test_raw = load_snli_ve(test_path)?;

    let cache_root = cfg.resolved_cache_root();
    let bundle = build_bundle(cfg, cache_root.as_deref())?;
    let backend = bundle.backend();

    let ecfg = &cfg.entailment;
    let train_mode = ecfg.direction.train_premise();
    let eval_mode = ecfg.direction.eval_premise();
    let train = fused_examples(backend, &train_raw, train_mode)?;
    let val = fused_examples(backend, &val_raw, train_mode)?;
    let test = fused_examples(backend, &test_raw, eval_mode)?;

    let grid: Vec<GridPoint> = if ecfg.full_grid {
        default_grid()
    } else {
        vec![GridPoint {
            lr: ecfg.lr,
            batch_size: ecfg.batch_size,
            dropout: ecfg.dropout,
        }]
    };
    let (classifier, best, outcomes) = grid_search(
        backend.embed_dim(),
        ecfg.hidden,
        &train,
        &val,
        ecfg.epochs,
        ecfg.seed,
        &grid,
    )?;

    let test_accuracy = evaluate_entail(&classifier, &test)?;
    let golds: Vec<_> = test_raw.iter().map(|e| e.label).collect();
    let majority = majority_rate(&golds)?;
    let control = |mode: PremiseMode| -> Result<f64> {
        let fused = fused_examples(backend, &test_raw, mode)?;
        evaluate_entail(&classifier, &fused)
    };
    let black_control_accuracy = if ecfg.masked_control {
        Some(control(PremiseMode::BlackImage)?)
    } else {
        None
    };
    let zero_control_accuracy = if ecfg.zero_control {
        Some(control(PremiseMode::ZeroEmbedding)?)
    } else {
        None
    };

    let report = TransferReport {
        direction: ecfg.direction,
        train_examples: train.len(),
        val_examples: val.len(),
        test_examples: test.len(),
        grid: outcomes,
        val_accuracy: best.val_accuracy,
        best,
        test_accuracy,
        majority_rate: majority,
        black_control_accuracy,
        zero_control_accuracy,
    };

    let report_path = out.join(REPORT_FILE);
    write_json(&report_path, &report)?;
    manifest.record_output(&report_path);
    manifest.wall_ms = started.elapsed().as_millis() as u64;
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;

    Ok(EntailArtifacts {
        report,
        report_path,
        manifest_path,
    })
}

// ---------------------------------------------------------------------------
// Reporting

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

/// One line summarizing a finished run directory.
pub fn summarize_run(dir: &Path) -> Result<String> {
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
    let line = match manifest.command.as_str() {
        "zero-shot-vqa" => {
            let b: EvalBreakdown = read_json(&dir.join(BREAKDOWN_FILE), "breakdown")?;
            format!(
                "zero-shot-vqa  questions {}  all {:.2}  yes/no {}  number {}  other {}",
                b.questions,
                b.all,
                fmt_opt(b.yes_no),
                fmt_opt(b.number),
                fmt_opt(b.other),
            )
        }
        "few-shot-vqa" => {
            let s: FewShotSummary = read_json(&dir.join(SUMMARY_FILE), "few-shot summary")?;
            format!(
                "few-shot-vqa  mode {}  K {}  ways {}  trained-params {}  best {} @ epoch {}",
                s.mode,
                s.shots_per_way,
                s.ways,
                s.trained_parameters,
                fmt_opt(s.best_query_score),
                s.best_epoch,
            )
        }
        "entailment" => {
            let r: TransferReport = read_json(&dir.join(REPORT_FILE), "transfer report")?;
            format!(
                "entailment  {}  val {:.2}  test {:.2}  black-control {}  zero-control {}  majority {:.2}",
                r.direction,
                r.val_accuracy,
                r.test_accuracy,
                fmt_opt(r.black_control_accuracy),
                fmt_opt(r.zero_control_accuracy),
                r.majority_rate,
            )
        }
        other => format!("{other}  (no summary formatter)"),
    };
    Ok(format!("{}  {line}", dir.display()))
}

/// Tabulate several run directories, one line each.
pub fn run_report(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::InvalidInput("no run directories given".into()));
    }
    let mut lines = Vec::with_capacity(dirs.len());
    for dir in dirs {
        lines.push(summarize_run(dir)?);
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_snli_ve;
    use crate::entail::synthetic_ve_dataset;
    use crate::train::Checkpoint;

    fn write_vqa_fixture(
        dir: &Path,
        n_yesno: usize,
        n_number: usize,
        n_other: usize,
        weird: bool,
    ) -> (PathBuf, PathBuf, PathBuf) {
        let mut questions = Vec::new();
        let mut annotations = Vec::new();
        let mut id = 0u64;
        let mut push = |q: &str, atype: &str, gold: &str, qtype: &str| {
            id += 1;
            questions.push(serde_json::json!({
                "question_id": id, "image_id": 1000 + id, "question": q,
            }));
            let answers: Vec<_> = (0..10).map(|_| serde_json::json!({"answer": gold})).collect();
            annotations.push(serde_json::json!({
                "question_id": id, "image_id": 1000 + id,
                "question_type": qtype, "answer_type": atype,
                "multiple_choice_answer": gold, "answers": answers,
            }));
        };
        let yn_golds = ["yes", "no"];
        for i in 0..n_yesno {
            push(
                &format!("Does this scene number {i} look fun?"),
                "yes/no",
                yn_golds[i % 2],
                "does this",
            );
        }
        for i in 0..n_number {
            push(
                &format!("How many dogs are in scene {i}?"),
                "number",
                "2",
                "how many",
            );
        }
        for i in 0..n_other {
            push(
                &format!("What color is the cat in scene {i}?"),
                "other",
                "red",
                "what color is the",
            );
        }
        if weird {
            // no demonstration coverage, no parse: degrades to an error record
            push("Zorp the blarg?", "other", "red", "none of the above");
        }

        let q_path = dir.join("questions.json");
        let a_path = dir.join("annotations.json");
        let v_path = dir.join("vocab.txt");
        std::fs::write(
            &q_path,
            serde_json::json!({ "questions": questions }).to_string(),
        )
        .unwrap();
        std::fs::write(
            &a_path,
            serde_json::json!({ "annotations": annotations }).to_string(),
        )
        .unwrap();
        std::fs::write(
            &v_path,
            "red\nblue\ngreen\n2\n3\n4\nyes\nno\ncat\ndog\nwood\nmetal\n",
        )
        .unwrap();
        (q_path, a_path, v_path)
    }

    fn zero_shot_config(dir: &Path, out: &Path) -> RunConfig {
        let (q, a, v) = write_vqa_fixture(dir, 4, 3, 2, true);
        let mut cfg = RunConfig::default();
        cfg.data.questions = Some(q);
        cfg.data.annotations = Some(a);
        cfg.data.answer_vocab = Some(v);
        cfg.backend.encoder = EncoderKind::Hash;
        cfg.backend.embed_dim = 16;
        cfg.tapc.k = 5;
        cfg.output.dir = Some(out.to_path_buf());
        cfg
    }

    #[test]
    fn ablation_flags_are_mutually_exclusive() {
        let tapc = TapcConfig {
            qip_baseline: true,
            no_parsing_template: true,
            ..TapcConfig::default()
        };
        let err = tapc.validate().unwrap_err().to_string();
        assert!(err.contains("qip_baseline"), "{err}");
        assert!(err.contains("no_parsing_template"), "{err}");

        for flag in 0..4 {
            let mut single = TapcConfig::default();
            match flag {
                0 => single.no_answer_filter = true,
                1 => single.qip_baseline = true,
                2 => single.no_demo_template = true,
                _ => single.no_parsing_template = true,
            }
            single.validate().unwrap();
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[tapc]\nanswerr_k = 5\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("answerr_k"), "{err}");

        std::fs::write(&path, "[tapc]\nk = 5\n[output]\ndir = \"x\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.tapc.k, 5);
        assert_eq!(cfg.output.dir.as_deref(), Some(Path::new("x")));
        assert_eq!(cfg.tapc.max_demos, 16, "unset fields take defaults");
    }

    #[test]
    fn prompt_sets_honor_the_ablation_flags() {
        let vocab = AnswerVocabulary::new(
            ["red", "blue", "green", "2", "3", "yes", "no"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap();
        let bank = DemonstrationBank::builtin();
        let lm = SeededLm::new(7);
        let base = TapcConfig { k: 3, ..Default::default() };
        fn make<'a>(
            lm: &'a SeededLm,
            bank: &'a DemonstrationBank,
            vocab: &'a AnswerVocabulary,
            tapc: &'a TapcConfig,
        ) -> VqaPipeline<'a> {
            VqaPipeline {
                lm,
                bank,
                parses: None,
                vocab,
                tapc,
                filter_cache: None,
                demos: &[],
            }
        }
        let pipeline = |tapc| make(&lm, &bank, &vocab, tapc);

        // default: filtered top-k prompts
        let tapc = base.clone();
        let ps = pipeline(&tapc)
            .prompt_set("What color is the cat?", AnswerType::Other)
            .unwrap();
        assert_eq!(ps.prompts.len(), 3);

        // no_answer_filter: the whole vocabulary in vocabulary order
        let tapc = TapcConfig { no_answer_filter: true, ..base.clone() };
        let ps = pipeline(&tapc)
            .prompt_set("What color is the cat?", AnswerType::Other)
            .unwrap();
        assert_eq!(ps.answers, vocab.entries());
        assert_eq!(ps.prompts.len(), vocab.len());

        // qip_baseline: bare question+answer prompts
        let tapc = TapcConfig { qip_baseline: true, ..base.clone() };
        let ps = pipeline(&tapc)
            .prompt_set("What color is the cat?", AnswerType::Other)
            .unwrap();
        assert_eq!(ps.prompts, build_qip_prompts("What color is the cat?", &ps.answers));
        assert_eq!(ps.answers, vocab.entries());
        let yn = pipeline(&tapc)
            .prompt_set("Does this look fun?", AnswerType::YesNo)
            .unwrap();
        assert_eq!(yn.answers, ["yes", "no"]);
        assert_eq!(yn.prompts[0], "question: Does this look fun? answer: yes");

        // yes/no default: the two statements
        let tapc = base.clone();
        let yn = pipeline(&tapc)
            .prompt_set("Does this look fun?", AnswerType::YesNo)
            .unwrap();
        assert_eq!(yn.prompts.len(), 2);
        assert_eq!(yn.answers, ["yes", "no"]);
        assert_ne!(yn.prompts[0], "");

        // yes/no statements are demo-primed, so disabling demos breaks them
        let tapc = TapcConfig { no_demo_template: true, ..base.clone() };
        assert!(pipeline(&tapc)
            .prompt_set("Does this look fun?", AnswerType::YesNo)
            .is_err());
    }

    #[test]
    fn zero_shot_run_degrades_per_question_and_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = zero_shot_config(dir.path(), &out);

        let artifacts = run_zero_shot_vqa(&cfg).unwrap();
        assert_eq!(artifacts.results.len(), 10);
        let failed: Vec<_> = artifacts
            .results
            .iter()
            .filter(|r| r.error.is_some())
            .collect();
        assert_eq!(failed.len(), 1, "only the uncovered question degrades");
        assert_eq!(failed[0].score, 0.0);
        assert!(failed[0].prediction.is_empty());

        // four-column breakdown
        assert_eq!(artifacts.breakdown.questions, 10);
        assert!(artifacts.breakdown.yes_no.is_some());
        assert!(artifacts.breakdown.number.is_some());
        assert!(artifacts.breakdown.other.is_some());

        // jsonl records parse back
        let lines = std::fs::read_to_string(&artifacts.results_path).unwrap();
        let parsed: Vec<VqaResult> = lines
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, artifacts.results);

        // the manifest hashes every input and lists every artifact
        let manifest = RunManifest::load(&artifacts.manifest_path).unwrap();
        assert_eq!(manifest.command, "zero-shot-vqa");
        assert_eq!(manifest.inputs.len(), 3);
        assert!(manifest.inputs.values().all(|h| h.len() == 64));
        for output in &manifest.outputs {
            assert!(Path::new(output).exists(), "missing artifact {output}");
        }
        assert!(manifest
            .outputs
            .contains(&artifacts.breakdown_path.display().to_string()));

        // and the report command can read the directory back
        let report = run_report(&[out]).unwrap();
        assert!(report.contains("zero-shot-vqa"), "{report}");
        assert!(report.contains("questions 10"), "{report}");
    }

    #[test]
    fn zero_shot_replay_is_byte_identical_and_worker_count_invariant() {
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let cfg = zero_shot_config(dir.path(), &out_a);
        let first = run_zero_shot_vqa(&cfg).unwrap();

        // replay through the manifest into a new directory
        let manifest = RunManifest::load(&first.manifest_path).unwrap();
        let out_b = dir.path().join("b");
        replay(&manifest, &out_b).unwrap();
        let results_a = std::fs::read(&first.results_path).unwrap();
        let results_b = std::fs::read(out_b.join(RESULTS_FILE)).unwrap();
        assert_eq!(results_a, results_b);
        let breakdown_a = std::fs::read(&first.breakdown_path).unwrap();
        let breakdown_b = std::fs::read(out_b.join(BREAKDOWN_FILE)).unwrap();
        assert_eq!(breakdown_a, breakdown_b);

        // more workers, same bytes
        let mut parallel = cfg.clone();
        parallel.tapc.workers = 3;
        parallel.output.dir = Some(dir.path().join("c"));
        run_zero_shot_vqa(&parallel).unwrap();
        let results_c = std::fs::read(dir.path().join("c").join(RESULTS_FILE)).unwrap();
        assert_eq!(results_a, results_c);
    }

    #[test]
    fn few_shot_run_checkpoints_only_selected_parameters_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let (q, a, v) = write_vqa_fixture(dir.path(), 4, 4, 4, false);
        let mut cfg = RunConfig::default();
        cfg.data.questions = Some(q);
        cfg.data.annotations = Some(a);
        cfg.data.answer_vocab = Some(v);
        cfg.backend.encoder = EncoderKind::Toy;
        cfg.tapc.k = 4;
        cfg.fewshot.k = 4;
        cfg.fewshot.epochs = 3;
        cfg.fewshot.lr = 1e-3;
        cfg.output.dir = Some(dir.path().join("run"));
        cfg.output.cache_root = Some(dir.path().join("cache"));

        let artifacts = run_few_shot(&cfg).unwrap();
        assert_eq!(artifacts.report.epochs.len(), 3);
        assert_eq!(artifacts.summary.ways, 3);
        assert_eq!(artifacts.summary.total_shots, 12);
        assert_eq!(artifacts.summary.trained_parameters, 16);
        assert!(artifacts.summary.best_query_score.is_some());

        // the checkpoint holds the bias/normalization selection only
        let ckpt = Checkpoint::load(&artifacts.checkpoint_path).unwrap();
        assert_eq!(ckpt.mode, TuneMode::Binor);
        assert!(!ckpt.tensors.is_empty());
        assert!(ckpt
            .tensors
            .iter()
            .all(|t| t.info.kind.is_some_and(|k| TuneMode::Binor.selects(k))));
        let values: usize = ckpt.tensors.iter().map(|t| t.values.len()).sum();
        assert_eq!(values, 16);

        // replay reproduces the trace byte for byte
        let manifest = RunManifest::load(&artifacts.manifest_path).unwrap();
        let out_b = dir.path().join("replayed");
        replay(&manifest, &out_b).unwrap();
        let trace_a = std::fs::read(&artifacts.trace_path).unwrap();
        let trace_b = std::fs::read(out_b.join(TRACE_FILE)).unwrap();
        assert_eq!(trace_a, trace_b);

        // report line
        let line = summarize_run(cfg.output.dir.as_ref().unwrap()).unwrap();
        assert!(line.contains("mode binor"), "{line}");

        // frozen mock backends cannot be fine-tuned
        let mut bad = cfg.clone();
        bad.backend.encoder = EncoderKind::Marker;
        bad.output.dir = Some(dir.path().join("bad"));
        assert!(run_few_shot(&bad).is_err());

        // ablation flags describe inference experiments, not training
        let mut flagged = cfg.clone();
        flagged.tapc.qip_baseline = true;
        flagged.output.dir = Some(dir.path().join("flagged"));
        assert!(run_few_shot(&flagged).is_err());
    }

    fn entailment_config(dir: &Path, out: &Path) -> RunConfig {
        let train = synthetic_ve_dataset(6, 6, 0..4).unwrap();
        let val = synthetic_ve_dataset(6, 6, 4..6).unwrap();
        let test = synthetic_ve_dataset(6, 6, 6..8).unwrap();
        let train_path = dir.join("train.jsonl");
        let val_path = dir.join("val.jsonl");
        let test_path = dir.join("test.jsonl");
        write_snli_ve(&train_path, &train).unwrap();
        write_snli_ve(&val_path, &val).unwrap();
        write_snli_ve(&test_path, &test).unwrap();

        let mut cfg = RunConfig::default();
        cfg.data.snli_train = Some(train_path);
        cfg.data.snli_val = Some(val_path);
        cfg.data.snli_test = Some(test_path);
        cfg.backend.encoder = EncoderKind::Marker;
        cfg.backend.embed_dim = 32;
        cfg.entailment.full_grid = false;
        cfg.entailment.lr = 3e-3;
        cfg.entailment.batch_size = 32;
        cfg.entailment.dropout = 0.0;
        cfg.entailment.epochs = 20;
        cfg.entailment.hidden = (48, 24);
        cfg.entailment.zero_control = true;
        cfg.output.dir = Some(out.to_path_buf());
        cfg
    }

    #[test]
    fn entailment_run_transfers_and_controls_fall_to_majority() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = entailment_config(dir.path(), &out);

        let artifacts = run_entailment(&cfg).unwrap();
        let report = &artifacts.report;
        assert_eq!(report.direction, TransferDirection::TextToImage);
        assert_eq!(report.train_examples, 144);
        assert_eq!(report.test_examples, 72);
        assert_eq!(report.grid.len(), 1);
        assert!(report.val_accuracy >= 95.0, "val {}", report.val_accuracy);
        assert!(report.test_accuracy >= 95.0, "test {}", report.test_accuracy);
        let majority = report.majority_rate;
        assert!((majority - 100.0 / 3.0).abs() < 1.0, "majority {majority}");
        let black = report.black_control_accuracy.unwrap();
        let zero = report.zero_control_accuracy.unwrap();
        assert!((black - majority).abs() <= 2.0, "black {black} vs {majority}");
        assert!((zero - majority).abs() <= 2.0, "zero {zero} vs {majority}");

        let line = summarize_run(&out).unwrap();
        assert!(line.contains("text-to-image"), "{line}");

        // byte-identical replay of the report
        let manifest = RunManifest::load(&artifacts.manifest_path).unwrap();
        let out_b = dir.path().join("replayed");
        replay(&manifest, &out_b).unwrap();
        let report_a = std::fs::read(&artifacts.report_path).unwrap();
        let report_b = std::fs::read(out_b.join(REPORT_FILE)).unwrap();
        assert_eq!(report_a, report_b);
    }

    #[test]
    fn entailment_swapped_direction_transfers_too() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut cfg = entailment_config(dir.path(), &out);
        cfg.entailment.direction = TransferDirection::ImageToText;
        cfg.entailment.masked_control = false;
        cfg.entailment.zero_control = false;

        let artifacts = run_entailment(&cfg).unwrap();
        assert_eq!(artifacts.report.direction, TransferDirection::ImageToText);
        assert!(
            artifacts.report.test_accuracy >= 95.0,
            "image→text test {}",
            artifacts.report.test_accuracy
        );
        assert!(artifacts.report.black_control_accuracy.is_none());
    }

    #[test]
    fn environment_overrides_the_cache_and_checkpoint_roots() {
        let mut cfg = RunConfig::default();
        cfg.output.cache_root = Some(PathBuf::from("/from/config"));
        assert_eq!(cfg.resolved_cache_root().unwrap(), Path::new("/from/config"));
        std::env::set_var(CACHE_ROOT_ENV, "/from/env");
        assert_eq!(cfg.resolved_cache_root().unwrap(), Path::new("/from/env"));
        std::env::remove_var(CACHE_ROOT_ENV);

        assert_eq!(cfg.resolved_checkpoint_root(), None);
        std::env::set_var(CHECKPOINT_ROOT_ENV, "/ckpt");
        assert_eq!(cfg.resolved_checkpoint_root().unwrap(), Path::new("/ckpt"));
        std::env::remove_var(CHECKPOINT_ROOT_ENV);
    }

    #[test]
    fn missing_required_paths_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.output.dir = Some(dir.path().join("out"));
        let err = run_zero_shot_vqa(&cfg).unwrap_err().to_string();
        assert!(err.contains("data.questions"), "{err}");

        let err = run_entailment(&cfg).unwrap_err().to_string();
        assert!(err.contains("data.snli_train"), "{err}");

        cfg.output.dir = None;
        cfg.backend.encoder = EncoderKind::Toy;
        let err = run_few_shot(&cfg).unwrap_err().to_string();
        assert!(err.contains("output.dir"), "{err}");
    }
}
