//! Command-line front end over the run families in `vlshot::runner`.
//!
//! Every run command takes an optional TOML config plus flag overrides;
//! flags win. Success prints the run's one-line summary to stdout; any
//! failure prints a JSON error summary to stderr and exits nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vlshot::runner::{
    replay, run_entailment, run_few_shot, run_report, run_zero_shot_vqa, summarize_run,
    EncoderKind, RunConfig, RunManifest, TransferDirection,
};
use vlshot::train::TuneMode;
use vlshot::Error;

#[derive(Parser)]
#[command(name = "vlshot", version, about = "Zero- and few-shot vision-language transfer runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer a VQA split by scoring assembled prompts against images.
    ZeroShotVqa(ZeroShotArgs),
    /// Fine-tune the trainable tower on an episodic few-shot pool.
    FewShotVqa(FewShotArgs),
    /// Train the entailment classifier in one premise modality and
    /// evaluate it in the other.
    Entailment(EntailArgs),
    /// Rerun a finished run from its manifest into a new directory.
    Replay(ReplayArgs),
    /// Summarize finished run directories, one line each.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML). Unset fields take their defaults; the
    /// flags below override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Embedding/filter cache root (the VLSHOT_CACHE_ROOT environment
    /// variable wins over both this flag and the config).
    #[arg(long)]
    cache_root: Option<PathBuf>,
    /// Encoder backend: hash, marker, or toy.
    #[arg(long, value_parser = parse_encoder)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    encoder_seed: Option<u64>,
    #[arg(long)]
    lm_seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output.dir = Some(out.clone());
        }
        if let Some(root) = &self.cache_root {
            cfg.output.cache_root = Some(root.clone());
        }
        if let Some(kind) = self.encoder {
            cfg.backend.encoder = kind;
        }
        if let Some(seed) = self.encoder_seed {
            cfg.backend.encoder_seed = seed;
        }
        if let Some(seed) = self.lm_seed {
            cfg.backend.lm_seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct VqaDataArgs {
    /// VQA questions file (official release schema).
    #[arg(long)]
    questions: Option<PathBuf>,
    /// VQA annotations file (official release schema).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Answer vocabulary, one answer per line.
    #[arg(long)]
    answer_vocab: Option<PathBuf>,
    /// Question-type prefix list (built-in taxonomy when absent).
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Demonstration bank (built-in bank when absent).
    #[arg(long)]
    demo_bank: Option<PathBuf>,
    /// Pre-parsed questions (CoNLL-U) for the parsing template route.
    #[arg(long)]
    parses: Option<PathBuf>,
}

impl VqaDataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.data;
        let fields = [
            (&self.questions, &mut d.questions),
            (&self.annotations, &mut d.annotations),
            (&self.answer_vocab, &mut d.answer_vocab),
            (&self.taxonomy, &mut d.taxonomy),
            (&self.demo_bank, &mut d.demo_bank),
            (&self.parses, &mut d.parses),
        ];
        for (flag, slot) in fields {
            if let Some(path) = flag {
                *slot = Some(path.clone());
            }
        }
    }
}

#[derive(Args)]
struct ZeroShotArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: VqaDataArgs,
    /// Answers the filter keeps per question.
    #[arg(long)]
    k: Option<usize>,
    /// Per-question inference workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Ablation: score the whole vocabulary, no filtering.
    #[arg(long)]
    no_answer_filter: bool,
    /// Ablation: bare question+answer prompts.
    #[arg(long)]
    qip_baseline: bool,
    /// Ablation: disable demonstration-primed templates.
    #[arg(long)]
    no_demo_template: bool,
    /// Ablation: disable the dependency-parse template route.
    #[arg(long)]
    no_parsing_template: bool,
}

#[derive(Args)]
struct FewShotArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: VqaDataArgs,
    /// Tuning mode: binor, bitfit, or full.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TuneMode>,
    /// Shots per way (the K in C-way K-shot).
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint directory (the VLSHOT_CHECKPOINT_ROOT environment
    /// variable wins over both this flag and the config).
    #[arg(long)]
    checkpoint_root: Option<PathBuf>,
}

#[derive(Args)]
struct EntailArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    snli_train: Option<PathBuf>,
    #[arg(long)]
    snli_val: Option<PathBuf>,
    #[arg(long)]
    snli_test: Option<PathBuf>,
    /// Transfer direction: text-to-image or image-to-text.
    #[arg(long, value_parser = parse_direction)]
    direction: Option<TransferDirection>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train only the configured lr/batch/dropout point instead of
    /// searching the full grid.
    #[arg(long)]
    no_grid: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest of the run to repeat.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory the replayed artifacts land in.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Finished run directories.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

fn parse_encoder(s: &str) -> Result<EncoderKind, String> {
    match s {
        "hash" => Ok(EncoderKind::Hash),
        "marker" => Ok(EncoderKind::Marker),
        "toy" => Ok(EncoderKind::Toy),
        other => Err(format!("unknown encoder {other:?} (hash, marker, toy)")),
    }
}

fn parse_mode(s: &str) -> Result<TuneMode, String> {
    match s {
        "binor" => Ok(TuneMode::Binor),
        "bitfit" => Ok(TuneMode::Bitfit),
        "full" => Ok(TuneMode::Full),
        other => Err(format!("unknown tuning mode {other:?} (binor, bitfit, full)")),
    }
}

fn parse_direction(s: &str) -> Result<TransferDirection, String> {
    match s {
        "text-to-image" => Ok(TransferDirection::TextToImage),
        "image-to-text" => Ok(TransferDirection::ImageToText),
        other => Err(format!(
            "unknown direction {other:?} (text-to-image, image-to-text)"
        )),
    }
}

fn run(command: Command) -> Result<String, Error> {
    match command {
        Command::ZeroShotVqa(args) => {
            let mut cfg = args.common.load()?;
            args.data.apply(&mut cfg);
            if let Some(k) = args.k {
                cfg.tapc.k = k;
            }
            if let Some(workers) = args.workers {
                cfg.tapc.workers = workers;
            }
            cfg.tapc.no_answer_filter |= args.no_answer_filter;
            cfg.tapc.qip_baseline |= args.qip_baseline;
            cfg.tapc.no_demo_template |= args.no_demo_template;
            cfg.tapc.no_parsing_template |= args.no_parsing_template;
            let artifacts = run_zero_shot_vqa(&cfg)?;
            summarize_run(artifacts.manifest_path.parent().expect("run dir"))
        }
        Command::FewShotVqa(args) => {
            let mut cfg = args.common.load()?;
            args.data.apply(&mut cfg);
            if let Some(mode) = args.mode {
                cfg.fewshot.mode = mode;
            }
            if let Some(shots) = args.shots {
                cfg.fewshot.k = shots;
            }
            if let Some(epochs) = args.epochs {
                cfg.fewshot.epochs = epochs;
            }
            if let Some(seed) = args.seed {
                cfg.fewshot.seed = seed;
            }
            if let Some(root) = args.checkpoint_root {
                cfg.output.checkpoint_root = Some(root);
            }
            let artifacts = run_few_shot(&cfg)?;
            summarize_run(artifacts.manifest_path.parent().expect("run dir"))
        }
        Command::Entailment(args) => {
            let mut cfg = args.common.load()?;
            let d = &mut cfg.data;
            if let Some(path) = args.snli_train {
                d.snli_train = Some(path);
            }
            if let Some(path) = args.snli_val {
                d.snli_val = Some(path);
            }
            if let Some(path) = args.snli_test {
                d.snli_test = Some(path);
            }
            if let Some(direction) = args.direction {
                cfg.entailment.direction = direction;
            }
            if let Some(epochs) = args.epochs {
                cfg.entailment.epochs = epochs;
            }
            if let Some(seed) = args.seed {
                cfg.entailment.seed = seed;
            }
            if args.no_grid {
                cfg.entailment.full_grid = false;
            }
            let artifacts = run_entailment(&cfg)?;
            summarize_run(artifacts.manifest_path.parent().expect("run dir"))
        }
        Command::Replay(args) => {
            let manifest = RunManifest::load(&args.manifest)?;
            replay(&manifest, &args.out)?;
            summarize_run(&args.out)
        }
        Command::Report(args) => run_report(&args.dirs),
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::MalformedFile { .. } => "malformed-file",
        Error::InvalidInput(_) => "invalid-input",
        Error::Config(_) => "config",
        Error::Parse(_) => "parse",
        Error::NoMaskSlot(_) => "no-mask-slot",
        Error::UnsupportedQuestion(_) => "unsupported-question",
        Error::LanguageModel(_) => "language-model",
        Error::Encoder(_) => "encoder",
        Error::UntaggedParameter(_) => "untagged-parameter",
        Error::ShapeMismatch(_) => "shape-mismatch",
        Error::Cache(_) => "cache",
        Error::Checkpoint(_) => "checkpoint",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let summary = serde_json::json!({
                "kind": error_kind(&e),
                "error": e.to_string(),
            });
            eprintln!("{summary}");
            ExitCode::FAILURE
        }
    }
}
