//! Acceptance gate: one test per shipping criterion, each printing a
//! PASS line (visible with `--nocapture`) once its checks hold. The
//! desk-scale tier runs entirely on the deterministic mock backends and
//! must stay green. The full-scale tier at the bottom needs the released
//! encoder checkpoints, the real infilling model, and the complete
//! datasets; those tests are `#[ignore]`d and fail with instructions when
//! the artifacts are absent.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use vlshot::data::{
    split_episode, AnswerType, AnswerVocabulary, FewShotPool, ImageRef, PoolOptions, Taxonomy,
    VqaExample,
};
use vlshot::encoder::catalog::{rn101, rn50x16, vit_b_16};
use vlshot::encoder::{
    binor_count, predict_zero_shot, DualEncoderBackend, ParamInfo, LOGIT_SCALE_INIT,
};
use vlshot::entail::{
    evaluate_entail, fuse, fused_examples, majority_rate, synthetic_ve_dataset, train_entail,
    EntailClassifier, EntailTrainConfig, PremiseMode,
};
use vlshot::eval::{aggregate, vqa_score, VqaResult};
use vlshot::filter::{filter_answers, filter_top_k, CandidateScore, FilterOptions, PromptSet};
use vlshot::lm::{InfillLm, SeededLm};
use vlshot::parse::{FileParseProvider, ParseProvider};
use vlshot::template::{mask_count, question_to_statement, MaskedTemplate, TemplateSource};
use vlshot::train::{
    batch_gradients, select_trainable, selected_parameter_count, train_on_items, ToyDualEncoder,
    TrainConfig, TrainItem, TuneMode,
};

fn pass(line: &str) {
    println!("PASS  {line}");
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// ---------------------------------------------------------------------------
// Prompt scoring equals the brute-force oracle

/// Backend with preset embeddings, so the oracle can recompute every score
/// from the raw vectors.
struct FixtureBackend {
    dim: usize,
    images: HashMap<String, Vec<f64>>,
    texts: HashMap<String, Vec<f64>>,
}

impl DualEncoderBackend for FixtureBackend {
    fn id(&self) -> &str {
        "fixture"
    }
    fn embed_dim(&self) -> usize {
        self.dim
    }
    fn encode_image(&self, image: &ImageRef) -> vlshot::Result<Vec<f64>> {
        self.images
            .get(&image.to_string())
            .cloned()
            .ok_or_else(|| vlshot::Error::Encoder(format!("no fixture image {image}")))
    }
    fn encode_text(&self, text: &str) -> vlshot::Result<Vec<f64>> {
        self.texts
            .get(text)
            .cloned()
            .ok_or_else(|| vlshot::Error::Encoder(format!("no fixture text {text:?}")))
    }
    fn parameters(&self) -> Vec<ParamInfo> {
        Vec::new()
    }
}

fn random_unit_free_vector(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            return v;
        }
    }
}

/// Cosine scoring written from scratch: normalize both vectors by their
/// explicit Euclidean norms, multiply, sum.
fn oracle_score(scale: f64, image: &[f64], text: &[f64]) -> f64 {
    let ni = image.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt = text.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut acc = 0.0;
    for (a, b) in image.iter().zip(text) {
        acc += (a / ni) * (b / nt);
    }
    scale * acc
}

#[test]
fn scoring_matches_the_brute_force_argmax_on_a_thousand_fixtures() {
    let dim = 8;
    for case in 0..1000u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(case);
        let n_prompts = rng.random_range(1..=200);
        let image_vec = random_unit_free_vector(&mut rng, dim);
        let image = ImageRef::new(format!("case-{case}"));

        let mut texts = HashMap::new();
        let mut prompts = Vec::with_capacity(n_prompts);
        let mut answers = Vec::with_capacity(n_prompts);
        for j in 0..n_prompts {
            let prompt = format!("case {case} prompt {j}");
            texts.insert(prompt.clone(), random_unit_free_vector(&mut rng, dim));
            prompts.push(prompt);
            answers.push(format!("answer-{j}"));
        }
        let backend = FixtureBackend {
            dim,
            images: HashMap::from([(image.to_string(), image_vec.clone())]),
            texts,
        };
        let set = PromptSet::from_parts(prompts.clone(), answers).unwrap();

        // exhaustive oracle: score every prompt, scan for the first maximum
        let oracle_scores: Vec<f64> = prompts
            .iter()
            .map(|p| oracle_score(LOGIT_SCALE_INIT, &image_vec, &backend.texts[p]))
            .collect();
        let mut oracle_best = 0;
        for (j, s) in oracle_scores.iter().enumerate() {
            if *s > oracle_scores[oracle_best] {
                oracle_best = j;
            }
        }

        let outcome = predict_zero_shot(&backend, LOGIT_SCALE_INIT, &image, &set).unwrap();
        assert_eq!(
            outcome.index, oracle_best,
            "case {case}: picked {} over oracle {}",
            outcome.index, oracle_best
        );

        // positive rescaling of the logit scale never moves the argmax
        for _ in 0..10 {
            let factor = rng.random::<f64>() * 99.99 + 0.01;
            let scaled =
                predict_zero_shot(&backend, LOGIT_SCALE_INIT * factor, &image, &set).unwrap();
            assert_eq!(scaled.index, oracle_best, "case {case} at scale ×{factor}");
        }
    }
    pass("prompt scoring equals the brute-force argmax on 1,000 fixtures and ignores positive rescaling");
}

// ---------------------------------------------------------------------------
// Top-k filtering equals the sort-prefix oracle; zero demonstrations are a
// no-op

/// Selection-sort oracle: repeatedly extract the best remaining candidate
/// (highest score, lowest vocabulary index on ties).
fn sort_prefix_oracle(scores: &[CandidateScore], k: usize) -> Vec<CandidateScore> {
    let mut remaining: Vec<CandidateScore> = scores.to_vec();
    let mut picked = Vec::with_capacity(k.min(remaining.len()));
    while picked.len() < k && !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let better = remaining[i].log_prob > remaining[best].log_prob
                || (remaining[i].log_prob == remaining[best].log_prob
                    && remaining[i].vocab_index < remaining[best].vocab_index);
            if better {
                best = i;
            }
        }
        picked.push(remaining.remove(best));
    }
    picked
}

#[test]
fn top_k_matches_the_sort_prefix_oracle_and_zero_demos_change_nothing() {
    let vocab_size = 300;
    for case in 0..200u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(1_000 + case);
        let scores: Vec<CandidateScore> = (0..vocab_size)
            .map(|i| CandidateScore {
                answer: format!("a{i}"),
                vocab_index: i,
                // quartile-quantized so exact ties are common
                log_prob: (rng.random::<f64>() * 32.0).floor() / 4.0 - 8.0,
            })
            .collect();
        for k in [1, 5, 200, vocab_size] {
            let got = filter_top_k(&scores, k).unwrap();
            let want = sort_prefix_oracle(&scores, k);
            assert_eq!(got, want, "case {case}, k={k}");
        }
    }

    // with no demonstrations, the conditioned filter IS the plain filter:
    // reconstruct the whole scoring path by hand and compare exactly
    let lm = SeededLm::new(7);
    let template =
        MaskedTemplate::new("The fence is [mask].", TemplateSource::Parsing, None).unwrap();
    let entries: Vec<String> = (0..30)
        .map(|i| {
            if i % 5 == 0 {
                format!("pair answer {i}") // long enough to be excluded
            } else {
                format!("word{i}")
            }
        })
        .collect();
    let vocab = AnswerVocabulary::new(entries).unwrap();
    let opts = FilterOptions {
        k: 10,
        max_answer_tokens: 2,
        ..FilterOptions::default()
    };

    let context = template.fill(lm.sentinel());
    let kept: Vec<(usize, String)> = vocab
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, a)| lm.span_token_count(a) <= opts.max_answer_tokens)
        .map(|(i, a)| (i, a.clone()))
        .collect();
    assert!(kept.len() < vocab.len(), "exclusion must actually trigger");
    let raw = lm
        .score_spans(&context, &kept.iter().map(|(_, a)| a.clone()).collect::<Vec<_>>())
        .unwrap();
    let rebuilt: Vec<CandidateScore> = kept
        .into_iter()
        .zip(raw)
        .map(|((vocab_index, answer), log_prob)| CandidateScore {
            answer,
            vocab_index,
            log_prob,
        })
        .collect();
    let want = sort_prefix_oracle(&rebuilt, opts.k);

    let zero_demo = filter_answers(&lm, &template, &vocab, &[], &opts).unwrap();
    assert_eq!(zero_demo, want, "zero-demo filtering must equal the plain path exactly");

    pass("top-k filtering equals the sort-prefix oracle for k ∈ {1, 5, 200, |vocab|}; zero-demo filtering is the identity");
}

// ---------------------------------------------------------------------------
// Relation fusion recovers its blocks exactly

#[test]
fn fusion_blocks_recover_exactly_for_a_thousand_pairs() {
    for dim in [2usize, 512] {
        for case in 0..500u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(dim as u64 * 10_000 + case);
            let v1: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let v2: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let fused = fuse(&v1, &v2).unwrap();
            assert_eq!(fused.len(), 5 * dim);
            for i in 0..dim {
                assert_eq!(fused[i].to_bits(), v1[i].to_bits());
                assert_eq!(fused[dim + i].to_bits(), v2[i].to_bits());
                assert_eq!(fused[2 * dim + i].to_bits(), (v1[i] + v2[i]).to_bits());
                assert_eq!(fused[3 * dim + i].to_bits(), (v1[i] - v2[i]).to_bits());
                assert_eq!(fused[4 * dim + i].to_bits(), (v1[i] * v2[i]).to_bits());
            }
        }
    }
    pass("fusion output is 5d and every block is recovered bitwise on 1,000 pairs at d ∈ {2, 512}");
}

// ---------------------------------------------------------------------------
// Freeze soundness, gradient check, selection chain

fn training_items() -> Vec<TrainItem> {
    let make = |img: &str, prompts: &[&str], gold: usize| {
        TrainItem::new(
            ImageRef::new(img),
            prompts.iter().map(|p| p.to_string()).collect(),
            (0..prompts.len()).map(|i| format!("ans{i}")).collect(),
            gold,
            vec![format!("ans{gold}"); 10],
        )
        .unwrap()
    };
    vec![
        make("img-a", &["The fence is red.", "The fence is blue.", "The fence is green."], 0),
        make("img-b", &["There are 2 dogs.", "There are 3 dogs.", "There are 4 dogs."], 1),
        make("img-c", &["It is sunny.", "It is raining.", "It is snowing."], 2),
    ]
}

#[test]
fn frozen_parameters_stay_bitwise_fixed_through_a_hundred_steps() {
    let items = training_items();
    for mode in [TuneMode::Bitfit, TuneMode::Binor] {
        let mut encoder = ToyDualEncoder::new(4);
        let before: BTreeMap<String, Vec<u64>> = encoder
            .store()
            .tensors()
            .iter()
            .map(|t| (t.info.name.clone(), t.values.iter().map(|v| v.to_bits()).collect()))
            .collect();
        let selected: HashSet<String> =
            select_trainable(encoder.store(), mode).unwrap().into_iter().collect();

        let mut scale = LOGIT_SCALE_INIT;
        let cfg = TrainConfig { mode, lr: 1e-2, ..TrainConfig::default() };
        train_on_items(&mut encoder, &mut scale, &items, &cfg, 100).unwrap();

        let mut moved = 0usize;
        for t in encoder.store().tensors() {
            let bits: Vec<u64> = t.values.iter().map(|v| v.to_bits()).collect();
            if selected.contains(&t.info.name) {
                if bits != before[&t.info.name] {
                    moved += 1;
                }
            } else {
                assert_eq!(
                    bits, before[&t.info.name],
                    "{mode} training moved frozen tensor {}",
                    t.info.name
                );
            }
        }
        assert!(moved > 0, "{mode} training moved nothing at all");
    }
    pass("100 training steps leave every non-selected parameter bitwise unchanged (bias-only and bias+normalization)");
}

#[test]
fn analytic_gradients_match_central_finite_differences() {
    let items = training_items();
    let mut encoder = ToyDualEncoder::new(11);
    let scale = LOGIT_SCALE_INIT;
    let (_, grads, scale_grad) = batch_gradients(&encoder, scale, &items).unwrap();

    let h = 1e-5;
    let names: Vec<String> = encoder
        .store()
        .tensors()
        .iter()
        .map(|t| t.info.name.clone())
        .collect();
    let mut checked = 0usize;
    for name in &names {
        let len = encoder.store().get(name).unwrap().values.len();
        // the index drives paired nudges of the store and a lookup into the
        // analytic gradients, so a range loop is the clear spelling
        #[allow(clippy::needless_range_loop)]
        for i in 0..len {
            let original = encoder.store().get(name).unwrap().values[i];
            encoder.store_mut().values_mut(name).unwrap()[i] = original + h;
            let (up, _, _) = batch_gradients(&encoder, scale, &items).unwrap();
            encoder.store_mut().values_mut(name).unwrap()[i] = original - h;
            let (down, _, _) = batch_gradients(&encoder, scale, &items).unwrap();
            encoder.store_mut().values_mut(name).unwrap()[i] = original;

            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[name][i];
            assert!(
                (analytic - numeric).abs() <= 1e-4 * numeric.abs().max(1.0),
                "{name}[{i}]: analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, encoder.store().total_len());

    // the logit scale is a trained parameter too
    let (up, _, _) = batch_gradients(&encoder, scale + h, &items).unwrap();
    let (down, _, _) = batch_gradients(&encoder, scale - h, &items).unwrap();
    let numeric = (up - down) / (2.0 * h);
    assert!(
        (scale_grad - numeric).abs() <= 1e-4 * numeric.abs().max(1.0),
        "scale: analytic {scale_grad} vs numeric {numeric}"
    );

    pass("analytic gradients match central finite differences within 1e-4 relative error on every parameter");
}

#[test]
fn tuning_selections_nest_and_count_exactly() {
    let encoder = ToyDualEncoder::new(0);
    let store = encoder.store();
    let bitfit: HashSet<String> =
        select_trainable(store, TuneMode::Bitfit).unwrap().into_iter().collect();
    let binor: HashSet<String> =
        select_trainable(store, TuneMode::Binor).unwrap().into_iter().collect();
    let full: HashSet<String> =
        select_trainable(store, TuneMode::Full).unwrap().into_iter().collect();

    assert!(bitfit.is_subset(&binor));
    assert!(binor.is_subset(&full));
    assert!(bitfit.len() < binor.len(), "toy tower has a gain the bias set misses");
    assert!(binor.len() < full.len());

    assert_eq!(selected_parameter_count(store, TuneMode::Binor).unwrap(), 16);
    assert_eq!(selected_parameter_count(store, TuneMode::Full).unwrap(), 48);
    assert_eq!(store.total_len(), 48);

    pass("selections nest (bias-only ⊂ bias+normalization ⊂ full) and the toy counts are exactly 16 of 48");
}

// ---------------------------------------------------------------------------
// Real-architecture parameter accounting

#[test]
fn published_architecture_selections_are_reproduced_exactly() {
    let expected = [
        (rn50x16(), 319_488usize),
        (vit_b_16(), 203_776),
        (rn101(), 189_184),
    ];
    for (catalog, want) in expected {
        assert_eq!(
            binor_count(&catalog.params).unwrap(),
            want,
            "bias+normalization selection for {}",
            catalog.name
        );
    }
    // and the toy tower substitutes when no checkpoint metadata is around
    let toy = ToyDualEncoder::new(0);
    assert_eq!(selected_parameter_count(toy.store(), TuneMode::Binor).unwrap(), 16);

    pass("bias+normalization accounting over the three real architectures gives 319,488 / 203,776 / 189,184 exactly");
}

// ---------------------------------------------------------------------------
// Few-shot sampler contract

fn sampler_population(tax: &Taxonomy) -> Vec<VqaExample> {
    // 8 ways spread across the taxonomy, 40 candidates each, plus one way
    // kept deliberately thin (3 examples) so under-filled ways are covered
    let keys = tax.way_keys();
    let chosen: Vec<_> = keys.iter().step_by(23).take(8).cloned().collect();
    assert_eq!(chosen.len(), 8);
    let mut examples = Vec::new();
    let mut id = 0u64;
    for (way_i, (qtype, atype)) in chosen.iter().enumerate() {
        let count = if way_i == 0 { 3 } else { 40 };
        for j in 0..count {
            id += 1;
            let gold = match atype {
                AnswerType::YesNo => if j % 2 == 0 { "yes" } else { "no" }.to_string(),
                AnswerType::Number => format!("{}", j % 7),
                AnswerType::Other => format!("thing{}", j % 9),
            };
            examples.push(VqaExample {
                question_id: id,
                image_id: 100_000 + id,
                question: format!("{qtype} probe {j}?"),
                answers: vec![gold.clone(); 10],
                multiple_choice_answer: gold,
                answer_type: *atype,
                question_type: qtype.clone(),
            });
        }
    }
    examples
}

#[test]
fn pool_sampling_honors_the_way_contract_and_replays_bitwise() {
    let tax = Taxonomy::builtin();
    let examples = sampler_population(&tax);
    let by_id: HashMap<u64, &VqaExample> =
        examples.iter().map(|e| (e.question_id, e)).collect();

    for k in [1usize, 4, 16, 32] {
        let opts = PoolOptions { k, seed: 99 };
        let pool = FewShotPool::sample(&examples, &tax, opts).unwrap();

        // global bound: never more than K per way over the full taxonomy
        assert!(pool.ways.len() <= tax.way_keys().len());
        assert!(pool.total_shots() <= 195 * k, "K={k}: {} shots", pool.total_shots());

        for way in &pool.ways {
            assert!(way.shots.len() <= k, "K={k}: oversized way {:?}", way.question_type);
            let available = examples
                .iter()
                .filter(|e| {
                    e.question_type == way.question_type && e.answer_type == way.answer_type
                })
                .count();
            assert_eq!(
                way.shots.len(),
                k.min(available),
                "K={k}: way {:?} not filled from {} candidates",
                way.question_type,
                available
            );
            for shot in &way.shots {
                assert_eq!(shot.question_type, way.question_type);
                assert_eq!(shot.answer_type, way.answer_type);
                assert_eq!(by_id[&shot.question_id].question, shot.question);
            }
        }

        // support and query partition each episode, never sharing a question
        let episode = split_episode(&pool, None, 0.75, 7).unwrap();
        let support: HashSet<u64> = episode.support.iter().map(|e| e.question_id).collect();
        let query: HashSet<u64> = episode.query.iter().map(|e| e.question_id).collect();
        assert!(support.is_disjoint(&query), "K={k}: support/query overlap");
        assert_eq!(
            support.len() + query.len(),
            episode.support.len() + episode.query.len(),
            "K={k}: duplicated shots inside the episode"
        );

        // ten replays, bit-for-bit
        let pool_bytes = serde_json::to_vec(&pool.manifest()).unwrap();
        let episode_bytes = serde_json::to_vec(&episode.manifest()).unwrap();
        for _ in 0..10 {
            let again = FewShotPool::sample(&examples, &tax, opts).unwrap();
            assert_eq!(serde_json::to_vec(&again.manifest()).unwrap(), pool_bytes);
            let episode_again = split_episode(&again, None, 0.75, 7).unwrap();
            assert_eq!(
                serde_json::to_vec(&episode_again.manifest()).unwrap(),
                episode_bytes
            );
        }
    }
    pass("pools stay within 195·K with exact per-way fills, episodes partition support/query, and 10 replays are bit-identical for K ∈ {1, 4, 16, 32}");
}

// ---------------------------------------------------------------------------
// Parse-rule template corpus

#[test]
fn parse_rules_convert_the_whole_corpus_exactly() {
    let provider = FileParseProvider::load(&fixture("template_corpus.conllu")).unwrap();
    let expected: BTreeMap<String, String> = serde_json::from_str(
        &std::fs::read_to_string(fixture("template_expected.json")).unwrap(),
    )
    .unwrap();
    assert!(expected.len() >= 20, "corpus has only {} questions", expected.len());

    let mut failures = Vec::new();
    for (question, want) in &expected {
        let parse = provider.parse(question).unwrap();
        match question_to_statement(&parse) {
            Ok(got) if &got == want => {
                assert_eq!(mask_count(&got), 1, "slot invariant broken for {question:?}");
            }
            Ok(got) => failures.push(format!("{question}: want {want:?}, got {got:?}")),
            Err(e) => failures.push(format!("{question}: {e}")),
        }
    }
    assert!(
        failures.is_empty(),
        "{} of {} conversions wrong:\n{}",
        failures.len(),
        expected.len(),
        failures.join("\n")
    );
    pass("the parse rules convert all corpus questions exactly, each with a single slot");
}

// ---------------------------------------------------------------------------
// Metric oracle

#[test]
fn consensus_metric_matches_hand_computation() {
    // n matching annotators out of 10 → min(n/3, 1)
    for n in 0..=10usize {
        let mut gold: Vec<String> = vec!["other answer".into(); 10 - n];
        gold.extend(std::iter::repeat_n("red".to_string(), n));
        let want = (n as f64 / 3.0).min(1.0);
        let got = vqa_score("red", &gold);
        assert_eq!(got, want, "n={n}");
    }

    // the aggregate is the plain mean, ×100
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let results: Vec<VqaResult> = (0..137)
        .map(|i| {
            let n = rng.random_range(0..=10usize);
            VqaResult {
                question_id: i,
                answer_type: AnswerType::ALL[i as usize % 3],
                prediction: "p".into(),
                score: (n as f64 / 3.0).min(1.0),
                error: None,
            }
        })
        .collect();
    let breakdown = aggregate(&results).unwrap();
    let mean = results.iter().map(|r| r.score).sum::<f64>() / results.len() as f64;
    assert!(
        (breakdown.all - 100.0 * mean).abs() < 1e-12,
        "aggregate {} vs recomputed {}",
        breakdown.all,
        100.0 * mean
    );
    pass("the consensus score matches min(n/3, 1) for all n and the aggregate matches an independent mean within 1e-12");
}

// ---------------------------------------------------------------------------
// Cross-modality synthetic transfer

#[test]
fn text_trained_classifier_transfers_across_modalities() {
    let backend = vlshot::encoder::MarkerEncoder::new("marker", 17, 32, 0.05);
    let train_raw = synthetic_ve_dataset(6, 6, 0..6).unwrap();
    let eval_raw = synthetic_ve_dataset(6, 6, 6..8).unwrap();

    let train = fused_examples(&backend, &train_raw, PremiseMode::Text).unwrap();
    let mut classifier = EntailClassifier::new(backend.dim, (48, 24), 0).unwrap();
    let cfg = EntailTrainConfig {
        epochs: 20,
        lr: 3e-3,
        batch_size: 32,
        dropout: 0.0,
        seed: 0,
    };
    train_entail(&mut classifier, &train, &cfg).unwrap();

    let image_side = fused_examples(&backend, &eval_raw, PremiseMode::Image).unwrap();
    let transfer = evaluate_entail(&classifier, &image_side).unwrap();
    assert!(transfer >= 95.0, "cross-modality accuracy {transfer}");

    let golds: Vec<_> = eval_raw.iter().map(|e| e.label).collect();
    let majority = majority_rate(&golds).unwrap();
    let masked = fused_examples(&backend, &eval_raw, PremiseMode::BlackImage).unwrap();
    let control = evaluate_entail(&classifier, &masked).unwrap();
    assert!(
        (control - majority).abs() <= 2.0,
        "masked control {control} should sit at the majority rate {majority}"
    );
    pass("the text-trained classifier reaches ≥95% on image premises while the masked control sits at the majority rate ±2");
}

// ---------------------------------------------------------------------------
// Full-scale tier (optional; real checkpoints, real LM, full datasets)
//
// These reproduce published-scale numbers and cannot run on the mock
// backends — the mocks have no knowledge of real images. Each test reads
// finished run artifacts from $VLSHOT_FULL_SCALE_DIR, produced by driving
// the CLI against the real assets:
//
//   zero-shot-vit-b-16/breakdown.json    zero-shot VQA over the validation
//   zero-shot-rn50x16/breakdown.json     split, one run per architecture
//   entailment-rn50x16/report.json       text→image transfer with the
//                                        black-image control enabled
//   few-shot-k{1,4,16,32}-{binor,full}/breakdown.json
//                                        validation scores of the tuned
//                                        checkpoints
//
// Without the artifacts the tests fail with this explanation rather than
// pretending to pass.

fn full_scale_artifact(rel: &str) -> PathBuf {
    let root = std::env::var_os("VLSHOT_FULL_SCALE_DIR").unwrap_or_else(|| {
        panic!(
            "full-scale tier: set VLSHOT_FULL_SCALE_DIR to a directory of real-backend run \
             artifacts (requires the released dual-encoder checkpoints, the infilling language \
             model, and the full datasets; see the comment above this test)"
        )
    });
    let path = PathBuf::from(root).join(rel);
    assert!(path.exists(), "full-scale tier: missing artifact {}", path.display());
    path
}

fn read_breakdown_all(rel: &str) -> f64 {
    let text = std::fs::read_to_string(full_scale_artifact(rel)).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["all"].as_f64().expect("breakdown has an `all` score")
}

#[test]
#[ignore = "full-scale tier: needs real checkpoints, the real infilling model, and the full datasets"]
fn full_scale_zero_shot_vqa_scores() {
    let vit = read_breakdown_all("zero-shot-vit-b-16/breakdown.json");
    let rn = read_breakdown_all("zero-shot-rn50x16/breakdown.json");
    assert!((vit - 38.72).abs() <= 1.5, "ViT-B/16 all {vit}");
    assert!((rn - 38.36).abs() <= 1.5, "RN50x16 all {rn}");
    pass("full-scale zero-shot scores land inside the published windows");
}

#[test]
#[ignore = "full-scale tier: needs real checkpoints, the real infilling model, and the full datasets"]
fn full_scale_entailment_transfer() {
    let text = std::fs::read_to_string(full_scale_artifact("entailment-rn50x16/report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let test = report["test_accuracy"].as_f64().unwrap();
    let control = report["black_control_accuracy"].as_f64().unwrap();
    assert!((test - 66.63).abs() <= 1.5, "transfer accuracy {test}");
    assert!(control < 38.0, "masked control {control}");
    pass("full-scale entailment transfer lands inside the published window with the control collapsed");
}

#[test]
#[ignore = "full-scale tier: needs real checkpoints, the real infilling model, and the full datasets"]
fn full_scale_few_shot_ordering() {
    let k32 = read_breakdown_all("few-shot-k32-binor/breakdown.json");
    assert!((k32 - 50.18).abs() <= 2.0, "K=32 bias+normalization all {k32}");
    for k in [1, 4, 16, 32] {
        let binor = read_breakdown_all(&format!("few-shot-k{k}-binor/breakdown.json"));
        let full = read_breakdown_all(&format!("few-shot-k{k}-full/breakdown.json"));
        assert!(
            binor >= full,
            "K={k}: bias+normalization {binor} below full fine-tuning {full}"
        );
    }
    pass("full-scale few-shot scores land inside the published windows with the expected mode ordering");
}
