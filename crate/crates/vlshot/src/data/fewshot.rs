//! Few-shot pool sampling and episodic support/query splits.
//!
//! A *way* is one (question type, answer type) cell; the canonical taxonomy
//! spans 65 × 3 = 195 ways. A *pool* holds up to K shots per way, sampled
//! once per run. Each training epoch draws an *episode*: C ways, each split
//! into support and query shots.
//!
//! Everything is seeded per way (not from one shared RNG stream), so pools
//! and episodes are bit-reproducible regardless of iteration order, and
//! changing K or the candidate set of one way never perturbs another.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{AnswerType, Taxonomy, VqaExample};
use crate::util::derive_seed;
use crate::{Error, Result};

pub type WayKey = (String, AnswerType);

/// One populated way of the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Way {
    pub question_type: String,
    pub answer_type: AnswerType,
    /// Sampled shots, sorted by question id.
    pub shots: Vec<VqaExample>,
}

impl Way {
    pub fn key(&self) -> WayKey {
        (self.question_type.clone(), self.answer_type)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoolOptions {
    /// Maximum shots per way (the K in C-way K-shot).
    pub k: usize,
    pub seed: u64,
}

/// The sampled few-shot pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPool {
    pub seed: u64,
    pub k: usize,
    /// Populated ways, sorted by (question type, answer type).
    pub ways: Vec<Way>,
    /// Ways of the taxonomy with no candidate examples at all.
    pub omitted_ways: Vec<WayKey>,
}

impl FewShotPool {
    /// Sample up to K shots per way from `examples`.
    ///
    /// An example's way is its annotated question type when the taxonomy
    /// contains it, else the classification of its question text; paired with
    /// its answer type. Each example therefore lands in exactly one way.
    pub fn sample(examples: &[VqaExample], taxonomy: &Taxonomy, opts: PoolOptions) -> Result<Self> {
        if opts.k == 0 {
            return Err(Error::InvalidInput("pool K must be at least 1".into()));
        }
        let mut buckets: BTreeMap<WayKey, Vec<&VqaExample>> = BTreeMap::new();
        for ex in examples {
            let qtype = if taxonomy.contains(&ex.question_type) {
                ex.question_type.clone()
            } else {
                taxonomy.classify(&ex.question).to_string()
            };
            buckets.entry((qtype, ex.answer_type)).or_default().push(ex);
        }

        let mut ways = Vec::new();
        for ((qtype, atype), mut candidates) in buckets {
            candidates.sort_by_key(|e| e.question_id);
            let way_seed = derive_seed(opts.seed, &["pool", &qtype, atype.as_str()]);
            let mut rng = ChaCha12Rng::seed_from_u64(way_seed);
            let take = opts.k.min(candidates.len());
            candidates.shuffle(&mut rng);
            let mut shots: Vec<VqaExample> =
                candidates[..take].iter().map(|e| (*e).clone()).collect();
            shots.sort_by_key(|e| e.question_id);
            ways.push(Way {
                question_type: qtype,
                answer_type: atype,
                shots,
            });
        }

        let populated: std::collections::BTreeSet<WayKey> =
            ways.iter().map(Way::key).collect();
        let omitted_ways = taxonomy
            .way_keys()
            .into_iter()
            .filter(|k| !populated.contains(k))
            .collect();

        Ok(FewShotPool {
            seed: opts.seed,
            k: opts.k,
            ways,
            omitted_ways,
        })
    }

    pub fn way(&self, question_type: &str, answer_type: AnswerType) -> Option<&Way> {
        self.ways
            .iter()
            .find(|w| w.question_type == question_type && w.answer_type == answer_type)
    }

    pub fn total_shots(&self) -> usize {
        self.ways.iter().map(|w| w.shots.len()).sum()
    }

    /// All shots across ways, in way order.
    pub fn all_shots(&self) -> impl Iterator<Item = &VqaExample> {
        self.ways.iter().flat_map(|w| w.shots.iter())
    }

    pub fn manifest(&self) -> PoolManifest {
        PoolManifest {
            seed: self.seed,
            k: self.k,
            ways: self
                .ways
                .iter()
                .map(|w| WayManifest {
                    question_type: w.question_type.clone(),
                    answer_type: w.answer_type,
                    question_ids: w.shots.iter().map(|e| e.question_id).collect(),
                })
                .collect(),
            omitted_ways: self.omitted_ways.clone(),
        }
    }

    /// Rebuild a pool from a manifest and the original example set. Every id
    /// in the manifest must resolve; the result is the exact pool that
    /// produced the manifest.
    pub fn from_manifest(manifest: &PoolManifest, examples: &[VqaExample]) -> Result<Self> {
        let by_id: BTreeMap<u64, &VqaExample> =
            examples.iter().map(|e| (e.question_id, e)).collect();
        let mut ways = Vec::with_capacity(manifest.ways.len());
        for wm in &manifest.ways {
            let mut shots = Vec::with_capacity(wm.question_ids.len());
            for id in &wm.question_ids {
                let ex = by_id.get(id).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "pool manifest references unknown question_id {id}"
                    ))
                })?;
                shots.push((*ex).clone());
            }
            ways.push(Way {
                question_type: wm.question_type.clone(),
                answer_type: wm.answer_type,
                shots,
            });
        }
        Ok(FewShotPool {
            seed: manifest.seed,
            k: manifest.k,
            ways,
            omitted_ways: manifest.omitted_ways.clone(),
        })
    }
}

/// Replayable record of a sampled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub seed: u64,
    pub k: usize,
    pub ways: Vec<WayManifest>,
    pub omitted_ways: Vec<WayKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WayManifest {
    pub question_type: String,
    pub answer_type: AnswerType,
    pub question_ids: Vec<u64>,
}

impl PoolManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("pool manifest serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::malformed("pool manifest", path, e.to_string()))
    }
}

/// One episode: C ways split into support and query shots.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub proportion: f64,
    pub chosen_ways: Vec<WayKey>,
    pub support: Vec<VqaExample>,
    pub query: Vec<VqaExample>,
}

/// Draw an episode from the pool.
///
/// `c` is the number of ways to include; `None` means every populated way.
/// Each chosen way's shots are shuffled (seeded per way) and split with
/// ⌈proportion · n⌉ going to support and the remainder to query.
pub fn split_episode(
    pool: &FewShotPool,
    c: Option<usize>,
    proportion: f64,
    seed: u64,
) -> Result<Episode> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "support proportion must be in (0, 1], got {proportion}"
        )));
    }
    if pool.ways.is_empty() {
        return Err(Error::InvalidInput("pool has no populated ways".into()));
    }
    let c = c.unwrap_or(pool.ways.len());
    if c == 0 || c > pool.ways.len() {
        return Err(Error::InvalidInput(format!(
            "episode way count {c} out of range 1..={}",
            pool.ways.len()
        )));
    }

    // Choose C ways from the sorted populated list with a dedicated stream.
    let mut way_indices: Vec<usize> = (0..pool.ways.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &["episode", "ways"]));
    way_indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = way_indices[..c].to_vec();
    chosen.sort_unstable();

    let mut chosen_ways = Vec::with_capacity(c);
    let mut support = Vec::new();
    let mut query = Vec::new();
    for idx in chosen {
        let way = &pool.ways[idx];
        let way_seed = derive_seed(
            seed,
            &["episode", "split", &way.question_type, way.answer_type.as_str()],
        );
        let mut rng = ChaCha12Rng::seed_from_u64(way_seed);
        let mut shots: Vec<&VqaExample> = way.shots.iter().collect();
        shots.shuffle(&mut rng);
        let n_support = ((proportion * shots.len() as f64).ceil() as usize).min(shots.len());
        for (i, shot) in shots.iter().enumerate() {
            if i < n_support {
                support.push((*shot).clone());
            } else {
                query.push((*shot).clone());
            }
        }
        chosen_ways.push(way.key());
    }
    support.sort_by_key(|e| e.question_id);
    query.sort_by_key(|e| e.question_id);

    Ok(Episode {
        seed,
        proportion,
        chosen_ways,
        support,
        query,
    })
}

impl Episode {
    pub fn manifest(&self) -> EpisodeManifest {
        EpisodeManifest {
            seed: self.seed,
            proportion: self.proportion,
            chosen_ways: self.chosen_ways.clone(),
            support_ids: self.support.iter().map(|e| e.question_id).collect(),
            query_ids: self.query.iter().map(|e| e.question_id).collect(),
        }
    }
}

/// Replayable record of an episode split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub seed: u64,
    pub proportion: f64,
    pub chosen_ways: Vec<WayKey>,
    pub support_ids: Vec<u64>,
    pub query_ids: Vec<u64>,
}
