//! Low-resource and imbalanced training partitions, and bootstrap standard
//! errors over repeated runs.

use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::sub_rng;

pub const DEFAULT_TOLERANCE_PP: f64 = 0.5;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

/// How large a partition should be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Sentences(usize),
    Tokens(usize),
}

impl Budget {
    pub fn amount(&self) -> usize {
        match *self {
            Budget::Sentences(n) | Budget::Tokens(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub budget: Budget,
    pub target_entity_pct: Option<f64>,
    pub tolerance_pp: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.budget.amount() == 0 {
            return Err(Error::Config("partition size must be at least 1".into()));
        }
        if let Some(t) = self.target_entity_pct {
            if !(t > 0.0 && t < 100.0) {
                return Err(Error::Config(format!("target entity percentage {t} outside (0, 100)")));
            }
        }
        if self.tolerance_pp.is_nan() || self.tolerance_pp < 0.0 {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub spec: PartitionSpec,
    /// Sorted, distinct sentence indices into the source corpus.
    pub indices: Vec<usize>,
    pub realized_entity_pct: f64,
    pub realized_tokens: usize,
}

impl Partition {
    fn from_indices(corpus: &Corpus, mut indices: Vec<usize>, spec: PartitionSpec) -> Partition {
        indices.sort_unstable();
        let (tokens, entities) = count(corpus, &indices);
        Partition { spec, indices, realized_entity_pct: pct(entities, tokens), realized_tokens: tokens }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn count(corpus: &Corpus, indices: &[usize]) -> (usize, usize) {
    indices.iter().fold((0, 0), |(t, e), &i| {
        let s = &corpus.sentences[i];
        (t + s.len(), e + s.entity_tokens())
    })
}

fn pct(entities: usize, tokens: usize) -> f64 {
    if tokens == 0 {
        0.0
    } else {
        100.0 * entities as f64 / tokens as f64
    }
}

/// Uniform sample of `n_sentences` distinct sentences.
pub fn sample_partition(corpus: &Corpus, n_sentences: usize, seed: u64) -> Result<Partition> {
    if n_sentences > corpus.len() {
        return Err(Error::Capacity { requested: n_sentences, available: corpus.len() });
    }
    if n_sentences == 0 {
        return Err(Error::Config("partition size must be at least 1".into()));
    }
    let mut rng = sub_rng(seed, "sampling/uniform");
    let indices = index::sample(&mut rng, corpus.len(), n_sentences).into_vec();
    let spec = PartitionSpec {
        budget: Budget::Sentences(n_sentences),
        target_entity_pct: None,
        tolerance_pp: DEFAULT_TOLERANCE_PP,
        seed,
    };
    Ok(Partition::from_indices(corpus, indices, spec))
}

/// Randomized greedy construction of a partition whose entity-token share is
/// within `tolerance_pp` of `target_entity_pct`.
///
/// Sentences are shuffled and split into a rich queue (own entity share
/// above the target) and a poor queue (at or below it, entity-free ones
/// included). While the entity share, projected onto the full budget, is
/// below the target the next rich sentence is preferred, otherwise the next
/// poor one. The projection assumes the rest of the budget is filled at the
/// poor queue's own entity density. A candidate is accepted only if it fits
/// the budget, keeps the projected share at or below `target + tolerance`,
/// and, for a rich sentence that crosses the target, ends up closer to it
/// than before. Rejected candidates are dropped, so every sentence is looked
/// at once. If the result still misses the tolerance, single-sentence swaps
/// with the rest of the corpus pull the share toward the target.
pub fn sample_imbalanced(
    corpus: &Corpus,
    budget: Budget,
    target_entity_pct: f64,
    tolerance_pp: f64,
    seed: u64,
) -> Result<Partition> {
    let spec = PartitionSpec { budget, target_entity_pct: Some(target_entity_pct), tolerance_pp, seed };
    spec.validate()?;
    if let Budget::Tokens(n) = budget {
        if n < 50 {
            return Err(Error::Config(format!("token budget {n} below the minimum of 50")));
        }
    }

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut sub_rng(seed, "sampling/imbalanced"));
    let sentences = &corpus.sentences;
    if sentences.iter().all(|s| s.entity_tokens() > 0) || sentences.iter().all(|s| s.entity_tokens() == 0) {
        return Err(Error::Config("imbalanced sampling needs both entity-bearing and entity-free sentences".into()));
    }
    let (rich, poor): (Vec<usize>, Vec<usize>) = order
        .iter()
        .copied()
        .partition(|&i| 100.0 * sentences[i].entity_tokens() as f64 > target_entity_pct * sentences[i].len() as f64);

    let mean_len = |q: &[usize]| q.iter().map(|&i| sentences[i].len()).sum::<usize>() as f64 / q.len().max(1) as f64;
    let density = |q: &[usize]| {
        let t: usize = q.iter().map(|&i| sentences[i].len()).sum();
        let e: usize = q.iter().map(|&i| sentences[i].entity_tokens()).sum();
        e as f64 / t.max(1) as f64
    };
    let (fill_len, fill_density) =
        if poor.is_empty() { (mean_len(&rich), density(&rich)) } else { (mean_len(&poor), density(&poor)) };
    // Entity share the finished partition is expected to have if the rest of
    // the budget is filled from the poor queue.
    let projected = |tokens: usize, entities: usize, chosen: usize| {
        let rest = match budget {
            Budget::Tokens(n) => n.saturating_sub(tokens) as f64,
            Budget::Sentences(n) => n.saturating_sub(chosen) as f64 * fill_len,
        };
        100.0 * (entities as f64 + rest * fill_density) / (tokens as f64 + rest).max(1.0)
    };
    let ceiling = target_entity_pct + tolerance_pp;

    let mut chosen = Vec::new();
    let (mut tokens, mut entities) = (0usize, 0usize);
    let (mut ri, mut pi) = (0usize, 0usize);
    let full = |tokens: usize, sentences: usize| match budget {
        Budget::Tokens(n) => tokens >= n,
        Budget::Sentences(n) => sentences >= n,
    };

    while !full(tokens, chosen.len()) && (ri < rich.len() || pi < poor.len()) {
        let share = projected(tokens, entities, chosen.len());
        let take_rich = (share < target_entity_pct && ri < rich.len()) || pi >= poor.len();
        let candidate = if take_rich {
            ri += 1;
            rich[ri - 1]
        } else {
            pi += 1;
            poor[pi - 1]
        };
        let s = &corpus.sentences[candidate];
        let (t, e) = (tokens + s.len(), entities + s.entity_tokens());
        if let Budget::Tokens(n) = budget {
            if t > n {
                continue;
            }
        }
        let after = projected(t, e, chosen.len() + 1);
        // a rich sentence that overshoots must still land closer to the target
        let overshoots =
            take_rich && after > target_entity_pct && after - target_entity_pct >= target_entity_pct - share;
        if after > ceiling || overshoots {
            continue;
        }
        chosen.push(candidate);
        tokens = t;
        entities = e;
    }

    repair(corpus, budget, target_entity_pct, tolerance_pp, &order, &mut chosen);

    let partition = Partition::from_indices(corpus, chosen, spec);
    if partition.is_empty() || (partition.realized_entity_pct - target_entity_pct).abs() > tolerance_pp {
        let closest = if partition.is_empty() { 0.0 } else { partition.realized_entity_pct };
        return Err(Error::Infeasible { target: target_entity_pct, closest });
    }
    Ok(partition)
}

/// Swap single sentences between the partition and the rest of the corpus
/// while that moves the entity share closer to the target, until it is
/// within tolerance. Swaps never change the sentence count and never push a
/// token count past its budget.
fn repair(corpus: &Corpus, budget: Budget, target: f64, tolerance_pp: f64, order: &[usize], chosen: &mut [usize]) {
    const MAX_SWAPS: usize = 64;
    let sentences = &corpus.sentences;
    let (mut tokens, mut entities) = count(corpus, chosen);
    let mut taken = vec![false; sentences.len()];
    for &i in chosen.iter() {
        taken[i] = true;
    }
    for _ in 0..MAX_SWAPS {
        let gap = |t: usize, e: usize| (pct(e, t) - target).abs();
        let current = gap(tokens, entities);
        if chosen.is_empty() || current <= tolerance_pp {
            return;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for (slot, &out) in chosen.iter().enumerate() {
            let (so, eo) = (sentences[out].len(), sentences[out].entity_tokens());
            for &inn in order.iter().filter(|&&i| !taken[i]) {
                let t = tokens - so + sentences[inn].len();
                if matches!(budget, Budget::Tokens(n) if t > n) {
                    continue;
                }
                let g = gap(t, entities - eo + sentences[inn].entity_tokens());
                if g < best.map_or(current, |b| b.0) {
                    best = Some((g, slot, inn));
                }
            }
        }
        let Some((_, slot, inn)) = best else { return };
        let out = chosen[slot];
        taken[out] = false;
        taken[inn] = true;
        tokens = tokens - sentences[out].len() + sentences[inn].len();
        entities = entities - sentences[out].entity_tokens() + sentences[inn].entity_tokens();
        chosen[slot] = inn;
    }
}

/// Standard deviation of `n_resamples` bootstrap means of `scores`.
pub fn bootstrap_se(scores: &[f64], n_resamples: usize, seed: u64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("bootstrap scores"));
    }
    if n_resamples == 0 {
        return Err(Error::Config("bootstrap needs at least one resample".into()));
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return Ok(0.0);
    }
    let mut rng = sub_rng(seed, "sampling/bootstrap");
    let n = scores.len();
    let means: Vec<f64> =
        (0..n_resamples).map(|_| (0..n).map(|_| scores[rng.gen_range(0..n)]).sum::<f64>() / n as f64).collect();
    let mean = means.iter().sum::<f64>() / n_resamples as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n_resamples as f64;
    Ok(var.sqrt())
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub label: String,
    pub partition: Partition,
}

pub fn write_manifest<W: Write>(mut out: W, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
