//! Slow reference computations used to check the fast paths: central finite
//! differences, exhaustive CRF path enumeration, a position-wise chunker and
//! the quadratic AUC definition. None of these call into the code they check.

use std::collections::BTreeSet;

use crate::corpus::{Label, Prefix, Tag, NUM_CLASSES as K};
use crate::evaluation::ChunkSpan;
use crate::objectives::CrfParams;

/// `(f(x + ε) - f(x - ε)) / 2ε`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// `|a - n| / max(|a|, |n|)`, or zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Every tag path of length `len` over `K` classes, in lexicographic order.
pub fn all_paths(len: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![vec![]];
    for _ in 0..len {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..K).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    paths
}

pub fn brute_path_score(emissions: &[[f64; K]], crf: &CrfParams, path: &[usize]) -> f64 {
    let mut s = crf.start[path[0]];
    for t in 0..path.len() {
        s += emissions[t][path[t]];
    }
    for w in path.windows(2) {
        s += crf.transitions[w[0]][w[1]];
    }
    s + crf.stop[*path.last().unwrap()]
}

/// `log Σ exp(score)` over all `K^L` paths.
pub fn brute_log_partition(emissions: &[[f64; K]], crf: &CrfParams) -> f64 {
    let scores: Vec<f64> = all_paths(emissions.len()).iter().map(|p| brute_path_score(emissions, crf, p)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Best path score over all `K^L` paths.
pub fn brute_best_score(emissions: &[[f64; K]], crf: &CrfParams) -> f64 {
    all_paths(emissions.len()).iter().map(|p| brute_path_score(emissions, crf, p)).fold(f64::NEG_INFINITY, f64::max)
}

fn opens_chunk(tags: &[Tag], t: usize) -> bool {
    match tags[t].prefix {
        Prefix::B => true,
        Prefix::O => false,
        Prefix::I => t == 0 || tags[t - 1].prefix == Prefix::O || tags[t - 1].entity_type != tags[t].entity_type,
    }
}

/// Chunks found by marking every opening position and walking right until
/// the next opening or `O`.
pub fn brute_chunks(tags: &[Tag]) -> BTreeSet<(ChunkSpan, Option<String>)> {
    let mut out = BTreeSet::new();
    for start in 0..tags.len() {
        if !opens_chunk(tags, start) {
            continue;
        }
        let mut end = start + 1;
        while end < tags.len() && tags[end].prefix == Prefix::I && !opens_chunk(tags, end) {
            end += 1;
        }
        out.insert((ChunkSpan { start, end }, tags[start].entity_type.clone()));
    }
    out
}

/// `(tp, predicted, gold)` by comparing chunk sets sentence by sentence.
pub fn brute_counts(gold: &[Vec<Tag>], pred: &[Vec<Tag>], typed: bool) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let strip = |s: BTreeSet<(ChunkSpan, Option<String>)>| -> BTreeSet<(ChunkSpan, Option<String>)> {
            s.into_iter().map(|(c, t)| (c, if typed { t } else { None })).collect()
        };
        let gs = strip(brute_chunks(g));
        let ps = strip(brute_chunks(p));
        counts.0 += ps.iter().filter(|c| gs.contains(c)).count();
        counts.1 += ps.len();
        counts.2 += gs.len();
    }
    counts
}

/// Pairwise definition of the WMW statistic, ties worth one half.
pub fn brute_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, li) in labels.iter().enumerate() {
        if !li.is_pos() {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if lj.is_pos() {
                continue;
            }
            pairs += 1;
            total += if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    total / pairs as f64
}
