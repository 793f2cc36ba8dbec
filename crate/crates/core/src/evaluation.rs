//! Turning scores into BIO tags, entity-level scoring, and the
//! Wilcoxon-Mann-Whitney AUC diagnostic.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Prefix, Tag};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `+1` iff `h >= tau`.
pub fn threshold_predictions(h: &[f64], tau: f64) -> Vec<Label> {
    h.iter().map(|&s| Label::from_bool(s >= tau)).collect()
}

/// Fold entity and begin predictions into BIO tags. Returns the tags and the
/// number of tokens predicted to begin an entity while being outside one;
/// those become `O`.
pub fn combine_predictions(en: &[Label], be: &[Label]) -> Result<(Vec<Tag>, usize)> {
    if en.len() != be.len() {
        return Err(Error::Contract(format!("{} entity predictions vs {} begin predictions", en.len(), be.len())));
    }
    let mut inconsistent = 0;
    let tags = en
        .iter()
        .zip(be)
        .map(|(e, b)| match (e, b) {
            (Label::Pos, Label::Pos) => Tag::untyped(Prefix::B),
            (Label::Pos, Label::Neg) => Tag::untyped(Prefix::I),
            (Label::Neg, Label::Neg) => Tag::O,
            (Label::Neg, Label::Pos) => {
                inconsistent += 1;
                Tag::O
            }
        })
        .collect();
    Ok((tags, inconsistent))
}

/// Half-open token span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chunk {
    pub span: ChunkSpan,
    pub entity_type: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkMode {
    /// `I` after `O`, or at sentence start, opens a chunk.
    #[default]
    Lenient,
    /// Such an `I` is ignored.
    Strict,
}

/// Entity chunks. A chunk continues through `I` tags of the same type; a
/// `B`, an `O`, a type change or the sentence end closes it.
pub fn extract_chunks_with(tags: &[Tag], mode: ChunkMode) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut open: Option<(usize, Option<String>)> = None;
    for (t, tag) in tags.iter().enumerate() {
        let continues = tag.prefix == Prefix::I && open.as_ref().is_some_and(|(_, ty)| *ty == tag.entity_type);
        if continues {
            continue;
        }
        if let Some((start, ty)) = open.take() {
            chunks.push(Chunk { span: ChunkSpan { start, end: t }, entity_type: ty });
        }
        match tag.prefix {
            Prefix::B => open = Some((t, tag.entity_type.clone())),
            Prefix::I if mode == ChunkMode::Lenient => open = Some((t, tag.entity_type.clone())),
            _ => {}
        }
    }
    if let Some((start, ty)) = open {
        chunks.push(Chunk { span: ChunkSpan { start, end: tags.len() }, entity_type: ty });
    }
    chunks
}

pub fn extract_chunks(tags: &[Tag]) -> BTreeSet<ChunkSpan> {
    extract_chunks_with(tags, ChunkMode::Lenient).into_iter().map(|c| c.span).collect()
}

/// Debug dump, one span per line: `sentence start end`.
pub fn write_chunk_dump<W: Write>(mut out: W, corpus_tags: &[Vec<Tag>]) -> Result<()> {
    for (id, tags) in corpus_tags.iter().enumerate() {
        for c in extract_chunks_with(tags, ChunkMode::Lenient) {
            writeln!(out, "{id}\t{}\t{}", c.span.start, c.span.end)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Metrics {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Metrics { precision, recall, f1, true_positives, predicted, gold }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Require matching entity types, not only spans.
    pub typed: bool,
    pub mode: ChunkMode,
}

/// Micro-averaged entity-level precision, recall and F1 over a corpus.
pub fn entity_prf(gold: &[Vec<Tag>], pred: &[Vec<Tag>], opts: EvalOptions) -> Result<Metrics> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!("{} gold sentences vs {} predicted", gold.len(), pred.len())));
    }
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Contract(format!("sentence {k}: {} gold tags vs {} predicted", g.len(), p.len())));
        }
        let key = |c: Chunk| if opts.typed { c } else { Chunk { entity_type: None, ..c } };
        let gs: BTreeSet<Chunk> = extract_chunks_with(g, opts.mode).into_iter().map(key).collect();
        let ps: BTreeSet<Chunk> = extract_chunks_with(p, opts.mode).into_iter().map(key).collect();
        tp += gs.intersection(&ps).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    Ok(Metrics::from_counts(tp, n_pred, n_gold))
}

/// Wilcoxon-Mann-Whitney estimate of AUC with ties counted as one half,
/// computed from mid-ranks in `O(n log n)`.
pub fn wmw_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|l| l.is_pos()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Sum of doubled mid-ranks of the positives keeps everything integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the mid-rank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k].is_pos()).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    // 2U = 2R - np(np+1)
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Neg as N, Pos as P};

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    fn span(start: usize, end: usize) -> ChunkSpan {
        ChunkSpan { start, end }
    }

    #[test]
    fn thresholding_is_inclusive() {
        assert_eq!(threshold_predictions(&[0.9, 0.5, 0.1], 0.5), vec![P, P, N]);
        assert_eq!(threshold_predictions(&[0.9, 0.5, 0.1], 1e-12), vec![P, P, P]);
        assert_eq!(threshold_predictions(&[0.5; 3], 0.5), vec![P, P, P]);
    }

    #[test]
    fn combination_table() {
        let (t, bad) = combine_predictions(&[P, P, N, N], &[P, N, N, P]).unwrap();
        assert_eq!(t, tags("B I O O"));
        assert_eq!(bad, 1);
        assert!(combine_predictions(&[P], &[]).is_err());
    }

    #[test]
    fn chunks() {
        let set = |v: &[(usize, usize)]| v.iter().map(|&(a, b)| span(a, b)).collect::<BTreeSet<_>>();
        assert_eq!(extract_chunks(&tags("B I O B O")), set(&[(0, 2), (3, 4)]));
        assert_eq!(extract_chunks(&tags("O I I")), set(&[(1, 3)]));
        assert_eq!(extract_chunks(&tags("B B")), set(&[(0, 1), (1, 2)]));
        assert_eq!(extract_chunks(&tags("B-PER I-LOC")), set(&[(0, 1), (1, 2)]));
        assert!(extract_chunks_with(&tags("O I I"), ChunkMode::Strict).is_empty());
    }

    #[test]
    fn prf_examples() {
        let g = vec![tags("B I O B O")];
        let m = entity_prf(&g, &[tags("B I O O O")], EvalOptions::default()).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);

        let m = entity_prf(&g, &g, EvalOptions::default()).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let m = entity_prf(&g, &[tags("O O O O O")], EvalOptions::default()).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn typed_mode_checks_types() {
        let g = vec![tags("B-PER I-PER O")];
        let p = vec![tags("B-LOC I-LOC O")];
        assert_eq!(entity_prf(&g, &p, EvalOptions::default()).unwrap().f1, 1.0);
        let typed = EvalOptions { typed: true, ..Default::default() };
        assert_eq!(entity_prf(&g, &p, typed).unwrap().f1, 0.0);
    }

    #[test]
    fn misaligned_is_contract_error() {
        assert!(entity_prf(&[tags("B O")], &[tags("B")], EvalOptions::default()).is_err());
        assert!(entity_prf(&[tags("B O")], &[], EvalOptions::default()).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(wmw_auc(&[0.9, 0.8, 0.1], &[P, P, N]).unwrap(), 1.0);
        assert_eq!(wmw_auc(&[0.3; 5], &[P, N, P, N, N]).unwrap(), 0.5);
        assert_eq!(wmw_auc(&[0.2, 0.7], &[P, N]).unwrap(), 0.0);
        assert!(matches!(wmw_auc(&[0.2, 0.7], &[P, P]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn chunk_dump_format() {
        let mut out = Vec::new();
        write_chunk_dump(&mut out, &[tags("B I O"), tags("O B")]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0\t0\t2\n1\t1\t2\n");
    }
}
