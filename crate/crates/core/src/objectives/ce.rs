use crate::corpus::{Label, TwoTaskLabels, NUM_CLASSES};
use crate::error::{Error, Result};

use super::PROB_FLOOR;

#[derive(Debug, Clone, PartialEq)]
pub struct CeOutput {
    pub loss: f64,
    /// With respect to the pre-softmax logits.
    pub d_logits: Vec<[f64; NUM_CLASSES]>,
    /// Tokens whose gold probability was clamped to [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Mean token cross-entropy of 3-class distributions against gold class
/// indices (see [`Prefix::index`](crate::corpus::Prefix::index)).
pub fn ce_multiclass(probs: &[[f64; NUM_CLASSES]], gold: &[usize]) -> Result<CeOutput> {
    if probs.len() != gold.len() {
        return Err(Error::Contract(format!("{} distributions for {} labels", probs.len(), gold.len())));
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput("cross-entropy batch"));
    }
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut d_logits = Vec::with_capacity(probs.len());
    for (p, &g) in probs.iter().zip(gold) {
        if g >= NUM_CLASSES {
            return Err(Error::Contract(format!("class index {g} out of range")));
        }
        if p[g] < PROB_FLOOR {
            clamped += 1;
        }
        loss -= p[g].max(PROB_FLOOR).ln();
        let mut d = *p;
        d[g] -= 1.0;
        d_logits.push(d.map(|v| v / n));
    }
    Ok(CeOutput { loss: loss / n, d_logits, clamped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// With respect to the pre-sigmoid entity logits.
    pub d_en_logit: Vec<f64>,
    pub d_be_logit: Vec<f64>,
    pub clamped: usize,
}

fn bce(h: &[f64], y: &[Label], clamped: &mut usize) -> (f64, Vec<f64>) {
    let n = h.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(h.len());
    for (&p, &label) in h.iter().zip(y) {
        let q = if label.is_pos() { p } else { 1.0 - p };
        if q < PROB_FLOOR {
            *clamped += 1;
        }
        loss -= q.max(PROB_FLOOR).ln();
        let target = if label.is_pos() { 1.0 } else { 0.0 };
        grad.push((p - target) / n);
    }
    (loss / n, grad)
}

/// Unweighted sum of the mean binary cross-entropies of both tasks.
pub fn bce_two_task(h_en: &[f64], h_be: &[f64], labels: &TwoTaskLabels) -> Result<BceOutput> {
    let n = labels.len();
    if h_en.len() != n || h_be.len() != n || labels.be.len() != n {
        return Err(Error::Contract("two-task score and label lengths differ".into()));
    }
    if n == 0 {
        return Err(Error::EmptyInput("binary cross-entropy batch"));
    }
    let mut clamped = 0;
    let (l_en, d_en_logit) = bce(h_en, &labels.en, &mut clamped);
    let (l_be, d_be_logit) = bce(h_be, &labels.be, &mut clamped);
    Ok(BceOutput { loss: l_en + l_be, d_en_logit, d_be_logit, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Neg as N, Pos as P};

    #[test]
    fn one_hot_is_zero_loss() {
        let out = ce_multiclass(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], &[0, 2]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.d_logits.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_is_ln3() {
        let u = [1.0 / 3.0; 3];
        let out = ce_multiclass(&[u, u, u, u], &[0, 1, 2, 2]).unwrap();
        assert!((out.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_gold_probability_is_clamped() {
        let out = ce_multiclass(&[[0.0, 1.0, 0.0]], &[0]).unwrap();
        assert_eq!(out.clamped, 1);
        assert!((out.loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn ce_length_mismatch() {
        assert!(ce_multiclass(&[[1.0, 0.0, 0.0]], &[0, 1]).is_err());
    }

    #[test]
    fn bce_half_is_two_ln2() {
        let labels = TwoTaskLabels { en: vec![P, N, P], be: vec![P, N, N] };
        let out = bce_two_task(&[0.5; 3], &[0.5; 3], &labels).unwrap();
        assert!((out.loss - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_scores_approach_zero() {
        let labels = TwoTaskLabels { en: vec![P, N], be: vec![P, N] };
        let e = 1e-9;
        let out = bce_two_task(&[1.0 - e, e], &[1.0 - e, e], &labels).unwrap();
        assert!(out.loss < 1e-8);
    }
}
