//! AUC margin min-max loss for one binary task, and its two-task sum.
//!
//! For scores `h`, labels `y`, positives `P` and negatives `N`:
//!
//! ```text
//! loss = mean_P (h - a)² + mean_N (h - b)² + 2α(m - mean_P h + mean_N h) - α²
//! ```
//!
//! minimized over the scores and `a`, `b`, maximized over `α ≥ 0`. At the
//! optimum `a` and `b` are the class means of the scores and
//! `α = [m - a + b]₊`.

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TwoTaskLabels};
use crate::error::{Error, Result};

use super::DEFAULT_MARGIN;

/// Auxiliary variables of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucState {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub margin: f64,
}

impl Default for AucState {
    fn default() -> Self {
        AucState { a: 0.0, b: 0.0, alpha: 0.0, margin: DEFAULT_MARGIN }
    }
}

impl AucState {
    pub fn with_margin(margin: f64) -> AucState {
        AucState { margin, ..AucState::default() }
    }

    /// Training start: `a` and `b` at the class means of a perfect scorer in
    /// `(0, 1)`.
    pub fn initial(margin: f64) -> AucState {
        AucState { a: 1.0, b: 0.0, alpha: 0.0, margin }
    }
}

/// Which class a batch was missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degenerate {
    NoPositives,
    NoNegatives,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucOutput {
    pub loss: f64,
    pub d_h: Vec<f64>,
    pub d_a: f64,
    pub d_b: f64,
    /// Gradient in `α`; the optimizer ascends along it.
    pub d_alpha: f64,
    pub degenerate: Option<Degenerate>,
}

pub fn auc_margin_loss(h: &[f64], y: &[Label], state: &AucState) -> Result<AucOutput> {
    if h.len() != y.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", h.len(), y.len())));
    }
    let n_pos = y.iter().filter(|l| l.is_pos()).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 && n_neg == 0 {
        return Err(Error::EmptyBatch);
    }
    let AucState { a, b, alpha, margin } = *state;

    let (mut sum_pos, mut sum_neg, mut sq_pos, mut sq_neg) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &l) in h.iter().zip(y) {
        if l.is_pos() {
            sum_pos += s;
            sq_pos += (s - a) * (s - a);
        } else {
            sum_neg += s;
            sq_neg += (s - b) * (s - b);
        }
    }
    // An empty class contributes nothing and its mean counts as zero.
    let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let (ip, in_) = (inv(n_pos), inv(n_neg));
    let mu_pos = sum_pos * ip;
    let mu_neg = sum_neg * in_;
    let gap = margin - mu_pos + mu_neg;

    let loss = sq_pos * ip + sq_neg * in_ + 2.0 * alpha * gap - alpha * alpha;
    let d_h =
        h.iter()
            .zip(y)
            .map(|(&s, &l)| {
                if l.is_pos() {
                    2.0 * (s - a) * ip - 2.0 * alpha * ip
                } else {
                    2.0 * (s - b) * in_ + 2.0 * alpha * in_
                }
            })
            .collect();

    let degenerate = if n_pos == 0 {
        Some(Degenerate::NoPositives)
    } else if n_neg == 0 {
        Some(Degenerate::NoNegatives)
    } else {
        None
    };
    Ok(AucOutput {
        loss,
        d_h,
        d_a: if n_pos == 0 { 0.0 } else { 2.0 * (a - mu_pos) },
        d_b: if n_neg == 0 { 0.0 } else { 2.0 * (b - mu_neg) },
        d_alpha: 2.0 * gap - 2.0 * alpha,
        degenerate,
    })
}

/// `AUC_M(en) + λ·AUC_M(be)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTaskAucOutput {
    pub loss: f64,
    pub lambda: f64,
    /// Per-task results, unscaled.
    pub en: AucOutput,
    pub be: AucOutput,
}

impl TwoTaskAucOutput {
    pub fn d_h_en(&self) -> &[f64] {
        &self.en.d_h
    }

    /// Gradient of the combined loss in the begin scores (`λ`-scaled).
    pub fn d_h_be(&self) -> Vec<f64> {
        self.be.d_h.iter().map(|g| self.lambda * g).collect()
    }

    /// Gradients of the combined loss in `(a, b, α)` of each task.
    pub fn aux_grads(&self) -> [[f64; 3]; 2] {
        let l = self.lambda;
        [[self.en.d_a, self.en.d_b, self.en.d_alpha], [l * self.be.d_a, l * self.be.d_b, l * self.be.d_alpha]]
    }
}

pub fn auc_two_task_loss(
    h_en: &[f64],
    h_be: &[f64],
    labels: &TwoTaskLabels,
    state_en: &AucState,
    state_be: &AucState,
    lambda: f64,
) -> Result<TwoTaskAucOutput> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let en = auc_margin_loss(h_en, &labels.en, state_en)?;
    let be = auc_margin_loss(h_be, &labels.be, state_be)?;
    Ok(TwoTaskAucOutput { loss: en.loss + lambda * be.loss, lambda, en, be })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Neg as N, Pos as P};

    #[test]
    fn perfect_separation_at_optimum_is_zero() {
        let h = [1.0, 1.0, 0.0, 0.0, 0.0];
        let y = [P, P, N, N, N];
        let st = AucState { a: 1.0, b: 0.0, alpha: 0.0, margin: 1.0 };
        let out = auc_margin_loss(&h, &y, &st).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!((out.d_a, out.d_b, out.d_alpha), (0.0, 0.0, 0.0));
    }

    #[test]
    fn uninformative_scores_cost_one() {
        let h = [0.5; 4];
        let y = [P, N, N, N];
        let st = AucState { a: 0.5, b: 0.5, alpha: 1.0, margin: 1.0 };
        let out = auc_margin_loss(&h, &y, &st).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-15);
        // α = [m - a + b]₊ is stationary
        assert!(out.d_alpha.abs() < 1e-15);
    }

    #[test]
    fn degenerate_batches() {
        let st = AucState { a: 0.3, b: 0.1, alpha: 0.5, margin: 1.0 };
        let out = auc_margin_loss(&[0.2, 0.4], &[N, N], &st).unwrap();
        assert_eq!(out.degenerate, Some(Degenerate::NoPositives));
        assert_eq!(out.d_a, 0.0);
        let expected = (0.1f64.powi(2) + 0.3f64.powi(2)) / 2.0 + 2.0 * 0.5 * (1.0 + 0.3) - 0.25;
        assert!((out.loss - expected).abs() < 1e-12);

        let out = auc_margin_loss(&[0.9], &[P], &st).unwrap();
        assert_eq!(out.degenerate, Some(Degenerate::NoNegatives));
        assert_eq!(out.d_b, 0.0);

        assert!(matches!(auc_margin_loss(&[], &[], &st), Err(Error::EmptyBatch)));
    }

    #[test]
    fn lambda_zero_is_entity_task_alone() {
        let labels = TwoTaskLabels { en: vec![P, P, N], be: vec![P, N, N] };
        let (h_en, h_be) = ([0.7, 0.6, 0.2], [0.9, 0.1, 0.3]);
        let st = AucState { a: 0.4, b: 0.2, alpha: 0.3, margin: 1.0 };
        let two = auc_two_task_loss(&h_en, &h_be, &labels, &st, &st, 0.0).unwrap();
        let one = auc_margin_loss(&h_en, &labels.en, &st).unwrap();
        assert_eq!(two.loss, one.loss);
        assert!(two.d_h_be().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_task_perfect_is_zero_for_any_lambda() {
        let labels = TwoTaskLabels { en: vec![P, P, N], be: vec![P, N, N] };
        let en = AucState { a: 1.0, b: 0.0, alpha: 0.0, margin: 1.0 };
        for lambda in [0.0, 1.0, 100.0, 1e4] {
            let out = auc_two_task_loss(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &labels, &en, &en, lambda).unwrap();
            assert_eq!(out.loss, 0.0);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let labels = TwoTaskLabels { en: vec![P], be: vec![P] };
        let st = AucState::default();
        assert!(auc_two_task_loss(&[0.5], &[0.5], &labels, &st, &st, -1.0).is_err());
    }
}
