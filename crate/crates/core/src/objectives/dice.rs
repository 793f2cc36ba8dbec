use crate::corpus::Label;
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiceOutput {
    pub loss: f64,
    /// With respect to the positive-class probabilities.
    pub d_p: Vec<f64>,
}

/// Self-adjusting Dice loss: per token
/// `DSC = (2(1-p)p·g + γ) / ((1-p)p + g + γ)`, loss `mean(1 - DSC)`.
pub fn dice_loss(p: &[f64], y: &[Label], gamma: f64) -> Result<DiceOutput> {
    if p.len() != y.len() {
        return Err(Error::Contract(format!("{} probabilities for {} labels", p.len(), y.len())));
    }
    if p.is_empty() {
        return Err(Error::EmptyInput("dice batch"));
    }
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Config("dice smoothing must be non-negative".into()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut d_p = Vec::with_capacity(p.len());
    for (&pt, &label) in p.iter().zip(y) {
        let g = if label.is_pos() { 1.0 } else { 0.0 };
        let q = (1.0 - pt) * pt;
        let num = 2.0 * q * g + gamma;
        let den = q + g + gamma;
        if den == 0.0 {
            // γ = 0, negative token at p ∈ {0, 1}: treat as a perfect match
            d_p.push(0.0);
            continue;
        }
        loss += 1.0 - num / den;
        let d_dsc_dq = (2.0 * g * den - num) / (den * den);
        d_p.push(-d_dsc_dq * (1.0 - 2.0 * pt) / n);
    }
    Ok(DiceOutput { loss: loss / n, d_p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_positive_scores_half() {
        let out = dice_loss(&[1.0], &[Label::Pos], 1.0).unwrap();
        assert!((out.loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_on_negative_is_perfect() {
        let out = dice_loss(&[0.0], &[Label::Neg], 1.0).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn mean_over_tokens() {
        let out = dice_loss(&[1.0, 0.0], &[Label::Pos, Label::Neg], 1.0).unwrap();
        assert!((out.loss - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(dice_loss(&[0.5], &[], 1.0).is_err());
        assert!(dice_loss(&[0.5], &[Label::Pos], -1.0).is_err());
    }
}
