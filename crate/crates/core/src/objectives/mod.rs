//! Training losses. Each returns its value together with the gradients with
//! respect to its direct inputs (head outputs or logits, and any auxiliary
//! variables).

mod auc;
mod ce;
mod crf;
mod dice;

pub use auc::{auc_margin_loss, auc_two_task_loss, AucOutput, AucState, Degenerate, TwoTaskAucOutput};
pub use ce::{bce_two_task, ce_multiclass, BceOutput, CeOutput};
pub use crf::{crf_nll, crf_path_score, crf_viterbi, log_partition, CrfOutput, CrfParams};
pub use dice::{dice_loss, DiceOutput, DEFAULT_GAMMA};

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_LAMBDA: f64 = 100.0;
pub const DEFAULT_MARGIN: f64 = 1.0;
