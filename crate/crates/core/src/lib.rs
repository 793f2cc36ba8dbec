//! Two-task BIO tagging trained by direct AUC-margin maximization.
//!
//! BIO tags are split into an "inside an entity" task and a "begins an
//! entity" task. Each task is trained with the AUC margin min-max loss
//! through a primal-dual stochastic optimizer, and predictions are folded
//! back into BIO tags. Cross-entropy, two-task cross-entropy, CRF and Dice
//! baselines share the same from-scratch windowed encoder so the methods can
//! be compared on identical low-resource and imbalanced partitions.

#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod oracle;
pub mod rng;
pub mod runner;
pub mod sampling;
pub mod training;
pub mod verify;

pub use corpus::{Corpus, Label, Prefix, Sentence, Tag, TwoTaskLabels, Vocab};
pub use error::{Error, Result};
pub use evaluation::Metrics;
pub use model::{ModelConfig, Params};
pub use objectives::{AucState, CrfParams};
pub use sampling::Partition;
pub use training::{LossKind, RunRecord, TrainConfig};
