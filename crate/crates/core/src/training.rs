//! Optimizers and the training loop.
//!
//! Primal variables (model weights, CRF potentials, and the AUC auxiliaries
//! `a`, `b`) take SGD steps with momentum on the weights only. The dual
//! variable `α` of each AUC task takes a projected ascent step,
//! `α ← max(0, α + η·∂α)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{to_two_task, Corpus, Label, Tag, TwoTaskLabels, Vocab, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::evaluation::{
    combine_predictions, entity_prf, threshold_predictions, ChunkMode, EvalOptions, Metrics, DEFAULT_THRESHOLD,
};
use crate::model::{backward, forward, ForwardTrace, HeadGrads, ModelConfig, Params};
use crate::objectives::{
    auc_two_task_loss, bce_two_task, ce_multiclass, crf_nll, crf_viterbi, dice_loss, AucState, CrfParams,
    TwoTaskAucOutput, DEFAULT_GAMMA, DEFAULT_LAMBDA, DEFAULT_MARGIN,
};
use crate::rng::sub_rng;
use crate::sampling::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "CRF")]
    Crf,
    #[serde(rename = "CE-2T")]
    Ce2t,
    #[serde(rename = "AUC-2T")]
    Auc2t,
    #[serde(rename = "COMAUC-2T")]
    Comauc2t,
    #[serde(rename = "DICE")]
    Dice,
}

impl LossKind {
    pub const ALL: [LossKind; 6] =
        [LossKind::Ce, LossKind::Crf, LossKind::Ce2t, LossKind::Auc2t, LossKind::Comauc2t, LossKind::Dice];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "CE",
            LossKind::Crf => "CRF",
            LossKind::Ce2t => "CE-2T",
            LossKind::Auc2t => "AUC-2T",
            LossKind::Comauc2t => "COMAUC-2T",
            LossKind::Dice => "DICE",
        }
    }

    pub fn default_decoder(self) -> Decoder {
        match self {
            LossKind::Ce | LossKind::Dice => Decoder::Argmax,
            LossKind::Crf => Decoder::Crf,
            LossKind::Ce2t | LossKind::Auc2t | LossKind::Comauc2t => Decoder::TwoTask,
        }
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, LossKind::Auc2t | LossKind::Comauc2t)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// How head outputs become BIO tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// Argmax of the 3-class head.
    Argmax,
    /// Viterbi over the 3-class logits with learned transitions.
    Crf,
    /// Thresholded entity/begin scores folded into tags.
    TwoTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub lambda: f64,
    pub margin: f64,
    pub lr_primal: f64,
    pub lr_dual: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_sentences: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub threshold: f64,
    pub dice_gamma: f64,
    /// Overrides the loss kind's default decoder.
    pub decoder: Option<Decoder>,
    /// How an `I` without an opening tag is scored.
    pub chunk_mode: ChunkMode,
    /// Fraction of rejected (non-finite) steps above which a run fails.
    pub max_rejected_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Auc2t,
            lambda: DEFAULT_LAMBDA,
            margin: DEFAULT_MARGIN,
            lr_primal: 0.1,
            lr_dual: 0.1,
            momentum: 0.9,
            epochs: 5,
            batch_sentences: 8,
            seed: 0,
            eval_every: 1,
            threshold: DEFAULT_THRESHOLD,
            dice_gamma: DEFAULT_GAMMA,
            decoder: None,
            chunk_mode: ChunkMode::Lenient,
            max_rejected_fraction: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn decoder(&self) -> Decoder {
        self.decoder.unwrap_or(self.loss_kind.default_decoder())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.lr_primal, "lr_primal")?;
        positive(self.lr_dual, "lr_dual")?;
        positive(self.margin, "margin")?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.epochs == 0 || self.batch_sentences == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch size and eval interval must be at least 1".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        let decoder = self.decoder();
        let two_task_loss = matches!(self.loss_kind, LossKind::Ce2t | LossKind::Auc2t | LossKind::Comauc2t);
        if (self.loss_kind == LossKind::Crf && decoder != Decoder::Crf)
            || (decoder == Decoder::Crf && self.loss_kind != LossKind::Crf)
        {
            return Err(Error::Config("CRF training and CRF decoding only go together".into()));
        }
        if decoder == Decoder::TwoTask && !two_task_loss {
            return Err(Error::Config(format!("{} does not train the two-task heads", self.loss_kind)));
        }
        Ok(())
    }
}

/// Parameter containers the SGD step can walk over.
pub trait ParamSet {
    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_>;
    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_>;
}

impl ParamSet for Params {
    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        Box::new(Params::values(self))
    }
    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        Box::new(Params::values_mut(self))
    }
}

impl ParamSet for CrfParams {
    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        Box::new(CrfParams::values(self))
    }
    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        Box::new(CrfParams::values_mut(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was non-finite; nothing changed.
    Rejected,
}

/// `v ← μ·v + g; θ ← θ - η·v`. A non-finite gradient leaves both untouched.
pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, lr: f64, momentum: f64, velocity: &mut P) -> StepOutcome {
    if grads.values().any(|g| !g.is_finite()) {
        return StepOutcome::Rejected;
    }
    for ((p, &g), v) in params.values_mut().zip(grads.values()).zip(velocity.values_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    StepOutcome::Applied
}

/// Gradients for one AUC task's auxiliaries, on that task's own loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxGrads {
    pub d_a: f64,
    pub d_b: f64,
    pub d_alpha: f64,
    /// Skip the α update (the batch had only one class for this task).
    pub degenerate: bool,
}

impl AuxGrads {
    fn from_output(out: &crate::objectives::AucOutput) -> AuxGrads {
        AuxGrads { d_a: out.d_a, d_b: out.d_b, d_alpha: out.d_alpha, degenerate: out.degenerate.is_some() }
    }

    pub fn pair(out: &TwoTaskAucOutput) -> [AuxGrads; 2] {
        [AuxGrads::from_output(&out.en), AuxGrads::from_output(&out.be)]
    }
}

/// Descent on the weights (with momentum) and on `a`, `b`; projected ascent
/// on each `α`.
///
/// The auxiliaries of each task step along the gradient of that task's own
/// loss. `λ` rescales the begin task's pull on the shared weights but not
/// the location of its auxiliaries' optimum, so it is kept out of their step
/// size.
#[allow(clippy::too_many_arguments)]
pub fn primal_dual_step(
    params: &mut Params,
    velocity: &mut Params,
    states: &mut [AucState],
    grads: &Params,
    aux: &[AuxGrads],
    lr_primal: f64,
    lr_dual: f64,
    momentum: f64,
) -> StepOutcome {
    let aux_finite = aux.iter().all(|g| g.d_a.is_finite() && g.d_b.is_finite() && g.d_alpha.is_finite());
    if !aux_finite || grads.values().any(|g| !g.is_finite()) {
        return StepOutcome::Rejected;
    }
    sgd_step(params, grads, lr_primal, momentum, velocity);
    for (state, g) in states.iter_mut().zip(aux) {
        state.a -= lr_primal * g.d_a;
        state.b -= lr_primal * g.d_b;
        if !g.degenerate {
            state.alpha = (state.alpha + lr_dual * g.d_alpha).max(0.0);
        }
    }
    StepOutcome::Applied
}

/// Search direction for the two-task AUC objective `L_en + λ·L_be`.
///
/// `g_en` and `g_be` are the gradients of the unweighted task losses. The
/// shared encoder (embeddings, `W1`, `b1`) moves along
/// `(g_en + λ·g_be) / (1 + λ)`; each head moves along its own task's
/// gradient, the begin head only when `λ > 0`. This is the combined
/// gradient under a positive diagonal rescaling, hence still a descent
/// direction, and it keeps the step size independent of `λ`.
pub fn combine_task_gradients(g_en: &Params, g_be: &Params, lambda: f64) -> Params {
    let mut out = g_en.clone();
    let w_en = 1.0 / (1.0 + lambda);
    let w_be = lambda / (1.0 + lambda);
    for (o, b) in out.shared_values_mut().zip(g_be.shared_values()) {
        *o = *o * w_en + b * w_be;
    }
    if lambda > 0.0 {
        out.w_be.copy_from_slice(&g_be.w_be);
        out.b_be = g_be.b_be;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Ce,
    Auc,
}

/// Compositional schedule: cross-entropy on even steps, AUC on odd steps.
pub fn comauc_schedule(global_step: u64) -> StepKind {
    if global_step.is_multiple_of(2) {
        StepKind::Ce
    } else {
        StepKind::Auc
    }
}

/// A sentence mapped to vocabulary indices and class labels.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub tokens: Vec<usize>,
    pub gold: Vec<usize>,
    pub tags: Vec<Tag>,
    pub two_task: TwoTaskLabels,
}

pub fn encode(corpus: &Corpus, vocab: &Vocab) -> Vec<Encoded> {
    corpus
        .sentences
        .iter()
        .map(|s| {
            let tags = s.collapsed_tags();
            Encoded {
                tokens: vocab.encode(&s.tokens),
                gold: tags.iter().map(|t| t.prefix.index()).collect(),
                two_task: to_two_task(&tags),
                tags,
            }
        })
        .collect()
}

/// BIO tags for one sentence.
pub fn predict(
    params: &Params,
    crf: &CrfParams,
    decoder: Decoder,
    threshold: f64,
    tokens: &[usize],
) -> Result<(Vec<Tag>, usize)> {
    let trace = forward(params, tokens)?;
    Ok(match decoder {
        Decoder::Argmax => {
            let tags = trace
                .probs
                .iter()
                .map(|p| {
                    let mut best = 0;
                    for c in 1..NUM_CLASSES {
                        if p[c] > p[best] {
                            best = c;
                        }
                    }
                    Tag::untyped(crate::corpus::Prefix::from_index(best))
                })
                .collect();
            (tags, 0)
        }
        Decoder::Crf => {
            let path = crf_viterbi(&trace.cls_logits, crf)?;
            (path.into_iter().map(|c| Tag::untyped(crate::corpus::Prefix::from_index(c))).collect(), 0)
        }
        Decoder::TwoTask => {
            let en = threshold_predictions(&trace.h_en, threshold);
            let be = threshold_predictions(&trace.h_be, threshold);
            combine_predictions(&en, &be)?
        }
    })
}

/// Entity-level scores on an encoded corpus, plus the number of
/// begin-outside-entity inconsistencies.
pub fn evaluate(
    params: &Params,
    crf: &CrfParams,
    decoder: Decoder,
    threshold: f64,
    mode: ChunkMode,
    data: &[Encoded],
) -> Result<(Metrics, usize)> {
    let mut gold = Vec::with_capacity(data.len());
    let mut pred = Vec::with_capacity(data.len());
    let mut inconsistent = 0;
    for s in data {
        let (tags, bad) = predict(params, crf, decoder, threshold, &s.tokens)?;
        inconsistent += bad;
        pred.push(tags);
        gold.push(s.tags.clone());
    }
    Ok((entity_prf(&gold, &pred, EvalOptions { mode, ..EvalOptions::default() })?, inconsistent))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRef {
    pub label: String,
    pub seed: u64,
    pub sentences: usize,
    pub tokens: usize,
    pub entity_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub total: u64,
    pub ce: u64,
    pub auc: u64,
    pub rejected: u64,
    pub degenerate_en: u64,
    pub degenerate_be: u64,
    pub clamped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub partition: PartitionRef,
    /// One entry per dev evaluation.
    pub trajectory: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: Metrics,
    pub test_inconsistent: usize,
    pub steps: StepCounts,
    pub final_states: Vec<AucState>,
    pub warnings: Vec<String>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    /// Everything except timing, for determinism comparisons.
    pub fn metrics_fingerprint(&self) -> String {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        serde_json::to_string(&r).expect("run record serializes")
    }
}

/// Output of [`train`]: the record plus the selected parameters.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub record: RunRecord,
    pub params: Params,
    pub crf: CrfParams,
}

struct BatchResult {
    loss: f64,
    grads: Params,
    crf_grads: CrfParams,
    aux: Option<[AuxGrads; 2]>,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    params: Params,
    crf: CrfParams,
    velocity: Params,
    crf_velocity: CrfParams,
    states: [AucState; 2],
    steps: StepCounts,
}

impl Trainer<'_> {
    fn batch(&mut self, batch: &[&Encoded], kind: LossKind) -> Result<BatchResult> {
        let traces: Vec<ForwardTrace> =
            batch.iter().map(|s| forward(&self.params, &s.tokens)).collect::<Result<_>>()?;
        let mut head: Vec<HeadGrads> = traces.iter().map(|t| HeadGrads::zeros(t.len())).collect();
        let mut crf_grads = CrfParams::default();
        let mut aux = None;
        let mut head_be: Option<Vec<HeadGrads>> = None;

        let split = |flat: &[f64], out: &mut Vec<Vec<f64>>| {
            let mut offset = 0;
            out.clear();
            for t in &traces {
                out.push(flat[offset..offset + t.len()].to_vec());
                offset += t.len();
            }
        };
        let mut parts: Vec<Vec<f64>> = Vec::new();

        let loss = match kind {
            LossKind::Ce => {
                let probs: Vec<_> = traces.iter().flat_map(|t| t.probs.iter().copied()).collect();
                let gold: Vec<usize> = batch.iter().flat_map(|s| s.gold.iter().copied()).collect();
                let out = ce_multiclass(&probs, &gold)?;
                self.steps.clamped += out.clamped as u64;
                let mut offset = 0;
                for (h, t) in head.iter_mut().zip(&traces) {
                    h.cls_logits.copy_from_slice(&out.d_logits[offset..offset + t.len()]);
                    offset += t.len();
                }
                out.loss
            }
            LossKind::Ce2t => {
                let h_en: Vec<f64> = traces.iter().flat_map(|t| t.h_en.iter().copied()).collect();
                let h_be: Vec<f64> = traces.iter().flat_map(|t| t.h_be.iter().copied()).collect();
                let labels = pooled_labels(batch);
                let out = bce_two_task(&h_en, &h_be, &labels)?;
                self.steps.clamped += out.clamped as u64;
                split(&out.d_en_logit, &mut parts);
                for (h, p) in head.iter_mut().zip(&parts) {
                    h.en_logit.copy_from_slice(p);
                }
                split(&out.d_be_logit, &mut parts);
                for (h, p) in head.iter_mut().zip(&parts) {
                    h.be_logit.copy_from_slice(p);
                }
                out.loss
            }
            LossKind::Auc2t | LossKind::Comauc2t => {
                let h_en: Vec<f64> = traces.iter().flat_map(|t| t.h_en.iter().copied()).collect();
                let h_be: Vec<f64> = traces.iter().flat_map(|t| t.h_be.iter().copied()).collect();
                let labels = pooled_labels(batch);
                let out = auc_two_task_loss(&h_en, &h_be, &labels, &self.states[0], &self.states[1], self.cfg.lambda)?;
                self.steps.degenerate_en += out.en.degenerate.is_some() as u64;
                self.steps.degenerate_be += out.be.degenerate.is_some() as u64;
                split(out.d_h_en(), &mut parts);
                for ((h, p), t) in head.iter_mut().zip(&parts).zip(&traces) {
                    h.add_en_score_grad(t, p);
                }
                split(&out.be.d_h, &mut parts);
                let mut be_head: Vec<HeadGrads> = traces.iter().map(|t| HeadGrads::zeros(t.len())).collect();
                for ((h, p), t) in be_head.iter_mut().zip(&parts).zip(&traces) {
                    h.add_be_score_grad(t, p);
                }
                head_be = Some(be_head);
                aux = Some(AuxGrads::pair(&out));
                out.loss
            }
            LossKind::Dice => {
                let gold: Vec<usize> = batch.iter().flat_map(|s| s.gold.iter().copied()).collect();
                let n_tok = gold.len();
                let mut d_p = vec![[0.0; NUM_CLASSES]; n_tok];
                let mut loss = 0.0;
                for c in 0..NUM_CLASSES {
                    let p: Vec<f64> = traces.iter().flat_map(|t| t.probs.iter().map(move |q| q[c])).collect();
                    let y: Vec<Label> = gold.iter().map(|&g| Label::from_bool(g == c)).collect();
                    let out = dice_loss(&p, &y, self.cfg.dice_gamma)?;
                    loss += out.loss / NUM_CLASSES as f64;
                    for (d, g) in d_p.iter_mut().zip(&out.d_p) {
                        d[c] = g / NUM_CLASSES as f64;
                    }
                }
                let mut offset = 0;
                for (h, t) in head.iter_mut().zip(&traces) {
                    h.add_prob_grad(t, &d_p[offset..offset + t.len()]);
                    offset += t.len();
                }
                loss
            }
            LossKind::Crf => {
                let n_tok: usize = traces.iter().map(ForwardTrace::len).sum();
                let scale = 1.0 / n_tok as f64;
                let mut loss = 0.0;
                for ((h, t), s) in head.iter_mut().zip(&traces).zip(batch) {
                    let out = crf_nll(&t.cls_logits, &self.crf, &s.gold)?;
                    loss += out.loss * scale;
                    for (dst, src) in h.cls_logits.iter_mut().zip(&out.d_emissions) {
                        *dst = src.map(|v| v * scale);
                    }
                    for (dst, src) in crf_grads.values_mut().zip(out.d_crf.values()) {
                        *dst += src * scale;
                    }
                }
                loss
            }
        };

        let mut grads = self.params.zeros_like();
        for (t, h) in traces.iter().zip(&head) {
            grads.add_scaled(&backward(&self.params, t, h)?, 1.0);
        }
        if let Some(be_head) = head_be {
            let mut be_grads = self.params.zeros_like();
            for (t, h) in traces.iter().zip(&be_head) {
                be_grads.add_scaled(&backward(&self.params, t, h)?, 1.0);
            }
            grads = combine_task_gradients(&grads, &be_grads, self.cfg.lambda);
        }
        Ok(BatchResult { loss, grads, crf_grads, aux })
    }

    fn step(&mut self, batch: &[&Encoded]) -> Result<f64> {
        let kind = match self.cfg.loss_kind {
            LossKind::Comauc2t => match comauc_schedule(self.steps.total) {
                StepKind::Ce => LossKind::Ce,
                StepKind::Auc => LossKind::Auc2t,
            },
            k => k,
        };
        let result = self.batch(batch, kind)?;
        self.steps.total += 1;
        match kind {
            LossKind::Ce => self.steps.ce += 1,
            LossKind::Auc2t => self.steps.auc += 1,
            _ => {}
        }
        let outcome = match result.aux {
            Some(aux) => primal_dual_step(
                &mut self.params,
                &mut self.velocity,
                &mut self.states,
                &result.grads,
                &aux,
                self.cfg.lr_primal,
                self.cfg.lr_dual,
                self.cfg.momentum,
            ),
            None => {
                let crf_ok = result.crf_grads.is_finite();
                let o = sgd_step(
                    &mut self.params,
                    &result.grads,
                    self.cfg.lr_primal,
                    self.cfg.momentum,
                    &mut self.velocity,
                );
                if o == StepOutcome::Applied && crf_ok && kind == LossKind::Crf {
                    sgd_step(
                        &mut self.crf,
                        &result.crf_grads,
                        self.cfg.lr_primal,
                        self.cfg.momentum,
                        &mut self.crf_velocity,
                    );
                }
                if crf_ok {
                    o
                } else {
                    StepOutcome::Rejected
                }
            }
        };
        if outcome == StepOutcome::Rejected {
            self.steps.rejected += 1;
            warn!("rejected a step with non-finite gradients ({} so far)", self.steps.rejected);
        }
        if self.states.iter().any(|s| s.alpha < 0.0) {
            return Err(Error::Training("dual variable went negative".into()));
        }
        Ok(result.loss)
    }
}

fn pooled_labels(batch: &[&Encoded]) -> TwoTaskLabels {
    let mut labels = TwoTaskLabels::default();
    for s in batch {
        labels.extend(&s.two_task);
    }
    labels
}

/// Train one model on `partition` of `source` and report dev-selected test
/// scores. `model.vocab_size` must equal `vocab.len()`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    config: &TrainConfig,
    source: &Corpus,
    partition: &Partition,
    partition_label: &str,
    dev: &Corpus,
    test: &Corpus,
    vocab: &Vocab,
    model: &ModelConfig,
) -> Result<TrainedModel> {
    let start = Instant::now();
    config.validate()?;
    if partition.is_empty() {
        return Err(Error::Config("training partition is empty".into()));
    }
    if model.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab size {} does not match vocabulary of {}",
            model.vocab_size,
            vocab.len()
        )));
    }
    let train_set = encode(&source.subset(&partition.indices), vocab);
    let dev_set = encode(dev, vocab);
    let test_set = encode(test, vocab);

    let mut warnings = Vec::new();
    if train_set.iter().all(|s| s.two_task.en.iter().all(|l| !l.is_pos())) {
        let msg = "training partition has no entity tokens".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }

    let params = Params::init(model)?;
    let mut trainer = Trainer {
        cfg: config,
        velocity: params.zeros_like(),
        params,
        crf: CrfParams::default(),
        crf_velocity: CrfParams::default(),
        states: [AucState::initial(config.margin); 2],
        steps: StepCounts::default(),
    };

    let decoder = config.decoder();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = sub_rng(config.seed, "training/shuffle");
    let mut trajectory = Vec::new();
    let mut best: Option<(f64, usize, Params, CrfParams)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_sentences) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &train_set[i]).collect();
            loss_sum += trainer.step(&batch)?;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;

        if (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs {
            let (dev_metrics, _) =
                evaluate(&trainer.params, &trainer.crf, decoder, config.threshold, config.chunk_mode, &dev_set)?;
            if best.as_ref().is_none_or(|(f1, ..)| dev_metrics.f1 > *f1) {
                best = Some((dev_metrics.f1, epoch, trainer.params.clone(), trainer.crf));
            }
            trajectory.push(EpochRecord { epoch, train_loss, dev: dev_metrics });
        }
    }

    let steps = trainer.steps.clone();
    if steps.rejected as f64 > config.max_rejected_fraction * steps.total as f64 {
        return Err(Error::Training(format!(
            "{} of {} steps were rejected for non-finite gradients",
            steps.rejected, steps.total
        )));
    }
    if steps.rejected > 0 {
        warnings.push(format!("{} steps rejected for non-finite gradients", steps.rejected));
    }

    let (_, best_epoch, best_params, best_crf) = best.expect("at least one evaluation runs");
    let (test_metrics, test_inconsistent) =
        evaluate(&best_params, &best_crf, decoder, config.threshold, config.chunk_mode, &test_set)?;
    let record = RunRecord {
        config: config.clone(),
        model: model.clone(),
        partition: PartitionRef {
            label: partition_label.to_string(),
            seed: partition.spec.seed,
            sentences: partition.len(),
            tokens: partition.realized_tokens,
            entity_pct: partition.realized_entity_pct,
        },
        trajectory,
        best_epoch,
        test: test_metrics,
        test_inconsistent,
        steps,
        final_states: trainer.states.to_vec(),
        warnings,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        checkpoint: None,
    };
    Ok(TrainedModel { record, params: best_params, crf: best_crf })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params() -> Params {
        Params::init(&ModelConfig { emb_dim: 2, window: 1, hidden_dim: 3, vocab_size: 4, init_scale: 0.3, seed: 1 })
            .unwrap()
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut v = p.zeros_like();
        sgd_step(&mut p, &before.zeros_like(), 0.1, 0.9, &mut v);
        assert_eq!(p, before);
    }

    #[test]
    fn no_momentum_is_plain_descent() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.values_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.01);
        let mut v = p.zeros_like();
        sgd_step(&mut p, &g, 0.5, 0.0, &mut v);
        for ((a, b), d) in p.values().zip(before.values()).zip(g.values()) {
            assert!((a - (b - 0.5 * d)).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.values_mut().for_each(|v| *v = 0.2);
        let mut v = p.zeros_like();
        sgd_step(&mut p, &g, 0.1, 0.9, &mut v);
        sgd_step(&mut p, &g, 0.1, 0.9, &mut v);
        for (a, b) in p.values().zip(before.values()) {
            assert!((b - a - 0.1 * 0.2 * 2.9).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.b_en = f64::NAN;
        let mut v = p.zeros_like();
        assert_eq!(sgd_step(&mut p, &g, 0.1, 0.9, &mut v), StepOutcome::Rejected);
        assert_eq!(p, before);
    }

    #[test]
    fn saddle_point_is_stationary() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut v = p.zeros_like();
        let mut states = [AucState { a: 1.0, b: 0.0, alpha: 0.0, margin: 1.0 }; 2];
        let aux = [AuxGrads { d_a: 0.0, d_b: 0.0, d_alpha: 0.0, degenerate: false }; 2];
        let g = p.zeros_like();
        primal_dual_step(&mut p, &mut v, &mut states, &g, &aux, 0.1, 0.1, 0.9);
        assert_eq!(p, before);
        assert_eq!(states[0], AucState { a: 1.0, b: 0.0, alpha: 0.0, margin: 1.0 });
    }

    #[test]
    fn alpha_is_projected_at_zero() {
        let mut p = tiny_params();
        let mut v = p.zeros_like();
        let g = p.zeros_like();
        let mut states = [AucState { alpha: 0.05, ..AucState::default() }];
        let aux = [AuxGrads { d_a: 0.0, d_b: 0.0, d_alpha: -3.0, degenerate: false }];
        primal_dual_step(&mut p, &mut v, &mut states, &g, &aux, 0.1, 0.1, 0.0);
        assert_eq!(states[0].alpha, 0.0);
    }

    #[test]
    fn degenerate_task_skips_alpha() {
        let mut p = tiny_params();
        let mut v = p.zeros_like();
        let g = p.zeros_like();
        let mut states = [AucState { alpha: 0.5, ..AucState::default() }];
        let aux = [AuxGrads { d_a: 0.0, d_b: 0.2, d_alpha: 1.0, degenerate: true }];
        primal_dual_step(&mut p, &mut v, &mut states, &g, &aux, 0.1, 0.1, 0.0);
        assert_eq!(states[0].alpha, 0.5);
        assert!((states[0].b + 0.02).abs() < 1e-15);
    }

    #[test]
    fn schedule_alternates() {
        let kinds: Vec<_> = (0..4).map(comauc_schedule).collect();
        assert_eq!(kinds, vec![StepKind::Ce, StepKind::Auc, StepKind::Ce, StepKind::Auc]);
    }

    #[test]
    fn loss_kind_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("SVM".parse::<LossKind>().is_err());
    }

    #[test]
    fn crf_with_two_task_decoder_is_rejected() {
        let cfg = TrainConfig { loss_kind: LossKind::Crf, decoder: Some(Decoder::TwoTask), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig { loss_kind: LossKind::Auc2t, decoder: Some(Decoder::Crf), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(TrainConfig::default().validate().is_ok());
    }
}
