//! Windowed feed-forward tagger with an entity head, a begin head and a
//! 3-class softmax head over one shared token representation.
//!
//! For token `t` the encoder concatenates the embeddings of positions
//! `t-k ..= t+k` (positions outside the sentence use row 0, which doubles as
//! the unknown-word row) and computes `r_t = tanh(W1ᵀ x_t + b1)`. The heads are
//! linear in `r_t`: two sigmoid scores and one softmax distribution.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::rng::sub_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub window: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { emb_dim: 32, window: 2, hidden_dim: 64, vocab_size: 1, init_scale: 0.1, seed: 0 }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        (2 * self.window + 1) * self.emb_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.hidden_dim == 0 || self.vocab_size == 0 {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::Config("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// All trainable tensors, stored row-major. Also used for gradients and
/// momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub config: ModelConfig,
    /// `vocab_size × emb_dim`
    pub embedding: Vec<f64>,
    /// `input_dim × hidden_dim`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w_en: Vec<f64>,
    pub b_en: f64,
    pub w_be: Vec<f64>,
    pub b_be: f64,
    /// `hidden_dim × 3`
    pub w_cls: Vec<f64>,
    pub b_cls: [f64; NUM_CLASSES],
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Params {
        let (v, e, h, d) = (config.vocab_size, config.emb_dim, config.hidden_dim, config.input_dim());
        Params {
            config: config.clone(),
            embedding: vec![0.0; v * e],
            w1: vec![0.0; d * h],
            b1: vec![0.0; h],
            w_en: vec![0.0; h],
            b_en: 0.0,
            w_be: vec![0.0; h],
            b_be: 0.0,
            w_cls: vec![0.0; h * NUM_CLASSES],
            b_cls: [0.0; NUM_CLASSES],
        }
    }

    /// Weights uniform in `[-init_scale, init_scale]`, biases zero.
    pub fn init(config: &ModelConfig) -> Result<Params> {
        config.validate()?;
        let mut p = Params::zeros(config);
        let mut rng = sub_rng(config.seed, "model/init");
        let s = config.init_scale;
        for w in p
            .embedding
            .iter_mut()
            .chain(p.w1.iter_mut())
            .chain(p.w_en.iter_mut())
            .chain(p.w_be.iter_mut())
            .chain(p.w_cls.iter_mut())
        {
            *w = if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Params {
        Params::zeros(&self.config)
    }

    /// Every scalar, in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.embedding
            .iter()
            .chain(&self.w1)
            .chain(&self.b1)
            .chain(&self.w_en)
            .chain(std::iter::once(&self.b_en))
            .chain(&self.w_be)
            .chain(std::iter::once(&self.b_be))
            .chain(&self.w_cls)
            .chain(&self.b_cls)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embedding
            .iter_mut()
            .chain(self.w1.iter_mut())
            .chain(self.b1.iter_mut())
            .chain(self.w_en.iter_mut())
            .chain(std::iter::once(&mut self.b_en))
            .chain(self.w_be.iter_mut())
            .chain(std::iter::once(&mut self.b_be))
            .chain(self.w_cls.iter_mut())
            .chain(self.b_cls.iter_mut())
    }

    /// The shared encoder: embeddings, `W1` and `b1`.
    pub fn shared_values(&self) -> impl Iterator<Item = &f64> {
        self.embedding.iter().chain(&self.w1).chain(&self.b1)
    }

    pub fn shared_values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embedding.iter_mut().chain(self.w1.iter_mut()).chain(self.b1.iter_mut())
    }

    pub fn num_values(&self) -> usize {
        self.values().count()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn embedding_row(&self, index: usize) -> &[f64] {
        let e = self.config.emb_dim;
        &self.embedding[index * e..(index + 1) * e]
    }

    fn same_shape(&self, other: &Params) -> bool {
        self.config.vocab_size == other.config.vocab_size
            && self.config.emb_dim == other.config.emb_dim
            && self.config.hidden_dim == other.config.hidden_dim
            && self.config.window == other.config.window
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        assert!(self.same_shape(other), "parameter shape mismatch");
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }
}

/// Intermediate values of one forward pass over a sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    /// Concatenated window embeddings per token.
    pub inputs: Vec<Vec<f64>>,
    /// `r_t`, post-tanh.
    pub hidden: Vec<Vec<f64>>,
    pub en_logit: Vec<f64>,
    pub be_logit: Vec<f64>,
    pub h_en: Vec<f64>,
    pub h_be: Vec<f64>,
    pub cls_logits: Vec<[f64; NUM_CLASSES]>,
    pub probs: Vec<[f64; NUM_CLASSES]>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn forward(params: &Params, tokens: &[usize]) -> Result<ForwardTrace> {
    let cfg = &params.config;
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Index { index: bad, vocab_size: cfg.vocab_size });
    }
    let (e, h, k) = (cfg.emb_dim, cfg.hidden_dim, cfg.window as isize);
    let n = tokens.len();

    let mut trace = ForwardTrace {
        tokens: tokens.to_vec(),
        inputs: Vec::with_capacity(n),
        hidden: Vec::with_capacity(n),
        en_logit: Vec::with_capacity(n),
        be_logit: Vec::with_capacity(n),
        h_en: Vec::with_capacity(n),
        h_be: Vec::with_capacity(n),
        cls_logits: Vec::with_capacity(n),
        probs: Vec::with_capacity(n),
    };

    for t in 0..n as isize {
        let mut x = Vec::with_capacity(cfg.input_dim());
        for off in -k..=k {
            let pos = t + off;
            let row = if pos < 0 || pos >= n as isize { 0 } else { tokens[pos as usize] };
            x.extend_from_slice(params.embedding_row(row));
        }

        let mut r = params.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &params.w1[i * h..(i + 1) * h];
            for (rj, &w) in r.iter_mut().zip(row) {
                *rj += xi * w;
            }
        }
        r.iter_mut().for_each(|v| *v = v.tanh());

        let dot = |w: &[f64]| w.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let z_en = dot(&params.w_en) + params.b_en;
        let z_be = dot(&params.w_be) + params.b_be;
        let mut z_cls = params.b_cls;
        for (j, &rj) in r.iter().enumerate() {
            for c in 0..NUM_CLASSES {
                z_cls[c] += rj * params.w_cls[j * NUM_CLASSES + c];
            }
        }

        trace.h_en.push(sigmoid(z_en));
        trace.h_be.push(sigmoid(z_be));
        trace.en_logit.push(z_en);
        trace.be_logit.push(z_be);
        trace.probs.push(softmax(&z_cls));
        trace.cls_logits.push(z_cls);
        trace.inputs.push(x);
        trace.hidden.push(r);
    }
    debug_assert_eq!(e * (2 * cfg.window + 1), cfg.input_dim());
    Ok(trace)
}

/// Loss gradients with respect to the pre-activation head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub en_logit: Vec<f64>,
    pub be_logit: Vec<f64>,
    pub cls_logits: Vec<[f64; NUM_CLASSES]>,
}

impl HeadGrads {
    pub fn zeros(len: usize) -> HeadGrads {
        HeadGrads { en_logit: vec![0.0; len], be_logit: vec![0.0; len], cls_logits: vec![[0.0; NUM_CLASSES]; len] }
    }

    /// Chain `dL/dh_en` through the sigmoid and accumulate.
    pub fn add_en_score_grad(&mut self, trace: &ForwardTrace, d_h: &[f64]) {
        for ((g, &d), &h) in self.en_logit.iter_mut().zip(d_h).zip(&trace.h_en) {
            *g += d * h * (1.0 - h);
        }
    }

    pub fn add_be_score_grad(&mut self, trace: &ForwardTrace, d_h: &[f64]) {
        for ((g, &d), &h) in self.be_logit.iter_mut().zip(d_h).zip(&trace.h_be) {
            *g += d * h * (1.0 - h);
        }
    }

    /// Chain `dL/dp` through the softmax and accumulate.
    pub fn add_prob_grad(&mut self, trace: &ForwardTrace, d_p: &[[f64; NUM_CLASSES]]) {
        for ((g, d), p) in self.cls_logits.iter_mut().zip(d_p).zip(&trace.probs) {
            let inner: f64 = (0..NUM_CLASSES).map(|c| d[c] * p[c]).sum();
            for c in 0..NUM_CLASSES {
                g[c] += p[c] * (d[c] - inner);
            }
        }
    }
}

pub fn backward(params: &Params, trace: &ForwardTrace, grads: &HeadGrads) -> Result<Params> {
    let n = trace.len();
    if grads.en_logit.len() != n || grads.be_logit.len() != n || grads.cls_logits.len() != n {
        return Err(Error::Contract(format!(
            "head gradients cover {}/{}/{} tokens, trace has {n}",
            grads.en_logit.len(),
            grads.be_logit.len(),
            grads.cls_logits.len()
        )));
    }
    if trace.inputs.first().is_some_and(|x| x.len() != params.config.input_dim())
        || trace.hidden.first().is_some_and(|r| r.len() != params.config.hidden_dim)
    {
        return Err(Error::Contract("trace does not match parameter shapes".into()));
    }

    let cfg = &params.config;
    let (e, h, k) = (cfg.emb_dim, cfg.hidden_dim, cfg.window as isize);
    let mut g = params.zeros_like();
    let mut d_r = vec![0.0; h];
    let mut d_x = vec![0.0; cfg.input_dim()];

    for t in 0..n {
        let r = &trace.hidden[t];
        let (ge, gb, gc) = (grads.en_logit[t], grads.be_logit[t], grads.cls_logits[t]);

        g.b_en += ge;
        g.b_be += gb;
        for c in 0..NUM_CLASSES {
            g.b_cls[c] += gc[c];
        }
        for j in 0..h {
            g.w_en[j] += ge * r[j];
            g.w_be[j] += gb * r[j];
            let mut acc = ge * params.w_en[j] + gb * params.w_be[j];
            for c in 0..NUM_CLASSES {
                g.w_cls[j * NUM_CLASSES + c] += gc[c] * r[j];
                acc += gc[c] * params.w_cls[j * NUM_CLASSES + c];
            }
            // through tanh
            d_r[j] = acc * (1.0 - r[j] * r[j]);
        }
        if d_r.iter().all(|&v| v == 0.0) {
            continue;
        }

        let x = &trace.inputs[t];
        for (j, &d) in d_r.iter().enumerate() {
            g.b1[j] += d;
        }
        for (i, dxi) in d_x.iter_mut().enumerate() {
            let w_row = &params.w1[i * h..(i + 1) * h];
            let g_row = &mut g.w1[i * h..(i + 1) * h];
            let mut acc = 0.0;
            for j in 0..h {
                g_row[j] += x[i] * d_r[j];
                acc += w_row[j] * d_r[j];
            }
            *dxi = acc;
        }

        for (slot, off) in (-k..=k).enumerate() {
            let pos = t as isize + off;
            let row = if pos < 0 || pos >= n as isize { 0 } else { trace.tokens[pos as usize] };
            let dst = &mut g.embedding[row * e..(row + 1) * e];
            for (a, b) in dst.iter_mut().zip(&d_x[slot * e..(slot + 1) * e]) {
                *a += b;
            }
        }
    }
    Ok(g)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint. Loading rejects any other `version`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub vocab_fingerprint: String,
    pub params: Params,
    #[serde(default)]
    pub crf: Option<crate::objectives::CrfParams>,
}

impl Checkpoint {
    pub fn new(params: Params, crf: Option<crate::objectives::CrfParams>, vocab_fingerprint: String) -> Checkpoint {
        Checkpoint { version: CHECKPOINT_VERSION, vocab_fingerprint, params, crf }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Contract("checkpoint has no version field".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::CheckpointVersion(version as u32));
        }
        let ckpt: Checkpoint = serde_json::from_value(raw)?;
        if ckpt.params.num_values() != Params::zeros(&ckpt.params.config).num_values()
            || ckpt.params.embedding.len() != ckpt.params.config.vocab_size * ckpt.params.config.emb_dim
            || ckpt.params.w1.len() != ckpt.params.config.input_dim() * ckpt.params.config.hidden_dim
        {
            return Err(Error::Contract("checkpoint tensor shapes disagree with its config".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> Params {
        Params::init(&ModelConfig { emb_dim: 3, window: 1, hidden_dim: 4, vocab_size: 7, init_scale: 0.5, seed })
            .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(small(3), small(3));
        assert_ne!(small(3), small(4));
    }

    #[test]
    fn zero_scale_gives_zero_weights() {
        let cfg = ModelConfig { vocab_size: 5, init_scale: 0.0, ..Default::default() };
        assert!(Params::init(&cfg).unwrap().values().all(|&v| v == 0.0));
    }

    #[test]
    fn default_shapes() {
        let p = Params::init(&ModelConfig { vocab_size: 100, ..Default::default() }).unwrap();
        assert_eq!(p.embedding.len(), 100 * 32);
        assert_eq!(p.config.input_dim(), 160);
        assert_eq!(p.w1.len(), 160 * 64);
        assert_eq!(p.w_cls.len(), 64 * 3);
    }

    #[test]
    fn zero_params_are_uninformative() {
        let p = Params::zeros(&ModelConfig { vocab_size: 4, ..Default::default() });
        let tr = forward(&p, &[1, 2, 3]).unwrap();
        assert!(tr.h_en.iter().chain(&tr.h_be).all(|&h| h == 0.5));
        for probs in &tr.probs {
            assert!(probs.iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn single_token_sentence() {
        let p = small(1);
        let tr = forward(&p, &[5]).unwrap();
        assert_eq!(tr.len(), 1);
        // both neighbours are padding, i.e. row 0
        assert_eq!(&tr.inputs[0][..3], p.embedding_row(0));
        assert_eq!(&tr.inputs[0][6..], p.embedding_row(0));
    }

    #[test]
    fn out_of_vocab_index() {
        assert!(matches!(forward(&small(1), &[1, 7]), Err(Error::Index { index: 7, .. })));
    }

    #[test]
    fn embedding_perturbation_is_local() {
        let p = small(2);
        let sentence = [1, 2, 3, 4, 5, 6, 1];
        let base = forward(&p, &sentence).unwrap();
        let mut q = p.clone();
        for v in &mut q.embedding[4 * 3..5 * 3] {
            *v += 0.3;
        }
        let moved = forward(&q, &sentence).unwrap();
        // word 4 sits at position 3; window 1 touches positions 2..=4
        for t in 0..sentence.len() {
            let changed = base.h_en[t] != moved.h_en[t];
            assert_eq!(changed, (2..=4).contains(&t), "position {t}");
        }
    }

    #[test]
    fn outputs_stay_in_range() {
        let mut p = small(5);
        p.scale(40.0);
        let tr = forward(&p, &[1, 2, 3, 4]).unwrap();
        for t in 0..4 {
            assert!(tr.h_en[t] >= 0.0 && tr.h_en[t] <= 1.0);
            assert!((tr.probs[t].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_head_grads_give_zero_gradients() {
        let p = small(3);
        let tr = forward(&p, &[1, 2, 3]).unwrap();
        let g = backward(&p, &tr, &HeadGrads::zeros(3)).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn absent_word_gets_no_gradient() {
        let p = small(3);
        let tr = forward(&p, &[1, 2, 3]).unwrap();
        let mut hg = HeadGrads::zeros(3);
        hg.en_logit = vec![0.3, -0.2, 0.7];
        let g = backward(&p, &tr, &hg).unwrap();
        assert!(g.embedding[5 * 3..6 * 3].iter().all(|&v| v == 0.0));
        assert!(g.embedding[2 * 3..3 * 3].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mismatched_grads_are_rejected() {
        let p = small(3);
        let tr = forward(&p, &[1, 2, 3]).unwrap();
        assert!(matches!(backward(&p, &tr, &HeadGrads::zeros(2)), Err(Error::Contract(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_version_gate() {
        let ckpt = Checkpoint::new(small(9), None, "abc".into());
        let text = ckpt.to_json().unwrap();
        assert_eq!(Checkpoint::from_json(&text).unwrap(), ckpt);
        let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::CheckpointVersion(2))));
    }
}
