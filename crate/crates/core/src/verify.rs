//! Self-checks of the numerical core against independent oracles: finite
//! differences for gradients, path enumeration for the CRF and brute-force
//! counting for the metrics. The fixtures are public so test suites can
//! reuse them.

use crate::corpus::{to_two_task, Label, Prefix, Tag, TwoTaskLabels, NUM_CLASSES};
use crate::evaluation::{combine_predictions, entity_prf, wmw_auc, EvalOptions};
use crate::model::{backward, forward, HeadGrads, ModelConfig, Params};
use crate::objectives::{
    auc_margin_loss, auc_two_task_loss, bce_two_task, ce_multiclass, crf_nll, dice_loss, AucState, CrfParams,
};
use crate::objectives::{crf_viterbi, log_partition};
use crate::oracle::central_difference;
use crate::oracle::{all_paths, brute_auc, brute_best_score, brute_counts, brute_log_partition, brute_path_score};
use crate::training::{primal_dual_step, AuxGrads};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

/// Map arbitrary choices onto a strictly valid BIO sequence: `0` is `O`,
/// `1` opens an entity, `2` continues one (or opens one after `O`).
pub fn tags_from_choices(choices: &[(u8, usize)], typed: bool) -> Vec<Tag> {
    let mut out: Vec<Tag> = Vec::with_capacity(choices.len());
    for &(c, ty) in choices {
        let ty = TYPES[ty % TYPES.len()];
        let make = |p| if typed { Tag::typed(p, ty) } else { Tag::untyped(p) };
        let tag = match c % 3 {
            0 => Tag::O,
            1 => make(Prefix::B),
            _ => match out.last() {
                Some(prev) if prev.is_entity() => Tag { prefix: Prefix::I, entity_type: prev.entity_type.clone() },
                _ => make(Prefix::B),
            },
        };
        out.push(tag);
    }
    out
}

pub fn random_tags(rng: &mut ChaCha8Rng, len: usize, typed: bool) -> Vec<Tag> {
    let choices: Vec<(u8, usize)> = (0..len).map(|_| (rng.gen_range(0..3), rng.gen_range(0..3))).collect();
    tags_from_choices(&choices, typed)
}

/// Arbitrary, not necessarily valid, tags.
pub fn random_loose_tags(rng: &mut ChaCha8Rng, len: usize, typed: bool) -> Vec<Tag> {
    (0..len)
        .map(|_| {
            let p = Prefix::from_index(rng.gen_range(0..3));
            if p == Prefix::O {
                Tag::O
            } else if typed {
                Tag::typed(p, TYPES[rng.gen_range(0..2)])
            } else {
                Tag::untyped(p)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradLoss {
    Ce,
    Bce2t,
    AucM,
    Auc2t,
    Dice,
    Crf,
}

impl GradLoss {
    pub const ALL: [GradLoss; 6] =
        [GradLoss::Ce, GradLoss::Bce2t, GradLoss::AucM, GradLoss::Auc2t, GradLoss::Dice, GradLoss::Crf];

    pub fn name(self) -> &'static str {
        match self {
            GradLoss::Ce => "CE",
            GradLoss::Bce2t => "BCE-2T",
            GradLoss::AucM => "AUC-M",
            GradLoss::Auc2t => "AUC-2T",
            GradLoss::Dice => "Dice",
            GradLoss::Crf => "CRF-NLL",
        }
    }
}

/// A small model, a batch of tagged sentences and every auxiliary value the
/// losses read.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub params: Params,
    pub crf: CrfParams,
    pub states: [AucState; 2],
    pub lambda: f64,
    pub sentences: Vec<(Vec<usize>, Vec<Tag>)>,
}

pub fn random_fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        emb_dim: rng.gen_range(1..=3),
        window: rng.gen_range(0..=2),
        hidden_dim: rng.gen_range(1..=4),
        vocab_size: rng.gen_range(2..=6),
        init_scale: 1.0,
        seed,
    };
    let mut params = Params::zeros(&config);
    for v in params.values_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut crf = CrfParams::default();
    for v in crf.values_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let state = |rng: &mut ChaCha8Rng| AucState {
        a: rng.gen_range(0.0..1.0),
        b: rng.gen_range(0.0..1.0),
        alpha: rng.gen_range(0.0..1.5),
        margin: rng.gen_range(0.5..1.5),
    };
    let states = [state(&mut rng), state(&mut rng)];
    let lambda = [0.0, 0.5, 1.0, 10.0, 100.0][rng.gen_range(0..5)];

    // Resample until both tasks see both classes so no AUC term drops out.
    loop {
        let n = rng.gen_range(1..=3);
        let sentences: Vec<(Vec<usize>, Vec<Tag>)> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=5);
                let tokens = (0..len).map(|_| rng.gen_range(0..config.vocab_size)).collect();
                (tokens, random_tags(&mut rng, len, false))
            })
            .collect();
        let labels = pooled(&sentences);
        let both = |ls: &[Label]| ls.iter().any(|l| l.is_pos()) && ls.iter().any(|l| !l.is_pos());
        if both(&labels.en) && both(&labels.be) {
            return Fixture { params, crf, states, lambda, sentences };
        }
    }
}

pub fn pooled(sentences: &[(Vec<usize>, Vec<Tag>)]) -> TwoTaskLabels {
    let mut labels = TwoTaskLabels::default();
    for (_, tags) in sentences {
        labels.extend(&to_two_task(tags));
    }
    labels
}

fn gold(tags: &[Tag]) -> Vec<usize> {
    tags.iter().map(|t| t.prefix.index()).collect()
}

/// Loss value and its analytic gradient, laid out as
/// `params ++ crf ++ (a, b, α) per task`.
pub fn loss_and_grad(f: &Fixture, loss: GradLoss) -> (f64, Vec<f64>) {
    let traces: Vec<_> = f.sentences.iter().map(|(t, _)| forward(&f.params, t).unwrap()).collect();
    let mut heads: Vec<HeadGrads> = traces.iter().map(|t| HeadGrads::zeros(t.len())).collect();
    let mut d_crf = CrfParams::default();
    let mut aux = [[0.0; 3]; 2];
    let labels = pooled(&f.sentences);
    let h_en: Vec<f64> = traces.iter().flat_map(|t| t.h_en.clone()).collect();
    let h_be: Vec<f64> = traces.iter().flat_map(|t| t.h_be.clone()).collect();
    let probs: Vec<[f64; NUM_CLASSES]> = traces.iter().flat_map(|t| t.probs.clone()).collect();
    let all_gold: Vec<usize> = f.sentences.iter().flat_map(|(_, tags)| gold(tags)).collect();

    let scatter = |flat: &[f64]| -> Vec<Vec<f64>> {
        let mut off = 0;
        traces
            .iter()
            .map(|t| {
                off += t.len();
                flat[off - t.len()..off].to_vec()
            })
            .collect()
    };

    let value = match loss {
        GradLoss::Ce => {
            let out = ce_multiclass(&probs, &all_gold).unwrap();
            let mut off = 0;
            for (h, t) in heads.iter_mut().zip(&traces) {
                h.cls_logits.copy_from_slice(&out.d_logits[off..off + t.len()]);
                off += t.len();
            }
            out.loss
        }
        GradLoss::Bce2t => {
            let out = bce_two_task(&h_en, &h_be, &labels).unwrap();
            for ((h, e), b) in heads.iter_mut().zip(scatter(&out.d_en_logit)).zip(scatter(&out.d_be_logit)) {
                h.en_logit = e;
                h.be_logit = b;
            }
            out.loss
        }
        GradLoss::AucM => {
            let out = auc_margin_loss(&h_en, &labels.en, &f.states[0]).unwrap();
            for ((h, t), d) in heads.iter_mut().zip(&traces).zip(scatter(&out.d_h)) {
                h.add_en_score_grad(t, &d);
            }
            aux[0] = [out.d_a, out.d_b, out.d_alpha];
            out.loss
        }
        GradLoss::Auc2t => {
            let out = auc_two_task_loss(&h_en, &h_be, &labels, &f.states[0], &f.states[1], f.lambda).unwrap();
            let d_be = out.d_h_be();
            for (((h, t), de), db) in heads.iter_mut().zip(&traces).zip(scatter(out.d_h_en())).zip(scatter(&d_be)) {
                h.add_en_score_grad(t, &de);
                h.add_be_score_grad(t, &db);
            }
            aux = out.aux_grads();
            out.loss
        }
        GradLoss::Dice => {
            let mut total = 0.0;
            let mut d_p = vec![[0.0; NUM_CLASSES]; probs.len()];
            for c in 0..NUM_CLASSES {
                let p: Vec<f64> = probs.iter().map(|q| q[c]).collect();
                let y: Vec<Label> = all_gold.iter().map(|&g| Label::from_bool(g == c)).collect();
                let out = dice_loss(&p, &y, 1.0).unwrap();
                total += out.loss / NUM_CLASSES as f64;
                for (d, g) in d_p.iter_mut().zip(&out.d_p) {
                    d[c] = g / NUM_CLASSES as f64;
                }
            }
            let mut off = 0;
            for (h, t) in heads.iter_mut().zip(&traces) {
                h.add_prob_grad(t, &d_p[off..off + t.len()]);
                off += t.len();
            }
            total
        }
        GradLoss::Crf => {
            let mut total = 0.0;
            for ((h, t), (_, tags)) in heads.iter_mut().zip(&traces).zip(&f.sentences) {
                let out = crf_nll(&t.cls_logits, &f.crf, &gold(tags)).unwrap();
                total += out.loss;
                h.cls_logits = out.d_emissions;
                for (d, s) in d_crf.values_mut().zip(out.d_crf.values()) {
                    *d += s;
                }
            }
            total
        }
    };

    let mut grads = f.params.zeros_like();
    for (t, h) in traces.iter().zip(&heads) {
        grads.add_scaled(&backward(&f.params, t, h).unwrap(), 1.0);
    }
    let mut flat: Vec<f64> = grads.values().copied().collect();
    flat.extend(d_crf.values());
    flat.extend(aux.iter().flatten());
    (value, flat)
}

pub fn loss_value(f: &Fixture, loss: GradLoss) -> f64 {
    loss_and_grad(f, loss).0
}

pub fn scalar_mut(f: &mut Fixture, k: usize) -> &mut f64 {
    let [s0, s1] = &mut f.states;
    f.params
        .values_mut()
        .chain(f.crf.values_mut())
        .chain([&mut s0.a, &mut s0.b, &mut s0.alpha, &mut s1.a, &mut s1.b, &mut s1.alpha])
        .nth(k)
        .expect("scalar index in range")
}

/// Gradient mismatches below this magnitude are judged on an absolute
/// scale: `|a - n| / max(|a|, |n|, floor)`.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const FD_EPS: f64 = 1e-5;

pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Largest error over every scalar the loss depends on, with the index of
/// the worst scalar.
pub fn check_fixture(f: &Fixture, loss: GradLoss) -> (f64, usize) {
    let (_, analytic) = loss_and_grad(f, loss);
    let mut worst = (0.0, 0);
    for (k, &a) in analytic.iter().enumerate() {
        let x0 = {
            let mut g = f.clone();
            *scalar_mut(&mut g, k)
        };
        let numeric = central_difference(
            |x| {
                let mut g = f.clone();
                *scalar_mut(&mut g, k) = x;
                loss_value(&g, loss)
            },
            x0,
            FD_EPS,
        );
        let e = grad_error(a, numeric);
        if e > worst.0 {
            worst = (e, k);
        }
    }
    worst
}

/// Result of one self-check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: impl Into<String>) -> Check {
    Check { name, pass, detail: detail.into() }
}

/// Analytic gradients of every loss against central differences on random
/// small models.
pub fn gradient_check(seed: u64) -> Check {
    let mut worst = (0.0f64, "");
    for loss in GradLoss::ALL {
        for s in 0..20 {
            let (e, _) = check_fixture(&random_fixture(seed.wrapping_add(1000 + s)), loss);
            if e > worst.0 {
                worst = (e, loss.name());
            }
        }
    }
    outcome(
        "gradient correctness",
        worst.0 < 1e-4,
        format!("6 losses x 20 fixtures, worst rel. error {:.2e} ({})", worst.0, worst.1),
    )
}

/// The two-task combination table and BIO → two-task → BIO round trips.
pub fn combination_check(seed: u64) -> Check {
    use Label::{Neg as N, Pos as P};
    let (tags, bad) = combine_predictions(&[P, P, N, N], &[P, N, N, P]).unwrap();
    let table_ok =
        tags.iter().map(|t| t.prefix).collect::<Vec<_>>() == [Prefix::B, Prefix::I, Prefix::O, Prefix::O] && bad == 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut round_trip = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=30);
        let gold = random_tags(&mut rng, len, false);
        let y = to_two_task(&gold);
        let (back, bad) = combine_predictions(&y.en, &y.be).unwrap();
        round_trip += (back == gold && bad == 0) as usize;
    }
    outcome(
        "BIO combination exactness",
        table_ok && round_trip == 1000,
        format!("combination table ok: {table_ok}, round trips {round_trip}/1000"),
    )
}

/// Closed-form inner maximum of the AUC margin loss, stationarity of `a`
/// and `b` at the class means, and nonnegativity of α under the optimizer.
pub fn saddle_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut worst_inner = 0.0f64;
    let mut worst_stationary = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..40);
        let mut y: Vec<Label> = (0..n).map(|_| Label::from_bool(rng.gen_bool(0.3))).collect();
        y[0] = Label::Pos;
        y[1] = Label::Neg;
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mean = |pos: bool| {
            let v: Vec<f64> = h.iter().zip(&y).filter(|(_, l)| l.is_pos() == pos).map(|(h, _)| *h).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (mu_p, mu_n) = (mean(true), mean(false));
        let m = rng.gen_range(0.1..2.0);
        let var = |pos: bool, c: f64| {
            let v: Vec<f64> =
                h.iter().zip(&y).filter(|(_, l)| l.is_pos() == pos).map(|(h, _)| (h - c).powi(2)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        // At a = μ+, b = μ-, maximizing over α ≥ 0 leaves ([m - a + b]₊)².
        let (a, b) = (mu_p, mu_n);
        let closed = (m - a + b).max(0.0).powi(2);
        let at = |alpha: f64| auc_margin_loss(&h, &y, &AucState { a, b, alpha, margin: m }).unwrap().loss;
        let alpha_star = (m - a + b).max(0.0);
        let inner = at(alpha_star) - var(true, a) - var(false, b);
        let is_max = [0.5, 0.9, 1.1, 2.0].iter().all(|k| at(alpha_star * k) <= at(alpha_star) + 1e-12)
            && at(alpha_star + 0.1) <= at(alpha_star) + 1e-12;
        worst_inner = worst_inner.max((inner - closed).abs()).max(if is_max { 0.0 } else { 1.0 });
        let out = auc_margin_loss(&h, &y, &AucState { a, b, alpha: rng.gen_range(0.0..2.0), margin: m }).unwrap();
        worst_stationary = worst_stationary.max(out.d_a.abs()).max(out.d_b.abs());
    }

    let config = ModelConfig { emb_dim: 1, window: 0, hidden_dim: 1, vocab_size: 1, init_scale: 0.1, seed: 0 };
    let mut params = Params::init(&config).unwrap();
    let mut velocity = params.zeros_like();
    let grads = params.zeros_like();
    let mut states = [AucState::default(); 2];
    let mut min_alpha = f64::INFINITY;
    for _ in 0..10_000 {
        let aux: Vec<AuxGrads> = (0..2)
            .map(|_| AuxGrads {
                d_a: rng.gen_range(-1.0..1.0),
                d_b: rng.gen_range(-1.0..1.0),
                d_alpha: rng.gen_range(-5.0..5.0),
                degenerate: rng.gen_bool(0.1),
            })
            .collect();
        primal_dual_step(&mut params, &mut velocity, &mut states, &grads, &aux, 0.1, rng.gen_range(0.01..1.0), 0.9);
        min_alpha = min_alpha.min(states[0].alpha).min(states[1].alpha);
    }
    outcome("saddle-point identities", 
        worst_inner < 1e-9 && worst_stationary < 1e-12 && min_alpha >= 0.0,
        format!(
            "inner-max error {worst_inner:.1e}, |da|,|db| at means {worst_stationary:.1e}, min alpha over 10000 steps {min_alpha:.3}"
        ),
    )
}

/// Log-partition and Viterbi against enumeration of every path.
pub fn crf_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let random_crf = |rng: &mut ChaCha8Rng| {
        let mut c = CrfParams::default();
        for v in c.values_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        c
    };
    let mut worst_z = 0.0f64;
    let mut worst_v = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(1..=5);
        let em: Vec<[f64; NUM_CLASSES]> = (0..len).map(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0))).collect();
        let crf = random_crf(&mut rng);
        worst_z = worst_z.max((log_partition(&em, &crf).unwrap() - brute_log_partition(&em, &crf)).abs());
        let path = crf_viterbi(&em, &crf).unwrap();
        worst_v = worst_v.max((brute_path_score(&em, &crf, &path) - brute_best_score(&em, &crf)).abs());
    }
    let mut worst_sum = 0.0f64;
    for len in 1..=4 {
        for _ in 0..10 {
            let em: Vec<[f64; NUM_CLASSES]> =
                (0..len).map(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0))).collect();
            let crf = random_crf(&mut rng);
            let total: f64 = all_paths(len).iter().map(|p| (-crf_nll(&em, &crf, p).unwrap().loss).exp()).sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
        }
    }
    outcome(
        "CRF oracle equivalence",
        worst_z < 1e-9 && worst_v < 1e-9 && worst_sum < 1e-6,
        format!("logZ error {worst_z:.1e}, Viterbi score gap {worst_v:.1e}, |sum p - 1| {worst_sum:.1e}"),
    )
}

/// Entity counts and WMW AUC against brute-force oracles.
pub fn metric_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    let mut prf_ok = 0;
    for i in 0..500 {
        let typed = i % 2 == 0;
        let n = rng.gen_range(1..6);
        let (mut gold, mut pred): (Vec<Vec<Tag>>, Vec<Vec<Tag>>) = (vec![], vec![]);
        for _ in 0..n {
            let len = rng.gen_range(1..12);
            gold.push(random_loose_tags(&mut rng, len, typed));
            pred.push(random_loose_tags(&mut rng, len, typed));
        }
        let m = entity_prf(&gold, &pred, EvalOptions { typed, ..Default::default() }).unwrap();
        prf_ok += ((m.true_positives, m.predicted, m.gold) == brute_counts(&gold, &pred, typed)) as usize;
    }
    let mut auc_ok = 0;
    for _ in 0..300 {
        let n = rng.gen_range(2..=200);
        let mut y: Vec<Label> = (0..n).map(|_| Label::from_bool(rng.gen_bool(0.4))).collect();
        y[0] = Label::Pos;
        y[1] = Label::Neg;
        let levels = rng.gen_range(2..50);
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        auc_ok += (wmw_auc(&h, &y).unwrap() == brute_auc(&h, &y)) as usize;
    }
    outcome(
        "metric oracle equivalence",
        prf_ok == 500 && auc_ok == 300,
        format!("entity_prf {prf_ok}/500 corpora, wmw_auc exact on {auc_ok}/300"),
    )
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![gradient_check(seed), combination_check(seed), saddle_check(seed), crf_check(seed), metric_check(seed)]
}
