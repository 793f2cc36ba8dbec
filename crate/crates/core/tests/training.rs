use aucner::corpus::{build_vocab, Corpus, Label, Prefix, Sentence, Tag};
use aucner::evaluation::wmw_auc;
use aucner::model::{forward, ModelConfig, Params};
use aucner::objectives::{auc_margin_loss, AucState};
use aucner::sampling::sample_partition;
use aucner::training::{
    combine_task_gradients, encode, primal_dual_step, train, AuxGrads, LossKind, TrainConfig, TrainedModel,
};
use proptest::prelude::*;

fn sentence(words: &[&str]) -> Sentence {
    // Capitalized words are single-token entities, everything else is O.
    let tags = words
        .iter()
        .map(|w| if w.starts_with(char::is_uppercase) { Tag::typed(Prefix::B, "PER") } else { Tag::O })
        .collect();
    Sentence::new(words.iter().map(|w| w.to_string()).collect(), tags).unwrap()
}

fn toy() -> Corpus {
    Corpus::new(
        "train",
        vec![
            sentence(&["Alice", "met", "Bob", "today"]),
            sentence(&["the", "cat", "sat"]),
            sentence(&["Bob", "saw", "the", "Alice"]),
        ],
    )
}

fn run(config: TrainConfig, corpus: &Corpus) -> TrainedModel {
    let partition = sample_partition(corpus, corpus.len(), 0).unwrap();
    let vocab = build_vocab(corpus, 1);
    let model = ModelConfig { vocab_size: vocab.len(), seed: config.seed, ..ModelConfig::default() };
    train(&config, corpus, &partition, "toy", corpus, corpus, &vocab, &model).unwrap()
}

#[test]
fn ce_loss_falls_in_the_first_epochs() {
    let config =
        TrainConfig { loss_kind: LossKind::Ce, lr_primal: 0.05, momentum: 0.0, epochs: 5, ..TrainConfig::default() };
    let r = run(config, &toy()).record;
    let losses: Vec<f64> = r.trajectory.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn auc_two_task_runs_are_reproducible() {
    let config = TrainConfig { loss_kind: LossKind::Auc2t, epochs: 10, seed: 7, ..TrainConfig::default() };
    let a = run(config.clone(), &toy()).record;
    let b = run(config, &toy()).record;
    assert_eq!(a.metrics_fingerprint(), b.metrics_fingerprint());
}

#[test]
fn comauc_alternates_step_kinds() {
    let config = TrainConfig { loss_kind: LossKind::Comauc2t, epochs: 7, batch_sentences: 1, ..TrainConfig::default() };
    let steps = run(config, &toy()).record.steps;
    assert_eq!(steps.total, 21);
    assert_eq!(steps.ce, 11);
    assert_eq!(steps.auc, 10);
}

#[test]
fn every_method_trains_on_the_toy() {
    for kind in LossKind::ALL {
        let config = TrainConfig { loss_kind: kind, epochs: 3, ..TrainConfig::default() };
        let r = run(config, &toy()).record;
        assert_eq!(r.trajectory.len(), 3, "{kind}");
        assert_eq!(r.steps.rejected, 0, "{kind}");
        assert!(r.final_states.iter().all(|s| s.alpha >= 0.0), "{kind}");
    }
}

#[test]
fn separable_entities_reach_perfect_auc() {
    let corpus = toy();
    let config = TrainConfig { loss_kind: LossKind::Auc2t, epochs: 200, ..TrainConfig::default() };
    let trained = run(config, &corpus);
    let vocab = build_vocab(&corpus, 1);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for s in encode(&corpus, &vocab) {
        scores.extend(forward(&trained.params, &s.tokens).unwrap().h_en);
        labels.extend(s.two_task.en);
    }
    assert_eq!(wmw_auc(&scores, &labels).unwrap(), 1.0);
}

#[test]
fn auxiliaries_settle_on_class_means_with_frozen_weights() {
    let h = [0.9, 0.8, 0.75, 0.3, 0.2, 0.1, 0.4];
    let y: Vec<Label> = [1, 1, 1, 0, 0, 0, 0].iter().map(|&v| Label::from_bool(v == 1)).collect();
    let (mu_p, mu_n) = (0.8166666666666667, 0.25);
    let config = ModelConfig { emb_dim: 1, window: 0, hidden_dim: 1, vocab_size: 1, init_scale: 0.1, seed: 0 };
    let mut params = Params::init(&config).unwrap();
    let frozen = params.clone();
    let mut velocity = params.zeros_like();
    let zero = params.zeros_like();
    let mut states = [AucState { a: 0.0, b: 1.0, alpha: 0.0, margin: 1.0 }];
    for _ in 0..500 {
        let out = auc_margin_loss(&h, &y, &states[0]).unwrap();
        let aux = [AuxGrads { d_a: out.d_a, d_b: out.d_b, d_alpha: out.d_alpha, degenerate: false }];
        primal_dual_step(&mut params, &mut velocity, &mut states, &zero, &aux, 0.1, 0.1, 0.9);
    }
    assert_eq!(params, frozen);
    assert!((states[0].a - mu_p).abs() < 1e-3, "a = {}", states[0].a);
    assert!((states[0].b - mu_n).abs() < 1e-3, "b = {}", states[0].b);
    // the dual variable tracks the margin violation m - (μ+ - μ-)
    assert!((states[0].alpha - (1.0 - mu_p + mu_n)).abs() < 1e-2, "alpha = {}", states[0].alpha);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn alpha_never_goes_negative(
        grads in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -10.0f64..10.0, any::<bool>()), 1..50),
        lr_dual in 0.001f64..2.0,
    ) {
        let config = ModelConfig { emb_dim: 1, window: 0, hidden_dim: 1, vocab_size: 1, init_scale: 0.1, seed: 0 };
        let mut params = Params::init(&config).unwrap();
        let mut velocity = params.zeros_like();
        let zero = params.zeros_like();
        let mut states = [AucState::initial(1.0)];
        for (d_a, d_b, d_alpha, degenerate) in grads {
            let before = states[0].alpha;
            let aux = [AuxGrads { d_a, d_b, d_alpha, degenerate }];
            primal_dual_step(&mut params, &mut velocity, &mut states, &zero, &aux, 0.1, lr_dual, 0.9);
            prop_assert!(states[0].alpha >= 0.0);
            if degenerate {
                prop_assert_eq!(states[0].alpha, before);
            }
        }
    }

    #[test]
    fn zero_lambda_ignores_the_begin_task(seed in any::<u64>()) {
        let config = ModelConfig { emb_dim: 2, window: 1, hidden_dim: 3, vocab_size: 4, init_scale: 1.0, seed };
        let g_en = Params::init(&config).unwrap();
        let g_be = Params::init(&ModelConfig { seed: seed.wrapping_add(1), ..config }).unwrap();
        let combined = combine_task_gradients(&g_en, &g_be, 0.0);
        prop_assert_eq!(combined, g_en);
    }
}
