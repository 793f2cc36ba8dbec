use aucner::corpus::{parse_conll, to_two_task, Corpus, Label, Sentence, Tag, TwoTaskLabels};
use aucner::evaluation::{combine_predictions, entity_prf, wmw_auc, EvalOptions};
use aucner::objectives::{auc_margin_loss, auc_two_task_loss, bce_two_task, ce_multiclass, dice_loss, AucState};
use aucner::oracle::{brute_auc, brute_counts};
use aucner::verify::tags_from_choices;
use proptest::prelude::*;

fn bio(max_len: usize, typed: bool) -> impl Strategy<Value = Vec<Tag>> {
    prop::collection::vec((0u8..3, 0usize..3), 1..=max_len).prop_map(move |c| tags_from_choices(&c, typed))
}

fn scored(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
    prop::collection::vec((0u32..20, any::<bool>()), 2..=max_len).prop_map(|v| {
        let mut labels: Vec<Label> = v.iter().map(|&(_, y)| Label::from_bool(y)).collect();
        labels[0] = Label::Pos;
        labels[1] = Label::Neg;
        (v.iter().map(|&(s, _)| s as f64 / 20.0).collect(), labels)
    })
}

fn permute<T: Clone>(v: &[T], keys: &[u64]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by_key(|&i| (keys[i % keys.len()], i));
    idx.iter().map(|&i| v[i].clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn two_task_round_trip(tags in bio(40, false)) {
        let y = to_two_task(&tags);
        let (back, inconsistent) = combine_predictions(&y.en, &y.be).unwrap();
        prop_assert_eq!(back, tags);
        prop_assert_eq!(inconsistent, 0);
    }

    #[test]
    fn begin_implies_entity(tags in bio(40, true)) {
        let y = to_two_task(&tags);
        for (en, be) in y.en.iter().zip(&y.be) {
            prop_assert!(!be.is_pos() || en.is_pos());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conll_round_trip(sentences in prop::collection::vec(bio(12, true), 1..6)) {
        let corpus = Corpus::new(
            "train",
            sentences
                .iter()
                .enumerate()
                .map(|(s, tags)| {
                    let words = (0..tags.len()).map(|i| format!("w{s}_{i}")).collect();
                    Sentence::new(words, tags.clone()).unwrap()
                })
                .collect(),
        );
        let text = corpus.to_conll();
        let back = parse_conll(&text, None).unwrap();
        prop_assert_eq!(&back.sentences, &corpus.sentences);
        prop_assert_eq!(back.to_conll(), text);
    }

    #[test]
    fn wmw_matches_pair_count((h, y) in scored(60)) {
        prop_assert_eq!(wmw_auc(&h, &y).unwrap(), brute_auc(&h, &y));
    }

    #[test]
    fn wmw_ignores_monotone_transforms((h, y) in scored(60), shift in -5.0f64..5.0) {
        let g: Vec<f64> = h.iter().map(|x| (3.0 * x + shift).exp()).collect();
        prop_assert!((wmw_auc(&h, &y).unwrap() - wmw_auc(&g, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entity_prf_matches_oracle(
        pairs in prop::collection::vec((1usize..10).prop_flat_map(|n| (
            prop::collection::vec((0u8..3, 0usize..3), n),
            prop::collection::vec((0u8..3, 0usize..3), n),
        )), 1..6),
        typed in any::<bool>(),
    ) {
        let gold: Vec<Vec<Tag>> = pairs.iter().map(|(g, _)| tags_from_choices(g, true)).collect();
        let pred: Vec<Vec<Tag>> = pairs.iter().map(|(_, p)| tags_from_choices(p, true)).collect();
        let opts = EvalOptions { typed, ..Default::default() };
        let m = entity_prf(&gold, &pred, opts).unwrap();
        prop_assert_eq!((m.true_positives, m.predicted, m.gold), brute_counts(&gold, &pred, typed));

        let swapped = entity_prf(&pred, &gold, opts).unwrap();
        prop_assert_eq!(swapped.precision, m.recall);
        prop_assert_eq!(swapped.recall, m.precision);
        prop_assert_eq!(swapped.f1, m.f1);
    }

    #[test]
    fn losses_ignore_token_order(
        rows in prop::collection::vec((0.01f64..0.99, 0.01f64..0.99, 0usize..3, prop::array::uniform3(0.01f64..1.0)), 4..30),
        keys in prop::collection::vec(any::<u64>(), 30),
    ) {
        let mut rows = rows;
        rows[0].2 = 0;
        rows[1].2 = 1;
        rows[2].2 = 2;
        let eval = |rows: &[(f64, f64, usize, [f64; 3])]| {
            let h_en: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let h_be: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let gold: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let probs: Vec<[f64; 3]> = rows
                .iter()
                .map(|r| {
                    let s: f64 = r.3.iter().sum();
                    [r.3[0] / s, r.3[1] / s, r.3[2] / s]
                })
                .collect();
            let labels = TwoTaskLabels {
                en: gold.iter().map(|&g| Label::from_bool(g != 2)).collect(),
                be: gold.iter().map(|&g| Label::from_bool(g == 0)).collect(),
            };
            let state = AucState { a: 0.7, b: 0.2, alpha: 0.4, margin: 1.0 };
            let p0: Vec<f64> = probs.iter().map(|p| p[0]).collect();
            [
                ce_multiclass(&probs, &gold).unwrap().loss,
                bce_two_task(&h_en, &h_be, &labels).unwrap().loss,
                auc_margin_loss(&h_en, &labels.en, &state).unwrap().loss,
                auc_two_task_loss(&h_en, &h_be, &labels, &state, &state, 10.0).unwrap().loss,
                dice_loss(&p0, &labels.be, 1.0).unwrap().loss,
            ]
        };
        let before = eval(&rows);
        let after = eval(&permute(&rows, &keys));
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
