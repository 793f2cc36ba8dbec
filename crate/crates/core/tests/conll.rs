//! Checks against the real CoNLL 2003 English training file. Set
//! `AUCNER_CONLL_TRAIN` to its path and run with `--ignored`.

use aucner::corpus::parse_conll;

#[test]
#[ignore = "needs the CoNLL 2003 training file"]
fn conll_2003_train_statistics() {
    let path = std::env::var("AUCNER_CONLL_TRAIN").expect("AUCNER_CONLL_TRAIN names the eng.train file");
    let corpus = parse_conll(&std::fs::read_to_string(path).unwrap(), None).unwrap();
    assert_eq!(corpus.len(), 14_987);
    assert_eq!(corpus.num_tokens(), 203_621);
    let (b, i, o) = corpus.stats().percentages();
    assert!((b - 11.5).abs() < 0.05, "B {b:.2}%");
    assert!((i - 5.2).abs() < 0.05, "I {i:.2}%");
    assert!((o - 83.3).abs() < 0.05, "O {o:.2}%");
}
