//! Seeded generator for a desk-scale, CoNLL-like NER corpus.
//!
//! Sentences mix filler words drawn from a Zipf-like lexicon with entity
//! mentions of four types (PER, LOC, ORG, MISC). Entity surface forms come
//! from large pseudo-word pools, so most mentions in a small sample are rare
//! words; type-specific cue words precede mentions most of the time, and
//! also occur without a following mention. Roughly a third of the sentences
//! carry no entity at all.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Corpus, Prefix, Sentence, Tag};
use crate::rng::{sub_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub seed: u64,
    /// Probability that a sentence carries no entity.
    pub entity_free_rate: f64,
    /// Probability that a mention is preceded by a cue word.
    pub cue_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_sentences: 3000,
            dev_sentences: 300,
            test_sentences: 600,
            seed: 2023,
            entity_free_rate: 0.35,
            cue_rate: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

const FUNCTION_WORDS: &[&str] = &[
    "the", "of", "to", "and", "a", "in", "for", "on", "that", "with", "was", "is", "by", "at", "it", "as", "from",
    "said", "he", "be", "has", "have", "will", "an", "its", "were", "his", "but", "are", "not", "they", "after", "had",
    "this", "who", "been", "would", "their", "which", "one", "two", "three", "up", "out", "year", "new", "last",
    "first", ".", ",",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "ten", "vo", "sa", "dri", "bel", "gor", "an", "ul", "ze", "pa", "ron", "ti", "mar", "ko",
    "ne", "li", "sto", "ba", "qui", "fen", "do", "lu", "har", "wi", "es", "jo",
];

struct Lexicon {
    filler: Vec<String>,
    per_first: Vec<String>,
    per_last: Vec<String>,
    loc: Vec<String>,
    org: Vec<String>,
    org_suffix: Vec<String>,
    misc: Vec<String>,
}

fn pseudo_word(rng: &mut Rng, syllables: usize, capitalize: bool) -> String {
    let mut w: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    if capitalize {
        let mut c = w.chars();
        let first = c.next().unwrap().to_ascii_uppercase();
        w = std::iter::once(first).chain(c).collect();
    }
    w
}

fn pool(rng: &mut Rng, n: usize, syl: (usize, usize), capitalize: bool, suffix: &str) -> Vec<String> {
    (0..n)
        .map(|_| {
            let k = rng.gen_range(syl.0..=syl.1);
            format!("{}{}", pseudo_word(rng, k, capitalize), suffix)
        })
        .collect()
}

impl Lexicon {
    fn new(seed: u64) -> Lexicon {
        let mut rng = sub_rng(seed, "synthetic/lexicon");
        let mut filler: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        filler.extend(pool(&mut rng, 400, (2, 3), false, ""));
        Lexicon {
            filler,
            per_first: pool(&mut rng, 300, (2, 2), true, ""),
            per_last: pool(&mut rng, 1500, (2, 3), true, ""),
            loc: pool(&mut rng, 900, (2, 3), true, ""),
            org: pool(&mut rng, 700, (2, 3), true, ""),
            org_suffix: ["Corp", "Bank", "United", "Group", "Party", "Council", "Airlines"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            misc: pool(&mut rng, 400, (2, 3), true, "ian"),
        }
    }

    /// Zipf-like draw from the filler lexicon.
    fn filler(&self, rng: &mut Rng) -> &str {
        let n = self.filler.len() as f64;
        let u: f64 = rng.gen();
        // inverse CDF of a 1/x density over [1, n+1)
        let k = ((n + 1.0).powf(u) - 1.0) as usize;
        &self.filler[k.min(self.filler.len() - 1)]
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Per,
    Loc,
    Org,
    Misc,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Per => "PER",
            Kind::Loc => "LOC",
            Kind::Org => "ORG",
            Kind::Misc => "MISC",
        }
    }

    fn cues(self) -> &'static [&'static str] {
        match self {
            Kind::Per => &["Mr", "minister", "coach", "told", "spokesman"],
            Kind::Loc => &["in", "near", "visited", "province", "capital"],
            Kind::Org => &["shares", "club", "firm", "signed", "agency"],
            Kind::Misc => &["league", "cup", "style", "championship"],
        }
    }
}

fn mention(lex: &Lexicon, kind: Kind, rng: &mut Rng) -> Vec<String> {
    match kind {
        Kind::Per => {
            let last = lex.per_last.choose(rng).unwrap().clone();
            if rng.gen_bool(0.6) {
                vec![lex.per_first.choose(rng).unwrap().clone(), last]
            } else {
                vec![last]
            }
        }
        Kind::Loc => {
            let mut m = vec![lex.loc.choose(rng).unwrap().clone()];
            if rng.gen_bool(0.2) {
                m.push(lex.loc.choose(rng).unwrap().clone());
            }
            m
        }
        Kind::Org => {
            let mut m = vec![lex.org.choose(rng).unwrap().clone()];
            if rng.gen_bool(0.5) {
                m.push(lex.org_suffix.choose(rng).unwrap().clone());
            }
            m
        }
        Kind::Misc => vec![lex.misc.choose(rng).unwrap().clone()],
    }
}

fn sentence(lex: &Lexicon, cfg: &SyntheticConfig, rng: &mut Rng) -> Sentence {
    let target_len = rng.gen_range(6..=22usize);
    let mentions = if rng.gen_bool(cfg.entity_free_rate) { 0 } else { rng.gen_range(1..=3usize) };
    let mut slots: Vec<bool> = vec![false; target_len];
    for slot in slots.iter_mut().take(mentions) {
        *slot = true;
    }
    slots.shuffle(rng);

    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for is_mention in slots {
        if !is_mention {
            // stray cue words keep cues from being perfect predictors
            if rng.gen_bool(0.04) {
                let kind = [Kind::Per, Kind::Loc, Kind::Org, Kind::Misc][rng.gen_range(0..4)];
                tokens.push(kind.cues().choose(rng).unwrap().to_string());
            } else {
                tokens.push(lex.filler(rng).to_string());
            }
            tags.push(Tag::O);
            continue;
        }
        let kind = match rng.gen_range(0..10) {
            0..=2 => Kind::Per,
            3..=5 => Kind::Loc,
            6..=7 => Kind::Org,
            _ => Kind::Misc,
        };
        if rng.gen_bool(cfg.cue_rate) {
            tokens.push(kind.cues().choose(rng).unwrap().to_string());
            tags.push(Tag::O);
        }
        for (k, word) in mention(lex, kind, rng).into_iter().enumerate() {
            let prefix = if k == 0 { Prefix::B } else { Prefix::I };
            tokens.push(word);
            tags.push(Tag::typed(prefix, kind.name()));
        }
    }
    Sentence { tokens, tags }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let lex = Lexicon::new(cfg.seed);
    let split = |name: &str, n: usize| {
        let mut rng = sub_rng(cfg.seed, &format!("synthetic/{name}"));
        Corpus::new(name, (0..n).map(|_| sentence(&lex, cfg, &mut rng)).collect())
    };
    SyntheticCorpus {
        train: split("train", cfg.train_sentences),
        dev: split("dev", cfg.dev_sentences),
        test: split("test", cfg.test_sentences),
    }
}
