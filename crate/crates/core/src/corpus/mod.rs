//! CoNLL ingestion, BIO tags, the two-task label encoding and vocabularies.

mod bio;
pub mod synthetic;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bio::{to_two_task, validate_bio, BioIssue, BioIssueKind, BioReport, Label, TwoTaskLabels};
pub use vocab::{build_vocab, Vocab, UNK};

/// Number of collapsed BIO classes.
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Prefix {
    B,
    I,
    O,
}

impl Prefix {
    /// Class index used by the 3-class head and the CRF: B=0, I=1, O=2.
    pub fn index(self) -> usize {
        match self {
            Prefix::B => 0,
            Prefix::I => 1,
            Prefix::O => 2,
        }
    }

    pub fn from_index(index: usize) -> Prefix {
        match index {
            0 => Prefix::B,
            1 => Prefix::I,
            2 => Prefix::O,
            _ => panic!("class index {index} out of range"),
        }
    }
}

/// A BIO label with an optional entity type, e.g. `B-PER`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tag {
    pub prefix: Prefix,
    pub entity_type: Option<String>,
}

impl Tag {
    pub const O: Tag = Tag { prefix: Prefix::O, entity_type: None };

    pub fn untyped(prefix: Prefix) -> Tag {
        Tag { prefix, entity_type: None }
    }

    pub fn typed(prefix: Prefix, entity_type: &str) -> Tag {
        Tag { prefix, entity_type: Some(entity_type.to_string()) }
    }

    pub fn is_entity(&self) -> bool {
        self.prefix != Prefix::O
    }

    /// Drops the entity type.
    pub fn collapsed(&self) -> Tag {
        Tag::untyped(self.prefix)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.prefix {
            Prefix::B => "B",
            Prefix::I => "I",
            Prefix::O => "O",
        };
        match &self.entity_type {
            Some(t) => write!(f, "{p}-{t}"),
            None => f.write_str(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidTag(pub String);

impl FromStr for Tag {
    type Err = InvalidTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InvalidTag(s.to_string());
        if s == "O" {
            return Ok(Tag::O);
        }
        let (head, rest) = match s.split_once('-') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let prefix = match head {
            "B" => Prefix::B,
            "I" => Prefix::I,
            _ => return Err(bad()),
        };
        match rest {
            None => Ok(Tag::untyped(prefix)),
            Some(t) if !t.is_empty() && !t.chars().any(char::is_whitespace) => Ok(Tag::typed(prefix, t)),
            Some(_) => Err(bad()),
        }
    }
}

/// One tokenized sentence with its BIO tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>) -> Result<Sentence> {
        if tokens.is_empty() {
            return Err(Error::Contract("sentence must hold at least one token".into()));
        }
        if tokens.len() != tags.len() {
            return Err(Error::Contract(format!("{} tokens but {} tags", tokens.len(), tags.len())));
        }
        Ok(Sentence { tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn entity_tokens(&self) -> usize {
        self.tags.iter().filter(|t| t.is_entity()).count()
    }

    pub fn collapsed_tags(&self) -> Vec<Tag> {
        self.tags.iter().map(Tag::collapsed).collect()
    }
}

/// Token counts per collapsed BIO class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub b: usize,
    pub i: usize,
    pub o: usize,
}

impl LabelStats {
    pub fn total(&self) -> usize {
        self.b + self.i + self.o
    }

    pub fn entity(&self) -> usize {
        self.b + self.i
    }

    /// `(B%, I%, O%)`.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let n = self.total().max(1) as f64;
        (100.0 * self.b as f64 / n, 100.0 * self.i as f64 / n, 100.0 * self.o as f64 / n)
    }

    pub fn entity_pct(&self) -> f64 {
        100.0 * self.entity() as f64 / self.total().max(1) as f64
    }

    fn add(&mut self, tag: &Tag) {
        match tag.prefix {
            Prefix::B => self.b += 1,
            Prefix::I => self.i += 1,
            Prefix::O => self.o += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: String,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(split: impl Into<String>, sentences: Vec<Sentence>) -> Corpus {
        Corpus { split: split.into(), sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn stats(&self) -> LabelStats {
        let mut stats = LabelStats::default();
        for tag in self.sentences.iter().flat_map(|s| &s.tags) {
            stats.add(tag);
        }
        stats
    }

    /// Token counts per full tag string (typed).
    pub fn tag_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for tag in self.sentences.iter().flat_map(|s| &s.tags) {
            *counts.entry(tag.to_string()).or_insert(0) += 1;
        }
        counts
    }

    /// Keeps only entities of `entity_type`; every other entity token becomes `O`.
    pub fn filter_type(&self, entity_type: &str) -> Corpus {
        let sentences = self
            .sentences
            .iter()
            .map(|s| Sentence {
                tokens: s.tokens.clone(),
                tags: s
                    .tags
                    .iter()
                    .map(|t| match t.entity_type.as_deref() {
                        Some(ty) if ty == entity_type => t.clone(),
                        _ => Tag::O,
                    })
                    .collect(),
            })
            .collect();
        Corpus { split: self.split.clone(), sentences }
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus { split: self.split.clone(), sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect() }
    }

    /// Two-column CoNLL text: `token tag`, blank line between sentences.
    pub fn to_conll(&self) -> String {
        let mut out = String::new();
        for (k, sentence) in self.sentences.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            for (token, tag) in sentence.tokens.iter().zip(&sentence.tags) {
                out.push_str(token);
                out.push(' ');
                out.push_str(&tag.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Parse CoNLL text. `column` selects the tag column; `None` means the last
/// column. Every token line must carry the same number of columns as the
/// first token line of the file. `-DOCSTART-` lines are skipped.
pub fn parse_conll(text: &str, column: Option<usize>) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut expected_cols: Option<usize> = None;

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>| {
        if !tokens.is_empty() {
            sentences.push(Sentence { tokens: std::mem::take(tokens), tags: std::mem::take(tags) });
        }
    };

    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let expected = *expected_cols.get_or_insert(cols.len());
        if cols.len() < 2 || cols.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} columns, found {}", expected.max(2), cols.len()),
            });
        }
        let col = column.unwrap_or(cols.len() - 1);
        if col == 0 || col >= cols.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("tag column {col} not available in {} columns", cols.len()),
            });
        }
        let tag = cols[col].parse::<Tag>().map_err(|InvalidTag(tag)| Error::Tag { line: line_no, tag })?;
        tokens.push(cols[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags);

    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Corpus { split: String::new(), sentences })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn parses_two_sentences() {
        let c = parse_conll("EU B-ORG\nrejects O\n\nPeter B-PER", None).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].tags, tags("B-ORG O"));
        assert_eq!(c.sentences[1].tags, tags("B-PER"));
        assert_eq!(c.sentences[0].tokens, vec!["EU", "rejects"]);
    }

    #[test]
    fn missing_tag_is_a_parse_error_at_that_line() {
        let err = parse_conll("EU\nrejects O\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_conll("EU B-ORG\nrejects\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn invalid_tag_reports_line() {
        let err = parse_conll("EU B-ORG\n\nx E-PER\n", None).unwrap_err();
        match err {
            Error::Tag { line, tag } => {
                assert_eq!(line, 3);
                assert_eq!(tag, "E-PER");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse_conll("", None), Err(Error::EmptyCorpus)));
        assert!(matches!(parse_conll("-DOCSTART- -X- O O\n\n", None), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn docstart_and_column_selection() {
        let text = "-DOCSTART- -X- -X- O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\n";
        let c = parse_conll(text, None).unwrap();
        assert_eq!(c.sentences[0].tags, tags("B-ORG O"));
        let c = parse_conll(text, Some(2)).unwrap();
        assert_eq!(c.sentences[0].tags, tags("B-NP B-VP"));
    }

    #[test]
    fn stats_percentages_sum_to_100() {
        let c = parse_conll("a B-X\nb I-X\nc O\nd O\n\ne B-Y\n", None).unwrap();
        let s = c.stats();
        assert_eq!((s.b, s.i, s.o), (2, 1, 2));
        let (b, i, o) = s.percentages();
        assert!((b + i + o - 100.0).abs() < 0.1);
        assert_eq!(c.tag_counts()["B-X"], 1);
    }

    #[test]
    fn filter_keeps_one_type() {
        let c = parse_conll("a B-PER\nb I-PER\nc B-LOC\nd O\n", None).unwrap();
        let f = c.filter_type("LOC");
        assert_eq!(f.sentences[0].tags, tags("O O B-LOC O"));
    }

    #[test]
    fn tag_lexicon() {
        for ok in ["B", "I", "O", "B-PER", "I-MISC"] {
            assert!(ok.parse::<Tag>().is_ok(), "{ok}");
        }
        for bad in ["", "b", "E-PER", "B-", "O-PER", "S", "IB"] {
            assert!(bad.parse::<Tag>().is_err(), "{bad}");
        }
    }

    #[test]
    fn reserializes_identically() {
        let text = "EU B-ORG\nrejects O\n\nPeter B-PER\n";
        assert_eq!(parse_conll(text, None).unwrap().to_conll(), text);
    }
}
