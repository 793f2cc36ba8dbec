use serde::{Deserialize, Serialize};

use super::{Prefix, Tag};

/// A binary label, `+1` or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn from_bool(positive: bool) -> Label {
        if positive {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn is_pos(self) -> bool {
        self == Label::Pos
    }

    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }
}

/// Parallel entity-membership and entity-beginning labels.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TwoTaskLabels {
    pub en: Vec<Label>,
    pub be: Vec<Label>,
}

impl TwoTaskLabels {
    pub fn len(&self) -> usize {
        self.en.len()
    }

    pub fn is_empty(&self) -> bool {
        self.en.is_empty()
    }

    pub fn extend(&mut self, other: &TwoTaskLabels) {
        self.en.extend_from_slice(&other.en);
        self.be.extend_from_slice(&other.be);
    }
}

/// Maps BIO tags to the two binary tasks, discarding entity types.
pub fn to_two_task(tags: &[Tag]) -> TwoTaskLabels {
    TwoTaskLabels {
        en: tags.iter().map(|t| Label::from_bool(t.is_entity())).collect(),
        be: tags.iter().map(|t| Label::from_bool(t.prefix == Prefix::B)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BioIssueKind {
    /// Not of the form `B[-TYPE]`, `I[-TYPE]` or `O`.
    InvalidTag,
    /// `I` at sentence start or after `O`.
    IOutsideEntity,
    /// `I-X` after `B-Y` or `I-Y` with `X != Y`.
    TypeMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioIssue {
    pub position: usize,
    pub kind: BioIssueKind,
}

impl BioIssue {
    pub fn is_error(&self) -> bool {
        self.kind == BioIssueKind::InvalidTag
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BioReport {
    pub issues: Vec<BioIssue>,
}

impl BioReport {
    /// Every tag is lexically valid.
    pub fn is_valid(&self) -> bool {
        !self.issues.iter().any(BioIssue::is_error)
    }

    /// Valid and every `I` continues a compatible predecessor.
    pub fn is_strict(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn warnings(&self) -> impl Iterator<Item = &BioIssue> {
        self.issues.iter().filter(|i| !i.is_error())
    }
}

pub fn validate_bio<S: AsRef<str>>(tags: &[S]) -> BioReport {
    let mut issues = Vec::new();
    let mut prev: Option<Tag> = None;
    for (position, raw) in tags.iter().enumerate() {
        let tag = match raw.as_ref().parse::<Tag>() {
            Ok(t) => t,
            Err(_) => {
                issues.push(BioIssue { position, kind: BioIssueKind::InvalidTag });
                prev = None;
                continue;
            }
        };
        if tag.prefix == Prefix::I {
            match &prev {
                Some(p) if p.prefix != Prefix::O => {
                    if p.entity_type != tag.entity_type {
                        issues.push(BioIssue { position, kind: BioIssueKind::TypeMismatch });
                    }
                }
                _ => issues.push(BioIssue { position, kind: BioIssueKind::IOutsideEntity }),
            }
        }
        prev = Some(tag);
    }
    BioReport { issues }
}
