//! Canonical data model for annotated clinical documents.
//!
//! A [`Document`] owns its raw text, a tokenization with sentence indices,
//! gold entity spans, gold relations, and ADE groups. All referential
//! integrity is checked at construction time, so downstream code can index
//! freely without re-validating.

mod bio;
mod folds;
mod io;

pub use bio::{
    decode_bio, decode_bio_indices, encode_bio, encode_bio_aligned, BioLabel, LabelSet,
    LabelSetKind, SubwordSlot,
};
pub use folds::{split_folds, FoldAssignment, FoldPlan, Role, SplitRatios};
pub use io::{parse_document, read_corpus, read_jsonl, write_jsonl, CorpusFormat};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("document {doc}: {msg}")]
    Integrity { doc: String, msg: String },
    #[error("empty input")]
    EmptyInput,
    #[error("cannot encode overlapping spans: {0}")]
    Encoding(String),
    #[error("fold sizing: {0}")]
    Sizing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    fn integrity(doc: &str, msg: impl Into<String>) -> Self {
        CorpusError::Integrity {
            doc: doc.to_string(),
            msg: msg.into(),
        }
    }
}

/// One token with half-open byte offsets into the document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    #[serde(rename = "t")]
    pub text: String,
    #[serde(rename = "s")]
    pub char_start: usize,
    #[serde(rename = "e")]
    pub char_end: usize,
    #[serde(rename = "sent")]
    pub sentence_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Drug,
    Disorder,
}

impl EntityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntityKind::Drug => "Drug",
            EntityKind::Disorder => "Disorder",
        }
    }
}

impl std::fmt::Display for EntityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An entity mention over a half-open token range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub id: String,
    pub kind: EntityKind,
    #[serde(rename = "ts")]
    pub token_start: usize,
    #[serde(rename = "te")]
    pub token_end: usize,
}

impl EntitySpan {
    pub fn new(id: impl Into<String>, kind: EntityKind, token_start: usize, token_end: usize) -> Self {
        EntitySpan {
            id: id.into(),
            kind,
            token_start,
            token_end,
        }
    }

    /// Number of tokens shared with `other` (token-range intersection).
    pub fn overlap(&self, other: &EntitySpan) -> usize {
        let lo = self.token_start.max(other.token_start);
        let hi = self.token_end.min(other.token_end);
        hi.saturating_sub(lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationLabel {
    Ade,
    Indication,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationAnnotation {
    pub id: String,
    #[serde(rename = "drug")]
    pub drug_id: String,
    #[serde(rename = "disorder")]
    pub disorder_id: String,
    pub label: RelationLabel,
}

/// A set of ADE relations that refer to one clinical event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdeGroup {
    pub id: String,
    #[serde(rename = "members")]
    pub member_relation_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
    #[serde(default)]
    pub relations: Vec<RelationAnnotation>,
    #[serde(default)]
    pub groups: Vec<AdeGroup>,
    #[serde(rename = "doc_ade", default, skip_serializing_if = "Option::is_none")]
    pub doc_ade_flag: Option<bool>,
}

impl Document {
    /// Builds a document and checks every structural invariant.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        tokens: Vec<Token>,
        entities: Vec<EntitySpan>,
        relations: Vec<RelationAnnotation>,
        groups: Vec<AdeGroup>,
        doc_ade_flag: Option<bool>,
    ) -> Result<Self, CorpusError> {
        let doc = Document {
            id: id.into(),
            text: text.into(),
            tokens,
            entities,
            relations,
            groups,
            doc_ade_flag,
        };
        doc.validate()?;
        Ok(doc)
    }

    /// Checks all invariants; parse paths call this on every record.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let id = &self.id;
        let n = self.tokens.len();

        let mut prev_end = 0usize;
        let mut prev_sent = 0usize;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.char_start >= tok.char_end {
                return Err(CorpusError::integrity(
                    id,
                    format!("token {i}: empty or inverted char range"),
                ));
            }
            if tok.char_end > self.text.len() {
                return Err(CorpusError::integrity(
                    id,
                    format!("token {i}: char_end {} past text length", tok.char_end),
                ));
            }
            if i > 0 && tok.char_start < prev_end {
                return Err(CorpusError::integrity(
                    id,
                    format!("token {i}: overlaps or unordered against previous token"),
                ));
            }
            if tok.sentence_index < prev_sent {
                return Err(CorpusError::integrity(
                    id,
                    format!("token {i}: sentence_index decreases"),
                ));
            }
            prev_end = tok.char_end;
            prev_sent = tok.sentence_index;
        }

        let mut entity_ids = HashMap::new();
        let mut claimed = vec![false; n];
        for span in &self.entities {
            if span.token_start >= span.token_end || span.token_end > n {
                return Err(CorpusError::integrity(
                    id,
                    format!("entity {}: bad token range", span.id),
                ));
            }
            if entity_ids.insert(span.id.clone(), span.kind).is_some() {
                return Err(CorpusError::integrity(
                    id,
                    format!("duplicate entity id {}", span.id),
                ));
            }
            for t in span.token_start..span.token_end {
                if claimed[t] {
                    return Err(CorpusError::integrity(
                        id,
                        format!("entity {}: token {t} belongs to two spans", span.id),
                    ));
                }
                claimed[t] = true;
            }
        }

        let mut rel_ids = HashSet::new();
        let mut rel_triples = HashSet::new();
        for rel in &self.relations {
            if !rel_ids.insert(rel.id.clone()) {
                return Err(CorpusError::integrity(
                    id,
                    format!("duplicate relation id {}", rel.id),
                ));
            }
            match entity_ids.get(&rel.drug_id) {
                Some(EntityKind::Drug) => {}
                Some(_) => {
                    return Err(CorpusError::integrity(
                        id,
                        format!("relation {}: {} is not a drug", rel.id, rel.drug_id),
                    ))
                }
                None => {
                    return Err(CorpusError::integrity(
                        id,
                        format!("relation {}: dangling entity id {}", rel.id, rel.drug_id),
                    ))
                }
            }
            match entity_ids.get(&rel.disorder_id) {
                Some(EntityKind::Disorder) => {}
                Some(_) => {
                    return Err(CorpusError::integrity(
                        id,
                        format!("relation {}: {} is not a disorder", rel.id, rel.disorder_id),
                    ))
                }
                None => {
                    return Err(CorpusError::integrity(
                        id,
                        format!("relation {}: dangling entity id {}", rel.id, rel.disorder_id),
                    ))
                }
            }
            if !rel_triples.insert((rel.drug_id.clone(), rel.disorder_id.clone(), rel.label)) {
                return Err(CorpusError::integrity(
                    id,
                    format!("relation {}: duplicate (drug, disorder, label) triple", rel.id),
                ));
            }
        }

        let relation_by_id: HashMap<&str, &RelationAnnotation> =
            self.relations.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut grouped = HashSet::new();
        let mut group_ids = HashSet::new();
        for group in &self.groups {
            if !group_ids.insert(group.id.clone()) {
                return Err(CorpusError::integrity(
                    id,
                    format!("duplicate group id {}", group.id),
                ));
            }
            if group.member_relation_ids.is_empty() {
                return Err(CorpusError::integrity(id, format!("group {} is empty", group.id)));
            }
            for member in &group.member_relation_ids {
                match relation_by_id.get(member.as_str()) {
                    Some(rel) if rel.label == RelationLabel::Ade => {}
                    Some(_) => {
                        return Err(CorpusError::integrity(
                            id,
                            format!("group {}: member {member} is not an ADE relation", group.id),
                        ))
                    }
                    None => {
                        return Err(CorpusError::integrity(
                            id,
                            format!("group {}: dangling relation id {member}", group.id),
                        ))
                    }
                }
                if !grouped.insert(member.clone()) {
                    return Err(CorpusError::integrity(
                        id,
                        format!("relation {member} belongs to more than one group"),
                    ));
                }
            }
        }

        // A false flag contradicts any annotated ADE relation. A true flag is
        // allowed without annotated relations (sparse corpora carry only the
        // document label).
        if self.doc_ade_flag == Some(false) && self.has_ade_relation() {
            return Err(CorpusError::integrity(
                id,
                "doc_ade is false but an ADE relation is annotated",
            ));
        }

        Ok(())
    }

    pub fn entity(&self, id: &str) -> Option<&EntitySpan> {
        self.entities.iter().find(|e| e.id == id)
    }

    fn has_ade_relation(&self) -> bool {
        self.relations.iter().any(|r| r.label == RelationLabel::Ade)
    }

    /// Document-level ADE label: the explicit flag when present, otherwise
    /// derived from the annotated relations.
    pub fn ade_label(&self) -> bool {
        self.doc_ade_flag.unwrap_or_else(|| self.has_ade_relation())
    }

    pub fn sentence_count(&self) -> usize {
        self.tokens.last().map(|t| t.sentence_index + 1).unwrap_or(0)
    }

    /// Sentence index of an entity (sentence of its first token).
    pub fn sentence_of(&self, span: &EntitySpan) -> usize {
        self.tokens[span.token_start].sentence_index
    }

    /// Token indices of one sentence, relying on sentence_index monotonicity.
    pub fn sentence_token_range(&self, sentence: usize) -> std::ops::Range<usize> {
        let start = self
            .tokens
            .partition_point(|t| t.sentence_index < sentence);
        let end = self
            .tokens
            .partition_point(|t| t.sentence_index <= sentence);
        start..end
    }
}
