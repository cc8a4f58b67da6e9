//! BIO label codec for entity spans.

use serde::{Deserialize, Serialize};

use super::{CorpusError, Document, EntityKind, EntitySpan};

/// A semantic BIO label over the two entity kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioLabel {
    Outside,
    Begin(EntityKind),
    Inside(EntityKind),
}

impl BioLabel {
    pub fn name(&self) -> String {
        match self {
            BioLabel::Outside => "O".to_string(),
            BioLabel::Begin(k) => format!("B-{k}"),
            BioLabel::Inside(k) => format!("I-{k}"),
        }
    }

    pub fn parse(s: &str) -> Option<BioLabel> {
        match s {
            "O" => Some(BioLabel::Outside),
            "B-Drug" => Some(BioLabel::Begin(EntityKind::Drug)),
            "I-Drug" => Some(BioLabel::Inside(EntityKind::Drug)),
            "B-Disorder" => Some(BioLabel::Begin(EntityKind::Disorder)),
            "I-Disorder" => Some(BioLabel::Inside(EntityKind::Disorder)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSetKind {
    Core5,
    Extended8,
}

/// An ordered label inventory mapping BIO labels to emission indices.
///
/// The core set holds the five labels the tagger trains over. The extended
/// set adds the `[PAD]`, `[CLS]`, and `X` rows that subword encoders emit;
/// those three never come out of this engine's own tagger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    kind: LabelSetKind,
    labels: Vec<String>,
}

impl LabelSet {
    pub fn core5() -> Self {
        LabelSet {
            kind: LabelSetKind::Core5,
            labels: ["O", "B-Drug", "I-Drug", "B-Disorder", "I-Disorder"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn extended8() -> Self {
        LabelSet {
            kind: LabelSetKind::Extended8,
            labels: [
                "[PAD]",
                "[CLS]",
                "X",
                "O",
                "I-Disorder",
                "B-Disorder",
                "I-Drug",
                "B-Drug",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    pub fn of_kind(kind: LabelSetKind) -> Self {
        match kind {
            LabelSetKind::Core5 => LabelSet::core5(),
            LabelSetKind::Extended8 => LabelSet::extended8(),
        }
    }

    pub fn kind(&self) -> LabelSetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of_name(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn index_of(&self, label: BioLabel) -> usize {
        self.index_of_name(&label.name())
            .expect("both label sets contain every BIO label")
    }

    /// The BIO label at an index; `None` for `[PAD]`/`[CLS]`/`X`.
    pub fn bio_label_at(&self, index: usize) -> Option<BioLabel> {
        BioLabel::parse(&self.labels[index])
    }

    pub fn encode(&self, labels: &[BioLabel]) -> Vec<usize> {
        labels.iter().map(|l| self.index_of(*l)).collect()
    }

    /// Widens a core5 probability row to extended8 columns, zero-filling the
    /// `[PAD]`/`[CLS]`/`X` positions.
    pub fn widen_core_probs(core_row: &[f64]) -> Vec<f64> {
        let core = LabelSet::core5();
        let ext = LabelSet::extended8();
        debug_assert_eq!(core_row.len(), core.len());
        let mut out = vec![0.0; ext.len()];
        for (i, name) in core.names().iter().enumerate() {
            let j = ext.index_of_name(name).unwrap();
            out[j] = core_row[i];
        }
        out
    }
}

/// Position of one subword in an encoder's input, relative to corpus tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubwordSlot {
    Pad,
    Cls,
    /// First subword of corpus token `i`.
    Token(usize),
    /// Non-initial subword; labelled `X`.
    Continuation,
}

/// Per-token BIO labels: first token of a span gets `B-kind`, the rest
/// `I-kind`, everything else `O`.
pub fn encode_bio(doc: &Document) -> Result<Vec<BioLabel>, CorpusError> {
    let mut labels = vec![BioLabel::Outside; doc.tokens.len()];
    let mut claimed = vec![false; doc.tokens.len()];
    for span in &doc.entities {
        for t in span.token_start..span.token_end {
            if claimed[t] {
                return Err(CorpusError::Encoding(format!(
                    "token {t} of document {} is covered twice",
                    doc.id
                )));
            }
            claimed[t] = true;
            labels[t] = if t == span.token_start {
                BioLabel::Begin(span.kind)
            } else {
                BioLabel::Inside(span.kind)
            };
        }
    }
    Ok(labels)
}

/// Extended8 indices for a subword-aligned input. Initial subwords carry the
/// corpus token's BIO label, continuations get `X`, padding and the class
/// slot their special labels.
pub fn encode_bio_aligned(
    doc: &Document,
    alignment: &[SubwordSlot],
) -> Result<Vec<usize>, CorpusError> {
    let core = encode_bio(doc)?;
    let ext = LabelSet::extended8();
    alignment
        .iter()
        .map(|slot| match slot {
            SubwordSlot::Pad => Ok(ext.index_of_name("[PAD]").unwrap()),
            SubwordSlot::Cls => Ok(ext.index_of_name("[CLS]").unwrap()),
            SubwordSlot::Continuation => Ok(ext.index_of_name("X").unwrap()),
            SubwordSlot::Token(i) => {
                let label = core.get(*i).ok_or_else(|| {
                    CorpusError::Encoding(format!(
                        "alignment references token {i} past document {}",
                        doc.id
                    ))
                })?;
                Ok(ext.index_of(*label))
            }
        })
        .collect()
}

/// Inverse of [`encode_bio`] with a repair rule: an `I` without a compatible
/// predecessor starts a new span of its kind, so decoding is total.
pub fn decode_bio(labels: &[BioLabel]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(EntityKind, usize)> = None;
    for (t, label) in labels.iter().enumerate() {
        match *label {
            BioLabel::Outside => {
                if let Some((kind, start)) = open.take() {
                    spans.push((kind, start, t));
                }
            }
            BioLabel::Begin(kind) => {
                if let Some((k, start)) = open.take() {
                    spans.push((k, start, t));
                }
                open = Some((kind, t));
            }
            BioLabel::Inside(kind) => match open {
                Some((k, _)) if k == kind => {}
                _ => {
                    // stray I: repair by starting a new span here
                    if let Some((k, start)) = open.take() {
                        spans.push((k, start, t));
                    }
                    open = Some((kind, t));
                }
            },
        }
    }
    if let Some((kind, start)) = open {
        spans.push((kind, start, labels.len()));
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(i, (kind, start, end))| EntitySpan::new(format!("s{i}"), kind, start, end))
        .collect()
}

/// [`decode_bio`] over emission indices of a core5 label set.
pub fn decode_bio_indices(indices: &[usize], set: &LabelSet) -> Vec<EntitySpan> {
    let labels: Vec<BioLabel> = indices
        .iter()
        .map(|&i| set.bio_label_at(i).expect("core5 indices are all BIO labels"))
        .collect();
    decode_bio(&labels)
}
