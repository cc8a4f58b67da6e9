//! Candidate drug–disorder pairs and their relation-classification features.
//!
//! Candidates are all (drug, disorder) combinations whose sentences lie at
//! most `window` sentences apart. Features concatenate context, entity, and
//! label-probability segments in a fixed layout; entities pool their tokens
//! by arithmetic mean.

use std::collections::HashMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, EntityKind, EntitySpan, RelationAnnotation, RelationLabel};

#[derive(Debug, Error)]
pub enum PairsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    GoldEntities,
    PredictedEntities,
}

/// One candidate drug–disorder pair with its gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub doc_id: String,
    pub drug: EntitySpan,
    pub disorder: EntitySpan,
    pub sentence_distance: usize,
    pub gold_ade: bool,
    pub gold_indication: bool,
    pub source: PairSource,
}

/// All drug–disorder combinations within the sentence window, ordered by
/// (drug token start, disorder token start). Labels start false; see
/// [`derive_pair_labels`].
pub fn generate_candidates(
    doc: &Document,
    entities: &[EntitySpan],
    window: usize,
    source: PairSource,
) -> Vec<CandidatePair> {
    let mut drugs: Vec<&EntitySpan> =
        entities.iter().filter(|e| e.kind == EntityKind::Drug).collect();
    let mut disorders: Vec<&EntitySpan> =
        entities.iter().filter(|e| e.kind == EntityKind::Disorder).collect();
    drugs.sort_by_key(|e| e.token_start);
    disorders.sort_by_key(|e| e.token_start);

    let mut pairs = Vec::new();
    for drug in &drugs {
        let drug_sent = doc.sentence_of(drug);
        for disorder in &disorders {
            let dis_sent = doc.sentence_of(disorder);
            let distance = drug_sent.abs_diff(dis_sent);
            if distance <= window {
                pairs.push(CandidatePair {
                    doc_id: doc.id.clone(),
                    drug: (*drug).clone(),
                    disorder: (*disorder).clone(),
                    sentence_distance: distance,
                    gold_ade: false,
                    gold_indication: false,
                    source,
                });
            }
        }
    }
    pairs
}

/// Maps each predicted span to the gold span of the same kind with the
/// largest token overlap (ties to the smallest gold start); spans without
/// overlap stay unmapped.
pub fn align_entities(predicted: &[EntitySpan], gold: &[EntitySpan]) -> HashMap<String, String> {
    let mut mapping = HashMap::new();
    for pred in predicted {
        let mut best: Option<(&EntitySpan, usize)> = None;
        for g in gold {
            if g.kind != pred.kind {
                continue;
            }
            let overlap = g.overlap(pred);
            if overlap == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, bo)) => overlap > bo || (overlap == bo && g.token_start < bg.token_start),
            };
            if better {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            mapping.insert(pred.id.clone(), g.id.clone());
        }
    }
    mapping
}

/// Fills `gold_ade`/`gold_indication` from the document's relations. Pairs
/// from gold entities use their own ids; predicted pairs go through the
/// alignment, and an unaligned end leaves both labels false.
pub fn derive_pair_labels(
    pairs: &mut [CandidatePair],
    relations: &[RelationAnnotation],
    alignment: &HashMap<String, String>,
) {
    let mut ade = std::collections::HashSet::new();
    let mut indication = std::collections::HashSet::new();
    for rel in relations {
        match rel.label {
            RelationLabel::Ade => ade.insert((rel.drug_id.as_str(), rel.disorder_id.as_str())),
            RelationLabel::Indication => {
                indication.insert((rel.drug_id.as_str(), rel.disorder_id.as_str()))
            }
        };
    }
    for pair in pairs {
        let (drug_gold, disorder_gold) = match pair.source {
            PairSource::GoldEntities => {
                (Some(pair.drug.id.as_str()), Some(pair.disorder.id.as_str()))
            }
            PairSource::PredictedEntities => (
                alignment.get(&pair.drug.id).map(String::as_str),
                alignment.get(&pair.disorder.id).map(String::as_str),
            ),
        };
        match (drug_gold, disorder_gold) {
            (Some(d), Some(s)) => {
                pair.gold_ade = ade.contains(&(d, s));
                pair.gold_indication = indication.contains(&(d, s));
            }
            _ => {
                pair.gold_ade = false;
                pair.gold_indication = false;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    /// 2·768 contexts + 2·768 entities + 2·8 probabilities = 3088.
    Transformer3088,
    /// 4·300 static + 4·256 hidden + 2·5 probabilities = 2234.
    Bilstm2234,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

impl LayoutKind {
    pub fn segments(&self) -> Vec<Segment> {
        let widths: Vec<(&'static str, usize)> = match self {
            LayoutKind::Transformer3088 => vec![
                ("context_drug_sentence", 768),
                ("context_disorder_sentence", 768),
                ("entity_drug", 768),
                ("entity_disorder", 768),
                ("probs_drug", 8),
                ("probs_disorder", 8),
            ],
            LayoutKind::Bilstm2234 => vec![
                ("static_drug", 300),
                ("static_disorder", 300),
                ("static_drug_sentence", 300),
                ("static_disorder_sentence", 300),
                ("hidden_drug", 256),
                ("hidden_disorder", 256),
                ("hidden_drug_sentence", 256),
                ("hidden_disorder_sentence", 256),
                ("probs_drug", 5),
                ("probs_disorder", 5),
            ],
        };
        let mut offset = 0;
        widths
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment { name, offset, len };
                offset += len;
                seg
            })
            .collect()
    }

    pub fn total_len(&self) -> usize {
        self.segments().iter().map(|s| s.len).sum()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LayoutKind::Transformer3088 => "transformer3088",
            LayoutKind::Bilstm2234 => "bilstm2234",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: LayoutKind,
}

fn mean_rows(m: ArrayView2<'_, f64>, range: std::ops::Range<usize>) -> Array1<f64> {
    debug_assert!(range.end <= m.nrows() && range.start < range.end);
    m.slice(ndarray::s![range, ..]).mean_axis(Axis(0)).unwrap()
}

fn check_width(name: &str, m: ArrayView2<'_, f64>, want: usize) -> Result<(), PairsError> {
    if m.ncols() != want {
        return Err(PairsError::Shape(format!(
            "{name} has width {}, layout expects {want}",
            m.ncols()
        )));
    }
    Ok(())
}

fn check_rows(name: &str, m: ArrayView2<'_, f64>, tokens: usize) -> Result<(), PairsError> {
    if m.nrows() != tokens {
        return Err(PairsError::Shape(format!(
            "{name} has {} rows for {tokens} tokens",
            m.nrows()
        )));
    }
    Ok(())
}

/// Transformer-path features: per-sentence context rows, contextual token
/// rows pooled per entity, and 8-column probability rows pooled per entity.
pub fn assemble_transformer_features(
    pair: &CandidatePair,
    doc: &Document,
    token_vectors: ArrayView2<'_, f64>,
    sentence_contexts: ArrayView2<'_, f64>,
    prob_rows: ArrayView2<'_, f64>,
) -> Result<FeatureVector, PairsError> {
    check_width("token vectors", token_vectors, 768)?;
    check_width("sentence contexts", sentence_contexts, 768)?;
    check_width("probability rows", prob_rows, 8)?;
    check_rows("token vectors", token_vectors, doc.tokens.len())?;
    check_rows("probability rows", prob_rows, doc.tokens.len())?;
    if sentence_contexts.nrows() != doc.sentence_count() {
        return Err(PairsError::Shape(format!(
            "{} sentence contexts for {} sentences",
            sentence_contexts.nrows(),
            doc.sentence_count()
        )));
    }

    let drug_range = pair.drug.token_start..pair.drug.token_end;
    let disorder_range = pair.disorder.token_start..pair.disorder.token_end;
    let mut values = Vec::with_capacity(LayoutKind::Transformer3088.total_len());
    values.extend(sentence_contexts.row(doc.sentence_of(&pair.drug)).iter());
    values.extend(sentence_contexts.row(doc.sentence_of(&pair.disorder)).iter());
    values.extend(mean_rows(token_vectors, drug_range.clone()).iter());
    values.extend(mean_rows(token_vectors, disorder_range.clone()).iter());
    values.extend(mean_rows(prob_rows, drug_range).iter());
    values.extend(mean_rows(prob_rows, disorder_range).iter());
    debug_assert_eq!(values.len(), 3088);
    Ok(FeatureVector {
        values,
        layout: LayoutKind::Transformer3088,
    })
}

/// Bi-LSTM-path features: static and hidden rows pooled per entity and per
/// entity sentence, plus 5-column probability rows pooled per entity.
pub fn assemble_bilstm_features(
    pair: &CandidatePair,
    doc: &Document,
    static_vectors: ArrayView2<'_, f64>,
    hidden_states: ArrayView2<'_, f64>,
    prob_rows: ArrayView2<'_, f64>,
) -> Result<FeatureVector, PairsError> {
    check_width("static vectors", static_vectors, 300)?;
    check_width("hidden states", hidden_states, 256)?;
    check_width("probability rows", prob_rows, 5)?;
    for (name, m) in [
        ("static vectors", static_vectors),
        ("hidden states", hidden_states),
        ("probability rows", prob_rows),
    ] {
        check_rows(name, m, doc.tokens.len())?;
    }

    let drug_range = pair.drug.token_start..pair.drug.token_end;
    let disorder_range = pair.disorder.token_start..pair.disorder.token_end;
    let drug_sent = doc.sentence_token_range(doc.sentence_of(&pair.drug));
    let disorder_sent = doc.sentence_token_range(doc.sentence_of(&pair.disorder));

    let mut values = Vec::with_capacity(LayoutKind::Bilstm2234.total_len());
    values.extend(mean_rows(static_vectors, drug_range.clone()).iter());
    values.extend(mean_rows(static_vectors, disorder_range.clone()).iter());
    values.extend(mean_rows(static_vectors, drug_sent.clone()).iter());
    values.extend(mean_rows(static_vectors, disorder_sent.clone()).iter());
    values.extend(mean_rows(hidden_states, drug_range.clone()).iter());
    values.extend(mean_rows(hidden_states, disorder_range.clone()).iter());
    values.extend(mean_rows(hidden_states, drug_sent).iter());
    values.extend(mean_rows(hidden_states, disorder_sent).iter());
    values.extend(mean_rows(prob_rows, drug_range).iter());
    values.extend(mean_rows(prob_rows, disorder_range).iter());
    debug_assert_eq!(values.len(), 2234);
    Ok(FeatureVector {
        values,
        layout: LayoutKind::Bilstm2234,
    })
}

/// JSONL record paired row-for-row with the feature matrix sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub doc: String,
    pub drug_id: String,
    pub disorder_id: String,
    pub dist: usize,
    pub ade: bool,
    pub ind: bool,
    pub source: PairSource,
}

impl PairRecord {
    pub fn from_pair(pair: &CandidatePair) -> Self {
        PairRecord {
            doc: pair.doc_id.clone(),
            drug_id: pair.drug.id.clone(),
            disorder_id: pair.disorder.id.clone(),
            dist: pair.sentence_distance,
            ade: pair.gold_ade,
            ind: pair.gold_indication,
            source: pair.source,
        }
    }
}

const MATRIX_MAGIC: &[u8; 4] = b"FVS1";

/// Writes the float32 sidecar matrix: magic `FVS1`, u32 rows, u32 cols,
/// row-major little-endian values.
pub fn write_feature_matrix(mut writer: impl Write, rows: &[Vec<f64>]) -> Result<(), PairsError> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PairsError::Shape("ragged feature rows".into()));
    }
    writer.write_all(MATRIX_MAGIC)?;
    writer.write_u32::<LittleEndian>(rows.len() as u32)?;
    writer.write_u32::<LittleEndian>(cols as u32)?;
    for row in rows {
        for &v in row {
            writer.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(())
}

pub fn read_feature_matrix(mut reader: impl Read) -> Result<Vec<Vec<f64>>, PairsError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(PairsError::Format(format!("bad magic {magic:?}")));
    }
    let rows = reader.read_u32::<LittleEndian>()? as usize;
    let cols = reader.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = vec![0f32; cols];
        reader.read_f32_into::<LittleEndian>(&mut row)?;
        out.push(row.into_iter().map(|v| v as f64).collect());
    }
    Ok(out)
}
