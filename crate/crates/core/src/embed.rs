//! Token-representation providers.
//!
//! Two sources feed the tagger and the pair featurizer: a static word-vector
//! table (text format, exact-match lookup, zero vector for out-of-vocabulary
//! tokens) and a precomputed contextual-embedding archive produced by an
//! external encoder runtime. The archive carries per-token vectors, one
//! context vector per sentence, and optionally the encoder's own 8-column
//! label-probability rows.

use std::collections::HashMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("archive: {0}")]
    Archive(String),
    #[error("archive alignment for document {doc}: {msg}")]
    Alignment { doc: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Static word vectors with a total, zero-vector OOV policy.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize, entries: HashMap<String, Vec<f64>>) -> Self {
        debug_assert!(entries.values().all(|v| v.len() == dim));
        WordVectorTable { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact-match lookup; unknown tokens get the all-zero vector.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.entries
            .get(token)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    /// T×dim matrix of static vectors for a document's tokens.
    pub fn embed_document(&self, doc: &Document) -> Array2<f64> {
        let mut out = Array2::zeros((doc.tokens.len(), self.dim));
        for (i, tok) in doc.tokens.iter().enumerate() {
            if let Some(v) = self.entries.get(&tok.text) {
                out.row_mut(i).assign(&Array1::from_vec(v.clone()));
            }
        }
        out
    }
}

/// Parses the text format: header `count dim`, then one
/// `token v1 … v_dim` line per entry.
pub fn load_word_vectors(reader: impl Read) -> Result<WordVectorTable, EmbedError> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or(EmbedError::Format {
        line: 1,
        msg: "missing header".into(),
    })?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(EmbedError::Format {
            line: 1,
            msg: "header must be `count dim`".into(),
        })?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(EmbedError::Format {
            line: 1,
            msg: "header must be `count dim`".into(),
        })?;

    let mut entries = HashMap::with_capacity(count);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().ok_or(EmbedError::Format {
            line: lineno,
            msg: "missing token".into(),
        })?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| EmbedError::Format {
                    line: lineno,
                    msg: format!("bad value {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(EmbedError::Format {
                line: lineno,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        entries.insert(token.to_string(), values);
    }
    if entries.len() != count {
        return Err(EmbedError::Format {
            line: 1,
            msg: format!("header declares {count} entries, found {}", entries.len()),
        });
    }
    Ok(WordVectorTable { dim, entries })
}

pub fn write_word_vectors(mut writer: impl Write, table: &WordVectorTable) -> Result<(), EmbedError> {
    writeln!(writer, "{} {}", table.entries.len(), table.dim)?;
    let mut tokens: Vec<&String> = table.entries.keys().collect();
    tokens.sort();
    for token in tokens {
        write!(writer, "{token}")?;
        for v in &table.entries[token] {
            write!(writer, " {v}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Embeddings for one document inside a [`ContextualArchive`].
#[derive(Debug, Clone, PartialEq)]
pub struct DocEmbeddings {
    /// T×dim, one row per corpus token.
    pub token_vectors: Array2<f32>,
    /// S×dim, one context row per sentence.
    pub sentence_vectors: Array2<f32>,
    /// Optional T×8 label-probability rows from the external encoder.
    pub label_probs: Option<Array2<f32>>,
}

const ARCHIVE_MAGIC: &[u8; 4] = b"CEA1";
const PROB_COLS: usize = 8;

/// Precomputed contextual embeddings, keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualArchive {
    dim: usize,
    docs: HashMap<String, DocEmbeddings>,
}

impl ContextualArchive {
    pub fn new(dim: usize) -> Self {
        ContextualArchive {
            dim,
            docs: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, embeddings: DocEmbeddings) {
        debug_assert_eq!(embeddings.token_vectors.ncols(), self.dim);
        debug_assert_eq!(embeddings.sentence_vectors.ncols(), self.dim);
        self.docs.insert(doc_id.into(), embeddings);
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocEmbeddings> {
        self.docs.get(doc_id)
    }

    /// Checks row counts against every archived document's tokenization.
    pub fn validate_against(&self, corpus: &[Document]) -> Result<(), EmbedError> {
        let by_id: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut ids: Vec<&String> = self.docs.keys().collect();
        ids.sort();
        for id in ids {
            let emb = &self.docs[id];
            let doc = by_id.get(id.as_str()).ok_or_else(|| EmbedError::Alignment {
                doc: id.clone(),
                msg: "document not in corpus".into(),
            })?;
            if emb.token_vectors.nrows() != doc.tokens.len() {
                return Err(EmbedError::Alignment {
                    doc: id.clone(),
                    msg: format!(
                        "{} token rows for {} tokens",
                        emb.token_vectors.nrows(),
                        doc.tokens.len()
                    ),
                });
            }
            if emb.sentence_vectors.nrows() != doc.sentence_count() {
                return Err(EmbedError::Alignment {
                    doc: id.clone(),
                    msg: format!(
                        "{} sentence rows for {} sentences",
                        emb.sentence_vectors.nrows(),
                        doc.sentence_count()
                    ),
                });
            }
            if let Some(probs) = &emb.label_probs {
                if probs.nrows() != doc.tokens.len() {
                    return Err(EmbedError::Alignment {
                        doc: id.clone(),
                        msg: format!(
                            "{} probability rows for {} tokens",
                            probs.nrows(),
                            doc.tokens.len()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Loads a binary archive and validates its alignment against the corpus.
pub fn load_contextual_archive(
    reader: impl Read,
    corpus: &[Document],
) -> Result<ContextualArchive, EmbedError> {
    let mut r = reader;
    let mut magic = [0u8; 4];
    if let Err(e) = r.read_exact(&mut magic) {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            return Err(EmbedError::Archive("truncated header".into()));
        }
        return Err(e.into());
    }
    if &magic != ARCHIVE_MAGIC {
        return Err(EmbedError::Archive(format!("bad magic {magic:?}")));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let mut archive = ContextualArchive::new(dim);

    loop {
        let id_len = match r.read_u32::<LittleEndian>() {
            Ok(v) => v as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| EmbedError::Archive("document id is not UTF-8".into()))?;
        let tokens = r.read_u32::<LittleEndian>()? as usize;
        let sentences = r.read_u32::<LittleEndian>()? as usize;

        let read_matrix = |r: &mut dyn Read, rows: usize, cols: usize| -> Result<Array2<f32>, EmbedError> {
            let mut data = vec![0f32; rows * cols];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches data"))
        };

        let token_vectors = read_matrix(&mut r, tokens, dim)?;
        let sentence_vectors = read_matrix(&mut r, sentences, dim)?;
        let has_probs = r.read_u8()?;
        let label_probs = match has_probs {
            0 => None,
            1 => Some(read_matrix(&mut r, tokens, PROB_COLS)?),
            other => return Err(EmbedError::Archive(format!("bad has_probs flag {other}"))),
        };

        archive.insert(
            id,
            DocEmbeddings {
                token_vectors,
                sentence_vectors,
                label_probs,
            },
        );
    }

    archive.validate_against(corpus)?;
    Ok(archive)
}

/// Writes the binary format; documents are emitted in sorted-id order so the
/// bytes are a pure function of the contents.
pub fn write_contextual_archive(
    mut writer: impl Write,
    archive: &ContextualArchive,
) -> Result<(), EmbedError> {
    writer.write_all(ARCHIVE_MAGIC)?;
    writer.write_u32::<LittleEndian>(archive.dim as u32)?;
    let mut ids: Vec<&String> = archive.docs.keys().collect();
    ids.sort();
    for id in ids {
        let emb = &archive.docs[id];
        writer.write_u32::<LittleEndian>(id.len() as u32)?;
        writer.write_all(id.as_bytes())?;
        writer.write_u32::<LittleEndian>(emb.token_vectors.nrows() as u32)?;
        writer.write_u32::<LittleEndian>(emb.sentence_vectors.nrows() as u32)?;
        for &v in emb.token_vectors.iter() {
            writer.write_f32::<LittleEndian>(v)?;
        }
        for &v in emb.sentence_vectors.iter() {
            writer.write_f32::<LittleEndian>(v)?;
        }
        match &emb.label_probs {
            None => writer.write_u8(0)?,
            Some(probs) => {
                writer.write_u8(1)?;
                for &v in probs.iter() {
                    writer.write_f32::<LittleEndian>(v)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use ndarray::array;

    #[test]
    fn small_table_loads() {
        let text = "2 3\nfoo 1.0 2.0 3.0\nbar 0.5 -1 2e-1\n";
        let table = load_word_vectors(text.as_bytes()).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.len(), 2);
        assert_eq!(table.lookup("foo"), vec![1.0, 2.0, 3.0]);
        assert_eq!(table.lookup("bar"), vec![0.5, -1.0, 0.2]);
    }

    #[test]
    fn short_line_reports_line_number() {
        let text = "1 3\nfoo 1.0 2.0\n";
        match load_word_vectors(text.as_bytes()) {
            Err(EmbedError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn full_width_vector_loads() {
        let values: Vec<String> = (0..300).map(|i| format!("{}", i as f64 * 0.01)).collect();
        let text = format!("1 300\nword {}\n", values.join(" "));
        let table = load_word_vectors(text.as_bytes()).unwrap();
        assert_eq!(table.dim(), 300);
        assert_eq!(table.lookup("word").len(), 300);
    }

    #[test]
    fn oov_is_zero_vector_and_exact_match() {
        let text = "1 2\nAspirin 1.0 2.0\n";
        let table = load_word_vectors(text.as_bytes()).unwrap();
        assert_eq!(table.lookup("nothere"), vec![0.0, 0.0]);
        // lookup is exact-match: case variants miss
        assert_eq!(table.lookup("aspirin"), vec![0.0, 0.0]);
        assert_eq!(table.lookup("Aspirin"), vec![1.0, 2.0]);
    }

    #[test]
    fn word_vector_text_round_trip() {
        let text = "2 2\nalpha 0.25 -0.5\nbeta 1 2\n";
        let table = load_word_vectors(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_word_vectors(&mut buf, &table).unwrap();
        let back = load_word_vectors(&buf[..]).unwrap();
        assert_eq!(back.lookup("alpha"), table.lookup("alpha"));
        assert_eq!(back.lookup("beta"), table.lookup("beta"));
    }

    fn doc(id: &str, n_tokens: usize, n_sentences: usize) -> Document {
        let tokens = (0..n_tokens)
            .map(|i| Token {
                text: format!("t{i}"),
                char_start: 2 * i,
                char_end: 2 * i + 1,
                sentence_index: (i * n_sentences) / n_tokens,
            })
            .collect();
        Document::new(id, "x".repeat(2 * n_tokens), tokens, vec![], vec![], vec![], None).unwrap()
    }

    fn sample_archive() -> ContextualArchive {
        let mut archive = ContextualArchive::new(4);
        archive.insert(
            "d1",
            DocEmbeddings {
                token_vectors: array![
                    [1.0f32, 2.0, 3.0, 4.0],
                    [5.0, 6.0, 7.0, 8.0],
                    [9.0, 10.0, 11.0, 12.0],
                    [0.25, 0.5, 0.75, 1.0]
                ],
                sentence_vectors: array![[0.0f32, 1.0, 0.0, -1.0], [2.0, 2.0, 2.0, 2.0]],
                label_probs: Some(Array2::from_elem((4, 8), 0.125f32)),
            },
        );
        archive
    }

    #[test]
    fn archive_round_trip_is_bit_exact() {
        let archive = sample_archive();
        let corpus = vec![doc("d1", 4, 2)];
        let mut buf = Vec::new();
        write_contextual_archive(&mut buf, &archive).unwrap();
        let loaded = load_contextual_archive(&buf[..], &corpus).unwrap();
        assert_eq!(loaded, archive);
        let mut buf2 = Vec::new();
        write_contextual_archive(&mut buf2, &loaded).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn row_count_mismatch_names_document() {
        let archive = sample_archive();
        let corpus = vec![doc("d1", 3, 2)];
        let mut buf = Vec::new();
        write_contextual_archive(&mut buf, &archive).unwrap();
        match load_contextual_archive(&buf[..], &corpus) {
            Err(EmbedError::Alignment { doc, .. }) => assert_eq!(doc, "d1"),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_document_rejected() {
        let archive = sample_archive();
        let mut buf = Vec::new();
        write_contextual_archive(&mut buf, &archive).unwrap();
        assert!(load_contextual_archive(&buf[..], &[]).is_err());
    }

    #[test]
    fn empty_archive_over_empty_corpus() {
        let archive = ContextualArchive::new(768);
        let mut buf = Vec::new();
        write_contextual_archive(&mut buf, &archive).unwrap();
        let loaded = load_contextual_archive(&buf[..], &[]).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.dim(), 768);
    }
}
