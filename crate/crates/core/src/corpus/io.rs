//! Corpus file formats: document JSONL and CoNLL-style token/label imports.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{decode_bio, BioLabel, CorpusError, Document, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Conll,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "conll" => Ok(CorpusFormat::Conll),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// Reads a whole corpus in the declared format, validating every document.
pub fn read_corpus(reader: impl Read, format: CorpusFormat) -> Result<Vec<Document>, CorpusError> {
    match format {
        CorpusFormat::Jsonl => read_jsonl(reader),
        CorpusFormat::Conll => read_conll(reader),
    }
}

/// Reads a stream that must contain exactly one document.
pub fn parse_document(reader: impl Read, format: CorpusFormat) -> Result<Document, CorpusError> {
    let mut docs = read_corpus(reader, format)?;
    match docs.len() {
        1 => Ok(docs.pop().unwrap()),
        n => Err(CorpusError::Parse {
            line: 0,
            msg: format!("expected exactly one document, found {n}"),
        }),
    }
}

/// One JSON object per line; empty streams are an error.
pub fn read_jsonl(reader: impl Read) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        doc.validate()?;
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(docs)
}

pub fn write_jsonl(mut writer: impl Write, docs: &[Document]) -> Result<(), CorpusError> {
    for doc in docs {
        let line = serde_json::to_string(doc).expect("documents serialize");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// CoNLL-style import: `token<TAB>bio-label` lines, one blank line between
/// sentences, two blank lines between documents. Text is reconstructed by
/// joining tokens with spaces and sentences with newlines; entities come from
/// decoding the label column. Relations and groups are not representable.
fn read_conll(reader: impl Read) -> Result<Vec<Document>, CorpusError> {
    struct Builder {
        tokens: Vec<Token>,
        labels: Vec<BioLabel>,
        text: String,
        sentence: usize,
        at_sentence_start: bool,
    }

    impl Builder {
        fn new() -> Self {
            Builder {
                tokens: Vec::new(),
                labels: Vec::new(),
                text: String::new(),
                sentence: 0,
                at_sentence_start: true,
            }
        }

        fn finish(self, index: usize) -> Result<Option<Document>, CorpusError> {
            if self.tokens.is_empty() {
                return Ok(None);
            }
            let mut entities = decode_bio(&self.labels);
            for (i, span) in entities.iter_mut().enumerate() {
                span.id = format!("e{i}");
            }
            Document::new(
                format!("doc{index}"),
                self.text,
                self.tokens,
                entities,
                vec![],
                vec![],
                None,
            )
            .map(Some)
        }
    }

    let mut docs = Vec::new();
    let mut builder = Builder::new();
    let mut blank_run = 0usize;

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            blank_run += 1;
            if blank_run == 1 && !builder.tokens.is_empty() {
                builder.sentence += 1;
                builder.at_sentence_start = true;
            } else if blank_run == 2 {
                if let Some(doc) = std::mem::replace(&mut builder, Builder::new()).finish(docs.len())? {
                    docs.push(doc);
                }
            }
            continue;
        }
        blank_run = 0;

        let (text, label) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line: lineno,
            msg: "expected token<TAB>label".into(),
        })?;
        let label = BioLabel::parse(label.trim()).ok_or_else(|| CorpusError::Parse {
            line: lineno,
            msg: format!("unknown BIO label {:?}", label.trim()),
        })?;

        if !builder.text.is_empty() {
            builder
                .text
                .push(if builder.at_sentence_start { '\n' } else { ' ' });
        }
        let start = builder.text.len();
        builder.text.push_str(text);
        builder.tokens.push(Token {
            text: text.to_string(),
            char_start: start,
            char_end: builder.text.len(),
            sentence_index: builder.sentence,
        });
        builder.labels.push(label);
        builder.at_sentence_start = false;
    }
    if let Some(doc) = builder.finish(docs.len())? {
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityKind;

    const MINIMAL: &str = r#"{"id":"d1","text":"aspirin causes rash","tokens":[{"t":"aspirin","s":0,"e":7,"sent":0},{"t":"causes","s":8,"e":14,"sent":0},{"t":"rash","s":15,"e":19,"sent":0}],"entities":[{"id":"e1","kind":"drug","ts":0,"te":1},{"id":"e2","kind":"disorder","ts":2,"te":3}],"relations":[{"id":"r1","drug":"e1","disorder":"e2","label":"ade"}],"groups":[]}"#;

    #[test]
    fn minimal_record_parses() {
        let doc = parse_document(MINIMAL.as_bytes(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(doc.entities.len(), 2);
        assert_eq!(doc.relations.len(), 1);
    }

    #[test]
    fn dangling_reference_is_integrity_error() {
        let bad = MINIMAL.replace("\"drug\":\"e1\"", "\"drug\":\"nope\"");
        let err = read_jsonl(bad.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Integrity { .. }), "{err}");
    }

    #[test]
    fn empty_stream_is_error() {
        assert!(matches!(
            read_jsonl(&b""[..]),
            Err(CorpusError::EmptyInput)
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{MINIMAL}\nnot json\n");
        match read_jsonl(text.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let docs = read_jsonl(MINIMAL.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &docs).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(docs, back);
    }

    #[test]
    fn conll_two_documents() {
        let text = "aspirin\tB-Drug\ncauses\tO\nrash\tB-Disorder\n\nok\tO\n\n\nfever\tB-Disorder\n";
        let docs = read_corpus(text.as_bytes(), CorpusFormat::Conll).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].tokens.len(), 4);
        assert_eq!(docs[0].sentence_count(), 2);
        assert_eq!(docs[0].text, "aspirin causes rash\nok");
        assert_eq!(docs[0].entities.len(), 2);
        assert_eq!(docs[0].entities[0].kind, EntityKind::Drug);
        assert_eq!(docs[1].tokens.len(), 1);
        assert_eq!(docs[1].id, "doc1");
    }

    #[test]
    fn conll_bad_label_reports_line() {
        let text = "aspirin\tB-Chemical\n";
        match read_corpus(text.as_bytes(), CorpusFormat::Conll) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
