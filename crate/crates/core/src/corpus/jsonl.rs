use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, RelationInstance, Span, TaggedSpan};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    doc_id: String,
    sentences: Vec<Vec<String>>,
    #[serde(default)]
    ner: Vec<(usize, usize, String)>,
    #[serde(default)]
    mentions: Vec<(usize, usize, String)>,
    #[serde(default)]
    relations: Vec<RelationRecord>,
    #[serde(default)]
    clusters: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationRecord {
    #[serde(rename = "type")]
    rel_type: String,
    arg1: (usize, usize),
    arg2: (usize, usize),
}

impl From<Record> for Document {
    fn from(r: Record) -> Self {
        let tagged = |v: Vec<(usize, usize, String)>| {
            v.into_iter()
                .map(|(s, e, l)| TaggedSpan::new(s, e, l))
                .collect()
        };
        Document {
            doc_id: r.doc_id,
            sentences: r.sentences,
            ner: tagged(r.ner),
            mentions: tagged(r.mentions),
            relations: r
                .relations
                .into_iter()
                .map(|x| RelationInstance {
                    rel_type: x.rel_type,
                    arg1: Span::new(x.arg1.0, x.arg1.1),
                    arg2: Span::new(x.arg2.0, x.arg2.1),
                })
                .collect(),
            clusters: r
                .clusters
                .into_iter()
                .map(|c| c.into_iter().map(|(s, e)| Span::new(s, e)).collect())
                .collect(),
        }
    }
}

impl From<&Document> for Record {
    fn from(d: &Document) -> Self {
        let tagged = |v: &[TaggedSpan]| {
            v.iter()
                .map(|s| (s.start, s.end, s.label.clone()))
                .collect()
        };
        Record {
            doc_id: d.doc_id.clone(),
            sentences: d.sentences.clone(),
            ner: tagged(&d.ner),
            mentions: tagged(&d.mentions),
            relations: d
                .relations
                .iter()
                .map(|r| RelationRecord {
                    rel_type: r.rel_type.clone(),
                    arg1: (r.arg1.start, r.arg1.end),
                    arg2: (r.arg2.start, r.arg2.end),
                })
                .collect(),
            clusters: d
                .clusters
                .iter()
                .map(|c| c.iter().map(|s| (s.start, s.end)).collect())
                .collect(),
        }
    }
}

/// Parse JSONL text, one document per non-blank line. `source` names the
/// input in error messages.
pub fn parse_jsonl(text: &str, source: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let mut doc = Document::from(record);
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        let line = serde_json::to_string(&Record::from(d)).expect("record serialises");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn write_jsonl(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_jsonl(docs)).map_err(|e| Error::io(path, e))
}
