use std::path::Path;

use super::{Document, TaggedSpan};
use crate::crf::{decode_tags, LabelConflict, Tag};
use crate::{Error, Result};

/// Result of reading a column-format NER file.
#[derive(Debug, Default)]
pub struct ConllParse {
    pub docs: Vec<Document>,
    /// Number of inconsistent tags that opened a fresh span.
    pub repairs: usize,
}

/// Parse CoNLL-2003 style columns: the first column is the token and the last
/// column the NER tag (`O`, `B-`/`I-` or `B-`/`I-`/`L-`/`U-`, `E-`/`S-` also
/// accepted). Blank lines end sentences and `-DOCSTART-` lines end documents;
/// a file without `-DOCSTART-` yields one document per sentence.
pub fn parse_conll_ner(text: &str, source: &str) -> Result<ConllParse> {
    let mut labels: Vec<String> = Vec::new();
    let mut out = ConllParse::default();
    let mut current: Option<Document> = None;
    let mut sentence: Vec<(String, Tag)> = Vec::new();
    let mut saw_docstart = false;
    let mut doc_count = 0usize;

    fn flush_sentence(
        sentence: &mut Vec<(String, Tag)>,
        doc: &mut Document,
        labels: &[String],
        repairs: &mut usize,
    ) {
        if sentence.is_empty() {
            return;
        }
        let offset = doc.token_count();
        let tags: Vec<Tag> = sentence.iter().map(|(_, t)| *t).collect();
        let decoded = decode_tags(&tags, LabelConflict::Split);
        *repairs += decoded.orphans;
        for (s, e, l) in decoded.spans {
            doc.ner
                .push(TaggedSpan::new(s + offset, e + offset, labels[l].clone()));
        }
        doc.sentences
            .push(sentence.drain(..).map(|(w, _)| w).collect());
    }

    let finish_doc = |doc: Option<Document>, out: &mut ConllParse| -> Result<()> {
        if let Some(mut d) = doc {
            if !d.sentences.is_empty() {
                d.validate()?;
                out.docs.push(d);
            }
        }
        Ok(())
    };
    let new_doc = |n: &mut usize| {
        *n += 1;
        Document {
            doc_id: format!("{source}#{n}"),
            ..Default::default()
        }
    };

    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.first() == Some(&"-DOCSTART-") {
            if let Some(d) = current.as_mut() {
                flush_sentence(&mut sentence, d, &labels, &mut out.repairs);
            }
            finish_doc(current.take(), &mut out)?;
            saw_docstart = true;
            current = Some(new_doc(&mut doc_count));
            continue;
        }
        if fields.is_empty() {
            if !sentence.is_empty() {
                let doc = current.get_or_insert_with(|| new_doc(&mut doc_count));
                flush_sentence(&mut sentence, doc, &labels, &mut out.repairs);
                if !saw_docstart {
                    finish_doc(current.take(), &mut out)?;
                }
            }
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("expected at least two columns, got {line:?}"),
            });
        }
        let tag = parse_tag(fields[fields.len() - 1], &mut labels).ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message: format!("unknown tag {:?}", fields[fields.len() - 1]),
        })?;
        sentence.push((fields[0].to_string(), tag));
    }
    if !sentence.is_empty() {
        let doc = current.get_or_insert_with(|| new_doc(&mut doc_count));
        flush_sentence(&mut sentence, doc, &labels, &mut out.repairs);
    }
    finish_doc(current.take(), &mut out)?;
    if out.repairs > 0 {
        log::warn!("{source}: repaired {} inconsistent tags", out.repairs);
    }
    Ok(out)
}

fn parse_tag(raw: &str, labels: &mut Vec<String>) -> Option<Tag> {
    if raw == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, label) = raw.split_once('-')?;
    if label.is_empty() {
        return None;
    }
    let idx = match labels.iter().position(|l| l == label) {
        Some(i) => i,
        None => {
            labels.push(label.to_string());
            labels.len() - 1
        }
    };
    Some(match prefix {
        "B" => Tag::Begin(idx),
        "I" => Tag::Inside(idx),
        "L" | "E" => Tag::Last(idx),
        "U" | "S" => Tag::Unit(idx),
        _ => return None,
    })
}

pub fn load_conll_ner(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_conll_ner(&text, &path.display().to_string())?.docs)
}
