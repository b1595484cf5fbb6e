//! Documents, annotation layers and the loaders that produce them.

mod conll;
mod jsonl;
mod synthetic;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Task};

pub use conll::{load_conll_ner, parse_conll_ner, ConllParse};
pub use jsonl::{load_jsonl, parse_jsonl, to_jsonl, write_jsonl};
pub use synthetic::{
    generate_synthetic_corpus, SyntheticConfig, EMD_LABELS, NER_LABELS, RELATION_TYPES,
};

/// An unlabelled inclusive token range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// An inclusive token range with a label, e.g. `(0, 1, "PER")`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl TaggedSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }

    pub fn shifted(&self, offset: isize) -> TaggedSpan {
        TaggedSpan::new(
            (self.start as isize + offset) as usize,
            (self.end as isize + offset) as usize,
            self.label.clone(),
        )
    }
}

/// A directed relation from `arg1` to `arg2`. Arguments are mention heads.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub rel_type: String,
    pub arg1: Span,
    pub arg2: Span,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    /// Named entity spans, document-level indices.
    pub ner: Vec<TaggedSpan>,
    /// Entity mention heads, document-level indices.
    pub mentions: Vec<TaggedSpan>,
    pub relations: Vec<RelationInstance>,
    pub clusters: Vec<Vec<Span>>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    /// Document-level offset of the first token of every sentence.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sentences.len());
        let mut acc = 0;
        for s in &self.sentences {
            offsets.push(acc);
            acc += s.len();
        }
        offsets
    }

    /// Index of the sentence containing document token `t`.
    pub fn sentence_of(&self, t: usize) -> Option<usize> {
        let mut acc = 0;
        for (i, s) in self.sentences.iter().enumerate() {
            if t < acc + s.len() {
                return Some(i);
            }
            acc += s.len();
        }
        None
    }

    /// Spans of `layer` lying entirely inside sentence `sent`, shifted to
    /// sentence-local indices.
    pub fn sentence_spans(&self, layer: &[TaggedSpan], sent: usize) -> Vec<TaggedSpan> {
        let offsets = self.sentence_offsets();
        let start = offsets[sent];
        let end = start + self.sentences[sent].len();
        layer
            .iter()
            .filter(|s| s.start >= start && s.end < end)
            .map(|s| s.shifted(-(start as isize)))
            .collect()
    }

    /// All spans occurring in any gold cluster, sorted.
    pub fn cluster_mentions(&self) -> Vec<Span> {
        let mut all: Vec<Span> = self.clusters.iter().flatten().copied().collect();
        all.sort();
        all.dedup();
        all
    }

    /// Drop clusters with fewer than two members, then check every invariant.
    pub fn validate(&mut self) -> Result<()> {
        self.clusters.retain(|c| c.len() >= 2);
        let n = self.token_count();
        let fail = |message: String| Error::Validation {
            doc_id: self.doc_id.clone(),
            message,
        };
        if let Some(i) = self.sentences.iter().position(Vec::is_empty) {
            return Err(fail(format!("sentence {i} is empty")));
        }
        let offsets = self.sentence_offsets();
        let same_sentence = |s: &Span| -> bool {
            let i = offsets.partition_point(|&o| o <= s.start) - 1;
            s.end < offsets[i] + self.sentences[i].len()
        };
        let check = |what: &str, s: Span| -> Result<()> {
            if s.start > s.end || s.end >= n {
                return Err(fail(format!(
                    "{what} span [{}, {}] out of range for {n} tokens",
                    s.start, s.end
                )));
            }
            Ok(())
        };
        for (what, layer) in [("ner", &self.ner), ("mention", &self.mentions)] {
            let mut sorted: Vec<&TaggedSpan> = layer.iter().collect();
            sorted.sort();
            for s in &sorted {
                check(what, s.span())?;
                if !same_sentence(&s.span()) {
                    return Err(fail(format!(
                        "{what} span [{}, {}] crosses a sentence boundary",
                        s.start, s.end
                    )));
                }
            }
            for w in sorted.windows(2) {
                if w[0].span().overlaps(&w[1].span()) {
                    return Err(fail(format!(
                        "overlapping {what} spans [{}, {}] and [{}, {}]",
                        w[0].start, w[0].end, w[1].start, w[1].end
                    )));
                }
            }
        }
        let heads: HashSet<Span> = self.mentions.iter().map(TaggedSpan::span).collect();
        for r in &self.relations {
            check("relation argument", r.arg1)?;
            check("relation argument", r.arg2)?;
            if r.arg1 == r.arg2 {
                return Err(fail(format!(
                    "relation {} has identical arguments [{}, {}]",
                    r.rel_type, r.arg1.start, r.arg1.end
                )));
            }
            for arg in [r.arg1, r.arg2] {
                if !heads.contains(&arg) {
                    return Err(fail(format!(
                        "relation argument [{}, {}] is not a mention",
                        arg.start, arg.end
                    )));
                }
            }
        }
        for cluster in &self.clusters {
            for &s in cluster {
                check("cluster", s)?;
            }
        }
        Ok(())
    }
}

/// Which dataset backs each task, with per-split sentence counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub name: String,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetRegistry {
    datasets: BTreeMap<Task, DatasetHandle>,
}

impl DatasetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the training dataset of `task`; the training split must be nonempty.
    pub fn register(&mut self, task: Task, handle: DatasetHandle) -> Result<()> {
        if handle.train_sentences == 0 {
            return Err(Error::Config(format!(
                "dataset {} for task {task} has no training sentences",
                handle.name
            )));
        }
        self.datasets.insert(task, handle);
        Ok(())
    }

    pub fn get(&self, task: Task) -> Option<&DatasetHandle> {
        self.datasets.get(&task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = Task> + '_ {
        self.datasets.keys().copied()
    }

    /// Training size used for proportional sampling.
    pub fn train_size(&self, task: Task) -> usize {
        self.datasets.get(&task).map_or(0, |h| h.train_sentences)
    }
}

pub fn sentence_count(docs: &[Document]) -> usize {
    docs.iter().map(|d| d.sentences.len()).sum()
}

/// Seeded shuffle, then cut into train/dev/test by `ratios`.
pub fn split_documents(
    docs: &[Document],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>, Vec<Document>)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios ({a}, {b}, {c}) must be fractions summing to 1"
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = docs.len() as f64;
    let n_train = ((a * n) + 1e-9).floor() as usize;
    let n_dev = (((a + b) * n) + 1e-9).floor() as usize - n_train;
    let pick = |idx: &[usize]| idx.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}
