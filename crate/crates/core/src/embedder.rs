//! Word representations: pretrained word vectors, a character CNN and a
//! pluggable contextual embedder, concatenated per token.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// String ↔ row index map with reserved `PAD` (0) and `UNK` (1) entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(entries: Vec<String>) -> Self {
        Self::from_entries(entries)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.entries
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::from_entries(vec![PAD.to_string(), UNK.to_string()])
    }

    /// Rebuild from a full entry list whose first two items are PAD and UNK.
    pub fn from_entries(entries: Vec<String>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Self { entries, index }
    }

    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        self.entries.push(word.to_string());
        self.index.insert(word.to_string(), self.entries.len() - 1);
        self.entries.len() - 1
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Exact match, then lowercase, then UNK.
    pub fn lookup(&self, word: &str) -> usize {
        self.get(word)
            .or_else(|| self.get(&word.to_lowercase()))
            .unwrap_or(UNK_INDEX)
    }
}

/// Word vectors as read from a text file.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    pub vocab: Vocabulary,
    pub matrix: Matrix,
}

/// Parse `token v1 ... v_dim` lines. UNK becomes the mean of all vectors and
/// PAD the zero vector.
pub fn parse_word_vectors(text: &str, dim: usize, source: &str) -> Result<WordVectors> {
    let mut vocab = Vocabulary::new();
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; dim], vec![0.0; dim]];
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<f64> = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("bad number: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: "non-finite value".to_string(),
            });
        }
        let idx = vocab.insert(token);
        if idx == rows.len() {
            rows.push(values);
        } else {
            rows[idx] = values;
        }
    }
    let loaded = rows.len() - 2;
    if loaded == 0 {
        log::warn!("{source}: no word vectors loaded; table holds only PAD and UNK");
    } else {
        for d in 0..dim {
            rows[UNK_INDEX][d] = rows[2..].iter().map(|r| r[d]).sum::<f64>() / loaded as f64;
        }
    }
    let matrix = if dim == 0 {
        Matrix::zeros(rows.len(), 0)
    } else {
        Matrix::from_rows(&rows)
    };
    Ok(WordVectors { vocab, matrix })
}

pub fn load_word_vectors(path: impl AsRef<Path>, dim: usize) -> Result<WordVectors> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text, dim, &path.display().to_string())
}

/// A word embedding table registered in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct WordTable {
    pub vocab: Vocabulary,
    pub param: ParamId,
    pub dim: usize,
    pub trainable: bool,
}

impl WordTable {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        vectors: WordVectors,
        trainable: bool,
    ) -> Self {
        let dim = vectors.matrix.cols();
        let param = store.add(name, Group::Embedding, vectors.matrix);
        Self {
            vocab: vectors.vocab,
            param,
            dim,
            trainable,
        }
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, tokens: &[String]) -> Var {
        let idx: Vec<usize> = tokens.iter().map(|t| self.vocab.lookup(t)).collect();
        if self.trainable {
            let table = graph.param(store, self.param);
            graph.gather(table, &idx)
        } else {
            graph.constant(store.value(self.param).gather_rows(&idx))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharCnnConfig {
    pub char_dim: usize,
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
}

impl Default for CharCnnConfig {
    fn default() -> Self {
        Self {
            char_dim: 16,
            widths: vec![2, 3],
            filters_per_width: 25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvFilter {
    pub width: usize,
    /// `(width · char_dim) × count`
    pub weight: ParamId,
    /// `1 × count`
    pub bias: ParamId,
}

/// Character CNN with max pooling over positions.
#[derive(Clone, Debug)]
pub struct CharCnn {
    pub chars: Vocabulary,
    pub table: ParamId,
    pub char_dim: usize,
    pub filters: Vec<ConvFilter>,
    pub output_dim: usize,
}

impl CharCnn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        chars: Vocabulary,
        cfg: &CharCnnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.widths.is_empty() || cfg.filters_per_width == 0 || cfg.widths.contains(&0) {
            return Err(Error::Config(
                "char CNN needs at least one filter of positive width".into(),
            ));
        }
        let mut table = Matrix::uniform(chars.len(), cfg.char_dim, 0.5, rng);
        table.row_mut(PAD_INDEX).iter_mut().for_each(|v| *v = 0.0);
        let table = store.add(format!("{prefix}.table"), Group::Embedding, table);
        let filters = cfg
            .widths
            .iter()
            .map(|&w| ConvFilter {
                width: w,
                weight: store.add(
                    format!("{prefix}.w{w}.weight"),
                    Group::Embedding,
                    Matrix::xavier(w * cfg.char_dim, cfg.filters_per_width, rng),
                ),
                bias: store.add(
                    format!("{prefix}.w{w}.bias"),
                    Group::Embedding,
                    Matrix::zeros(1, cfg.filters_per_width),
                ),
            })
            .collect();
        Ok(Self {
            chars,
            table,
            char_dim: cfg.char_dim,
            filters,
            output_dim: cfg.widths.len() * cfg.filters_per_width,
        })
    }

    pub fn max_width(&self) -> usize {
        self.filters.iter().map(|f| f.width).max().unwrap_or(1)
    }

    /// Character indices of `word`, right-padded with PAD to the widest filter.
    pub fn char_indices(&self, word: &str) -> Vec<usize> {
        let mut idx: Vec<usize> = word
            .chars()
            .map(|c| self.chars.get(&c.to_string()).unwrap_or(UNK_INDEX))
            .collect();
        while idx.len() < self.max_width() {
            idx.push(PAD_INDEX);
        }
        idx
    }

    pub fn forward_word(&self, graph: &mut Graph, table: Var, store: &ParamStore, word: &str) -> Var {
        let idx = self.char_indices(word);
        let emb = graph.gather(table, &idx);
        let mut pooled = Vec::with_capacity(self.filters.len());
        for f in &self.filters {
            let positions = idx.len() - f.width + 1;
            let shifted: Vec<Var> = (0..f.width)
                .map(|k| graph.slice_rows(emb, k, positions))
                .collect();
            let windows = graph.concat_cols(&shifted);
            let w = graph.param(store, f.weight);
            let b = graph.param(store, f.bias);
            let conv = graph.matmul(windows, w);
            let conv = graph.add_row(conv, b);
            pooled.push(graph.max_rows(conv));
        }
        graph.concat_cols(&pooled)
    }

    /// `n × output_dim` features; repeated words share one subgraph.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, tokens: &[String]) -> Var {
        let table = graph.param(store, self.table);
        let mut cache: HashMap<&str, Var> = HashMap::new();
        let rows: Vec<Var> = tokens
            .iter()
            .map(|t| {
                *cache
                    .entry(t.as_str())
                    .or_insert_with(|| self.forward_word(graph, table, store, t))
            })
            .collect();
        graph.concat_rows(&rows)
    }
}

/// Evaluate the character CNN on one word.
pub fn char_features(word: &str, cnn: &CharCnn, store: &ParamStore) -> Vec<f64> {
    let mut g = Graph::new();
    let table = g.param(store, cnn.table);
    let v = cnn.forward_word(&mut g, table, store, word);
    g.value(v).data().to_vec()
}

/// A sentence together with its position in the source document.
#[derive(Clone, Copy, Debug)]
pub struct SentenceRef<'a> {
    pub doc_id: &'a str,
    /// Document-level index of the first token.
    pub offset: usize,
    pub tokens: &'a [String],
}

/// Per-token vectors that may depend on the whole sentence.
pub trait ContextualEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    /// `n × dim()` matrix for the sentence.
    fn embed(&self, sentence: &SentenceRef<'_>) -> Result<Matrix>;
}

/// Frozen stand-in for a pretrained contextual model: each coordinate is a
/// fixed hash of (token, position, sentence length) mapped into `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct HashContext {
    pub dim: usize,
    pub seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl ContextualEmbedder for HashContext {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &SentenceRef<'_>) -> Result<Matrix> {
        let n = sentence.tokens.len();
        let mut out = Matrix::zeros(n, self.dim);
        for (pos, tok) in sentence.tokens.iter().enumerate() {
            let base = fnv1a(tok.as_bytes())
                ^ splitmix64(self.seed)
                ^ splitmix64((pos as u64) << 32 | n as u64);
            for k in 0..self.dim {
                let h = splitmix64(base.wrapping_add(k as u64));
                let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
                out.set(pos, k, 2.0 * unit - 1.0);
            }
        }
        Ok(out)
    }
}

/// Precomputed contextual vectors keyed by `(doc_id, token index)`.
#[derive(Clone, Debug, Default)]
pub struct CachedContext {
    dim: usize,
    vectors: HashMap<(String, usize), Vec<f64>>,
}

impl CachedContext {
    /// Lines of `doc_id<TAB>token_index<TAB>v1 v2 ... v_dim`.
    pub fn parse(text: &str, dim: usize, source: &str) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let mut cols = line.split('\t');
            let (Some(doc), Some(idx), Some(vals), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(err("expected three tab-separated columns".into()));
            };
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|e| err(format!("bad token index: {e}")))?;
            let values: Vec<f64> = vals
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("bad number: {e}")))?;
            if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                return Err(err(format!("expected {dim} finite values")));
            }
            vectors.insert((doc.to_string(), idx), values);
        }
        Ok(Self { dim, vectors })
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, dim, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl ContextualEmbedder for CachedContext {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &SentenceRef<'_>) -> Result<Matrix> {
        let mut out = Matrix::zeros(sentence.tokens.len(), self.dim);
        for t in 0..sentence.tokens.len() {
            let key = (sentence.doc_id.to_string(), sentence.offset + t);
            let v = self.vectors.get(&key).ok_or_else(|| {
                Error::Config(format!(
                    "no contextual vector for document {} token {}",
                    sentence.doc_id,
                    sentence.offset + t
                ))
            })?;
            out.row_mut(t).copy_from_slice(v);
        }
        Ok(out)
    }
}

/// The three optional word representations, concatenated in the order
/// word vectors, character features, contextual vectors.
pub struct Embedder {
    pub word: Option<WordTable>,
    pub chars: Option<CharCnn>,
    pub context: Option<Box<dyn ContextualEmbedder>>,
}

impl Embedder {
    pub fn width(&self) -> usize {
        self.word.as_ref().map_or(0, |w| w.dim)
            + self.chars.as_ref().map_or(0, |c| c.output_dim)
            + self.context.as_ref().map_or(0, |c| c.dim())
    }

    /// `n × width()` representation of a sentence.
    pub fn embed_sentence(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        sentence: &SentenceRef<'_>,
    ) -> Result<Var> {
        if sentence.tokens.is_empty() {
            return Err(Error::Dimension("cannot embed an empty sentence".into()));
        }
        let mut parts = Vec::with_capacity(3);
        if let Some(w) = &self.word {
            parts.push(w.forward(graph, store, sentence.tokens));
        }
        if let Some(c) = &self.chars {
            parts.push(c.forward(graph, store, sentence.tokens));
        }
        if let Some(ctx) = &self.context {
            let m = ctx.embed(sentence)?;
            if m.shape() != (sentence.tokens.len(), ctx.dim()) {
                return Err(Error::Dimension(format!(
                    "contextual embedder returned {:?}, expected ({}, {})",
                    m.shape(),
                    sentence.tokens.len(),
                    ctx.dim()
                )));
            }
            parts.push(graph.constant(m));
        }
        if parts.is_empty() {
            return Err(Error::Config("all word representations are disabled".into()));
        }
        Ok(graph.concat_cols(&parts))
    }
}
