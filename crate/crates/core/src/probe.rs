//! Sentence embeddings from any layer and logistic-regression probes.
//!
//! Probe files use the SentEval layout, one `split<TAB>label<TAB>sentence`
//! per line with a whitespace-tokenised sentence. Splits may be written
//! `train`/`dev`/`test` or SentEval's `tr`/`va`/`te`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic_corpus, SyntheticConfig};
use crate::model::Model;
use crate::tensor::Matrix;
use crate::{Error, Result, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Max,
    Avg,
}

/// Coordinate-wise max or mean over the rows of an `n × d` matrix.
pub fn sentence_embedding(rows: &Matrix, pool: Pool) -> Result<Vec<f64>> {
    if rows.rows() == 0 {
        return Err(Error::Probe("cannot pool an empty sentence".into()));
    }
    let n = rows.rows() as f64;
    let mut out = rows.row(0).to_vec();
    for r in 1..rows.rows() {
        for (o, &v) in out.iter_mut().zip(rows.row(r)) {
            match pool {
                Pool::Max => *o = o.max(v),
                Pool::Avg => *o += v,
            }
        }
    }
    if pool == Pool::Avg {
        out.iter_mut().for_each(|o| *o /= n);
    }
    Ok(out)
}

/// Where a sentence embedding is read from. Task layers are max-pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProbeLayer {
    EmbMax,
    EmbAvg,
    Task(Task),
}

impl ProbeLayer {
    /// Grid row order.
    pub const ALL: [ProbeLayer; 6] = [
        ProbeLayer::EmbMax,
        ProbeLayer::EmbAvg,
        ProbeLayer::Task(Task::Ner),
        ProbeLayer::Task(Task::Emd),
        ProbeLayer::Task(Task::Re),
        ProbeLayer::Task(Task::Cr),
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "g_emb-max" => Some(ProbeLayer::EmbMax),
            "g_emb-avg" => Some(ProbeLayer::EmbAvg),
            _ => Task::parse(s.strip_prefix("g_")?).map(ProbeLayer::Task),
        }
    }

    fn rank(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).expect("listed")
    }

    /// Layers of `model` in grid order.
    pub fn available(model: &Model) -> Vec<ProbeLayer> {
        Self::ALL
            .into_iter()
            .filter(|l| match l {
                ProbeLayer::Task(t) => model.has(*t),
                _ => true,
            })
            .collect()
    }

    pub fn embed(self, model: &Model, tokens: &[String]) -> Result<Vec<f64>> {
        let (layer, pool) = match self {
            ProbeLayer::EmbMax => (None, Pool::Max),
            ProbeLayer::EmbAvg => (None, Pool::Avg),
            ProbeLayer::Task(t) => (Some(t), Pool::Max),
        };
        sentence_embedding(&model.sentence_states(tokens, layer)?, pool)
    }
}

impl fmt::Display for ProbeLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeLayer::EmbMax => f.write_str("g_emb-max"),
            ProbeLayer::EmbAvg => f.write_str("g_emb-avg"),
            ProbeLayer::Task(t) => write!(f, "g_{t}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" | "tr" => Some(Split::Train),
            "dev" | "va" => Some(Split::Dev),
            "test" | "te" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub split: Split,
    pub label: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTask {
    pub name: String,
    pub examples: Vec<ProbeExample>,
}

/// Column order for well-known task names; others follow in input order.
pub const KNOWN_TASKS: [&str; 10] = [
    "SentLen", "WC", "TreeDepth", "TopConst", "BShift", "Tense", "SubjNum", "ObjNum", "SOMO", "CoordInv",
];

impl ProbeTask {
    pub fn parse_tsv(name: &str, text: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: name.to_string(),
                line: i + 1,
                message,
            };
            let mut parts = line.splitn(3, '\t');
            let (Some(split), Some(label), Some(sentence)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected split<TAB>label<TAB>sentence".into()));
            };
            let split = Split::parse(split.trim()).ok_or_else(|| err(format!("unknown split {split:?}")))?;
            let label = label.trim();
            if label.is_empty() {
                return Err(err("empty label".into()));
            }
            let tokens: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(err("empty sentence".into()));
            }
            examples.push(ProbeExample {
                split,
                label: label.to_string(),
                tokens,
            });
        }
        Ok(Self {
            name: name.to_string(),
            examples,
        })
    }

    /// Load `path`; the task is named after the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::parse_tsv(&name, &text)
    }

    pub fn to_tsv(&self) -> String {
        self.examples
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.split.as_str(), e.label, e.tokens.join(" ")))
            .collect()
    }

    /// Sorted label set.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.examples.iter().map(|e| e.label.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ProbeExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 500, l2: 1e-4 }
    }
}

/// Multinomial logistic regression over standardised features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `k × d`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// Largest eigenvalue of `XᵀX / N` by power iteration.
fn top_eigenvalue(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..50 {
        let mut w = vec![0.0; d];
        for row in x {
            let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (wi, &r) in w.iter_mut().zip(row) {
                *wi += dot * r;
            }
        }
        w.iter_mut().for_each(|wi| *wi /= x.len() as f64);
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|a| a / norm).collect();
    }
    lambda
}

impl LogisticProbe {
    /// Full-batch gradient descent on the L2-penalised cross-entropy with
    /// step `1/L`, `L` bounding the curvature. Labels index `0..k`.
    pub fn fit(x: &[Vec<f64>], y: &[usize], k: usize, cfg: &ProbeConfig) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Probe("probe training split is empty".into()));
        }
        if x.len() != y.len() {
            return Err(Error::Probe("one label per training example is required".into()));
        }
        let distinct: BTreeSet<usize> = y.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(Error::Probe("probe training split has a single class".into()));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::Probe("probe features have inconsistent widths".into()));
        }
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; d];
        for r in x {
            scale.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
        }
        // Constant features keep scale 1 and stay at zero after centring.
        let scale: Vec<f64> = scale.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        let mut probe = Self {
            mean,
            scale,
            weights: vec![vec![0.0; d]; k],
            bias: vec![0.0; k],
        };
        let z: Vec<Vec<f64>> = x.iter().map(|r| probe.standardise(r)).collect();
        let mut with_bias: Vec<Vec<f64>> = z.clone();
        with_bias.iter_mut().for_each(|r| r.push(1.0));
        let lr = 1.0 / (0.5 * top_eigenvalue(&with_bias) * 1.05 + cfg.l2);

        for _ in 0..cfg.epochs {
            let mut gw = vec![vec![0.0; d]; k];
            let mut gb = vec![0.0; k];
            for (zi, &yi) in z.iter().zip(y) {
                let mut p = probe.logits_std(zi);
                softmax_in_place(&mut p);
                p[yi] -= 1.0;
                for c in 0..k {
                    gb[c] += p[c] / n;
                    for (g, &v) in gw[c].iter_mut().zip(zi) {
                        *g += p[c] * v / n;
                    }
                }
            }
            for c in 0..k {
                for (w, g) in probe.weights[c].iter_mut().zip(&gw[c]) {
                    *w -= lr * (g + cfg.l2 * *w);
                }
                probe.bias[c] -= lr * gb[c];
            }
        }
        Ok(probe)
    }

    fn standardise(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn logits_std(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    /// Highest-scoring class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.logits_std(&self.standardise(x));
        let mut best = 0;
        for (c, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let hits = x.iter().zip(y).filter(|(r, &t)| self.predict(r) == t).count();
        hits as f64 / x.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub train: f64,
    /// `None` when the task has no dev split.
    pub dev: Option<f64>,
    pub test: f64,
}

/// Fit a probe on the train split of pre-computed features and score it.
pub fn train_probe(
    features: &[(Split, Vec<f64>, String)],
    cfg: &ProbeConfig,
) -> Result<(LogisticProbe, ProbeResult)> {
    let classes: Vec<&str> = features
        .iter()
        .map(|(_, _, l)| l.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let part = |s: Split| -> (Vec<Vec<f64>>, Vec<usize>) {
        features
            .iter()
            .filter(|(sp, _, _)| *sp == s)
            .map(|(_, x, l)| (x.clone(), classes.binary_search(&l.as_str()).expect("known label")))
            .unzip()
    };
    let (xtr, ytr) = part(Split::Train);
    let (xdv, ydv) = part(Split::Dev);
    let (xte, yte) = part(Split::Test);
    if xte.is_empty() {
        return Err(Error::Probe("probe test split is empty".into()));
    }
    let probe = LogisticProbe::fit(&xtr, &ytr, classes.len(), cfg)?;
    let result = ProbeResult {
        train: probe.accuracy(&xtr, &ytr),
        dev: (!xdv.is_empty()).then(|| probe.accuracy(&xdv, &ydv)),
        test: probe.accuracy(&xte, &yte),
    };
    Ok((probe, result))
}

/// Test accuracies, one row per layer and one column per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub layers: Vec<String>,
    pub tasks: Vec<String>,
    pub accuracy: Vec<Vec<f64>>,
    pub details: Vec<Vec<ProbeResult>>,
}

impl ProbeGrid {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("layer\t{}\n", self.tasks.join("\t"));
        for (l, row) in self.layers.iter().zip(&self.accuracy) {
            let cells: Vec<String> = row.iter().map(|a| format!("{:.2}", 100.0 * a)).collect();
            out.push_str(&format!("{l}\t{}\n", cells.join("\t")));
        }
        out
    }
}

/// Probe every (layer, task) cell. Layers are sorted into grid order and
/// tasks into the well-known column order. The model is only read.
pub fn run_probe_suite(
    model: &Model,
    tasks: &[ProbeTask],
    layers: &[ProbeLayer],
    cfg: &ProbeConfig,
) -> Result<ProbeGrid> {
    let mut layers: Vec<ProbeLayer> = layers.to_vec();
    layers.sort_by_key(|l| l.rank());
    layers.dedup();
    for l in &layers {
        if let ProbeLayer::Task(t) = l {
            if !model.has(*t) {
                return Err(Error::Probe(format!("model has no {l} layer")));
            }
        }
    }
    let mut tasks: Vec<&ProbeTask> = tasks.iter().collect();
    tasks.sort_by_key(|t| KNOWN_TASKS.iter().position(|k| *k == t.name).unwrap_or(KNOWN_TASKS.len()));
    let mut accuracy = Vec::with_capacity(layers.len());
    let mut details = Vec::with_capacity(layers.len());
    for layer in &layers {
        let mut row = Vec::with_capacity(tasks.len());
        let mut detail = Vec::with_capacity(tasks.len());
        for task in &tasks {
            let feats = task
                .examples
                .iter()
                .map(|e| Ok((e.split, layer.embed(model, &e.tokens)?, e.label.clone())))
                .collect::<Result<Vec<_>>>()?;
            let (_, r) = train_probe(&feats, cfg)
                .map_err(|e| Error::Probe(format!("task {} on {layer}: {e}", task.name)))?;
            row.push(r.test);
            detail.push(r);
        }
        accuracy.push(row);
        details.push(detail);
    }
    Ok(ProbeGrid {
        layers: layers.iter().map(ToString::to_string).collect(),
        tasks: tasks.iter().map(|t| t.name.clone()).collect(),
        accuracy,
        details,
    })
}

/// Sizes of the generated probe splits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for ProbeSizes {
    fn default() -> Self {
        Self {
            train: 400,
            dev: 100,
            test: 200,
        }
    }
}

fn synthetic_sentences(seed: u64) -> Vec<Vec<String>> {
    generate_synthetic_corpus(seed, 1000, &SyntheticConfig::default())
        .into_iter()
        .flat_map(|d| d.sentences)
        .collect()
}

fn assign_splits(items: Vec<(String, Vec<String>)>, sizes: ProbeSizes, name: &str) -> Result<ProbeTask> {
    let total = sizes.train + sizes.dev + sizes.test;
    if items.len() < total {
        return Err(Error::Probe(format!(
            "{name}: generator produced {} sentences, {total} requested",
            items.len()
        )));
    }
    let examples = items
        .into_iter()
        .take(total)
        .enumerate()
        .map(|(i, (label, tokens))| ProbeExample {
            split: if i < sizes.train {
                Split::Train
            } else if i < sizes.train + sizes.dev {
                Split::Dev
            } else {
                Split::Test
            },
            label,
            tokens,
        })
        .collect();
    Ok(ProbeTask {
        name: name.to_string(),
        examples,
    })
}

/// SentLen: sentences of 1 to 3 joined corpus sentences, labelled by length
/// bin (`≤8`, `9-16`, `17-24`, `≥25` tokens).
pub fn sentence_length_task(seed: u64, sizes: ProbeSizes) -> Result<ProbeTask> {
    let pool = synthetic_sentences(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51e7);
    let total = sizes.train + sizes.dev + sizes.test;
    let items = (0..total)
        .map(|_| {
            let parts = rng.gen_range(1..=3);
            let tokens: Vec<String> = (0..parts)
                .flat_map(|_| pool.choose(&mut rng).expect("non-empty pool").clone())
                .collect();
            let bin = match tokens.len() {
                0..=8 => "0",
                9..=16 => "1",
                17..=24 => "2",
                _ => "3",
            };
            (bin.to_string(), tokens)
        })
        .collect();
    assign_splits(items, sizes, "SentLen")
}

/// WC: corpus sentences containing exactly one vehicle word, labelled by
/// that word.
pub fn word_content_task(seed: u64, sizes: ProbeSizes) -> Result<ProbeTask> {
    const TARGETS: [&str; 4] = ["bike", "boat", "car", "truck"];
    let mut items: Vec<(String, Vec<String>)> = synthetic_sentences(seed)
        .into_iter()
        .filter_map(|s| {
            let hits: BTreeSet<&str> = s
                .iter()
                .filter_map(|t| TARGETS.iter().find(|w| **w == t.to_lowercase()).copied())
                .collect();
            (hits.len() == 1).then(|| (hits.into_iter().next().expect("one hit").to_string(), s))
        })
        .collect();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x3c));
    assign_splits(items, sizes, "WC")
}

/// BShift: corpus sentences, half with two adjacent words inverted
/// (label `I`), half intact (label `O`).
pub fn bigram_shift_task(seed: u64, sizes: ProbeSizes) -> Result<ProbeTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb5);
    let mut pool: Vec<Vec<String>> = synthetic_sentences(seed).into_iter().filter(|s| s.len() >= 3).collect();
    pool.shuffle(&mut rng);
    let items = pool
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            if i % 2 == 0 {
                // Never move the final punctuation.
                let j = rng.gen_range(0..s.len() - 2);
                s.swap(j, j + 1);
                ("I".to_string(), s)
            } else {
                ("O".to_string(), s)
            }
        })
        .collect();
    assign_splits(items, sizes, "BShift")
}
