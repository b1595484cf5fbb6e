//! Span-ranking coreference.
//!
//! Every span up to `max_width` tokens inside one sentence is a candidate
//! mention. A mention scorer keeps the best `⌈λ·n⌉` of them, and each kept
//! span then picks an antecedent among earlier kept spans or the dummy `ε`.
//! The pair score is `m(i) + m(j) + f(i, j)` and `ε` always scores 0.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{Document, Span};
use crate::layers::Ffnn;
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::{logsumexp, Matrix};
use crate::{Error, Result};

/// Buckets `{1, 2, 3, 4, 5-7, 8+}`.
pub const NUM_BUCKETS: usize = 6;

pub fn bucket(v: usize) -> usize {
    match v {
        0..=1 => 0,
        2..=4 => v - 1,
        5..=7 => 4,
        _ => 5,
    }
}

/// All spans of width `1..=max_width` in lexicographic `(start, end)` order.
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for s in 0..n {
        for e in s..n.min(s + max_width) {
            out.push(Span::new(s, e));
        }
    }
    out
}

/// Indices of the top `⌈ratio·n⌉` spans by score (ties go to the earlier
/// span), returned in document order.
pub fn prune_mentions(spans: &[Span], scores: &[f64], ratio: f64, n: usize) -> Vec<usize> {
    assert_eq!(spans.len(), scores.len());
    let keep = ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(spans[a].cmp(&spans[b]))
    });
    order.truncate(keep.min(spans.len()));
    order.sort_by_key(|&i| spans[i]);
    order
}

/// Mention and pair scores for one document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorefScores {
    pub spans: Vec<Span>,
    /// `m(i)`
    pub mention: Vec<f64>,
    /// Candidate antecedents of span `i`, as indices of earlier spans.
    pub antecedents: Vec<Vec<usize>>,
    /// `f(i, j)` aligned with `antecedents`.
    pub pair: Vec<Vec<f64>>,
}

impl CorefScores {
    /// `s(i, j) = m(i) + m(j) + f(i, j)` for the `a`-th candidate of `i`.
    pub fn score(&self, i: usize, a: usize) -> f64 {
        self.mention[i] + self.mention[self.antecedents[i][a]] + self.pair[i][a]
    }

    /// Antecedent distribution of span `i`; entry 0 is `ε`.
    pub fn antecedent_probs(&self, i: usize) -> Vec<f64> {
        let mut s = vec![0.0];
        s.extend((0..self.antecedents[i].len()).map(|a| self.score(i, a)));
        let z = logsumexp(&s);
        s.iter().map(|v| (v - z).exp()).collect()
    }

    /// Positions in `antecedents[i]` that are gold antecedents; empty means `ε`.
    pub fn gold_antecedents(&self, gold_clusters: &[Vec<Span>]) -> Vec<Vec<usize>> {
        let mut cluster_of: BTreeMap<Span, usize> = BTreeMap::new();
        for (c, cluster) in gold_clusters.iter().enumerate() {
            for s in cluster {
                cluster_of.insert(*s, c);
            }
        }
        (0..self.spans.len())
            .map(|i| match cluster_of.get(&self.spans[i]) {
                None => Vec::new(),
                Some(ci) => self.antecedents[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, &j)| cluster_of.get(&self.spans[j]) == Some(ci))
                    .map(|(a, _)| a)
                    .collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorefGrads {
    pub mention: Vec<f64>,
    pub pair: Vec<Vec<f64>>,
}

/// Negative marginal log-likelihood of the gold antecedents, summed over
/// spans.
pub fn coref_loss(scores: &CorefScores, gold_clusters: &[Vec<Span>]) -> f64 {
    coref_loss_with_grad(scores, gold_clusters).0
}

pub fn coref_loss_with_grad(
    scores: &CorefScores,
    gold_clusters: &[Vec<Span>],
) -> (f64, CorefGrads) {
    let gold = scores.gold_antecedents(gold_clusters);
    let mut grads = CorefGrads {
        mention: vec![0.0; scores.spans.len()],
        pair: scores.pair.iter().map(|p| vec![0.0; p.len()]).collect(),
    };
    let mut loss = 0.0;
    for i in 0..scores.spans.len() {
        let k = scores.antecedents[i].len();
        let mut s = vec![0.0];
        s.extend((0..k).map(|a| scores.score(i, a)));
        let gold_idx: Vec<usize> = if gold[i].is_empty() {
            vec![0]
        } else {
            gold[i].iter().map(|a| a + 1).collect()
        };
        let z_all = logsumexp(&s);
        let gold_s: Vec<f64> = gold_idx.iter().map(|&c| s[c]).collect();
        let z_gold = logsumexp(&gold_s);
        loss += z_all - z_gold;
        for a in 0..k {
            let p = (s[a + 1] - z_all).exp();
            let q = if gold_idx.contains(&(a + 1)) {
                (s[a + 1] - z_gold).exp()
            } else {
                0.0
            };
            let d = p - q;
            grads.pair[i][a] += d;
            grads.mention[i] += d;
            grads.mention[scores.antecedents[i][a]] += d;
        }
    }
    (loss, grads)
}

/// Link every span to its best antecedent when that beats `ε`, then return
/// the connected components with at least two members.
pub fn decode_clusters(scores: &CorefScores) -> Vec<Vec<Span>> {
    let n = scores.spans.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for a in 0..scores.antecedents[i].len() {
            let s = scores.score(i, a);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((a, s));
            }
        }
        if let Some((a, s)) = best {
            if s > 0.0 {
                let j = scores.antecedents[i][a];
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<Span>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(scores.spans[i]);
    }
    let mut clusters: Vec<Vec<Span>> = groups
        .into_values()
        .filter(|c| c.len() >= 2)
        .map(|mut c| {
            c.sort();
            c
        })
        .collect();
    clusters.sort();
    clusters
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorefConfig {
    pub max_width: usize,
    pub ratio: f64,
    pub max_antecedents: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    /// Dropout on span representations during training.
    #[serde(default)]
    pub dropout: f64,
}

impl Default for CorefConfig {
    fn default() -> Self {
        Self {
            max_width: 10,
            ratio: 0.4,
            max_antecedents: 50,
            feature_dim: 20,
            hidden: 150,
            dropout: 0.2,
        }
    }
}

impl CorefConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_width == 0 {
            return Err(Error::Config("coref.max_width must be at least 1".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config("coref.ratio must be in (0, 1]".into()));
        }
        if self.max_antecedents == 0 || self.feature_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "coref.max_antecedents, coref.feature_dim and coref.hidden must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("coref.dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Where candidate mentions come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Candidates {
    /// Enumerate and prune.
    Predicted,
    /// Use exactly these spans, without pruning.
    Gold(Vec<Span>),
}

/// Scores plus the graph nodes they were read from.
pub struct CorefForward {
    pub scores: CorefScores,
    /// `N × 1` mention scores over `scores.spans`.
    pub mention_var: Var,
    /// Pair scores flattened in `(i, a)` order, `P × 1`; `None` without pairs.
    pub pair_var: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct CorefHead {
    pub config: CorefConfig,
    pub input_dim: usize,
    /// Width of the token embeddings pooled into the head part.
    pub embed_dim: usize,
    pub attention: ParamId,
    pub width_table: ParamId,
    pub distance_table: ParamId,
    pub mention_ffnn: Ffnn,
    pub pair_ffnn: Ffnn,
}

impl CorefHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        embed_dim: usize,
        config: CorefConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let fd = config.feature_dim;
        let repr = 2 * input_dim + embed_dim + fd;
        let attention = store.add(
            format!("{prefix}.attention"),
            Group::Cr,
            Matrix::xavier(input_dim, 1, rng),
        );
        let width_table = store.add(
            format!("{prefix}.width"),
            Group::Cr,
            Matrix::uniform(NUM_BUCKETS, fd, 0.1, rng),
        );
        let distance_table = store.add(
            format!("{prefix}.distance"),
            Group::Cr,
            Matrix::uniform(NUM_BUCKETS, fd, 0.1, rng),
        );
        let mention_ffnn = Ffnn::new(
            store,
            &format!("{prefix}.mention"),
            Group::Cr,
            &[repr, config.hidden, 1],
            rng,
        );
        let pair_ffnn = Ffnn::new(
            store,
            &format!("{prefix}.pair"),
            Group::Cr,
            &[3 * repr + fd, config.hidden, 1],
            rng,
        );
        Ok(Self {
            config,
            input_dim,
            embed_dim,
            attention,
            width_table,
            distance_table,
            mention_ffnn,
            pair_ffnn,
        })
    }

    pub fn repr_dim(&self) -> usize {
        2 * self.input_dim + self.embed_dim + self.config.feature_dim
    }

    /// Candidate spans of `doc` that stay inside one sentence.
    pub fn candidate_spans(&self, doc: &Document) -> Vec<Span> {
        enumerate_spans(doc.token_count(), self.config.max_width)
            .into_iter()
            .filter(|s| doc.sentence_of(s.start) == doc.sentence_of(s.end))
            .collect()
    }

    /// `[g_start ; g_end ; attended head ; width embedding]` for each span.
    /// Attention scores come from `g`; the head pools the embeddings `x`.
    pub fn span_repr(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        g: Var,
        x: Var,
        spans: &[Span],
    ) -> Var {
        let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
        let ends: Vec<usize> = spans.iter().map(|s| s.end).collect();
        let widths: Vec<usize> = spans.iter().map(|s| bucket(s.width())).collect();
        let pairs: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
        let att = graph.param(store, self.attention);
        let alpha = graph.matmul(g, att);
        let head = graph.span_attention(x, alpha, &pairs);
        let gs = graph.gather(g, &starts);
        let ge = graph.gather(g, &ends);
        let wt = graph.param(store, self.width_table);
        let w = graph.gather(wt, &widths);
        graph.concat_cols(&[gs, ge, head, w])
    }

    /// Score a document whose CR-level token representations are `g`
    /// (`n × input_dim`) and token embeddings are `x` (`n × embed_dim`),
    /// sentences concatenated.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        g: Var,
        x: Var,
        doc: &Document,
        candidates: &Candidates,
    ) -> Result<CorefForward> {
        let (n, d) = graph.shape(g);
        if d != self.input_dim {
            return Err(Error::Dimension(format!(
                "coref head expects width {}, got {d}",
                self.input_dim
            )));
        }
        if graph.shape(x) != (n, self.embed_dim) {
            return Err(Error::Dimension(format!(
                "coref head expects {n} × {} embeddings, got {:?}",
                self.embed_dim,
                graph.shape(x)
            )));
        }
        let all = match candidates {
            Candidates::Predicted => self.candidate_spans(doc),
            Candidates::Gold(spans) => {
                let mut s = spans.clone();
                s.sort();
                s.dedup();
                s
            }
        };
        if let Some(bad) = all.iter().find(|s| s.end >= n) {
            return Err(Error::Dimension(format!(
                "span ({}, {}) outside a {n}-token document",
                bad.start, bad.end
            )));
        }
        if all.is_empty() {
            let mention_var = graph.constant(Matrix::zeros(0, 1));
            return Ok(CorefForward {
                scores: CorefScores::default(),
                mention_var,
                pair_var: None,
            });
        }
        let repr_all = self.span_repr(graph, store, g, x, &all);
        let repr_all = graph.input_dropout(repr_all, self.config.dropout);
        let m_all = self.mention_ffnn.forward(graph, store, repr_all);
        let kept: Vec<usize> = match candidates {
            Candidates::Predicted => {
                let ms: Vec<f64> = graph.value(m_all).data().to_vec();
                prune_mentions(&all, &ms, self.config.ratio, n)
            }
            Candidates::Gold(_) => (0..all.len()).collect(),
        };
        let spans: Vec<Span> = kept.iter().map(|&i| all[i]).collect();
        let repr = graph.gather(repr_all, &kept);
        let mention_var = graph.gather(m_all, &kept);
        let mention: Vec<f64> = graph.value(mention_var).data().to_vec();

        let mut antecedents = Vec::with_capacity(spans.len());
        let (mut pi, mut pj, mut dist) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..spans.len() {
            let lo = i.saturating_sub(self.config.max_antecedents);
            let ants: Vec<usize> = (lo..i).collect();
            for &j in &ants {
                pi.push(i);
                pj.push(j);
                dist.push(bucket(spans[i].start - spans[j].start));
            }
            antecedents.push(ants);
        }
        let (pair, pair_var) = if pi.is_empty() {
            (vec![Vec::new(); spans.len()], None)
        } else {
            let ri = graph.gather(repr, &pi);
            let rj = graph.gather(repr, &pj);
            let prod = graph.mul(ri, rj);
            let dt = graph.param(store, self.distance_table);
            let de = graph.gather(dt, &dist);
            let x = graph.concat_cols(&[ri, rj, prod, de]);
            let f = self.pair_ffnn.forward(graph, store, x);
            let flat = graph.value(f).data();
            let mut pair = Vec::with_capacity(spans.len());
            let mut k = 0;
            for ants in &antecedents {
                pair.push(flat[k..k + ants.len()].to_vec());
                k += ants.len();
            }
            (pair, Some(f))
        };
        Ok(CorefForward {
            scores: CorefScores {
                spans,
                mention,
                antecedents,
                pair,
            },
            mention_var,
            pair_var,
        })
    }

    /// The marginal-likelihood loss as a graph node.
    pub fn loss(&self, graph: &mut Graph, fwd: &CorefForward, gold_clusters: &[Vec<Span>]) -> Var {
        let (loss, grads) = coref_loss_with_grad(&fwd.scores, gold_clusters);
        let mut parts = vec![(
            fwd.mention_var,
            Matrix::from_vec(grads.mention.len(), 1, grads.mention),
        )];
        if let Some(p) = fwd.pair_var {
            let flat: Vec<f64> = grads.pair.into_iter().flatten().collect();
            parts.push((p, Matrix::from_vec(flat.len(), 1, flat)));
        }
        graph.scalar_op(loss, parts)
    }
}
