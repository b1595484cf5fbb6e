//! Multi-label relation scoring between head tokens.
//!
//! For tokens `i` (first argument) and `j` (second argument) the score vector
//! is `t = V·φ(U·g_j + W·g_i + b)`, and each relation type gets its own
//! sigmoid, so one pair may carry several types at once.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{RelationInstance, Span};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::{sigmoid, Matrix};
use crate::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-12;

/// Plain-value copy of the scorer parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationWeights {
    /// `d × l`
    pub u: Matrix,
    /// `d × l`
    pub w: Matrix,
    /// `1 × d`
    pub b: Matrix,
    /// `r × d`
    pub v: Matrix,
}

impl RelationWeights {
    pub fn zeros(l: usize, d: usize, r: usize) -> Self {
        Self {
            u: Matrix::zeros(d, l),
            w: Matrix::zeros(d, l),
            b: Matrix::zeros(1, d),
            v: Matrix::zeros(r, d),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    /// Raw scores `t` for the ordered pair `(g_i, g_j)` with ReLU as `φ`.
    pub fn logits(&self, gi: &[f64], gj: &[f64]) -> Result<Vec<f64>> {
        let l = self.input_dim();
        if gi.len() != l || gj.len() != l {
            return Err(Error::Dimension(format!(
                "relation scorer expects vectors of length {l}, got {} and {}",
                gi.len(),
                gj.len()
            )));
        }
        let d = self.u.rows();
        let hidden: Vec<f64> = (0..d)
            .map(|k| {
                let uj: f64 = self.u.row(k).iter().zip(gj).map(|(a, b)| a * b).sum();
                let wi: f64 = self.w.row(k).iter().zip(gi).map(|(a, b)| a * b).sum();
                (uj + wi + self.b.get(0, k)).max(0.0)
            })
            .collect();
        Ok((0..self.v.rows())
            .map(|r| self.v.row(r).iter().zip(&hidden).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// `σ(V·φ(U·g_j + W·g_i + b))`.
pub fn score_pair(gi: &[f64], gj: &[f64], weights: &RelationWeights) -> Result<Vec<f64>> {
    Ok(weights.logits(gi, gj)?.into_iter().map(sigmoid).collect())
}

/// Summed binary cross-entropy over all `(pair, type)` cells.
pub fn relation_loss(probs: &[f64], targets: &[bool]) -> f64 {
    assert_eq!(probs.len(), targets.len());
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            if t {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Binary cross-entropy computed from logits, with its gradient.
pub fn bce_with_logits(logits: &Matrix, targets: &Matrix) -> (f64, Matrix) {
    assert_eq!(logits.shape(), targets.shape());
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (k, (&x, &y)) in logits.data().iter().zip(targets.data()).enumerate() {
        // log(1 + e^x) − y·x, evaluated without overflow
        loss += x.max(0.0) + (-x.abs()).exp().ln_1p() - y * x;
        grad.data_mut()[k] = sigmoid(x) - y;
    }
    (loss, grad)
}

/// Emit `(type k, arg1, arg2)` for every scored pair with `p_k > τ`.
/// `pairs` hold last-token indices; `heads` maps a last token to its head span.
pub fn decode_relations(
    pairs: &[(usize, usize)],
    probs: &Matrix,
    heads: &BTreeMap<usize, Span>,
    types: &[String],
    threshold: f64,
) -> Vec<RelationInstance> {
    let mut out = BTreeSet::new();
    for (row, &(i, j)) in pairs.iter().enumerate() {
        let (Some(a1), Some(a2)) = (heads.get(&i), heads.get(&j)) else {
            continue;
        };
        for (k, ty) in types.iter().enumerate() {
            if probs.get(row, k) > threshold {
                out.insert(RelationInstance {
                    rel_type: ty.clone(),
                    arg1: *a1,
                    arg2: *a2,
                });
            }
        }
    }
    out.into_iter().collect()
}

/// Ordered pairs of distinct candidate tokens; the scoring set is
/// `m(m − 1)` pairs for `m` candidates.
pub fn candidate_pairs(tokens: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(tokens.len() * tokens.len().saturating_sub(1));
    for &i in tokens {
        for &j in tokens {
            if i != j {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationConfig {
    pub hidden: usize,
    pub threshold: f64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            threshold: 0.5,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("relation.hidden must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("relation.threshold must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RelationHead {
    pub config: RelationConfig,
    pub types: Vec<String>,
    pub input_dim: usize,
    pub u: ParamId,
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

impl RelationHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        types: Vec<String>,
        config: RelationConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if types.is_empty() {
            return Err(Error::Config("relation head needs at least one type".into()));
        }
        let d = config.hidden;
        Ok(Self {
            u: store.add(format!("{prefix}.u"), Group::Re, Matrix::xavier(d, input_dim, rng)),
            w: store.add(format!("{prefix}.w"), Group::Re, Matrix::xavier(d, input_dim, rng)),
            b: store.add(format!("{prefix}.b"), Group::Re, Matrix::zeros(1, d)),
            v: store.add(
                format!("{prefix}.v"),
                Group::Re,
                Matrix::xavier(types.len(), d, rng),
            ),
            config,
            types,
            input_dim,
        })
    }

    pub fn weights(&self, store: &ParamStore) -> RelationWeights {
        RelationWeights {
            u: store.value(self.u).clone(),
            w: store.value(self.w).clone(),
            b: store.value(self.b).clone(),
            v: store.value(self.v).clone(),
        }
    }

    /// Logits for every pair, one row per pair; `pairs` index rows of `g`.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        g: Var,
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let (n, l) = graph.shape(g);
        if l != self.input_dim {
            return Err(Error::Dimension(format!(
                "relation head expects width {}, got {l}",
                self.input_dim
            )));
        }
        if pairs.iter().any(|&(i, j)| i >= n || j >= n) {
            return Err(Error::Dimension("relation pair outside the sentence".into()));
        }
        let first: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let u = graph.param(store, self.u);
        let w = graph.param(store, self.w);
        let b = graph.param(store, self.b);
        let v = graph.param(store, self.v);
        let from_i = graph.matmul_t(g, w);
        let from_i = graph.add_row(from_i, b);
        let from_j = graph.matmul_t(g, u);
        let a = graph.gather(from_i, &first);
        let c = graph.gather(from_j, &second);
        let h = graph.add(a, c);
        let h = graph.relu(h);
        Ok(graph.matmul_t(h, v))
    }

    /// 0/1 targets aligned with `pairs` for gold relations given as
    /// `(arg1 last token, arg2 last token, type)`.
    pub fn targets(&self, pairs: &[(usize, usize)], gold: &[(usize, usize, String)]) -> Matrix {
        let mut t = Matrix::zeros(pairs.len(), self.types.len());
        let row_of: BTreeMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(r, &p)| (p, r)).collect();
        for (i, j, ty) in gold {
            if let (Some(&r), Some(k)) =
                (row_of.get(&(*i, *j)), self.types.iter().position(|x| x == ty))
            {
                t.set(r, k, 1.0);
            }
        }
        t
    }

    pub fn loss(&self, graph: &mut Graph, logits: Var, targets: &Matrix) -> Var {
        let (loss, grad) = bce_with_logits(graph.value(logits), targets);
        graph.scalar_op(loss, vec![(logits, grad)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_weights() -> RelationWeights {
        RelationWeights {
            u: Matrix::filled(1, 1, 1.0),
            w: Matrix::filled(1, 1, 1.0),
            b: Matrix::zeros(1, 1),
            v: Matrix::filled(1, 1, 1.0),
        }
    }

    #[test]
    fn hand_evaluated_instance() {
        let p = score_pair(&[1.0], &[2.0], &unit_weights()).unwrap();
        assert!((p[0] - 0.95257).abs() < 1e-5);
        let z = score_pair(&[0.3, -2.0], &[1.0, 4.0], &RelationWeights::zeros(2, 3, 6)).unwrap();
        assert_eq!(z, vec![0.5; 6]);
    }

    #[test]
    fn asymmetric_in_arguments() {
        let mut wts = unit_weights();
        wts.w = Matrix::filled(1, 1, -1.0);
        let ab = score_pair(&[1.0], &[2.0], &wts).unwrap();
        let ba = score_pair(&[2.0], &[1.0], &wts).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            score_pair(&[1.0, 2.0], &[1.0], &unit_weights()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn loss_examples() {
        assert!(relation_loss(&[1.0, 0.0], &[true, false]) < 1e-11);
        assert!((relation_loss(&[0.5], &[true]) - 2f64.ln()).abs() < 1e-15);
        let l = relation_loss(&[0.8, 0.3], &[true, false]);
        assert!((l - (-(0.8f64).ln() - (0.7f64).ln())).abs() < 1e-12);
        assert!((l - 0.5798).abs() < 1e-4);
    }

    #[test]
    fn logit_loss_matches_probability_loss() {
        let logits = Matrix::from_vec(1, 3, vec![-2.0, 0.3, 5.0]);
        let targets = Matrix::from_vec(1, 3, vec![1.0, 0.0, 1.0]);
        let (l, _) = bce_with_logits(&logits, &targets);
        let p: Vec<f64> = logits.data().iter().map(|&x| sigmoid(x)).collect();
        assert!((l - relation_loss(&p, &[true, false, true])).abs() < 1e-12);
    }

    #[test]
    fn decoding_examples() {
        let types: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let heads: BTreeMap<usize, Span> =
            [(1, Span::new(0, 1)), (4, Span::new(4, 4))].into_iter().collect();
        let one = decode_relations(&[(1, 4)], &Matrix::from_vec(1, 2, vec![0.6, 0.4]), &heads, &types, 0.5);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].rel_type, "A");
        assert_eq!(one[0].arg1, Span::new(0, 1));
        let two = decode_relations(&[(1, 4)], &Matrix::from_vec(1, 2, vec![0.7, 0.9]), &heads, &types, 0.5);
        assert_eq!(two.len(), 2);
        let none = decode_relations(&[(1, 4)], &Matrix::from_vec(1, 2, vec![0.2, 0.4]), &heads, &types, 0.5);
        assert!(none.is_empty());
    }

    #[test]
    fn graph_logits_match_pure_scorer() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let types: Vec<String> = (0..3).map(|k| format!("T{k}")).collect();
        let cfg = RelationConfig { hidden: 4, threshold: 0.5 };
        let head = RelationHead::new(&mut store, "re", 5, types, cfg, &mut rng).unwrap();
        let g = Matrix::uniform(4, 5, 1.0, &mut rng);
        let pairs = candidate_pairs(&[0, 2, 3]);
        assert_eq!(pairs.len(), 6);
        let mut graph = Graph::new();
        let gv = graph.constant(g.clone());
        let logits = head.forward(&mut graph, &store, gv, &pairs).unwrap();
        assert_eq!(graph.shape(logits), (6, 3));
        let wts = head.weights(&store);
        for (r, &(i, j)) in pairs.iter().enumerate() {
            let want = wts.logits(g.row(i), g.row(j)).unwrap();
            for k in 0..3 {
                assert!((graph.value(logits).get(r, k) - want[k]).abs() < 1e-12);
            }
        }
    }
}
