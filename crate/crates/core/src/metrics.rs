//! Span, relation and coreference metrics.
//!
//! Every metric is computed from a [`Tally`] of precision and recall
//! numerators and denominators, so corpus-level scores are micro averages
//! obtained by summing tallies over documents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{RelationInstance, Span, TaggedSpan};
use crate::Task;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Tally {
    pub fn counts(correct: usize, predicted: usize, gold: usize) -> Self {
        Self {
            p_num: correct as f64,
            p_den: predicted as f64,
            r_num: correct as f64,
            r_den: gold as f64,
        }
    }

    pub fn add(&mut self, other: &Tally) {
        self.p_num += other.p_num;
        self.p_den += other.p_den;
        self.r_num += other.r_num;
        self.r_den += other.r_den;
    }

    pub fn swapped(&self) -> Self {
        Self {
            p_num: self.r_num,
            p_den: self.r_den,
            r_num: self.p_num,
            r_den: self.p_den,
        }
    }

    pub fn prf(&self) -> Prf {
        let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
        Prf::new(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }
}

fn exact_match_tally<T: Ord>(pred: impl IntoIterator<Item = T>, gold: impl IntoIterator<Item = T>) -> Tally {
    let pred: BTreeSet<T> = pred.into_iter().collect();
    let gold: BTreeSet<T> = gold.into_iter().collect();
    Tally::counts(pred.intersection(&gold).count(), pred.len(), gold.len())
}

/// Exact `(start, end, label)` matches, duplicates collapsed.
pub fn span_tally(pred: &[TaggedSpan], gold: &[TaggedSpan]) -> Tally {
    exact_match_tally(pred.iter(), gold.iter())
}

pub fn span_f1(pred: &[TaggedSpan], gold: &[TaggedSpan]) -> Prf {
    span_tally(pred, gold).prf()
}

fn relation_key(r: &RelationInstance) -> (usize, usize, &str) {
    (r.arg1.end, r.arg2.end, r.rel_type.as_str())
}

/// Matches on `(arg1 last token, arg2 last token, type)`.
pub fn relation_tally(pred: &[RelationInstance], gold: &[RelationInstance]) -> Tally {
    exact_match_tally(pred.iter().map(relation_key), gold.iter().map(relation_key))
}

pub fn relation_f1(pred: &[RelationInstance], gold: &[RelationInstance]) -> Prf {
    relation_tally(pred, gold).prf()
}

fn cluster_index<T: Ord + Clone>(clusters: &[Vec<T>]) -> BTreeMap<T, usize> {
    let mut out = BTreeMap::new();
    for (c, cluster) in clusters.iter().enumerate() {
        for m in cluster {
            out.insert(m.clone(), c);
        }
    }
    out
}

fn muc_recall_terms<T: Ord + Clone>(key: &[Vec<T>], response: &[Vec<T>]) -> (f64, f64) {
    let index = cluster_index(response);
    let mut num = 0.0;
    let mut den = 0.0;
    for cluster in key {
        let distinct: BTreeSet<T> = cluster.iter().cloned().collect();
        if distinct.is_empty() {
            continue;
        }
        let mut parts = BTreeSet::new();
        let mut unmatched = 0usize;
        for m in &distinct {
            match index.get(m) {
                Some(c) => {
                    parts.insert(*c);
                }
                None => unmatched += 1,
            }
        }
        num += (distinct.len() - parts.len() - unmatched) as f64;
        den += (distinct.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_tally<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Tally {
    let (r_num, r_den) = muc_recall_terms(gold, pred);
    let (p_num, p_den) = muc_recall_terms(pred, gold);
    Tally {
        p_num,
        p_den,
        r_num,
        r_den,
    }
}

pub fn muc<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Prf {
    muc_tally(pred, gold).prf()
}

fn b_cubed_recall_terms<T: Ord + Clone>(key: &[Vec<T>], response: &[Vec<T>]) -> (f64, f64) {
    let resp_sets: Vec<BTreeSet<T>> = response.iter().map(|c| c.iter().cloned().collect()).collect();
    let index = cluster_index(response);
    let mut num = 0.0;
    let mut den = 0.0;
    for cluster in key {
        let k: BTreeSet<T> = cluster.iter().cloned().collect();
        for m in &k {
            den += 1.0;
            if let Some(&c) = index.get(m) {
                num += k.intersection(&resp_sets[c]).count() as f64 / k.len() as f64;
            }
        }
    }
    (num, den)
}

pub fn b_cubed_tally<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Tally {
    let (r_num, r_den) = b_cubed_recall_terms(gold, pred);
    let (p_num, p_den) = b_cubed_recall_terms(pred, gold);
    Tally {
        p_num,
        p_den,
        r_num,
        r_den,
    }
}

pub fn b_cubed<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Prf {
    b_cubed_tally(pred, gold).prf()
}

/// `φ₄(g, p) = 2|g ∩ p| / (|g| + |p|)`.
pub fn phi4<T: Ord + Clone>(gold: &[T], pred: &[T]) -> f64 {
    let g: BTreeSet<&T> = gold.iter().collect();
    let p: BTreeSet<&T> = pred.iter().collect();
    if g.is_empty() && p.is_empty() {
        return 0.0;
    }
    2.0 * g.intersection(&p).count() as f64 / (g.len() + p.len()) as f64
}

/// Maximum-weight one-to-one assignment for a rectangular similarity matrix.
/// Returns, for each row, the matched column if any.
pub fn max_assignment(sim: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let top = sim
        .iter()
        .flatten()
        .copied()
        .fold(0.0f64, f64::max);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            top - sim[i][j]
        } else {
            top
        }
    };
    // shortest augmenting path with potentials, 1-based with a virtual 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Total `φ₄` of the best one-to-one alignment of gold to predicted clusters.
pub fn ceaf_e_similarity<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> f64 {
    let sim: Vec<Vec<f64>> = gold
        .iter()
        .map(|g| pred.iter().map(|p| phi4(g, p)).collect())
        .collect();
    max_assignment(&sim)
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| sim[i][j]))
        .sum()
}

pub fn ceaf_e_tally<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Tally {
    let total = ceaf_e_similarity(pred, gold);
    Tally {
        p_num: total,
        p_den: pred.len() as f64,
        r_num: total,
        r_den: gold.len() as f64,
    }
}

pub fn ceaf_e<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Prf {
    ceaf_e_tally(pred, gold).prf()
}

/// Keep only predicted mentions that are gold mentions; clusters left with
/// fewer than two members are dropped.
pub fn restrict_to_mentions(pred: &[Vec<Span>], mentions: &BTreeSet<Span>) -> Vec<Vec<Span>> {
    pred.iter()
        .map(|c| c.iter().copied().filter(|m| mentions.contains(m)).collect::<Vec<_>>())
        .filter(|c| c.len() >= 2)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorefTally {
    pub muc: Tally,
    pub b_cubed: Tally,
    pub ceaf_e: Tally,
}

impl CorefTally {
    pub fn of<T: Ord + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Self {
        Self {
            muc: muc_tally(pred, gold),
            b_cubed: b_cubed_tally(pred, gold),
            ceaf_e: ceaf_e_tally(pred, gold),
        }
    }

    pub fn add(&mut self, other: &CorefTally) {
        self.muc.add(&other.muc);
        self.b_cubed.add(&other.b_cubed);
        self.ceaf_e.add(&other.ceaf_e);
    }

    pub fn report(&self) -> CorefReport {
        CorefReport::new(self.muc.prf(), self.b_cubed.prf(), self.ceaf_e.prf())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorefReport {
    pub muc: Prf,
    pub b_cubed: Prf,
    pub ceaf_e: Prf,
    pub avg_f1: f64,
}

impl CorefReport {
    pub fn new(muc: Prf, b_cubed: Prf, ceaf_e: Prf) -> Self {
        Self {
            muc,
            b_cubed,
            ceaf_e,
            avg_f1: (muc.f1 + b_cubed.f1 + ceaf_e.f1) / 3.0,
        }
    }
}

/// Scores for one task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TaskMetrics {
    Span(Prf),
    Relation(Prf),
    Coref(CorefReport),
}

impl TaskMetrics {
    /// F1 for span and relation tasks, the average F1 for coreference.
    pub fn primary(&self) -> f64 {
        match self {
            TaskMetrics::Span(p) | TaskMetrics::Relation(p) => p.f1,
            TaskMetrics::Coref(c) => c.avg_f1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tasks: BTreeMap<Task, TaskMetrics>,
}

impl MetricReport {
    pub fn get(&self, task: Task) -> Option<&TaskMetrics> {
        self.tasks.get(&task)
    }

    /// Unweighted mean of the per-task primary scores.
    pub fn mean_primary(&self) -> f64 {
        if self.tasks.is_empty() {
            return 0.0;
        }
        self.tasks.values().map(TaskMetrics::primary).sum::<f64>() / self.tasks.len() as f64
    }

    /// One row per task in NER, EMD, RE, CR order, values in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let pct = |x: f64| format!("{:6.2}", 100.0 * x);
        for task in Task::ALL {
            let Some(m) = self.tasks.get(&task) else { continue };
            match m {
                TaskMetrics::Span(p) | TaskMetrics::Relation(p) => {
                    let _ = writeln!(
                        out,
                        "{:<4} P {} R {} F1 {}",
                        task.as_str().to_uppercase(),
                        pct(p.precision),
                        pct(p.recall),
                        pct(p.f1)
                    );
                }
                TaskMetrics::Coref(c) => {
                    let _ = writeln!(
                        out,
                        "{:<4} MUC P {} R {} F1 {} | B3 P {} R {} F1 {} | CEAFe P {} R {} F1 {} | Avg F1 {}",
                        task.as_str().to_uppercase(),
                        pct(c.muc.precision),
                        pct(c.muc.recall),
                        pct(c.muc.f1),
                        pct(c.b_cubed.precision),
                        pct(c.b_cubed.recall),
                        pct(c.b_cubed.f1),
                        pct(c.ceaf_e.precision),
                        pct(c.ceaf_e.recall),
                        pct(c.ceaf_e.f1),
                        pct(c.avg_f1)
                    );
                }
            }
        }
        out
    }
}
