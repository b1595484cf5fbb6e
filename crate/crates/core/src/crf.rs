//! Linear-chain CRF over BILOU tags.
//!
//! Tag index layout for a label set `L`: `0` is `O`, and label `l` owns
//! `B = 1 + 4l`, `I = 2 + 4l`, `L = 3 + 4l`, `U = 4 + 4l`.

use crate::autograd::{Graph, Var};
use crate::corpus::TaggedSpan;
use crate::tensor::{logsumexp, Matrix};
use crate::{Error, Result};

/// Score used to forbid a transition when decoding with the BILOU mask.
pub const MASKED: f64 = -1e6;

/// A decoded tag with its label index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
    Last(usize),
    Unit(usize),
}

/// How an `I`/`L` tag whose label differs from the open span is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelConflict {
    /// Absorb it into the open span, keeping the span-initial label.
    KeepInitial,
    /// Close the open span and start a new one.
    Split,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct Decoded {
    /// `(start, end, label)` triples, inclusive.
    pub spans: Vec<(usize, usize, usize)>,
    /// `I`/`L` tags that had no compatible open span.
    pub orphans: usize,
}

/// Turn an arbitrary tag sequence into well-formed, non-overlapping spans.
/// An orphan `I` opens a span and an orphan `L` becomes a one-token span;
/// spans left open by `O`, `B`, `U` or the end of input are closed there.
pub fn decode_tags(tags: &[Tag], conflict: LabelConflict) -> Decoded {
    let mut out = Decoded::default();
    let mut open: Option<(usize, usize)> = None;
    for (t, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                if let Some((s, l)) = open.take() {
                    out.spans.push((s, t - 1, l));
                }
            }
            Tag::Unit(l) => {
                if let Some((s, ol)) = open.take() {
                    out.spans.push((s, t - 1, ol));
                }
                out.spans.push((t, t, l));
            }
            Tag::Begin(l) => {
                if let Some((s, ol)) = open.take() {
                    out.spans.push((s, t - 1, ol));
                }
                open = Some((t, l));
            }
            Tag::Inside(l) => match open {
                Some((_, ol)) if ol == l => {}
                Some((s, ol)) => {
                    out.orphans += 1;
                    if conflict == LabelConflict::Split {
                        out.spans.push((s, t - 1, ol));
                        open = Some((t, l));
                    }
                }
                None => {
                    out.orphans += 1;
                    open = Some((t, l));
                }
            },
            Tag::Last(l) => match open.take() {
                Some((s, ol)) if ol == l => out.spans.push((s, t, ol)),
                Some((s, ol)) => {
                    out.orphans += 1;
                    match conflict {
                        LabelConflict::KeepInitial => out.spans.push((s, t, ol)),
                        LabelConflict::Split => {
                            out.spans.push((s, t - 1, ol));
                            out.spans.push((t, t, l));
                        }
                    }
                }
                None => {
                    out.orphans += 1;
                    out.spans.push((t, t, l));
                }
            },
        }
    }
    if let Some((s, l)) = open {
        out.spans.push((s, tags.len() - 1, l));
    }
    out
}

/// The BILOU tag set derived from a label set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BilouTagset {
    labels: Vec<String>,
}

impl BilouTagset {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Self {
        Self {
            labels: labels.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_tags(&self) -> usize {
        4 * self.labels.len() + 1
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn encode(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Begin(l) => 1 + 4 * l,
            Tag::Inside(l) => 2 + 4 * l,
            Tag::Last(l) => 3 + 4 * l,
            Tag::Unit(l) => 4 + 4 * l,
        }
    }

    /// Panics if `index >= num_tags()`.
    pub fn decode(&self, index: usize) -> Tag {
        assert!(index < self.num_tags(), "tag index out of range");
        if index == 0 {
            return Tag::Outside;
        }
        let l = (index - 1) / 4;
        match (index - 1) % 4 {
            0 => Tag::Begin(l),
            1 => Tag::Inside(l),
            2 => Tag::Last(l),
            _ => Tag::Unit(l),
        }
    }

    pub fn tag_name(&self, index: usize) -> String {
        match self.decode(index) {
            Tag::Outside => "O".to_string(),
            Tag::Begin(l) => format!("B-{}", self.labels[l]),
            Tag::Inside(l) => format!("I-{}", self.labels[l]),
            Tag::Last(l) => format!("L-{}", self.labels[l]),
            Tag::Unit(l) => format!("U-{}", self.labels[l]),
        }
    }

    /// Encode non-overlapping spans over a sentence of length `n`.
    pub fn spans_to_tags(&self, spans: &[TaggedSpan], n: usize) -> Result<Vec<usize>> {
        let mut tags = vec![0usize; n];
        let mut covered = vec![false; n];
        for s in spans {
            if s.start > s.end || s.end >= n {
                return Err(Error::Dimension(format!(
                    "span [{}, {}] outside sentence of length {n}",
                    s.start, s.end
                )));
            }
            let l = self
                .label_index(&s.label)
                .ok_or_else(|| Error::Config(format!("unknown label {:?}", s.label)))?;
            if covered[s.start..=s.end].iter().any(|&c| c) {
                return Err(Error::Dimension(format!(
                    "span [{}, {}] overlaps another span",
                    s.start, s.end
                )));
            }
            covered[s.start..=s.end].iter_mut().for_each(|c| *c = true);
            if s.start == s.end {
                tags[s.start] = self.encode(Tag::Unit(l));
            } else {
                tags[s.start] = self.encode(Tag::Begin(l));
                for t in &mut tags[s.start + 1..s.end] {
                    *t = self.encode(Tag::Inside(l));
                }
                tags[s.end] = self.encode(Tag::Last(l));
            }
        }
        Ok(tags)
    }

    /// Decode any tag index sequence, repairing invalid subsequences.
    pub fn tags_to_spans(&self, tags: &[usize]) -> Vec<TaggedSpan> {
        let decoded: Vec<Tag> = tags.iter().map(|&t| self.decode(t)).collect();
        decode_tags(&decoded, LabelConflict::KeepInitial)
            .spans
            .into_iter()
            .map(|(s, e, l)| TaggedSpan::new(s, e, self.labels[l].clone()))
            .collect()
    }

    fn can_follow_outside(&self, to: Tag) -> bool {
        matches!(to, Tag::Outside | Tag::Begin(_) | Tag::Unit(_))
    }

    /// Whether `from → to` is a legal BILOU transition.
    pub fn allowed(&self, from: usize, to: usize) -> bool {
        let (from, to) = (self.decode(from), self.decode(to));
        match from {
            Tag::Outside | Tag::Last(_) | Tag::Unit(_) => self.can_follow_outside(to),
            Tag::Begin(l) | Tag::Inside(l) => matches!(to, Tag::Inside(m) | Tag::Last(m) if m == l),
        }
    }

    pub fn allowed_start(&self, to: usize) -> bool {
        self.can_follow_outside(self.decode(to))
    }

    pub fn allowed_stop(&self, from: usize) -> bool {
        matches!(
            self.decode(from),
            Tag::Outside | Tag::Last(_) | Tag::Unit(_)
        )
    }
}

/// Transition, start and stop scores of a CRF with `K` tags.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    /// `K × K`, row = previous tag, column = next tag.
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(k: usize) -> Self {
        Self {
            transitions: Matrix::zeros(k, k),
            start: vec![0.0; k],
            stop: vec![0.0; k],
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    /// Copy with BILOU-invalid transitions set to [`MASKED`].
    pub fn masked(&self, tagset: &BilouTagset) -> CrfParams {
        let mut out = self.clone();
        let k = self.num_tags();
        for i in 0..k {
            for j in 0..k {
                if !tagset.allowed(i, j) {
                    out.transitions.set(i, j, MASKED);
                }
            }
            if !tagset.allowed_start(i) {
                out.start[i] = MASKED;
            }
            if !tagset.allowed_stop(i) {
                out.stop[i] = MASKED;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrfGrads {
    pub emissions: Matrix,
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

/// Unnormalised score of one tag sequence.
pub fn sequence_score(emissions: &Matrix, crf: &CrfParams, tags: &[usize]) -> f64 {
    assert_eq!(tags.len(), emissions.rows());
    let mut s = crf.start[tags[0]] + crf.stop[tags[tags.len() - 1]];
    for (t, &y) in tags.iter().enumerate() {
        s += emissions.get(t, y);
        if t > 0 {
            s += crf.transitions.get(tags[t - 1], y);
        }
    }
    s
}

fn forward_table(emissions: &Matrix, crf: &CrfParams) -> Vec<Vec<f64>> {
    let (n, k) = emissions.shape();
    let mut alpha = vec![vec![0.0; k]; n];
    for j in 0..k {
        alpha[0][j] = crf.start[j] + emissions.get(0, j);
    }
    let mut buf = vec![0.0; k];
    for t in 1..n {
        for j in 0..k {
            for i in 0..k {
                buf[i] = alpha[t - 1][i] + crf.transitions.get(i, j);
            }
            alpha[t][j] = logsumexp(&buf) + emissions.get(t, j);
        }
    }
    alpha
}

fn backward_table(emissions: &Matrix, crf: &CrfParams) -> Vec<Vec<f64>> {
    let (n, k) = emissions.shape();
    let mut beta = vec![vec![0.0; k]; n];
    beta[n - 1].copy_from_slice(&crf.stop);
    let mut buf = vec![0.0; k];
    for t in (0..n - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                buf[j] = crf.transitions.get(i, j) + emissions.get(t + 1, j) + beta[t + 1][j];
            }
            beta[t][i] = logsumexp(&buf);
        }
    }
    beta
}

/// `log Σ_y exp(score(y))` by the forward algorithm. Requires `n ≥ 1`.
pub fn log_partition(emissions: &Matrix, crf: &CrfParams) -> f64 {
    assert!(emissions.rows() >= 1, "log_partition needs at least one token");
    let alpha = forward_table(emissions, crf);
    let last = &alpha[alpha.len() - 1];
    let ends: Vec<f64> = last.iter().zip(&crf.stop).map(|(a, s)| a + s).collect();
    logsumexp(&ends)
}

/// Negative log-likelihood of `gold`.
pub fn nll(emissions: &Matrix, crf: &CrfParams, gold: &[usize]) -> f64 {
    log_partition(emissions, crf) - sequence_score(emissions, crf, gold)
}

/// Negative log-likelihood and its gradient via forward-backward marginals.
pub fn nll_with_grad(emissions: &Matrix, crf: &CrfParams, gold: &[usize]) -> (f64, CrfGrads) {
    let (n, k) = emissions.shape();
    assert_eq!(gold.len(), n, "gold length mismatch");
    let alpha = forward_table(emissions, crf);
    let beta = backward_table(emissions, crf);
    let ends: Vec<f64> = alpha[n - 1].iter().zip(&crf.stop).map(|(a, s)| a + s).collect();
    let log_z = logsumexp(&ends);

    let mut d_em = Matrix::zeros(n, k);
    let mut d_tr = Matrix::zeros(k, k);
    let mut d_start = vec![0.0; k];
    let mut d_stop = vec![0.0; k];
    for t in 0..n {
        for j in 0..k {
            d_em.set(t, j, (alpha[t][j] + beta[t][j] - log_z).exp());
        }
    }
    for t in 0..n - 1 {
        for i in 0..k {
            for j in 0..k {
                let p = (alpha[t][i]
                    + crf.transitions.get(i, j)
                    + emissions.get(t + 1, j)
                    + beta[t + 1][j]
                    - log_z)
                    .exp();
                d_tr.set(i, j, d_tr.get(i, j) + p);
            }
        }
    }
    for j in 0..k {
        d_start[j] = d_em.get(0, j);
        d_stop[j] = d_em.get(n - 1, j);
    }
    for (t, &y) in gold.iter().enumerate() {
        d_em.set(t, y, d_em.get(t, y) - 1.0);
        if t > 0 {
            let p = gold[t - 1];
            d_tr.set(p, y, d_tr.get(p, y) - 1.0);
        }
    }
    d_start[gold[0]] -= 1.0;
    d_stop[gold[n - 1]] -= 1.0;
    let value = log_z - sequence_score(emissions, crf, gold);
    (
        value,
        CrfGrads {
            emissions: d_em,
            transitions: d_tr,
            start: d_start,
            stop: d_stop,
        },
    )
}

/// Highest-scoring tag sequence. At every backtracking step ties go to the
/// lowest tag index.
pub fn viterbi(emissions: &Matrix, crf: &CrfParams) -> Vec<usize> {
    let (n, k) = emissions.shape();
    assert!(n >= 1, "viterbi needs at least one token");
    let mut delta = vec![vec![0.0; k]; n];
    let mut back = vec![vec![0usize; k]; n];
    for j in 0..k {
        delta[0][j] = crf.start[j] + emissions.get(0, j);
    }
    for t in 1..n {
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..k {
                let s = delta[t - 1][i] + crf.transitions.get(i, j);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            delta[t][j] = best + emissions.get(t, j);
            back[t][j] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for j in 0..k {
        let s = delta[n - 1][j] + crf.stop[j];
        if s > best {
            best = s;
            last = j;
        }
    }
    let mut path = vec![0usize; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

/// CRF negative log-likelihood as a graph node.
/// `start` and `stop` are `1 × K` rows, `transitions` is `K × K`.
pub fn nll_node(
    graph: &mut Graph,
    emissions: Var,
    transitions: Var,
    start: Var,
    stop: Var,
    gold: &[usize],
) -> Var {
    let crf = CrfParams {
        transitions: graph.value(transitions).clone(),
        start: graph.value(start).data().to_vec(),
        stop: graph.value(stop).data().to_vec(),
    };
    let (value, g) = nll_with_grad(graph.value(emissions), &crf, gold);
    graph.scalar_op(
        value,
        vec![
            (emissions, g.emissions),
            (transitions, g.transitions),
            (start, Matrix::row_vector(g.start)),
            (stop, Matrix::row_vector(g.stop)),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tagset() -> BilouTagset {
        BilouTagset::new(&["PER", "ORG"])
    }

    fn all_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Matrix, CrfParams) {
        let em = Matrix::uniform(n, k, 2.0, rng);
        let crf = CrfParams {
            transitions: Matrix::uniform(k, k, 2.0, rng),
            start: (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            stop: (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        (em, crf)
    }

    #[test]
    fn tagset_size_and_bijection() {
        let ts = tagset();
        assert_eq!(ts.num_tags(), 9);
        for i in 0..ts.num_tags() {
            assert_eq!(ts.encode(ts.decode(i)), i);
        }
    }

    #[test]
    fn spans_to_tags_examples() {
        let ts = tagset();
        let names = |tags: Vec<usize>| tags.into_iter().map(|t| ts.tag_name(t)).collect::<Vec<_>>();
        assert_eq!(
            names(ts.spans_to_tags(&[TaggedSpan::new(0, 0, "PER")], 2).unwrap()),
            ["U-PER", "O"]
        );
        assert_eq!(
            names(ts.spans_to_tags(&[TaggedSpan::new(0, 2, "ORG")], 3).unwrap()),
            ["B-ORG", "I-ORG", "L-ORG"]
        );
        assert_eq!(names(ts.spans_to_tags(&[], 3).unwrap()), ["O", "O", "O"]);
        let overlap = [TaggedSpan::new(0, 1, "PER"), TaggedSpan::new(1, 2, "ORG")];
        assert!(ts.spans_to_tags(&overlap, 3).is_err());
    }

    #[test]
    fn tags_to_spans_examples() {
        let ts = tagset();
        let org = |t| ts.encode(t);
        assert_eq!(
            ts.tags_to_spans(&[org(Tag::Begin(1)), org(Tag::Inside(1)), org(Tag::Last(1))]),
            vec![TaggedSpan::new(0, 2, "ORG")]
        );
        assert_eq!(
            ts.tags_to_spans(&[org(Tag::Inside(0)), 0]),
            vec![TaggedSpan::new(0, 0, "PER")]
        );
        // Conflicting labels inside a span keep the initial label.
        assert_eq!(
            ts.tags_to_spans(&[org(Tag::Begin(0)), org(Tag::Inside(1)), org(Tag::Last(1))]),
            vec![TaggedSpan::new(0, 2, "PER")]
        );
        // Orphan L becomes a unit span.
        assert_eq!(
            ts.tags_to_spans(&[0, org(Tag::Last(1))]),
            vec![TaggedSpan::new(1, 1, "ORG")]
        );
    }

    #[test]
    fn log_partition_simple_cases() {
        let em = Matrix::row_vector(vec![0.5, -1.0, 2.0]);
        let z = log_partition(&em, &CrfParams::zeros(3));
        assert!((z - logsumexp(&[0.5, -1.0, 2.0])).abs() < 1e-12);
        let em = Matrix::zeros(4, 5);
        let z = log_partition(&em, &CrfParams::zeros(5));
        assert!((z - 4.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_partition_matches_enumeration_on_4x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (em, crf) = random_instance(&mut rng, 4, 5);
        let scores: Vec<f64> = all_sequences(4, 5)
            .iter()
            .map(|y| sequence_score(&em, &crf, y))
            .collect();
        assert_eq!(scores.len(), 625);
        assert!((log_partition(&em, &crf) - logsumexp(&scores)).abs() < 1e-6);
    }

    #[test]
    fn nll_limits() {
        let mut em = Matrix::filled(3, 4, -1e6);
        let gold = [1, 3, 0];
        for (t, &y) in gold.iter().enumerate() {
            em.set(t, y, 1e6);
        }
        assert!(nll(&em, &CrfParams::zeros(4), &gold).abs() < 1e-6);
        let em = Matrix::uniform(5, 1, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(nll(&em, &CrfParams::zeros(1), &[0; 5]), 0.0);
    }

    #[test]
    fn viterbi_examples() {
        assert_eq!(viterbi(&Matrix::zeros(4, 3), &CrfParams::zeros(3)), vec![0; 4]);
        let em = Matrix::row_vector(vec![0.1, 0.7, 0.3]);
        assert_eq!(viterbi(&em, &CrfParams::zeros(3)), vec![1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (em, crf) = random_instance(&mut rng, 5, 6);
        let best = all_sequences(5, 6)
            .iter()
            .map(|y| sequence_score(&em, &crf, y))
            .fold(f64::NEG_INFINITY, f64::max);
        let path = viterbi(&em, &crf);
        assert!((sequence_score(&em, &crf, &path) - best).abs() < 1e-9);
    }

    #[test]
    fn masked_decoding_is_bilou_valid() {
        let ts = tagset();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (em, crf) = random_instance(&mut rng, 6, ts.num_tags());
            let path = viterbi(&em, &crf.masked(&ts));
            let decoded: Vec<Tag> = path.iter().map(|&t| ts.decode(t)).collect();
            assert_eq!(decode_tags(&decoded, LabelConflict::KeepInitial).orphans, 0);
            assert!(ts.allowed_start(path[0]));
            assert!(ts.allowed_stop(*path.last().unwrap()));
            for w in path.windows(2) {
                assert!(ts.allowed(w[0], w[1]));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (em, crf) = random_instance(&mut rng, 4, 3);
        let gold = [2, 0, 1, 1];
        let (_, g) = nll_with_grad(&em, &crf, &gold);
        let h = 1e-5;
        for t in 0..4 {
            for j in 0..3 {
                let mut up = em.clone();
                up.set(t, j, em.get(t, j) + h);
                let mut dn = em.clone();
                dn.set(t, j, em.get(t, j) - h);
                let num = (nll(&up, &crf, &gold) - nll(&dn, &crf, &gold)) / (2.0 * h);
                assert!((num - g.emissions.get(t, j)).abs() < 1e-6);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut up = crf.clone();
                up.transitions.set(i, j, crf.transitions.get(i, j) + h);
                let mut dn = crf.clone();
                dn.transitions.set(i, j, crf.transitions.get(i, j) - h);
                let num = (nll(&em, &up, &gold) - nll(&em, &dn, &gold)) / (2.0 * h);
                assert!((num - g.transitions.get(i, j)).abs() < 1e-6);
            }
        }
    }
}
