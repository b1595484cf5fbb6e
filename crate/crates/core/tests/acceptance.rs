//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Oracles (brute-force enumeration, exhaustive
//! alignment, plain-arithmetic scorers) are written here, independently of
//! the library code they check.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{central_difference, desk_config, grad_close};
use hmtl::autograd::Graph;
use hmtl::coref::{Candidates, CorefConfig, CorefHead};
use hmtl::corpus::Span;
use hmtl::crf::{self, BilouTagset, CrfParams};
use hmtl::embedder::{CharCnn, CharCnnConfig, Vocabulary};
use hmtl::encoder::BiRecurrentEncoder;
use hmtl::metrics::{b_cubed, ceaf_e, ceaf_e_similarity, muc, Prf};
use hmtl::params::{AdamConfig, Group, ParamId, ParamStore};
use hmtl::probe::{self, ProbeConfig, ProbeLayer, ProbeSizes, Split};
use hmtl::relation::{candidate_pairs, decode_relations, score_pair, RelationConfig, RelationHead, RelationWeights};
use hmtl::trainer::{self, BatchStream, SamplingPolicy, TrainReport};
use hmtl::config::SamplingMode;
use hmtl::{Document, Matrix, Model, Task};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- CRF oracle

fn brute_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |y| {
                    let mut t = s.clone();
                    t.push(y);
                    t
                })
            })
            .collect();
    }
    out
}

fn path_score(e: &Matrix, crf: &CrfParams, tags: &[usize]) -> f64 {
    let mut s = crf.start[tags[0]] + crf.stop[*tags.last().unwrap()];
    for t in 0..tags.len() {
        s += e.get(t, tags[t]);
        if t > 0 {
            s += crf.transitions.get(tags[t - 1], tags[t]);
        }
    }
    s
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn brute_log_partition(e: &Matrix, crf: &CrfParams) -> f64 {
    let scores: Vec<f64> = brute_sequences(e.rows(), e.cols()).iter().map(|s| path_score(e, crf, s)).collect();
    log_sum_exp(&scores)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, bound: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect())
}

fn crf_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_z, mut worst_nll, mut worst_vit) = (0.0f64, 0.0f64, 0.0f64);
    for inst in 0..200 {
        let n = rng.gen_range(1..=5);
        // Every fourth instance is a BILOU-masked one-label CRF (5 tags).
        let masked = inst % 4 == 0;
        let k = if masked { 5 } else { rng.gen_range(1..=6) };
        let e = random_matrix(&mut rng, n, k, 2.0);
        let mut params = CrfParams {
            transitions: random_matrix(&mut rng, k, k, 2.0),
            start: (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            stop: (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        if masked {
            params = params.masked(&BilouTagset::new(&["X"]));
        }
        let all = brute_sequences(n, k);
        let scores: Vec<f64> = all.iter().map(|s| path_score(&e, &params, s)).collect();
        let z = log_sum_exp(&scores);
        let valid: Vec<usize> = (0..all.len()).filter(|&i| scores[i] > -1e5).collect();
        let gold = &all[*valid.choose(&mut rng).expect("some valid sequence")];
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let dz = (crf::log_partition(&e, &params) - z).abs();
        let dnll = (crf::nll(&e, &params, gold) - (z - path_score(&e, &params, gold))).abs();
        let path = crf::viterbi(&e, &params);
        ensure(path.len() == n, || format!("instance {inst}: viterbi length {} for n = {n}", path.len()))?;
        let dvit = (path_score(&e, &params, &path) - best).abs();
        ensure(dz <= 1e-6, || format!("instance {inst}: log Z off by {dz:e}"))?;
        ensure(dnll <= 1e-6, || format!("instance {inst}: nll off by {dnll:e}"))?;
        ensure(dvit <= 1e-9, || format!("instance {inst}: viterbi score off by {dvit:e}"))?;
        worst_z = worst_z.max(dz);
        worst_nll = worst_nll.max(dnll);
        worst_vit = worst_vit.max(dvit);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s (limit 30s)"))?;
    Ok(format!(
        "200 instances, max |Δ| logZ {worst_z:.1e}, nll {worst_nll:.1e}, viterbi {worst_vit:.1e}, {secs:.2}s"
    ))
}

// ------------------------------------------------------------ gradient checks

const FD_STEP: f64 = 1e-4;
const FD_REL: f64 = 1e-3;

/// Compare analytic gradients of every coordinate of `ids` with central
/// differences of `loss`. Returns (coordinates checked, worst ratio).
fn fd_check(
    store: &mut ParamStore,
    analytic: &BTreeMap<ParamId, Matrix>,
    loss: &dyn Fn(&ParamStore) -> f64,
) -> Result<(usize, f64), String> {
    if store.total_size() > 200 {
        return Err(format!("instance has {} parameters (limit 200)", store.total_size()));
    }
    let ids: Vec<(ParamId, String)> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (id, name) in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            let numeric = central_difference(FD_STEP, |h| {
                store.value_mut(id).data_mut()[k] = orig + h;
                let v = loss(store);
                store.value_mut(id).data_mut()[k] = orig;
                v
            });
            let a = analytic.get(&id).map_or(0.0, |g| g.data()[k]);
            let ratio = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(ratio);
            if !grad_close(a, numeric, FD_REL) {
                return Err(format!("{name}[{k}]: analytic {a:.6e}, numeric {numeric:.6e}"));
            }
            checked += 1;
        }
    }
    Ok((checked, worst))
}

fn grad_crf() -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, k) = (4, 5);
    let mut store = ParamStore::new();
    let em = store.add("emissions", Group::Ner, random_matrix(&mut rng, n, k, 1.0));
    let tr = store.add("transitions", Group::Ner, random_matrix(&mut rng, k, k, 1.0));
    let st = store.add("start", Group::Ner, random_matrix(&mut rng, 1, k, 1.0));
    let sp = store.add("stop", Group::Ner, random_matrix(&mut rng, 1, k, 1.0));
    let gold = vec![1, 0, 4, 2];
    let mut g = Graph::new();
    let (ve, vt, vs, vp) = (g.param(&store, em), g.param(&store, tr), g.param(&store, st), g.param(&store, sp));
    let out = crf::nll_node(&mut g, ve, vt, vs, vp, &gold);
    let grads = g.backward(out);
    // Numeric side: brute-force nll, independent of the forward algorithm.
    let loss = |s: &ParamStore| {
        let params = CrfParams {
            transitions: s.value(tr).clone(),
            start: s.value(st).data().to_vec(),
            stop: s.value(sp).data().to_vec(),
        };
        brute_log_partition(s.value(em), &params) - path_score(s.value(em), &params, &gold)
    };
    fd_check(&mut store, &grads, &loss)
}

fn coref_doc() -> Document {
    let tokens = ["Ann", "met", "the", "pilot", ".", "She", "thanked", "him"];
    let mut doc = Document {
        doc_id: "fd".into(),
        sentences: vec![tokens.iter().map(|t| t.to_string()).collect()],
        clusters: vec![
            vec![Span::new(0, 0), Span::new(5, 5)],
            vec![Span::new(2, 3), Span::new(7, 7)],
        ],
        ..Document::default()
    };
    doc.validate().expect("valid document");
    doc
}

fn grad_coref() -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut store = ParamStore::new();
    let cfg = CorefConfig {
        max_width: 3,
        ratio: 1.0,
        max_antecedents: 3,
        feature_dim: 2,
        hidden: 3,
        dropout: 0.0,
    };
    let head = CorefHead::new(&mut store, "cr", 2, 2, cfg, &mut rng).map_err(|e| e.to_string())?;
    let doc = coref_doc();
    let n = doc.token_count();
    let g_val = random_matrix(&mut rng, n, 2, 1.0);
    let x_val = random_matrix(&mut rng, n, 2, 1.0);
    let spans = vec![
        Span::new(0, 0),
        Span::new(1, 1),
        Span::new(2, 3),
        Span::new(3, 3),
        Span::new(5, 5),
        Span::new(6, 7),
        Span::new(7, 7),
    ];
    let candidates = Candidates::Gold(spans);
    let run = |s: &ParamStore, g: &mut Graph| {
        let gv = g.constant(g_val.clone());
        let xv = g.constant(x_val.clone());
        let fwd = head.forward(g, s, gv, xv, &doc, &candidates).expect("forward");
        head.loss(g, &fwd, &doc.clusters)
    };
    let mut g = Graph::new();
    let out = run(&store, &mut g);
    let grads = g.backward(out);
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let out = run(s, &mut g);
        g.scalar(out)
    };
    fd_check(&mut store, &grads, &loss)
}

fn grad_relation() -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut store = ParamStore::new();
    let cfg = RelationConfig {
        hidden: 4,
        threshold: 0.5,
    };
    let head = RelationHead::new(&mut store, "re", 3, vec!["a".into(), "b".into()], cfg, &mut rng)
        .map_err(|e| e.to_string())?;
    // Nonzero bias so no hidden unit sits at the ReLU kink.
    store.assign("re.b", random_matrix(&mut rng, 1, 4, 0.5)).map_err(|e| e.to_string())?;
    let g_val = random_matrix(&mut rng, 4, 3, 1.0);
    let pairs = candidate_pairs(&[0, 1, 2, 3]);
    let targets = Matrix::from_vec(
        pairs.len(),
        2,
        (0..pairs.len() * 2).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect(),
    );
    let mut g = Graph::new();
    let gv = g.constant(g_val.clone());
    let logits = head.forward(&mut g, &store, gv, &pairs).map_err(|e| e.to_string())?;
    let out = head.loss(&mut g, logits, &targets);
    let grads = g.backward(out);
    // Numeric side: plain-arithmetic σ(V·relu(U·g_j + W·g_i + b)) and BCE.
    let (u, w, b, v) = (head.u, head.w, head.b, head.v);
    let loss = |s: &ParamStore| {
        let (u, w, b, v) = (s.value(u), s.value(w), s.value(b), s.value(v));
        let mut total = 0.0;
        for (row, &(i, j)) in pairs.iter().enumerate() {
            let hidden: Vec<f64> = (0..4)
                .map(|k| {
                    let mut z = b.get(0, k);
                    for c in 0..3 {
                        z += u.get(k, c) * g_val.get(j, c) + w.get(k, c) * g_val.get(i, c);
                    }
                    z.max(0.0)
                })
                .collect();
            for r in 0..2 {
                let t: f64 = (0..4).map(|k| v.get(r, k) * hidden[k]).sum();
                let p = 1.0 / (1.0 + (-t).exp());
                let y = targets.get(row, r);
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        total
    };
    fd_check(&mut store, &grads, &loss)
}

fn weighted_sum(g: &mut Graph, out: hmtl::autograd::Var, weights: &Matrix) -> hmtl::autograd::Var {
    let c = g.constant(weights.clone());
    let prod = g.mul(out, c);
    g.sum(prod)
}

fn grad_char_cnn() -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut store = ParamStore::new();
    let mut vocab = Vocabulary::new();
    for c in ["a", "b", "c"] {
        vocab.insert(c);
    }
    let cfg = CharCnnConfig {
        char_dim: 3,
        widths: vec![2, 3],
        filters_per_width: 2,
    };
    let cnn = CharCnn::new(&mut store, "chars", vocab, &cfg, &mut rng).map_err(|e| e.to_string())?;
    for name in ["chars.w2.bias", "chars.w3.bias"] {
        store.assign(name, random_matrix(&mut rng, 1, 2, 0.5)).map_err(|e| e.to_string())?;
    }
    let tokens: Vec<String> = ["ab", "cab", "a", "bcab", "ab"].iter().map(|s| s.to_string()).collect();
    let weights = random_matrix(&mut rng, tokens.len(), cnn.output_dim, 1.0);
    let run = |s: &ParamStore, g: &mut Graph| {
        let out = cnn.forward(g, s, &tokens);
        weighted_sum(g, out, &weights)
    };
    let mut g = Graph::new();
    let out = run(&store, &mut g);
    let grads = g.backward(out);
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let out = run(s, &mut g);
        g.scalar(out)
    };
    fd_check(&mut store, &grads, &loss)
}

fn grad_encoder() -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut store = ParamStore::new();
    let enc = BiRecurrentEncoder::new(&mut store, "enc", Group::Ner, 2, 2, 1, &mut rng).map_err(|e| e.to_string())?;
    let inputs = random_matrix(&mut rng, 5, 2, 1.0);
    let weights = random_matrix(&mut rng, 5, 4, 1.0);
    let run = |s: &ParamStore, g: &mut Graph| {
        let x = g.constant(inputs.clone());
        let out = enc.encode(g, s, x).expect("encode");
        weighted_sum(g, out, &weights)
    };
    let mut g = Graph::new();
    let out = run(&store, &mut g);
    let grads = g.backward(out);
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let out = run(s, &mut g);
        g.scalar(out)
    };
    fd_check(&mut store, &grads, &loss)
}

fn gradient_checks() -> Check {
    let started = Instant::now();
    let mut parts = Vec::new();
    for (name, f) in [
        ("crf", grad_crf as fn() -> Result<(usize, f64), String>),
        ("coref", grad_coref),
        ("relation", grad_relation),
        ("char-cnn", grad_char_cnn),
        ("lstm", grad_encoder),
    ] {
        let (n, worst) = f().map_err(|e| format!("{name}: {e}"))?;
        parts.push(format!("{name} {n} coords (worst {worst:.1e})"));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s (limit 120s)"))?;
    Ok(format!("{}; {secs:.2}s", parts.join(", ")))
}

// ------------------------------------------------------------ relation scorer

fn relation_hand_oracle() -> Check {
    let one = |v: f64| Matrix::filled(1, 1, v);
    let w = RelationWeights {
        u: one(1.0),
        w: one(1.0),
        b: one(0.0),
        v: one(1.0),
    };
    let p = score_pair(&[1.0], &[2.0], &w).map_err(|e| e.to_string())?;
    let expected = 1.0 / (1.0 + (-3.0f64).exp());
    ensure(p.len() == 1, || format!("{} outputs", p.len()))?;
    ensure((p[0] - 0.95257).abs() <= 1e-5 && (p[0] - expected).abs() <= 1e-12, || {
        format!("σ(3) gave {}", p[0])
    })?;
    let zeros = score_pair(&[0.3, -1.0, 2.0], &[1.0, 0.5, -0.7], &RelationWeights::zeros(3, 4, 2)).map_err(|e| e.to_string())?;
    ensure(zeros == vec![0.5, 0.5], || format!("all-zero parameters gave {zeros:?}"))?;
    Ok(format!("p = {:.5}, zero parameters give {zeros:?}", p[0]))
}

fn multi_label_relations() -> Check {
    // t = V·relu(g_j + g_i) = (1·3, 2·3): both types clear 0.5.
    let w = RelationWeights {
        u: Matrix::filled(1, 1, 1.0),
        w: Matrix::filled(1, 1, 1.0),
        b: Matrix::zeros(1, 1),
        v: Matrix::from_vec(2, 1, vec![1.0, 2.0]),
    };
    let probs = score_pair(&[1.0], &[2.0], &w).map_err(|e| e.to_string())?;
    let pairs = vec![(0, 3)];
    let heads: BTreeMap<usize, Span> = [(0, Span::new(0, 0)), (3, Span::new(2, 3))].into_iter().collect();
    let types = vec!["ORG-AFF".to_string(), "PHYS".to_string()];
    let decoded = decode_relations(&pairs, &Matrix::from_vec(1, 2, probs.clone()), &heads, &types, 0.5);
    ensure(decoded.len() == 2, || format!("decoded {decoded:?}"))?;
    ensure(decoded.iter().all(|r| r.arg1 == Span::new(0, 0) && r.arg2 == Span::new(2, 3)), || {
        format!("decoded {decoded:?}")
    })?;
    // A softmax over the same two logits puts at most one type above 0.5.
    let z = probs.iter().map(|p| (p / (1.0 - p)).ln().exp()).sum::<f64>();
    let softmax_above = probs.iter().filter(|p| (*p / (1.0 - *p)) / z > 0.5).count();
    ensure(softmax_above <= 1, || "softmax decoded two types".into())?;
    Ok(format!("p = ({:.4}, {:.4}) → {} relations on one pair", probs[0], probs[1], decoded.len()))
}

// ------------------------------------------------------------ coref metrics

fn cl(groups: &[&[char]]) -> Vec<Vec<char>> {
    groups.iter().map(|g| g.to_vec()).collect()
}

fn phi4_oracle(a: &[u32], b: &[u32]) -> f64 {
    let common = a.iter().filter(|x| b.contains(x)).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Best total φ₄ over every partial one-to-one alignment.
fn exhaustive_alignment(gold: &[Vec<u32>], pred: &[Vec<u32>], used: &mut Vec<bool>, i: usize) -> f64 {
    if i == gold.len() {
        return 0.0;
    }
    let mut best = exhaustive_alignment(gold, pred, used, i + 1);
    for j in 0..pred.len() {
        if !used[j] {
            used[j] = true;
            best = best.max(phi4_oracle(&gold[i], &pred[j]) + exhaustive_alignment(gold, pred, used, i + 1));
            used[j] = false;
        }
    }
    best
}

fn random_clustering(rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let mut items: Vec<u32> = (0..14).filter(|_| rng.gen_bool(0.7)).collect();
    items.shuffle(rng);
    let k = rng.gen_range(1..=6usize);
    let mut clusters = vec![Vec::new(); k];
    for x in items {
        clusters[rng.gen_range(0..k)].push(x);
    }
    clusters.retain(|c| !c.is_empty());
    clusters
}

fn coref_metric_oracles() -> Check {
    let exact = |got: Prf, p: f64, r: f64, what: &str| {
        ensure(got.precision == p && got.recall == r, || format!("{what}: got {got:?}, expected P {p} R {r}"))
    };
    let abc = cl(&[&['a', 'b', 'c']]);
    exact(muc(&abc, &abc), 1.0, 1.0, "MUC identical")?;
    ensure(muc(&abc, &abc).f1 == 1.0, || "MUC identical F1".into())?;
    exact(muc(&cl(&[&['a'], &['b']]), &cl(&[&['a', 'b']])), 0.0, 0.0, "MUC singletons")?;
    exact(muc(&cl(&[&['a', 'b'], &['c']]), &abc), 1.0, 0.5, "MUC split")?;
    let ab = cl(&[&['a', 'b']]);
    exact(b_cubed(&ab, &ab), 1.0, 1.0, "B3 identical")?;
    exact(b_cubed(&cl(&[&['a'], &['b']]), &ab), 1.0, 0.5, "B3 split")?;
    let empty: Vec<Vec<char>> = Vec::new();
    exact(b_cubed(&empty, &ab), 0.0, 0.0, "B3 empty prediction")?;
    ensure(b_cubed(&empty, &ab).f1 == 0.0, || "B3 empty F1".into())?;
    let gold = cl(&[&['a', 'b'], &['c', 'd']]);
    let id = ceaf_e(&gold, &gold);
    ensure((id.precision - 1.0).abs() <= 1e-9 && (id.recall - 1.0).abs() <= 1e-9, || format!("CEAFe identical {id:?}"))?;
    let merged = ceaf_e(&cl(&[&['a', 'b', 'c', 'd']]), &gold);
    ensure(
        (merged.recall - 1.0 / 3.0).abs() <= 1e-9 && (merged.precision - 2.0 / 3.0).abs() <= 1e-9,
        || format!("CEAFe merged {merged:?}"),
    )?;
    let disjoint = ceaf_e(&cl(&[&['x', 'y']]), &gold);
    ensure(disjoint == Prf::default(), || format!("CEAFe disjoint {disjoint:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let gold = random_clustering(&mut rng);
        let pred = random_clustering(&mut rng);
        let brute = exhaustive_alignment(&gold, &pred, &mut vec![false; pred.len()], 0);
        let got = ceaf_e_similarity(&pred, &gold);
        worst = worst.max((got - brute).abs());
        ensure((got - brute).abs() <= 1e-9, || format!("instance {inst}: solver {got}, exhaustive {brute}"))?;
        let prf = ceaf_e(&pred, &gold);
        ensure((prf.recall - brute / gold.len() as f64).abs() <= 1e-9, || format!("instance {inst}: recall"))?;
    }
    Ok(format!("worked examples exact; CEAFe vs exhaustive on 100 instances, max |Δ| {worst:.1e}"))
}

// ------------------------------------------------------------ training runs

struct Run {
    report: TrainReport,
    secs: f64,
}

fn run_setup(setup: &str, max_updates: usize, seed: u64) -> Result<Run, String> {
    let cfg = desk_config(setup, max_updates, seed);
    let data = trainer::load_data(&cfg).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let outcome = trainer::train(&cfg, &data).map_err(|e| format!("setup {setup}: {e}"))?;
    Ok(Run {
        report: outcome.report,
        secs: started.elapsed().as_secs_f64(),
    })
}

fn single_task_overfit() -> Check {
    let mut total = Duration::ZERO;
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for (setup, task, bar) in [("B", Task::Ner, 0.99), ("C", Task::Emd, 0.99), ("D", Task::Re, 0.99), ("E", Task::Cr, 0.90)] {
        let run = run_setup(setup, 5000, 0)?;
        total += Duration::from_secs_f64(run.secs);
        let best = run.report.task_best.get(&task).copied();
        let Some(best) = best else {
            failures.push(format!("{setup}: no {task} score"));
            continue;
        };
        parts.push(format!("{setup} {task} {:.4} at {}", best.score, best.update));
        if best.score < bar || best.update > 5000 {
            failures.push(format!("{setup}: {task} {:.4} < {bar}", best.score));
        }
    }
    let secs = total.as_secs_f64();
    if secs >= 600.0 {
        failures.push(format!("took {secs:.0}s (limit 600s)"));
    }
    let detail = format!("{}; {secs:.0}s total", parts.join(", "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} [{detail}]", failures.join("; ")))
    }
}

fn joint_overfit() -> Check {
    let run = run_setup("A", 20_000, 0)?;
    let dev = &run.report.best_dev;
    let scores: Vec<String> = Task::ALL
        .iter()
        .map(|&t| format!("{t} {:.4}", trainer::primary(dev, t).unwrap_or(f64::NAN)))
        .collect();
    let detail = format!("{} at update {} ({:.0}s)", scores.join(", "), run.report.best_update, run.secs);
    let all_pass = Task::ALL.iter().all(|&t| trainer::primary(dev, t).is_some_and(|s| s >= 0.95));
    ensure(all_pass && run.report.best_update <= 20_000, || detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------ update scoping

fn expected_scope(task: Task) -> BTreeSet<Group> {
    use Group::*;
    match task {
        Task::Ner => [Embedding, Ner].into(),
        Task::Emd => [Embedding, Ner, Emd].into(),
        Task::Re => [Embedding, Ner, Emd, Re].into(),
        Task::Cr => [Embedding, Ner, Emd, Cr].into(),
    }
}

fn update_scoping() -> Check {
    let mut cfg = desk_config("A", 100, 3);
    cfg.data.synthetic_docs = 10;
    cfg.encoder.hidden = 8;
    cfg.coref.hidden = 8;
    cfg.relation.hidden = 8;
    let data = trainer::load_data(&cfg).map_err(|e| e.to_string())?;
    let mut model = Model::new(&cfg, &trainer::all_train_docs(&data)).map_err(|e| e.to_string())?;
    let mut streams: BTreeMap<Task, BatchStream> = BTreeMap::new();
    for (&t, s) in &data {
        streams.insert(t, BatchStream::new(t, &s.train, 4, 5).map_err(|e| e.to_string())?);
    }
    let adam = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut counts: BTreeMap<Task, usize> = BTreeMap::new();
    for step in 0..100 {
        let task = *Task::ALL.choose(&mut rng).unwrap();
        let before: Vec<Matrix> = model.store.iter().map(|(_, p)| p.value.clone()).collect();
        let batch = streams.get_mut(&task).unwrap().next_batch();
        trainer::train_step(&mut model, task, &data[&task].train, &batch, &adam, step, step as u64)
            .map_err(|e| e.to_string())?;
        let changed: BTreeSet<Group> = model
            .store
            .iter()
            .zip(&before)
            .filter(|((_, p), old)| p.value != **old)
            .map(|((_, p), _)| p.group)
            .collect();
        let expected = expected_scope(task);
        ensure(changed == expected, || format!("step {step} ({task}): changed {changed:?}, expected {expected:?}"))?;
        *counts.entry(task).or_default() += 1;
    }
    Ok(format!("100 steps ({counts:?}), changed groups always equal task ∪ lower levels"))
}

// ------------------------------------------------------------ sampling

fn proportional_sampling() -> Check {
    let policy = SamplingPolicy::new(SamplingMode::Proportional, vec![Task::Ner, Task::Re], vec![3, 1])
        .map_err(|e| e.to_string())?;
    let sampler = policy.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let draws = 10_000;
    let ner = (0..draws).filter(|_| sampler.sample(&mut rng) == Task::Ner).count();
    let f = ner as f64 / draws as f64;
    ensure((f - 0.75).abs() <= 0.02, || format!("frequency {f}"))?;
    let expected = [0.75 * draws as f64, 0.25 * draws as f64];
    let observed = [ner as f64, (draws - ner) as f64];
    let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    ensure(p > 0.01, || format!("χ² = {chi2:.3}, p = {p:.4}"))?;

    let table = SamplingPolicy::new(SamplingMode::Proportional, vec![Task::Cr, Task::Ner], vec![7273, 59924])
        .map_err(|e| e.to_string())?;
    let prob = table.probabilities()[0];
    let oracle = 7273.0 / 67197.0;
    ensure((prob - oracle).abs() <= 1e-12, || format!("configured {prob}, expected {oracle}"))?;
    Ok(format!("freq {f:.4} vs 0.75, χ² {chi2:.3} (p {p:.3}); 7273/67197 → {prob:.12}"))
}

// ------------------------------------------------------------ hierarchy order

fn swapped_order_runs() -> Check {
    let cfg = desk_config("K", 1, 0);
    let d_e = cfg.embed.word_dim
        + cfg.embed.char_cnn.widths.len() * cfg.embed.char_cnn.filters_per_width
        + cfg.embed.context_dim;
    let below = d_e + 2 * cfg.encoder.hidden;
    let mut parts = Vec::new();
    for (setup, expected) in [
        ("F", vec![(Task::Ner, d_e), (Task::Emd, below)]),
        ("K", vec![(Task::Ner, below), (Task::Emd, d_e)]),
        ("L", vec![(Task::Ner, below), (Task::Emd, d_e), (Task::Re, below), (Task::Cr, below)]),
    ] {
        let run = run_setup(setup, 100, 0)?;
        let expected: BTreeMap<Task, usize> = expected.into_iter().collect();
        ensure(run.report.encoder_input_dims == expected, || {
            format!("setup {setup}: dims {:?}, expected {expected:?}", run.report.encoder_input_dims)
        })?;
        ensure(run.report.updates > 0 && !run.report.evaluations.is_empty(), || format!("setup {setup} did not train"))?;
        let dims: Vec<String> = expected.iter().map(|(t, d)| format!("{t}={d}")).collect();
        parts.push(format!("{setup}: {}", dims.join(" ")));
    }
    Ok(parts.join("; "))
}

// ------------------------------------------------------------ probes

fn probe_harness() -> Check {
    let cfg = ProbeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let split_of = |i: usize| match i % 10 {
        0..=5 => Split::Train,
        6 => Split::Dev,
        _ => Split::Test,
    };
    let separable: Vec<(Split, Vec<f64>, String)> = (0..600)
        .map(|i| {
            let positive = i % 2 == 0;
            let margin = rng.gen_range(0.5..3.0);
            let x0 = if positive { margin } else { -margin };
            let features = vec![x0, rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            (split_of(i), features, if positive { "pos" } else { "neg" }.to_string())
        })
        .collect();
    let (_, sep) = probe::train_probe(&separable, &cfg).map_err(|e| e.to_string())?;
    ensure(sep.test == 1.0 && sep.train == 1.0, || format!("separable probe: {sep:?}"))?;

    let mut labels: Vec<String> = (0..4000).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
    labels.shuffle(&mut rng);
    let null: Vec<(Split, Vec<f64>, String)> = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let split = if i < 1000 { Split::Train } else { Split::Test };
            (split, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(), label)
        })
        .collect();
    let (_, nul) = probe::train_probe(&null, &cfg).map_err(|e| e.to_string())?;
    ensure((nul.test - 0.5).abs() <= 0.05, || format!("null probe test accuracy {}", nul.test))?;

    let mut mcfg = desk_config("A", 1, 0);
    mcfg.data.synthetic_docs = 10;
    let data = trainer::load_data(&mcfg).map_err(|e| e.to_string())?;
    let model = Model::new(&mcfg, &trainer::all_train_docs(&data)).map_err(|e| e.to_string())?;
    let bits = |m: &Model| -> Vec<u64> {
        m.store
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).chain([p.adam_steps()]).collect::<Vec<_>>())
            .collect()
    };
    let before = bits(&model);
    let sizes = ProbeSizes {
        train: 40,
        dev: 10,
        test: 20,
    };
    let tasks = vec![
        probe::sentence_length_task(1, sizes).map_err(|e| e.to_string())?,
        probe::bigram_shift_task(1, sizes).map_err(|e| e.to_string())?,
    ];
    let layers = ProbeLayer::available(&model);
    let grid = probe::run_probe_suite(&model, &tasks, &layers, &ProbeConfig { epochs: 50, l2: 1e-4 })
        .map_err(|e| e.to_string())?;
    ensure(bits(&model) == before, || "probing changed model parameters".into())?;
    Ok(format!(
        "separable {:.2}, null {:.3}, {}×{} grid left {} parameter values bit-identical",
        sep.test,
        nul.test,
        grid.layers.len(),
        grid.tasks.len(),
        model.store.total_size()
    ))
}

// ------------------------------------------------------------ determinism

fn artifacts(seed: u64, dir: &std::path::Path) -> Result<(String, Vec<u8>), String> {
    let mut cfg = desk_config("A", 120, seed);
    cfg.data.synthetic_docs = 20;
    let data = trainer::load_data(&cfg).map_err(|e| e.to_string())?;
    let outcome = trainer::train(&cfg, &data).map_err(|e| e.to_string())?;
    let test = trainer::evaluate_all(&outcome.model, &data, false, false).map_err(|e| e.to_string())?;
    let gm = trainer::evaluate_all(&outcome.model, &data, true, false).map_err(|e| e.to_string())?;
    let sizes = ProbeSizes {
        train: 40,
        dev: 10,
        test: 20,
    };
    let tasks = vec![probe::word_content_task(seed, sizes).map_err(|e| e.to_string())?];
    let grid = probe::run_probe_suite(&outcome.model, &tasks, &ProbeLayer::available(&outcome.model), &ProbeConfig { epochs: 30, l2: 1e-4 })
        .map_err(|e| e.to_string())?;
    let text = serde_json::to_string_pretty(&(&outcome.report, &test, &gm, &grid)).map_err(|e| e.to_string())?;
    hmtl::checkpoint::save(&outcome.model, dir).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    let manifest = hmtl::checkpoint::load_manifest(dir).map_err(|e| e.to_string())?;
    for e in &manifest.params {
        bytes.extend(std::fs::read(dir.join(&e.file)).map_err(|e| e.to_string())?);
    }
    Ok((text, bytes))
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, pa) = artifacts(9, &tmp.path().join("a"))?;
    let (b, pb) = artifacts(9, &tmp.path().join("b"))?;
    ensure(a == b, || "reports differ between identical runs".into())?;
    ensure(pa == pb, || "checkpoints differ between identical runs".into())?;
    let (c, _) = artifacts(10, &tmp.path().join("c"))?;
    ensure(a != c, || "a different seed produced the same report".into())?;
    Ok(format!("train report, test/GM metrics, probe grid ({} bytes) and checkpoint ({} bytes) identical on rerun", a.len(), pa.len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("crf-oracle", crf_oracle),
        ("gradient-checks", gradient_checks),
        ("relation-hand-oracle", relation_hand_oracle),
        ("multi-label-relations", multi_label_relations),
        ("coref-metric-oracles", coref_metric_oracles),
        ("single-task-overfit", single_task_overfit),
        ("joint-overfit", joint_overfit),
        ("update-scoping", update_scoping),
        ("proportional-sampling", proportional_sampling),
        ("hierarchy-order", swapped_order_runs),
        ("probe-harness", probe_harness),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {ran} acceptance criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
