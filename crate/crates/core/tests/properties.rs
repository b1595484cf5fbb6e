use std::collections::BTreeMap;

use hmtl::corpus::{generate_synthetic_corpus, parse_jsonl, to_jsonl, SyntheticConfig};
use hmtl::crf::BilouTagset;
use hmtl::metrics::{b_cubed, ceaf_e, muc, span_f1, Prf};
use hmtl::{Document, TaggedSpan};
use proptest::prelude::*;

fn close(a: Prf, b: Prf) -> bool {
    (a.precision - b.precision).abs() <= 1e-12 && (a.recall - b.recall).abs() <= 1e-12 && (a.f1 - b.f1).abs() <= 1e-12
}

fn swapped(p: Prf) -> Prf {
    Prf::new(p.recall, p.precision)
}

/// Items 0..n assigned to at most `k` clusters (a `None` leaves the item out).
fn clustering() -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::option::weighted(0.8, 0..6usize), 1..14).prop_map(|slots| {
        let mut clusters: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for (item, slot) in slots.into_iter().enumerate() {
            if let Some(c) = slot {
                clusters.entry(c).or_default().push(item as u32);
            }
        }
        clusters.into_values().collect()
    })
}

fn relabel(clusters: &[Vec<u32>], rotate: usize) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = clusters.iter().map(|c| c.iter().map(|x| x * 7 + 3).collect()).collect();
    if !out.is_empty() {
        let r = rotate % out.len();
        out.rotate_left(r);
    }
    out
}

fn token() -> impl Strategy<Value = String> {
    prop_oneof!["[A-Za-z]{1,8}", "\\PC{1,4}", Just("\"quoted\"".to_string()), Just("back\\slash".to_string())]
}

proptest! {
    #[test]
    fn jsonl_round_trips_synthetic_corpora(seed in any::<u64>(), n in 1usize..4) {
        let docs = generate_synthetic_corpus(seed, n, &SyntheticConfig::default());
        let back = parse_jsonl(&to_jsonl(&docs), "prop").unwrap();
        prop_assert_eq!(back, docs);
    }

    #[test]
    fn jsonl_round_trips_arbitrary_tokens(
        id in "[a-z0-9-]{1,10}",
        sentences in prop::collection::vec(prop::collection::vec(token(), 1..6), 1..4),
    ) {
        let doc = Document { doc_id: id, sentences, ..Document::default() };
        let docs = vec![doc];
        prop_assert_eq!(parse_jsonl(&to_jsonl(&docs), "prop").unwrap(), docs);
    }

    #[test]
    fn coref_metrics_swap_precision_and_recall(pred in clustering(), gold in clustering()) {
        prop_assert!(close(muc(&pred, &gold), swapped(muc(&gold, &pred))));
        prop_assert!(close(b_cubed(&pred, &gold), swapped(b_cubed(&gold, &pred))));
        prop_assert!(close(ceaf_e(&pred, &gold), swapped(ceaf_e(&gold, &pred))));
    }

    #[test]
    fn coref_metrics_ignore_identities(pred in clustering(), gold in clustering(), r1 in 0usize..6, r2 in 0usize..6) {
        let (p2, g2) = (relabel(&pred, r1), relabel(&gold, r2));
        prop_assert!(close(muc(&pred, &gold), muc(&p2, &g2)));
        prop_assert!(close(b_cubed(&pred, &gold), b_cubed(&p2, &g2)));
        prop_assert!(close(ceaf_e(&pred, &gold), ceaf_e(&p2, &g2)));
    }

    #[test]
    fn identical_clusterings_score_one(gold in clustering()) {
        prop_assume!(gold.iter().any(|c| c.len() > 1));
        prop_assert_eq!(muc(&gold, &gold).f1, 1.0);
        prop_assert!((b_cubed(&gold, &gold).f1 - 1.0).abs() <= 1e-12);
        prop_assert!((ceaf_e(&gold, &gold).f1 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn span_f1_swaps(pred in spans(12), gold in spans(12)) {
        prop_assert!(close(span_f1(&pred, &gold), swapped(span_f1(&gold, &pred))));
    }

    #[test]
    fn bilou_round_trip(spans in spans(15)) {
        let tagset = BilouTagset::new(&["A", "B"]);
        let tags = tagset.spans_to_tags(&spans, 15).unwrap();
        prop_assert_eq!(tagset.tags_to_spans(&tags), spans);
    }
}

/// Non-overlapping labelled spans inside `0..n`, sorted by start.
fn spans(n: usize) -> impl Strategy<Value = Vec<TaggedSpan>> {
    prop::collection::vec((0..n, 1usize..4, prop::bool::ANY), 0..6).prop_map(move |raw| {
        let mut out: Vec<TaggedSpan> = Vec::new();
        let mut sorted = raw;
        sorted.sort();
        for (start, width, a) in sorted {
            let end = (start + width - 1).min(n - 1);
            if out.last().is_none_or(|s| s.end < start) {
                out.push(TaggedSpan::new(start, end, if a { "A" } else { "B" }));
            }
        }
        out
    })
}
