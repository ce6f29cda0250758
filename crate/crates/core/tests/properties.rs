use std::collections::BTreeSet;

use docembed::corpus::{body_fingerprint, dedup, Document};
use docembed::eval::{adjusted_rand_index, average_precision, spearman_rho};
use docembed::text::{pack_greedy, PackerConfig};
use docembed::trainer::loss::{bce_loss, softmax_nll};
use proptest::prelude::*;

fn packer_config() -> impl Strategy<Value = PackerConfig> {
    (1usize..8, 4usize..64, 0.3f64..=1.0).prop_map(|(capacity, max_len, min_proportion)| PackerConfig {
        capacity,
        max_len,
        min_proportion,
    })
}

fn doc(id: usize, body: &str, date: i64) -> Document {
    Document {
        id: format!("d{id:03}"),
        title: String::new(),
        body: body.into(),
        anchor_texts: Vec::new(),
        byline_date: date,
        publisher: "p".into(),
        language: "en".into(),
        entity_ids: Vec::new(),
        image_hash: None,
    }
}

proptest! {
    #[test]
    fn packing_conserves_every_instance(
        (cfg, lens) in packer_config().prop_flat_map(|c| (Just(c), prop::collection::vec(1..=c.max_len, 0..40)))
    ) {
        // Instance i is filled with token i so each segment names its source.
        let instances: Vec<Vec<u32>> = lens.iter().enumerate().map(|(i, &l)| vec![i as u32; l]).collect();
        let packed = pack_greedy(&instances, &cfg).unwrap();
        let mut seen = Vec::new();
        for p in &packed {
            prop_assert!(p.len() <= cfg.max_len);
            prop_assert_eq!(p.segment_boundaries.first().copied(), Some(0));
            for (s, e) in p.segments() {
                prop_assert!(s < e);
                let seg = &p.token_ids[s..e];
                prop_assert!(seg.iter().all(|&t| t == seg[0]));
                prop_assert_eq!(seg, instances[seg[0] as usize].as_slice());
                seen.push(seg[0] as usize);
            }
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..instances.len()).collect::<Vec<_>>());
    }

    #[test]
    fn dedup_is_idempotent(bodies in prop::collection::vec((0usize..6, 0i64..30), 0..30)) {
        let words = ["a b c", "A  b c", "x y", "x y z", "q", "Q"];
        let docs: Vec<Document> = bodies.iter().enumerate().map(|(i, &(w, d))| doc(i, words[w], d)).collect();
        let once = dedup(docs.clone());
        prop_assert_eq!(dedup(once.clone()), once.clone());
        let prints: BTreeSet<u64> = once.iter().map(|d| body_fingerprint(&d.body)).collect();
        prop_assert_eq!(prints.len(), once.len());
        let all: BTreeSet<u64> = docs.iter().map(|d| body_fingerprint(&d.body)).collect();
        prop_assert_eq!(all, prints);
        for kept in &once {
            let fp = body_fingerprint(&kept.body);
            for d in docs.iter().filter(|d| body_fingerprint(&d.body) == fp) {
                prop_assert!((kept.byline_date, &kept.id) <= (d.byline_date, &d.id));
            }
        }
    }

    #[test]
    fn ari_is_symmetric_and_label_free(pairs in prop::collection::vec((0u8..4, 0u8..5), 1..40)) {
        let a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let renamed: Vec<u8> = a.iter().map(|x| 10 - x).collect();
        prop_assert!((adjusted_rand_index(&renamed, &b).unwrap() - ab).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30)) {
        let pred: Vec<f64> = xs.iter().map(|p| p.0).collect();
        let gold: Vec<f64> = xs.iter().map(|p| p.1).collect();
        let rho = spearman_rho(&pred, &gold);
        prop_assume!(rho.is_ok());
        let rho = rho.unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
        let warped: Vec<f64> = pred.iter().map(|x| x.powi(3) + x.exp()).collect();
        prop_assert!((spearman_rho(&warped, &gold).unwrap() - rho).abs() < 1e-9);
    }

    #[test]
    fn average_precision_is_bounded(
        ranking in prop::collection::vec(0u8..20, 0..20),
        relevant in prop::collection::btree_set(0u8..20, 0..8),
        k in 1usize..25,
    ) {
        let mut seen = BTreeSet::new();
        let ranking: Vec<String> = ranking.into_iter().filter(|x| seen.insert(*x)).map(|x| x.to_string()).collect();
        let relevant: BTreeSet<String> = relevant.into_iter().map(|x| x.to_string()).collect();
        let ap = average_precision(&ranking, &relevant, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        let perfect: Vec<String> = relevant.iter().cloned().collect();
        if !relevant.is_empty() {
            prop_assert!((average_precision(&perfect, &relevant, k) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_nll_is_shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 2..12), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let base = softmax_nll(&logits, 0);
        prop_assert!(base >= 0.0);
        prop_assert!((softmax_nll(&shifted, 0) - base).abs() < 1e-9 * base.max(1.0));
    }

    #[test]
    fn softmax_nll_grows_with_negative_logits(
        logits in prop::collection::vec(-30.0f64..30.0, 2..12),
        j in any::<prop::sample::Index>(),
        d in 0.0f64..10.0,
    ) {
        let j = 1 + j.index(logits.len() - 1);
        let mut raised = logits.clone();
        raised[j] += d;
        prop_assert!(softmax_nll(&raised, 0) >= softmax_nll(&logits, 0) - 1e-12);
        let mut boosted = logits.clone();
        boosted[0] += d;
        prop_assert!(softmax_nll(&boosted, 0) <= softmax_nll(&logits, 0) + 1e-12);
    }

    #[test]
    fn bce_ignores_label_order(
        labeled in prop::collection::vec((-20.0f64..20.0, any::<bool>()), 1..10),
        seed in any::<u64>(),
    ) {
        let logits: Vec<f64> = labeled.iter().map(|p| p.0).collect();
        let labels: Vec<(usize, bool)> = labeled.iter().enumerate().map(|(i, p)| (i, p.1)).collect();
        let mut permuted = labels.clone();
        let n = permuted.len();
        permuted.rotate_left((seed as usize) % n);
        permuted.reverse();
        let a = bce_loss(&logits, &labels).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((bce_loss(&logits, &permuted).unwrap() - a).abs() < 1e-9 * a.max(1.0));
        prop_assert_eq!(bce_loss(&logits, &[]), None);
    }
}
