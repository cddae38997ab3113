//! Property tests for the numeric and metric invariants.

use lsl_core::data::Span;
use lsl_core::lsl::{self, LatentPosterior};
use lsl_core::math::{log_sum_exp, softmax, Matrix};
use lsl_core::metrics::{b_cubed, diversity, npmi_matrix, uncertainty, Contingency};
use lsl_core::probe::{pool_span, ProbeParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logits(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..=max_n)
}

fn assignment(max_len: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..4, n),
            prop::collection::vec(0u8..5, n),
        )
    })
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(z in logits(16), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&z) - c).abs() < 1e-9);
    }

    #[test]
    fn posterior_is_a_distribution(z in logits(40)) {
        let p = LatentPosterior::from_logits(z.clone());
        prop_assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.distribution.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((0.0..=1.0).contains(&p.binary_prob));
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(p.hard_class, z.iter().position(|&v| v == max).unwrap());
        prop_assert!(p.binary_logit >= max);
    }

    #[test]
    fn entropy_terms_are_bounded(batch in 1usize..8, n in 1usize..20, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let posteriors: Vec<LatentPosterior> = (0..batch)
            .map(|_| LatentPosterior::from_logits((0..n).map(|_| rng.random_range(-10.0..10.0)).collect()))
            .collect();
        let log_n = (n as f64).ln();
        let be = lsl::loss_batch_entropy(&posteriors).unwrap();
        let ie = lsl::loss_instance_entropy(&posteriors).unwrap();
        let mi = lsl::mutual_information(&posteriors).unwrap();
        prop_assert!((0.0..=log_n + 1e-12).contains(&be));
        prop_assert!((0.0..=log_n + 1e-12).contains(&ie));
        prop_assert!((be + ie + mi - log_n).abs() < 1e-9);
        let dists: Vec<&[f64]> = posteriors.iter().map(|p| p.distribution.as_slice()).collect();
        let u = uncertainty(&dists).unwrap();
        prop_assert!(u >= 1.0 - 1e-12 && u <= n as f64 + 1e-9);
    }

    #[test]
    fn pooled_span_lies_in_token_box(
        seed in any::<u64>(),
        tokens in 1usize..7,
        dim in 1usize..5,
        scale in 0.1f64..20.0,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ProbeParams::init(1, dim, 1, 3, &mut rng);
        for a in params.attn.iter_mut() {
            *a *= scale;
        }
        let values: Vec<f64> = (0..tokens * dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = Matrix::from_vec(tokens, dim, values);
        let start = rng.random_range(0..tokens);
        let end = rng.random_range(start + 1..=tokens);
        let pooled = pool_span(&m, Span { start, end }, &params).unwrap();
        for (j, &v) in pooled.iter().enumerate() {
            let col = (start..end).map(|t| m.get(t, j));
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn b_cubed_ignores_renaming_and_order((gold, pred) in assignment(12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let base = b_cubed(&gold, &pred, None).unwrap();
        prop_assert!(base.precision > 0.0 && base.precision <= 1.0 + 1e-12);
        prop_assert!(base.recall > 0.0 && base.recall <= 1.0 + 1e-12);

        let renamed: Vec<u8> = pred.iter().map(|c| 9 - c).collect();
        let r = b_cubed(&gold, &renamed, None).unwrap();
        prop_assert!((r.f1 - base.f1).abs() < 1e-12);

        let mut order: Vec<usize> = (0..gold.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let g: Vec<u8> = order.iter().map(|&i| gold[i]).collect();
        let p: Vec<u8> = order.iter().map(|&i| pred[i]).collect();
        let s = b_cubed(&g, &p, None).unwrap();
        prop_assert!((s.precision - base.precision).abs() < 1e-12);
        prop_assert!((s.recall - base.recall).abs() < 1e-12);

        let swapped = b_cubed(&pred, &gold, None).unwrap();
        prop_assert!((swapped.precision - base.recall).abs() < 1e-12);
    }

    #[test]
    fn npmi_is_symmetric_and_bounded((gold, pred) in assignment(30)) {
        let labels: Vec<String> = gold.iter().map(|g| format!("L{g}")).collect();
        let pred: Vec<usize> = pred.iter().map(|&c| c as usize).collect();
        let m = npmi_matrix(&Contingency::from_assignments(&labels, &pred).unwrap());
        for i in 0..m.labels.len() {
            for j in 0..m.labels.len() {
                let v = m.values[i][j].unwrap();
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert_eq!(Some(v), m.values[j][i]);
            }
        }
    }

    #[test]
    fn diversity_between_one_and_cluster_count(pred in prop::collection::vec(0u8..10, 1..50)) {
        let d = diversity(&pred).unwrap();
        let mut distinct = pred.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert!(d >= 1.0 - 1e-12 && d <= distinct.len() as f64 + 1e-9);
    }
}
