use proptest::prelude::*;
use sentipipe::eval::{confusion, macro_f1, micro_f1};

fn instance() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..=7).prop_flat_map(|k| {
        (1usize..=200).prop_flat_map(move |n| {
            (
                Just(k),
                prop::collection::vec(0..k, n),
                prop::collection::vec(0..k, n),
            )
        })
    })
}

fn brute_macro(golds: &[usize], preds: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (&g, &p) in golds.iter().zip(preds) {
            match (g == c, p == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        total += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    total / k as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn micro_is_accuracy((k, golds, preds) in instance()) {
        let m = confusion(&golds, &preds, k).unwrap();
        let hits = golds.iter().zip(&preds).filter(|(g, p)| g == p).count();
        prop_assert_eq!(micro_f1(&m).unwrap(), hits as f64 / golds.len() as f64);
    }

    #[test]
    fn macro_matches_brute_force((k, golds, preds) in instance()) {
        let m = confusion(&golds, &preds, k).unwrap();
        prop_assert!((macro_f1(&m).unwrap() - brute_macro(&golds, &preds, k)).abs() < 1e-12);
    }

    #[test]
    fn relabeling_classes_preserves_scores(
        (k, golds, preds) in instance(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let g2: Vec<usize> = golds.iter().map(|&g| perm[g]).collect();
        let p2: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let a = confusion(&golds, &preds, k).unwrap();
        let b = confusion(&g2, &p2, k).unwrap();
        prop_assert_eq!(micro_f1(&a).unwrap(), micro_f1(&b).unwrap());
        prop_assert!((macro_f1(&a).unwrap() - macro_f1(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn scores_lie_in_unit_interval((k, golds, preds) in instance()) {
        let m = confusion(&golds, &preds, k).unwrap();
        let (mi, ma) = (micro_f1(&m).unwrap(), macro_f1(&m).unwrap());
        prop_assert!((0.0..=1.0).contains(&mi));
        prop_assert!((0.0..=1.0).contains(&ma));
    }
}
