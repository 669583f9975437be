mod common;

use common::{random_batch, rescale, swap_modalities, symmetric};
use expat_core::losses::{
    at_loss, bidirectional_triplet, cosine_triplet, expat_loss, tuplet21_loss,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn planar(cos: f64) -> Vec<f64> {
    vec![cos, (1.0 - cos * cos).max(0.0).sqrt()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn angular_losses_ignore_positive_rescaling(
        seed in any::<u64>(),
        n in 1usize..5,
        k in 2usize..9,
        factors in prop::collection::vec(1e-3f64..1e3, 1..30),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng, n, k);
        let s = rescale(&b, &factors);
        let pairs = [
            (expat_loss(&b, 1.0, 1.0, 1.0).unwrap(), expat_loss(&s, 1.0, 1.0, 1.0).unwrap()),
            (expat_loss(&b, 1.5, 0.5, 0.4).unwrap(), expat_loss(&s, 1.5, 0.5, 0.4).unwrap()),
            (at_loss(&b).unwrap(), at_loss(&s).unwrap()),
            (cosine_triplet(&b, 0.3).unwrap(), cosine_triplet(&s, 0.3).unwrap()),
        ];
        for (x, y) in pairs {
            prop_assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn swapping_modalities_swaps_direction_weights(
        seed in any::<u64>(),
        n in 1usize..5,
        k in 2usize..9,
        alpha in 0.0f64..3.0,
        beta in 0.0f64..3.0,
        margin in 0.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng, n, k);
        let s = swap_modalities(&b);
        let x = expat_loss(&b, alpha, beta, margin).unwrap();
        let y = expat_loss(&s, beta, alpha, margin).unwrap();
        prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        for (x, y) in [
            (at_loss(&b).unwrap(), at_loss(&s).unwrap()),
            (tuplet21_loss(&b).unwrap(), tuplet21_loss(&s).unwrap()),
            (bidirectional_triplet(&b, 0.3).unwrap(), bidirectional_triplet(&s, 0.3).unwrap()),
        ] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn lower_bounds_hold(seed in any::<u64>(), n in 1usize..5, k in 2usize..9, alpha in 0.0f64..3.0, beta in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng, n, k);
        let bound = alpha + beta;
        prop_assert!(expat_loss(&b, alpha, beta, 1.0).unwrap() >= bound * (1.0 - 1e-12));
        prop_assert!(at_loss(&b).unwrap() >= -1e-12);
        prop_assert!(tuplet21_loss(&b).unwrap() > 0.0);
    }

    #[test]
    fn anti_correlated_negatives_are_clamped(cp in -1.0f64..1.0, cn1 in -1.0f64..0.0, cn2 in -1.0f64..0.0) {
        let a = [1.0, 0.0];
        let p = planar(cp);
        let l1 = expat_loss(&symmetric(&a, &p, &planar(cn1)), 1.0, 1.0, 1.0).unwrap();
        let l2 = expat_loss(&symmetric(&a, &p, &planar(cn2)), 1.0, 1.0, 1.0).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1);
        let expected = 2.0 * (1.0 - cp).exp();
        prop_assert!((l1 - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn expat_is_monotone_in_both_similarities(c1 in 0.0f64..0.99, dc in 0.005f64..0.5, cp in -0.9f64..0.9) {
        let c2 = (c1 + dc).min(1.0);
        let a = [1.0, 0.0];
        let loss = |cp: f64, cn: f64| expat_loss(&symmetric(&a, &planar(cp), &planar(cn)), 1.0, 1.0, 1.0).unwrap();
        prop_assert!(loss(cp, c2) > loss(cp, c1));
        prop_assert!(loss(c1, 0.3) > loss(c2, 0.3));
    }
}

#[test]
fn euclidean_triplet_depends_on_scale() {
    let b = symmetric(&[1.0, 0.0], &[0.8, 0.6], &[0.0, 1.0]);
    // |a-p| = 0.632 and |a-n| = 1.414; scaling n by 3 gives |a-n| = 3.162.
    let before = bidirectional_triplet(&b, 1.0).unwrap();
    let after = bidirectional_triplet(&rescale(&b, &[1.0, 1.0, 1.0, 1.0, 3.0, 3.0]), 1.0).unwrap();
    assert!(before > 0.4 && after == 0.0, "{before} {after}");
    let angular = |b| expat_loss(b, 1.0, 1.0, 1.0).unwrap();
    let scaled = rescale(&b, &[1.0, 1.0, 1.0, 1.0, 3.0, 3.0]);
    assert!((angular(&b) - angular(&scaled)).abs() < 1e-12);
}
