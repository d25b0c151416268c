mod common;

use common::checks::*;
use duet_core::metrics::beats::{bas, kernel_alignment};
use duet_core::metrics::fid::{diversity, fid};
use proptest::prelude::*;

#[test]
fn metric_oracles() {
    criterion_6().unwrap();
}

fn set(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, dim), 3..20)
}

proptest! {
    #[test]
    fn fid_is_symmetric_and_non_negative(a in set(3), b in set(3)) {
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-6 * (1.0 + ab));
    }

    #[test]
    fn fid_of_a_set_with_itself_is_zero(a in set(4)) {
        prop_assert!(fid(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn fid_of_a_shift_is_its_squared_norm(a in set(2), dx in -3.0f64..3.0, dz in -3.0f64..3.0) {
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + dx, v[1] + dz]).collect();
        let f = fid(&a, &b).unwrap();
        prop_assert!((f - (dx * dx + dz * dz)).abs() < 1e-6 * (1.0 + f));
    }

    #[test]
    fn alignment_lies_in_unit_interval(
        r in proptest::collection::vec(0.0f64..10.0, 1..10),
        c in proptest::collection::vec(0.0f64..10.0, 0..10),
    ) {
        let v = kernel_alignment(&r, &c, 0.15).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn bas_is_one_when_every_music_beat_is_hit(music in proptest::collection::vec(0.0f64..10.0, 1..10), extra in proptest::collection::vec(0.0f64..10.0, 0..5)) {
        let mut motion = music.clone();
        motion.extend(extra);
        prop_assert!((bas(&motion, &music, 0.15).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_is_non_negative(a in set(3), seed in 0u64..100) {
        prop_assert!(diversity(&a, a.len() / 2, seed).unwrap() >= 0.0);
    }
}
