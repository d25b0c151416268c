mod common;

use common::checks::*;
use duet_core::diffusion::schedule::cosine_schedule;
use proptest::prelude::*;

#[test]
fn schedule_endpoints() {
    schedule_laws().unwrap();
}

#[test]
fn leader_is_clamped_bit_exactly() {
    assert!(leader_bit_exact());
}

#[test]
fn ddim_is_deterministic_without_eta() {
    assert!(ddim_deterministic());
}

#[test]
fn guidance_identities() {
    assert!(cfg_identities());
}

#[test]
fn add_noise_variance() {
    assert!(add_noise_variance_error(200_000) < 0.03);
}

proptest! {
    #[test]
    fn inference_grid_is_increasing_and_spans(steps in 1usize..2000, frac in 0.0f64..1.0) {
        let s = cosine_schedule(steps, 0.008).unwrap();
        let count = 1 + ((steps - 1) as f64 * frac) as usize;
        let g = s.inference_steps(count).unwrap();
        prop_assert_eq!(g.len(), count + 1);
        prop_assert_eq!(g[0], 0);
        prop_assert_eq!(*g.last().unwrap(), steps);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
