//! Fixtures shared by the criterion benches.

use duet_core::lm::{LmConfig, TokenLm};
use duet_core::motion::{positions_of, MotionFrame};
use duet_core::synth::{generate_corpus, SynthConfig};
use duet_core::vq::Codebook;
use duet_core::{DuetSequence, Skeleton};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use duet_core::geometry::Vec3;

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(17)
}

pub fn codebook(size: usize, dim: usize) -> Codebook {
    let mut r = rng();
    let codes = (0..size * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    Codebook::from_codes(codes, dim)
}

pub fn queries(n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng();
    (0..n).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

pub fn feature_set(n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    let mut r = rng();
    (0..n).map(|_| (0..dim).map(|_| r.random::<f64>() + shift).collect()).collect()
}

/// One 10-second synthetic duet.
pub fn duet() -> DuetSequence {
    let cfg = SynthConfig { sequences: 1, duration: 10.0, ..SynthConfig::desk() };
    generate_corpus(&cfg, &Skeleton::smpl22(), &mut rng()).expect("synthetic duet").remove(0).duet
}

pub fn positions(frames: &[MotionFrame]) -> Vec<Vec<Vec3>> {
    positions_of(frames)
}

/// The desk-sized LM over a vocabulary of `vocab` tokens.
pub fn desk_lm(vocab: usize, text_rows: usize) -> TokenLm {
    let cfg = LmConfig {
        dim: 64,
        layers: 2,
        heads: 4,
        context: 256,
        lora_rank: 16,
        lora_alpha: 16.0,
        ..LmConfig::standard(vocab, text_rows)
    };
    TokenLm::new(cfg, candle_core::DType::F32, &mut rng()).expect("lm")
}
