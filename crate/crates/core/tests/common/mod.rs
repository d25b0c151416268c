//! Fixtures and numeric helpers shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use candle_core::{DType, Tensor};
use duet_core::geometry::{matrix_to_rot6d, RigidTransform2D};
use duet_core::motion::{compute_features, MotionFrame};
use duet_core::nn::{scalar, ParamStore};
use duet_core::synth::{generate_corpus, SynthConfig};
use duet_core::{DuetSequence, Skeleton};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A short noisy synthetic duet.
pub fn duet(seconds: f64, seed: u64) -> DuetSequence {
    let cfg = SynthConfig { sequences: 1, duration: seconds, ..SynthConfig::desk() };
    generate_corpus(&cfg, &Skeleton::smpl22(), &mut rng(seed)).unwrap().remove(0).duet
}

/// Rest pose jittered per joint and frame, placed at `(x, z)` with `yaw`.
pub fn jittered_frames(len: usize, x: f64, z: f64, yaw: f64, r: &mut ChaCha8Rng) -> Vec<MotionFrame> {
    let skel = Skeleton::smpl22();
    let pos: Vec<Vec<[f64; 3]>> = (0..len)
        .map(|_| {
            skel.rest_positions([0.0, 0.92, 0.0])
                .into_iter()
                .map(|p| [p[0] + r.random_range(-0.03..0.03), p[1] + r.random_range(-0.03..0.03), p[2] + r.random_range(-0.03..0.03)])
                .collect()
        })
        .collect();
    let frames = compute_features(&pos, &skel, 20.0).unwrap();
    duet_core::window::transform_frames(&frames, &RigidTransform2D::new(x, z, yaw))
}

pub fn random_transform(r: &mut ChaCha8Rng) -> RigidTransform2D {
    RigidTransform2D::new(r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::y() } else { axis };
    let angle = r.random_range(-3.1..3.1);
    *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
}

pub fn rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    matrix_to_rot6d(m)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest relative error between analytic and central-difference gradients
/// over up to `per_tensor` entries of every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck(
    store: &ParamStore,
    loss: &dyn Fn() -> duet_core::Result<Tensor>,
    step: f64,
    per_tensor: usize,
    floor: f64,
) -> (f64, String) {
    assert_eq!(store.dtype, DType::F64, "gradcheck needs f64 parameters");
    let l = loss().unwrap();
    let grads = l.backward().unwrap();
    let mut worst = (0.0, String::new());
    let mut pick = rng(99);
    for (name, var) in store.iter() {
        let shape = var.as_tensor().dims().to_vec();
        let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; base.len()],
        };
        for _ in 0..per_tensor.min(base.len()) {
            let i = pick.random_range(0..base.len());
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.as_slice(), &candle_core::Device::Cpu).unwrap()).unwrap();
                scalar(&loss().unwrap()).unwrap()
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            eval(0.0);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}] analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}
