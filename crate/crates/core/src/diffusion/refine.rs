//! Two-person crop features and sequence-level refinement.

use super::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::geometry::{yaw_from_rot6d, RigidTransform2D, Vec3};
use crate::motion::{compute_features, positions_of, MotionFrame};
use crate::skeleton::Skeleton;
use crate::vq::model::Normalizer;
use crate::window::transform_frames;
use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;

/// Frame of a crop: the leader's first-frame root, facing +Z.
pub fn crop_transform(leader: &[MotionFrame]) -> Result<RigidTransform2D> {
    let first = leader.first().ok_or_else(|| Error::invalid("empty crop"))?;
    let yaw = yaw_from_rot6d(&first.rotations[0]).unwrap_or(0.0);
    let root = first.positions[0];
    Ok(RigidTransform2D::from_pose(root[0], root[2], yaw))
}

/// Rows of `[leader features | follower features]` in the crop frame, plus the
/// crop-to-world transform.
pub fn crop_features(leader: &[MotionFrame], follower: &[MotionFrame]) -> Result<(Vec<Vec<f64>>, RigidTransform2D)> {
    if leader.len() != follower.len() {
        return Err(Error::LengthMismatch(format!(
            "leader has {} frames, follower {}",
            leader.len(),
            follower.len()
        )));
    }
    let to_world = crop_transform(leader)?;
    let to_crop = to_world.inverse();
    let l = transform_frames(leader, &to_crop);
    let f = transform_frames(follower, &to_crop);
    let rows = l
        .iter()
        .zip(&f)
        .map(|(a, b)| {
            let mut r = a.to_flat();
            r.extend(b.to_flat());
            r
        })
        .collect();
    Ok((rows, to_world))
}

/// Crop starts covering `len` frames with crops of `crop` frames and 50%
/// overlap; the last crop is aligned to the end.
pub fn crop_starts(len: usize, crop: usize) -> Vec<usize> {
    if len <= crop {
        return vec![0];
    }
    let hop = (crop / 2).max(1);
    let mut s: Vec<usize> = (0..).map(|i| i * hop).take_while(|&x| x + crop <= len).collect();
    if *s.last().unwrap() + crop < len {
        s.push(len - crop);
    }
    s
}

/// Triangular cross-fade weight of frame `i` in a crop of `n` frames.
fn fade_weight(i: usize, n: usize) -> f64 {
    let x = (i as f64 + 0.5) / n as f64;
    1.0 - (2.0 * x - 1.0).abs() + 1e-6
}

fn pad_to(frames: &[MotionFrame], n: usize) -> Vec<MotionFrame> {
    let mut v = frames.to_vec();
    while v.len() < n {
        v.push(v.last().unwrap().clone());
    }
    v
}

/// Refines a whole follower track against its leader with overlapping crops.
/// Refined positions are blended in world space and re-featurized.
#[allow(clippy::too_many_arguments)]
pub fn refine_sequence(
    model: &Denoiser,
    norm: &Normalizer,
    leader: &[MotionFrame],
    follower: &[MotionFrame],
    style: usize,
    skel: &Skeleton,
    fps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MotionFrame>> {
    if leader.len() != follower.len() {
        return Err(Error::LengthMismatch(format!(
            "leader has {} frames, follower {}",
            leader.len(),
            follower.len()
        )));
    }
    if leader.is_empty() {
        return Ok(Vec::new());
    }
    if model.config.refine_start == 0 {
        return Ok(follower.to_vec());
    }
    let len = leader.len();
    let crop = model.config.frames;
    let person = model.config.person_dim();
    let joints = skel.joint_count();
    let mut acc: Vec<Vec<Vec3>> = vec![vec![[0.0; 3]; joints]; len];
    let mut wsum = vec![0.0; len];
    for start in crop_starts(len, crop) {
        let end = (start + crop).min(len);
        let l = pad_to(&leader[start..end], crop);
        let f = pad_to(&follower[start..end], crop);
        let (rows, to_world) = crop_features(&l, &f)?;
        let normed: Vec<f32> = rows.iter().flat_map(|r| norm.normalize(r)).map(|v| v as f32).collect();
        let x = Tensor::from_vec(normed, (crop, 2 * person), &Device::Cpu)?;
        let out = model.refine_follower(&x.narrow(1, 0, person)?, &x.narrow(1, person, person)?, style, rng, None)?;
        let full = Tensor::cat(&[&x.narrow(1, 0, person)?, &out], 1)?
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?;
        for (i, row) in full.iter().enumerate().take(end - start) {
            let raw = norm.denormalize(row);
            let frame = MotionFrame::from_flat(&raw[person..], joints)?;
            let w = fade_weight(i, end - start);
            for (j, p) in frame.positions.iter().enumerate() {
                let p = to_world.apply_point(p);
                for c in 0..3 {
                    acc[start + i][j][c] += w * p[c];
                }
            }
            wsum[start + i] += w;
        }
    }
    let positions: Vec<Vec<Vec3>> = acc
        .into_iter()
        .zip(wsum)
        .map(|(frame, w)| frame.into_iter().map(|p| [p[0] / w, p[1] / w, p[2] / w]).collect())
        .collect();
    compute_features(&positions, skel, fps)
}

/// Flat positions of a follower track (for comparisons in tests).
pub fn flat_positions(frames: &[MotionFrame]) -> Vec<f64> {
    positions_of(frames).into_iter().flatten().flatten().collect()
}
