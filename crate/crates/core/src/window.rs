//! Fixed-length windows and rigid ground-plane canonicalization.

use crate::duet::DuetSequence;
use crate::error::{Error, Result};
use crate::geometry::{matrix_to_rot6d, rot6d_to_matrix, yaw_from_rot6d, RigidTransform2D};
use crate::motion::{MotionFrame, RelationFrame};

pub const WINDOW_LEN: usize = 20;

/// A canonicalized motion segment. `to_world` maps canonical coordinates back
/// to the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWindow {
    pub frames: Vec<MotionFrame>,
    pub to_world: RigidTransform2D,
    pub start: usize,
}

/// Applies a ground-plane transform to positions, velocities and the root rotation.
/// Non-root rotations live in root space and are unchanged.
pub fn transform_frame(frame: &MotionFrame, t: &RigidTransform2D) -> MotionFrame {
    let mut rotations = frame.rotations.clone();
    rotations[0] = matrix_to_rot6d(&t.apply_rotation(&rot6d_to_matrix(&frame.rotations[0])));
    MotionFrame {
        positions: frame.positions.iter().map(|p| t.apply_point(p)).collect(),
        velocities: frame.velocities.iter().map(|v| t.apply_vector(v)).collect(),
        rotations,
        contacts: frame.contacts,
    }
}

pub fn transform_frames(frames: &[MotionFrame], t: &RigidTransform2D) -> Vec<MotionFrame> {
    frames.iter().map(|f| transform_frame(f, t)).collect()
}

/// Moves the first frame's root to the XZ origin facing +Z.
/// A vertical forward axis on the first frame is treated as yaw 0.
pub fn canonicalize_window(frames: &[MotionFrame], start: usize) -> Result<MotionWindow> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("cannot canonicalize an empty window"))?;
    let yaw = yaw_from_rot6d(&first.rotations[0]).unwrap_or(0.0);
    let root = first.positions[0];
    let to_world = RigidTransform2D::from_pose(root[0], root[2], yaw);
    let to_canon = to_world.inverse();
    Ok(MotionWindow {
        frames: transform_frames(frames, &to_canon),
        to_world,
        start,
    })
}

pub fn invert_canonicalization(window: &MotionWindow) -> Vec<MotionFrame> {
    transform_frames(&window.frames, &window.to_world)
}

#[derive(Debug, Clone)]
pub struct DuetWindow {
    pub leader: MotionWindow,
    pub follower: MotionWindow,
    /// Relation frames are kept as-is; they are already leader-relative.
    pub relation: Vec<RelationFrame>,
    pub start: usize,
}

/// Window start indices for a track of `len` frames; partial trailing windows are dropped.
pub fn window_starts(len: usize, tau: usize, stride: usize) -> Vec<usize> {
    if tau == 0 || stride == 0 || len < tau {
        return Vec::new();
    }
    (0..=len - tau).step_by(stride).collect()
}

/// Splits a duet into windows, canonicalizing each dancer independently.
/// Returns an empty list when the sequence is shorter than `tau`.
pub fn windowize(seq: &DuetSequence, tau: usize, stride: usize) -> Result<Vec<DuetWindow>> {
    window_starts(seq.len(), tau, stride)
        .into_iter()
        .map(|s| {
            Ok(DuetWindow {
                leader: canonicalize_window(&seq.leader[s..s + tau], s)?,
                follower: canonicalize_window(&seq.follower[s..s + tau], s)?,
                relation: seq.relation[s..s + tau].to_vec(),
                start: s,
            })
        })
        .collect()
}

/// Canonical windows of a single motion track.
pub fn motion_windows(frames: &[MotionFrame], tau: usize) -> Result<Vec<MotionWindow>> {
    window_starts(frames.len(), tau, tau)
        .into_iter()
        .map(|s| canonicalize_window(&frames[s..s + tau], s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{compute_features, root_poses};
    use crate::skeleton::Skeleton;
    use std::f64::consts::PI;

    fn posed_frames(t_len: usize, x: f64, z: f64, yaw: f64) -> Vec<MotionFrame> {
        let skel = Skeleton::smpl22();
        let frames =
            compute_features(&vec![skel.rest_positions([0.0, 0.92, 0.0]); t_len], &skel, 20.0).unwrap();
        transform_frames(&frames, &RigidTransform2D::new(x, z, yaw))
    }

    #[test]
    fn already_canonical_is_identity() {
        let frames = posed_frames(4, 0.0, 0.0, 0.0);
        let w = canonicalize_window(&frames, 0).unwrap();
        assert!(w.to_world.tx.abs() < 1e-12 && w.to_world.tz.abs() < 1e-12);
        assert!(w.to_world.yaw.abs() < 1e-12);
    }

    #[test]
    fn offset_window_round_trip() {
        let frames = posed_frames(5, 3.0, 4.0, PI / 2.0);
        let w = canonicalize_window(&frames, 0).unwrap();
        let p = root_poses(&w.frames)[0];
        assert!(p.x.abs() < 1e-9 && p.z.abs() < 1e-9 && p.yaw.abs() < 1e-9);
        assert!((w.to_world.tx - 3.0).abs() < 1e-9);
        assert!((w.to_world.tz - 4.0).abs() < 1e-9);
        assert!((w.to_world.yaw - PI / 2.0).abs() < 1e-9);
        let back = invert_canonicalization(&w);
        for (a, b) in back.iter().zip(&frames) {
            for (u, v) in a.to_flat().iter().zip(b.to_flat()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(40, 20, 20), vec![0, 20]);
        assert_eq!(window_starts(39, 20, 20), vec![0]);
        assert!(window_starts(19, 20, 20).is_empty());
    }
}
