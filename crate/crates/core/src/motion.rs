//! Per-frame motion state and the pairwise root relation.

use crate::error::{Error, Result};
use crate::geometry::{
    matrix_to_rot6d, rot6d_to_matrix, rotation_between, wrap_angle, yaw_from_rot6d, Vec3,
};
use crate::skeleton::Skeleton;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub const DEFAULT_FPS: f64 = 20.0;
/// Heel/toe speed below which a foot is in contact (m/s).
pub const CONTACT_SPEED_THRESHOLD: f64 = 0.05;

/// Flat feature width for `joints` joints: positions, velocities, 6D rotations, contacts.
pub const fn feature_dim(joints: usize) -> usize {
    12 * joints + 4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    /// Global joint positions (m).
    pub positions: Vec<Vec3>,
    /// Global joint velocities (m/s).
    pub velocities: Vec<Vec3>,
    /// Root: global rotation. Other joints: rotation relative to the root.
    pub rotations: Vec<[f64; 6]>,
    /// Left heel, left toe, right heel, right toe.
    pub contacts: [bool; 4],
}

impl MotionFrame {
    pub fn joint_count(&self) -> usize {
        self.positions.len()
    }

    pub fn root_rotation(&self) -> Matrix3<f64> {
        rot6d_to_matrix(&self.rotations[0])
    }

    /// Flat layout `[positions, velocities, rot6d, contacts]`, length `12 * N_j + 4`.
    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.joint_count();
        let mut out = Vec::with_capacity(feature_dim(n));
        out.extend(self.positions.iter().flatten());
        out.extend(self.velocities.iter().flatten());
        out.extend(self.rotations.iter().flatten());
        out.extend(self.contacts.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        out
    }

    /// Inverse of [`MotionFrame::to_flat`]. Contact channels are clamped to
    /// `[0, 1]` and thresholded at 0.5.
    pub fn from_flat(flat: &[f64], joints: usize) -> Result<Self> {
        if flat.len() != feature_dim(joints) {
            return Err(Error::invalid(format!(
                "flat frame has {} values, expected {}",
                flat.len(),
                feature_dim(joints)
            )));
        }
        let n = joints;
        let v3 = |base: usize| -> Vec<Vec3> {
            (0..n)
                .map(|j| [flat[base + 3 * j], flat[base + 3 * j + 1], flat[base + 3 * j + 2]])
                .collect()
        };
        let positions = v3(0);
        let velocities = v3(3 * n);
        let rotations = (0..n)
            .map(|j| {
                let b = 6 * n + 6 * j;
                let mut r = [0.0; 6];
                r.copy_from_slice(&flat[b..b + 6]);
                r
            })
            .collect();
        let c = &flat[12 * n..];
        let contacts = [0, 1, 2, 3].map(|k| c[k].clamp(0.0, 1.0) >= 0.5);
        Ok(Self {
            positions,
            velocities,
            rotations,
            contacts,
        })
    }
}

/// Ground pose of a body: root XZ and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootPose {
    pub x: f64,
    pub z: f64,
    pub yaw: f64,
}

/// Root ground pose of each frame. A frame whose forward axis is vertical
/// reuses the previous frame's yaw (0 for the first frame).
pub fn root_poses(frames: &[MotionFrame]) -> Vec<RootPose> {
    let mut prev = 0.0;
    frames
        .iter()
        .map(|f| {
            let yaw = yaw_from_rot6d(&f.rotations[0]).unwrap_or(prev);
            prev = yaw;
            let p = f.positions[0];
            RootPose {
                x: p[0],
                z: p[2],
                yaw,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationFrame {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

impl RelationFrame {
    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.z, self.theta]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            x: a[0],
            z: a[1],
            theta: wrap_angle(a[2]),
        }
    }
}

/// Follower root offset expressed in the leader's ground frame plus relative yaw.
pub fn relation_from_poses(leader: RootPose, follower: RootPose) -> RelationFrame {
    let dx = follower.x - leader.x;
    let dz = follower.z - leader.z;
    let (s, c) = leader.yaw.sin_cos();
    RelationFrame {
        x: c * dx - s * dz,
        z: s * dx + c * dz,
        theta: wrap_angle(follower.yaw - leader.yaw),
    }
}

/// Places a follower from the leader pose and a relation (inverse of [`relation_from_poses`]).
pub fn follower_pose_from_relation(leader: RootPose, rel: RelationFrame) -> RootPose {
    let (s, c) = leader.yaw.sin_cos();
    RootPose {
        x: leader.x + c * rel.x + s * rel.z,
        z: leader.z - s * rel.x + c * rel.z,
        yaw: wrap_angle(leader.yaw + rel.theta),
    }
}

pub fn relation_track(leader: &[MotionFrame], follower: &[MotionFrame]) -> Vec<RelationFrame> {
    root_poses(leader)
        .into_iter()
        .zip(root_poses(follower))
        .map(|(l, f)| relation_from_poses(l, f))
        .collect()
}

/// Contact flags from heel/toe trajectories. `feet[t]` holds the four foot
/// joints (left heel, left toe, right heel, right toe) at frame `t`.
/// A flag is set iff the joint's speed is strictly below `threshold`.
/// Frame 0 uses frame 1's speed.
pub fn foot_contacts(feet: &[[Vec3; 4]], fps: f64, threshold: f64) -> Result<Vec<[bool; 4]>> {
    if feet.len() < 2 {
        return Err(Error::invalid("foot contacts need at least 2 frames"));
    }
    for (t, f) in feet.iter().enumerate() {
        if f.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { frame: t });
        }
    }
    let speed = |t: usize, k: usize| {
        let (a, b) = (feet[t - 1][k], feet[t][k]);
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() * fps
    };
    Ok((0..feet.len())
        .map(|t| {
            let s = t.max(1);
            [0, 1, 2, 3].map(|k| speed(s, k) < threshold)
        })
        .collect())
}

/// Root orientation from hips and trunk: x = left-hip direction, y = trunk up,
/// z = x cross y (forward).
pub fn root_rotation_from_positions(p: &[Vec3], skel: &Skeleton) -> Matrix3<f64> {
    let v = |a: &Vec3| Vector3::new(a[0], a[1], a[2]);
    let up = v(&p[skel.spine]) - v(&p[skel.root]);
    let up = if up.norm() > 1e-9 { up.normalize() } else { Vector3::y() };
    let across = v(&p[skel.left_hip]) - v(&p[skel.right_hip]);
    let mut x = across - up * up.dot(&across);
    if x.norm() < 1e-9 {
        x = Vector3::x() - up * up.x;
    }
    let x = x.normalize();
    let z = x.cross(&up);
    Matrix3::from_columns(&[x, up, z])
}

/// Per-joint rotations from positions: each joint is the minimal rotation aligning
/// its rest bone (towards its first child) with the observed bone, composed on the
/// root rotation and expressed in root space. Leaf joints get the identity.
pub fn rotations_from_positions(p: &[Vec3], skel: &Skeleton) -> Vec<[f64; 6]> {
    let root = root_rotation_from_positions(p, skel);
    let children = skel.first_children();
    let v = |a: &Vec3| Vector3::new(a[0], a[1], a[2]);
    (0..skel.joint_count())
        .map(|j| {
            if j == skel.root {
                return matrix_to_rot6d(&root);
            }
            let local = match children[j] {
                None => Matrix3::identity(),
                Some(c) => {
                    let rest = root * v(&skel.offsets[c]);
                    let cur = v(&p[c]) - v(&p[j]);
                    if rest.norm() < 1e-9 || cur.norm() < 1e-9 {
                        Matrix3::identity()
                    } else {
                        let global = rotation_between(&rest, &cur) * root;
                        root.transpose() * global
                    }
                }
            };
            matrix_to_rot6d(&local)
        })
        .collect()
}

/// Builds motion frames from raw global joint positions (`T x N_j x 3`).
pub fn compute_features(positions: &[Vec<Vec3>], skel: &Skeleton, fps: f64) -> Result<Vec<MotionFrame>> {
    let t_len = positions.len();
    if t_len < 2 {
        return Err(Error::invalid("compute_features needs at least 2 frames"));
    }
    let n = skel.joint_count();
    for (t, frame) in positions.iter().enumerate() {
        if frame.len() != n {
            return Err(Error::invalid(format!(
                "frame {t} has {} joints, skeleton has {n}",
                frame.len()
            )));
        }
        if frame.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { frame: t });
        }
    }
    let vel = |t: usize| -> Vec<Vec3> {
        (0..n)
            .map(|j| {
                let (a, b) = (positions[t - 1][j], positions[t][j]);
                [(b[0] - a[0]) * fps, (b[1] - a[1]) * fps, (b[2] - a[2]) * fps]
            })
            .collect()
    };
    let feet_idx = skel.foot_joints();
    let feet: Vec<[Vec3; 4]> = positions
        .iter()
        .map(|p| feet_idx.map(|j| p[j]))
        .collect();
    let contacts = foot_contacts(&feet, fps, CONTACT_SPEED_THRESHOLD)?;
    Ok((0..t_len)
        .map(|t| MotionFrame {
            positions: positions[t].clone(),
            velocities: vel(t.max(1)),
            rotations: rotations_from_positions(&positions[t], skel),
            contacts: contacts[t],
        })
        .collect())
}

pub fn positions_of(frames: &[MotionFrame]) -> Vec<Vec<Vec3>> {
    frames.iter().map(|f| f.positions.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn static_pose(t: usize) -> Vec<Vec<Vec3>> {
        let skel = Skeleton::smpl22();
        vec![skel.rest_positions([0.0, 0.92, 0.0]); t]
    }

    #[test]
    fn static_pose_has_zero_velocity_and_full_contact() {
        let skel = Skeleton::smpl22();
        let frames = compute_features(&static_pose(20), &skel, 20.0).unwrap();
        assert_eq!(frames.len(), 20);
        for f in &frames {
            assert!(f.velocities.iter().flatten().all(|&v| v == 0.0));
            assert_eq!(f.contacts, [true; 4]);
        }
    }

    #[test]
    fn flat_dimension_for_22_joints() {
        assert_eq!(feature_dim(22), 3 * 22 + 3 * 22 + 6 * 22 + 4);
        assert_eq!(feature_dim(22), 268);
        let skel = Skeleton::smpl22();
        let frames = compute_features(&static_pose(3), &skel, 20.0).unwrap();
        let flat = frames[0].to_flat();
        assert_eq!(flat.len(), 268);
        assert_eq!(MotionFrame::from_flat(&flat, 22).unwrap(), frames[0]);
    }

    #[test]
    fn translating_root_velocity() {
        let skel = Skeleton::smpl22();
        let fps = 20.0;
        let pos: Vec<Vec<Vec3>> = (0..10)
            .map(|t| skel.rest_positions([0.0, 0.92, 0.5 * t as f64 / fps]))
            .collect();
        let frames = compute_features(&pos, &skel, fps).unwrap();
        for f in &frames {
            let v = f.velocities[0];
            assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
            assert!((v[2] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_input_names_frame() {
        let skel = Skeleton::smpl22();
        let mut pos = static_pose(5);
        pos[3][7][1] = f64::NAN;
        match compute_features(&pos, &skel, 20.0) {
            Err(Error::NonFinite { frame }) => assert_eq!(frame, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn contact_threshold_is_strict() {
        let fps = 20.0;
        let step = |speed: f64| -> Vec<[Vec3; 4]> {
            (0..3)
                .map(|t| [[0.0, 0.0, speed * t as f64 / fps]; 4])
                .collect()
        };
        let c = foot_contacts(&step(0.0), fps, 0.05).unwrap();
        assert!(c.iter().all(|f| *f == [true; 4]));
        let c = foot_contacts(&step(10.0), fps, 0.05).unwrap();
        assert!(c.iter().all(|f| *f == [false; 4]));
        // speed exactly at threshold: 0.0025 m per frame at 20 fps == 0.05 m/s
        let feet: Vec<[Vec3; 4]> = (0..3).map(|t| [[0.0, 0.0, 0.0025 * t as f64]; 4]).collect();
        let speed = 0.0025 * fps;
        let c = foot_contacts(&feet, fps, speed).unwrap();
        assert!(c.iter().all(|f| *f == [false; 4]));
    }

    #[test]
    fn relation_examples() {
        let origin = RootPose { x: 0.0, z: 0.0, yaw: 0.0 };
        let r = relation_from_poses(origin, origin);
        assert_eq!(r.to_array(), [0.0, 0.0, 0.0]);
        let f = RootPose { x: 1.0, z: 2.0, yaw: PI };
        let r = relation_from_poses(origin, f);
        assert!((r.x - 1.0).abs() < 1e-12 && (r.z - 2.0).abs() < 1e-12);
        assert!((r.theta - PI).abs() < 1e-12);
    }

    #[test]
    fn relation_inverse_places_follower() {
        let l = RootPose { x: 0.4, z: -2.0, yaw: 1.1 };
        let f = RootPose { x: -1.0, z: 0.5, yaw: -2.5 };
        let back = follower_pose_from_relation(l, relation_from_poses(l, f));
        assert!((back.x - f.x).abs() < 1e-12);
        assert!((back.z - f.z).abs() < 1e-12);
        assert!((wrap_angle(back.yaw - f.yaw)).abs() < 1e-12);
    }

    #[test]
    fn rest_pose_rotations_are_identity() {
        let skel = Skeleton::smpl22();
        let p = skel.rest_positions([1.0, 0.92, -3.0]);
        for r in rotations_from_positions(&p, &skel) {
            let m = rot6d_to_matrix(&r);
            assert!((m - Matrix3::identity()).norm() < 1e-9, "{m}");
        }
    }
}
