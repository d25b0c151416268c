//! Per-sequence feature vectors for the distribution metrics.

use crate::geometry::{RigidTransform2D, Vec3};
use crate::motion::{root_poses, MotionFrame};
use crate::skeleton::Skeleton;

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `[mean speed (N) | mean squared speed (N) | mean acceleration magnitude (N)]`
/// per joint, from finite differences of positions. Needs at least 2 frames;
/// acceleration terms are zero with fewer than 3.
pub fn kinematic_features(positions: &[Vec<Vec3>], fps: f64) -> Vec<f64> {
    let n = positions.first().map(|p| p.len()).unwrap_or(0);
    let mut out = vec![0.0; 3 * n];
    let t = positions.len();
    if t < 2 {
        return out;
    }
    for j in 0..n {
        let vel: Vec<Vec3> = positions
            .windows(2)
            .map(|w| {
                let d = sub(&w[1][j], &w[0][j]);
                [d[0] * fps, d[1] * fps, d[2] * fps]
            })
            .collect();
        let speeds: Vec<f64> = vel.iter().map(norm).collect();
        out[j] = speeds.iter().sum::<f64>() / speeds.len() as f64;
        out[n + j] = speeds.iter().map(|s| s * s).sum::<f64>() / speeds.len() as f64;
        if vel.len() >= 2 {
            let acc: Vec<f64> = vel
                .windows(2)
                .map(|w| {
                    let d = sub(&w[1], &w[0]);
                    norm(&[d[0] * fps, d[1] * fps, d[2] * fps])
                })
                .collect();
            out[2 * n + j] = acc.iter().sum::<f64>() / acc.len() as f64;
        }
    }
    out
}

/// Names of the boolean relations, in feature order.
pub const GRAPHICAL_RELATIONS: [&str; 16] = [
    "left wrist above head",
    "right wrist above head",
    "left wrist above left shoulder",
    "right wrist above right shoulder",
    "hands closer than 0.3 m",
    "left wrist 0.2 m in front of root",
    "right wrist 0.2 m in front of root",
    "right foot in front of left foot",
    "left heel 5 cm above right heel",
    "right heel 5 cm above left heel",
    "feet wider than 0.4 m",
    "root below 0.85 m",
    "root moving forward faster than 0.1 m/s",
    "root moving sideways faster than 0.1 m/s",
    "turning faster than 30 deg/s",
    "trunk leaning forward more than 10 deg",
];

/// Time-averaged boolean relations evaluated in each frame's body frame, so
/// values are invariant to ground-plane rigid motion of the whole sequence.
pub fn graphical_features(frames: &[MotionFrame], skel: &Skeleton, fps: f64) -> Vec<f64> {
    let mut out = vec![0.0; GRAPHICAL_RELATIONS.len()];
    if frames.is_empty() {
        return out;
    }
    let poses = root_poses(frames);
    let t = frames.len();
    for i in 0..t {
        let to_body = RigidTransform2D::from_pose(poses[i].x, poses[i].z, poses[i].yaw).inverse();
        let p: Vec<Vec3> = frames[i].positions.iter().map(|q| to_body.apply_point(q)).collect();
        let (vel, yaw_rate) = if t >= 2 {
            let (a, b) = if i + 1 < t { (i, i + 1) } else { (i - 1, i) };
            let d = sub(&frames[b].positions[skel.root], &frames[a].positions[skel.root]);
            let v = to_body.apply_vector(&[d[0] * fps, d[1] * fps, d[2] * fps]);
            let w = crate::geometry::wrap_angle(poses[b].yaw - poses[a].yaw) * fps;
            (v, w)
        } else {
            ([0.0; 3], 0.0)
        };
        let root = p[skel.root];
        let spine = sub(&p[skel.spine], &root);
        let hands = norm(&sub(&p[skel.left_wrist], &p[skel.right_wrist]));
        let feet = sub(&p[skel.left_toe], &p[skel.right_toe]);
        let flags = [
            p[skel.left_wrist][1] > p[skel.head][1],
            p[skel.right_wrist][1] > p[skel.head][1],
            p[skel.left_wrist][1] > p[skel.left_shoulder][1],
            p[skel.right_wrist][1] > p[skel.right_shoulder][1],
            hands < 0.3,
            p[skel.left_wrist][2] - root[2] > 0.2,
            p[skel.right_wrist][2] - root[2] > 0.2,
            p[skel.right_toe][2] > p[skel.left_toe][2],
            p[skel.left_heel][1] > p[skel.right_heel][1] + 0.05,
            p[skel.right_heel][1] > p[skel.left_heel][1] + 0.05,
            (feet[0] * feet[0] + feet[2] * feet[2]).sqrt() > 0.4,
            root[1] < 0.85,
            vel[2] > 0.1,
            vel[0].abs() > 0.1,
            yaw_rate.abs() > 30f64.to_radians(),
            spine[2] > spine[1] * 10f64.to_radians().tan(),
        ];
        for (o, f) in out.iter_mut().zip(flags) {
            *o += f64::from(u8::from(f));
        }
    }
    out.iter_mut().for_each(|v| *v /= t as f64);
    out
}

/// Joint pairs `(leader joint, follower joint)` used for cross-distances.
pub fn cross_pairs(skel: &Skeleton) -> [(usize, usize); 9] {
    let (r, lw, rw) = (skel.root, skel.left_wrist, skel.right_wrist);
    [(r, r), (lw, lw), (lw, rw), (rw, lw), (rw, rw), (r, lw), (r, rw), (lw, r), (rw, r)]
}

/// Mean and population standard deviation over time of each pair distance,
/// interleaved as `[mean_0, std_0, mean_1, std_1, ...]` (18 values).
pub fn crossdist_features(leader: &[MotionFrame], follower: &[MotionFrame], skel: &Skeleton) -> Vec<f64> {
    let pairs = cross_pairs(skel);
    let t = leader.len().min(follower.len());
    let mut out = Vec::with_capacity(2 * pairs.len());
    for (a, b) in pairs {
        if t == 0 {
            out.extend([0.0, 0.0]);
            continue;
        }
        let d: Vec<f64> = (0..t)
            .map(|i| norm(&sub(&leader[i].positions[a], &follower[i].positions[b])))
            .collect();
        let mean = d.iter().sum::<f64>() / t as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
        out.extend([mean, var.sqrt()]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::compute_features;

    fn rest_seq(t: usize, root: Vec3) -> Vec<MotionFrame> {
        let skel = Skeleton::smpl22();
        let pos = vec![skel.rest_positions(root); t];
        compute_features(&pos, &skel, 20.0).unwrap()
    }

    #[test]
    fn static_kinematics_are_zero() {
        let skel = Skeleton::smpl22();
        let pos = vec![skel.rest_positions([0.0, 0.92, 0.0]); 10];
        let k = kinematic_features(&pos, 20.0);
        assert_eq!(k.len(), 66);
        assert!(k.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_velocity_scales_features() {
        let skel = Skeleton::smpl22();
        let make = |speed: f64| -> Vec<Vec<Vec3>> {
            (0..12)
                .map(|t| {
                    let x = speed * (t as f64 / 20.0).powi(2);
                    skel.rest_positions([x, 0.92, 0.3 * speed * t as f64 / 20.0])
                })
                .collect()
        };
        let a = kinematic_features(&make(1.0), 20.0);
        let b = kinematic_features(&make(2.0), 20.0);
        for j in 0..22 {
            assert!((b[j] - 2.0 * a[j]).abs() < 1e-9);
            assert!((b[22 + j] - 4.0 * a[22 + j]).abs() < 1e-9);
            assert!((b[44 + j] - 2.0 * a[44 + j]).abs() < 1e-9);
        }
    }

    #[test]
    fn raised_wrist_and_rest_pose() {
        let skel = Skeleton::smpl22();
        let g = graphical_features(&rest_seq(5, [0.0, 0.92, 0.0]), &skel, 20.0);
        assert_eq!(g[0], 0.0);
        let pos: Vec<Vec<Vec3>> = (0..5)
            .map(|_| {
                let mut p = skel.rest_positions([0.0, 0.92, 0.0]);
                p[skel.left_wrist] = [p[skel.head][0], p[skel.head][1] + 0.5, p[skel.head][2]];
                p
            })
            .collect();
        let frames = compute_features(&pos, &skel, 20.0).unwrap();
        assert_eq!(graphical_features(&frames, &skel, 20.0)[0], 1.0);
    }

    #[test]
    fn crossdist_basics() {
        let skel = Skeleton::smpl22();
        let a = rest_seq(6, [0.0, 0.92, 0.0]);
        let same = crossdist_features(&a, &a, &skel);
        assert_eq!(same[0], 0.0);
        let b = rest_seq(6, [1.0, 0.92, 0.0]);
        let f = crossdist_features(&a, &b, &skel);
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!(f[1].abs() < 1e-12);
    }
}
