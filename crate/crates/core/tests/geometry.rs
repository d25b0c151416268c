mod common;

use common::checks::*;
use common::*;
use duet_core::geometry::{rot6d_to_matrix, wrap_angle, RigidTransform2D};
use duet_core::motion::{follower_pose_from_relation, relation_from_poses, RootPose};
use proptest::prelude::*;

#[test]
fn canonicalization_round_trip() {
    assert!(canonical_round_trip_error(100) < 1e-6);
}

#[test]
fn relation_ignores_a_shared_rigid_transform() {
    assert!(relation_invariance_error(1000) < 1e-9);
}

#[test]
fn rot6d_round_trip() {
    assert!(rot6d_round_trip_error(10_000) < 1e-9);
}

fn angle() -> impl Strategy<Value = f64> {
    -std::f64::consts::PI..std::f64::consts::PI
}

proptest! {
    #[test]
    fn wrap_stays_in_half_open_range(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        prop_assert!(((a - w) / std::f64::consts::TAU).fract().abs() < 1e-9
            || (1.0 - ((a - w) / std::f64::consts::TAU).fract().abs()) < 1e-9);
    }

    #[test]
    fn transform_then_inverse_is_identity(
        tx in -5.0f64..5.0, tz in -5.0f64..5.0, yaw in angle(),
        px in -3.0f64..3.0, py in 0.0f64..2.0, pz in -3.0f64..3.0,
    ) {
        let t = RigidTransform2D::new(tx, tz, yaw);
        let p = [px, py, pz];
        let back = t.inverse().apply_point(&t.apply_point(&p));
        prop_assert!(max_abs_diff(&back, &p) < 1e-9);
        prop_assert_eq!(t.apply_point(&p)[1], py);
    }

    #[test]
    fn relation_inverse_recovers_the_follower(
        lx in -5.0f64..5.0, lz in -5.0f64..5.0, ly in angle(),
        fx in -5.0f64..5.0, fz in -5.0f64..5.0, fy in angle(),
    ) {
        let l = RootPose { x: lx, z: lz, yaw: ly };
        let f = RootPose { x: fx, z: fz, yaw: fy };
        let g = follower_pose_from_relation(l, relation_from_poses(l, f));
        prop_assert!((g.x - fx).abs() < 1e-9 && (g.z - fz).abs() < 1e-9);
        prop_assert!(wrap_angle(g.yaw - fy).abs() < 1e-9);
    }

    #[test]
    fn rot6d_columns_are_orthonormal(v in proptest::array::uniform6(-2.0f64..2.0)) {
        let a = nalgebra::Vector3::new(v[0], v[1], v[2]);
        let b = nalgebra::Vector3::new(v[3], v[4], v[5]);
        prop_assume!(a.norm() > 0.1 && a.cross(&b).norm() > 0.1);
        let m = rot6d_to_matrix(&v);
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
    }
}
