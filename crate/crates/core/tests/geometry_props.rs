mod common;

use mhi_core::geometry::*;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("not too short", |(x, y, z)| (x * x + y * y + z * z).sqrt() > 0.1)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

fn pose(max_deg: f64, max_t: f64) -> impl Strategy<Value = Pose> {
    (unit(), 0.0..=max_deg, unit(), 0.0..=max_t)
        .prop_map(|(axis, a, dir, t)| Pose::from_axis_angle(axis, a.to_radians(), dir * t))
}

fn intrinsics() -> impl Strategy<Value = Intrinsics> {
    (32usize..400, 32usize..400, 0.5..2.0f64, 0.9..1.1f64).prop_map(|(w, h, f, a)| {
        let fx = f * w as f64;
        Intrinsics::new(fx, fx * a, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
    })
}

fn plane() -> impl Strategy<Value = Plane> {
    (unit().prop_filter("faces camera", |n| n.z > 0.3), 1.0..20.0f64)
        .prop_map(|(n, z)| Plane::through_axis_depth(n, z).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn homography_matches_ray_casting(
        k_r in intrinsics(),
        k_t in intrinsics(),
        p in pose(8.0, 0.5),
        pl in plane(),
        fu in 0.0..1.0f64,
        fv in 0.0..1.0f64,
    ) {
        let (u, v) = (fu * (k_t.width - 1) as f64, fv * (k_t.height - 1) as f64);
        prop_assume!(common::incidence(&k_t, &p, &pl, u, v) > 0.05);
        let Some(((ou, ov), _, _)) = common::ray_plane_oracle(&k_r, &k_t, &p, &pl, u, v) else {
            return Ok(());
        };
        prop_assume!(ou.abs() < 1e5 && ov.abs() < 1e5);
        let h = homography_target_to_reference(&k_r, &k_t, &p, &pl).unwrap();
        let got = apply_homography(&h, PixelCoord::new(u, v));
        prop_assert!((got.u - ou).abs() < 1e-6 && (got.v - ov).abs() < 1e-6,
            "homography {:?} vs oracle {:?}", got, (ou, ov));
        let via = project_via_plane(PixelCoord::new(u, v), &k_t, &k_r, &p, &pl).unwrap();
        prop_assert!((via.u - ou).abs() < 1e-6 && (via.v - ov).abs() < 1e-6);
    }

    #[test]
    fn compose_with_inverse_is_identity(p in pose(180.0, 10.0)) {
        for q in [p.inverse().compose(&p), p.compose(&p.inverse())] {
            prop_assert!((q.rotation() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!(q.translation().norm() < 1e-9);
        }
    }

    #[test]
    fn compose_matches_sequential_transform(a in pose(90.0, 2.0), b in pose(90.0, 2.0), x in unit()) {
        let lhs = a.compose(&b).transform_point(&x);
        let rhs = a.transform_point(&b.transform_point(&x));
        prop_assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn rotations_stay_orthonormal(p in pose(180.0, 1.0)) {
        let r = p.rotation();
        prop_assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_angle_is_conjugation_invariant(axis in unit(), deg in 0.0..179.0f64, q in pose(180.0, 0.0)) {
        let r = common::rotation(axis, deg);
        let qm = q.rotation();
        let a = rotation_angle_deg(&r).unwrap();
        let b = rotation_angle_deg(&(qm * r * qm.transpose())).unwrap();
        prop_assert!((a - deg).abs() < 1e-6);
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn rotated_normal_keeps_angles(p in pose(30.0, 1.0), n in unit(), m in unit()) {
        let (rn, rm) = (rotate_normal(&p, &n), rotate_normal(&p, &m));
        prop_assert!((rn.norm() - 1.0).abs() < 1e-12);
        prop_assert!((rn.dot(&rm) - n.dot(&m)).abs() < 1e-12);
        // Expressed in the target frame, the normal is R^T n.
        prop_assert!((p.rotation() * rn - n).norm() < 1e-12);
    }

    #[test]
    fn plane_in_source_frame_contains_mapped_points(p in pose(45.0, 1.0), pl in plane(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        // A point on the plane, expressed in the source frame, lies on the moved plane.
        let n = *pl.normal();
        let e1 = n.cross(&Vector3::x()).try_normalize(1e-6).unwrap_or_else(|| n.cross(&Vector3::y()).normalize());
        let e2 = n.cross(&e1);
        let x = -n * pl.offset() + e1 * a + e2 * b;
        prop_assert!(pl.signed_distance(&x).abs() < 1e-9);
        let local = pl.in_source_frame(&p);
        let x_src = p.inverse().transform_point(&x);
        prop_assert!(local.signed_distance(&x_src).abs() < 1e-9);
    }
}

#[test]
fn degenerate_plane_through_camera_center() {
    let k = Intrinsics::from_hfov(64, 64, 90.0).unwrap();
    let pl = Plane::through_axis_depth(Vector3::z(), 2.0).unwrap();
    // Target camera sitting on the plane.
    let p = Pose::from_translation(Vector3::new(0.0, 0.0, 2.0));
    assert!(matches!(
        homography_target_to_reference(&k, &k, &p, &pl),
        Err(GeometryError::DegeneratePlane(_))
    ));
}
