use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rotlaplace::so3::{
    canonical_hemisphere, exp_map, geodesic_distance, hat, log_map, proper_svd, quat_to_rotmat,
    rotmat_to_quat, vee, UnitQuaternion,
};

fn vec3(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-bound..bound).prop_map(Vector3::from)
}

fn ball(radius: f64) -> impl Strategy<Value = Vector3<f64>> {
    vec3(radius).prop_filter("inside the ball", move |v| v.norm() < radius)
}

fn quaternion() -> impl Strategy<Value = UnitQuaternion<f64>> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("away from zero", |c| {
            c.iter().map(|x| x * x).sum::<f64>() > 1e-3
        })
        .prop_map(|[w, x, y, z]| UnitQuaternion::normalize(w, x, y, z).unwrap())
}

fn matrix(bound: f64) -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-bound..bound).prop_map(|m| Matrix3::from_row_slice(&m))
}

proptest! {
    #[test]
    fn hat_vee_roundtrip(phi in vec3(10.0)) {
        prop_assert!((vee(&hat(&phi)).unwrap() - phi).norm() <= 1e-12);
        prop_assert!((hat(&phi) * phi).norm() <= 1e-9);
    }

    #[test]
    fn exp_is_a_rotation_and_log_inverts_it(phi in ball(PI - 1e-6)) {
        let r = exp_map(&phi);
        let m = r.matrix();
        prop_assert!((m * m.transpose() - Matrix3::identity()).norm() <= 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() <= 1e-9);
        let back = log_map(&r);
        prop_assert!((back - phi).norm() <= 1e-7 * (1.0 + phi.norm()));
        prop_assert!(back.norm() <= PI + 1e-12);
    }

    #[test]
    fn log_output_stays_in_the_ball(q in quaternion()) {
        let phi = log_map(&quat_to_rotmat(&q));
        prop_assert!(phi.norm() <= PI + 1e-12);
        prop_assert!(geodesic_distance(&exp_map(&phi), &quat_to_rotmat(&q)) <= 1e-7);
    }

    #[test]
    fn quaternion_roundtrip_up_to_sign(q in quaternion()) {
        let back = rotmat_to_quat(&quat_to_rotmat(&q));
        let canon = canonical_hemisphere(q);
        prop_assert!(back.w >= 0.0);
        prop_assert!((back.coords() - canon.coords()).norm() <= 1e-9 || back.w.abs() < 1e-6);
        prop_assert!(back.dot(&q).abs() >= 1.0 - 1e-9);
    }

    #[test]
    fn geodesic_distance_is_a_bi_invariant_metric(a in quaternion(), b in quaternion(), g in quaternion()) {
        let (ra, rb, rg) = (quat_to_rotmat(&a), quat_to_rotmat(&b), quat_to_rotmat(&g));
        let d = geodesic_distance(&ra, &rb);
        prop_assert!((0.0..=PI + 1e-12).contains(&d));
        prop_assert!((d - geodesic_distance(&rb, &ra)).abs() <= 1e-9);
        prop_assert!((d - geodesic_distance(&(rg * ra), &(rg * rb))).abs() <= 1e-7);
        prop_assert!((d - geodesic_distance(&(ra * rg), &(rb * rg))).abs() <= 1e-7);
        prop_assert!(geodesic_distance(&ra, &rg) <= d + geodesic_distance(&rb, &rg) + 1e-9);
    }

    #[test]
    fn proper_svd_invariants(a in matrix(20.0)) {
        let svd = proper_svd(&a);
        let (s1, s2, s3) = (svd.s[0], svd.s[1], svd.s[2]);
        prop_assert!((svd.reconstruct() - a).norm() <= 1e-8 * a.norm().max(1.0));
        prop_assert!((svd.u.matrix().determinant() - 1.0).abs() <= 1e-9);
        prop_assert!((svd.v.matrix().determinant() - 1.0).abs() <= 1e-9);
        prop_assert!(s1 >= s2 && s2 >= s3.abs() - 1e-12 && s2 >= 0.0);
        prop_assert!(s3 * a.determinant() >= -1e-9);
    }
}
