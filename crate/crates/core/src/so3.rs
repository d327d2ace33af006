//! Rotation-group primitives.
//!
//! Rotations are stored as 3×3 matrices ([`RotationMatrix`]) and unit
//! quaternions in scalar-first order ([`UnitQuaternion`]). Tangent vectors at
//! the identity are axis-angle 3-vectors; [`hat`] and [`vee`] move between
//! them and skew-symmetric matrices.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{c, Real};

/// Axis-angle vector φ = Φ^∨; its norm is the rotation angle in radians.
pub type TangentVector<T> = Vector3<T>;

/// Below this angle exp/log switch to their second-order Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;

/// Within this distance of π the log map reads the axis off the symmetric part.
const NEAR_PI: f64 = 1e-3;

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix<T: Real>(Matrix3<T>);

impl<T: Real> RotationMatrix<T> {
    /// Validates `m·mᵀ = I` and `det m = 1` to the scalar's validation tolerance.
    pub fn new(m: Matrix3<T>) -> Result<Self> {
        let tol = T::VALIDATION_TOL;
        let ortho = (m * m.transpose() - Matrix3::identity())
            .norm()
            .to_f64_lossy();
        let det = m.determinant().to_f64_lossy();
        if !(ortho <= tol) {
            return Err(Error::InvalidRotation(format!("|R R^T - I|_F = {ortho:e}")));
        }
        if !((det - 1.0).abs() <= tol) {
            return Err(Error::InvalidRotation(format!("det R = {det}")));
        }
        Ok(Self(m))
    }

    /// Like [`RotationMatrix::new`], but first projects `m` onto SO(3) when it is
    /// within `tol` (Frobenius) of being orthonormal. Used for parsed input.
    pub fn from_approx(m: Matrix3<T>, tol: f64) -> Result<Self> {
        let ortho = (m * m.transpose() - Matrix3::identity())
            .norm()
            .to_f64_lossy();
        let det = m.determinant().to_f64_lossy();
        if !(ortho <= tol) || !((det - 1.0).abs() <= tol) {
            return Err(Error::InvalidRotation(format!(
                "|R R^T - I|_F = {ortho:e}, det R = {det}"
            )));
        }
        Ok(project_to_so3(&m))
    }

    /// Wraps `m` without checking. Callers guarantee `m ∈ SO(3)`.
    #[inline]
    pub fn new_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    #[inline]
    pub fn into_inner(self) -> Matrix3<T> {
        self.0
    }

    /// Inverse rotation.
    #[inline]
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> T {
        angle_of(&self.0)
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<T> {
        rotmat_to_quat(self)
    }

    pub fn cast<U: Real>(&self) -> RotationMatrix<U> {
        RotationMatrix(self.0.map(|x| U::lit(x.to_f64_lossy())))
    }
}

impl<T: Real> Mul for RotationMatrix<T> {
    type Output = RotationMatrix<T>;

    fn mul(self, rhs: Self) -> Self::Output {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl<T: Real> Mul for &RotationMatrix<T> {
    type Output = RotationMatrix<T>;

    fn mul(self, rhs: Self) -> Self::Output {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// A unit quaternion `w + xi + yj + zk`, scalar first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion<T: Real> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> UnitQuaternion<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Result<Self> {
        let norm_sq = (w * w + x * x + y * y + z * z).to_f64_lossy();
        if !((norm_sq - 1.0).abs() <= T::VALIDATION_TOL) {
            return Err(Error::InvalidQuaternion { norm_sq });
        }
        Ok(Self { w, x, y, z })
    }

    /// Normalizes an arbitrary nonzero 4-vector.
    pub fn normalize(w: T, x: T, y: T, z: T) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::InvalidQuaternion {
                norm_sq: (n * n).to_f64_lossy(),
            });
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    #[inline]
    pub(crate) fn new_unchecked(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new_unchecked(T::one(), T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn coords(&self) -> Vector4<T> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn from_coords(v: &Vector4<T>) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn conjugate(&self) -> Self {
        Self::new_unchecked(self.w, -self.x, -self.y, -self.z)
    }

    #[inline]
    pub fn neg(&self) -> Self {
        Self::new_unchecked(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Hamilton product `self · rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        Self::new_unchecked(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Matrix of `p ↦ self · p` acting on coordinates `(w, x, y, z)`.
    pub fn left_matrix(&self) -> Matrix4<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Matrix of `p ↦ p · self` acting on coordinates `(w, x, y, z)`.
    pub fn right_matrix(&self) -> Matrix4<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }

    pub fn to_rotation(&self) -> RotationMatrix<T> {
        quat_to_rotmat(self)
    }
}

/// `φ ↦ φ̂`, the skew matrix with `φ̂·v = φ × v`.
pub fn hat<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(
        z, -phi.z, phi.y, //
        phi.z, z, -phi.x, //
        -phi.y, phi.x, z,
    )
}

/// Inverse of [`hat`]. Rejects matrices with `‖Φ + Φᵀ‖_F > 1e-8`.
pub fn vee<T: Real>(m: &Matrix3<T>) -> Result<Vector3<T>> {
    let residual = (m + m.transpose()).norm().to_f64_lossy();
    if !(residual <= 1e-8_f64.max(T::VALIDATION_TOL)) {
        return Err(Error::NonSkewInput { residual });
    }
    Ok(vee_unchecked(m))
}

/// Reads the axial vector off the antisymmetric part of `m`.
#[inline]
pub(crate) fn vee_unchecked<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half = c::<T>(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// Rodrigues' formula.
pub fn exp_map<T: Real>(phi: &TangentVector<T>) -> RotationMatrix<T> {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    let (a, b) = if theta < c(SMALL_ANGLE) {
        (T::one(), c(0.5))
    } else {
        (
            theta.sin() / theta,
            (T::one() - theta.cos()) / (theta * theta),
        )
    };
    RotationMatrix(Matrix3::identity() + k * a + k2 * b)
}

/// Principal logarithm, `‖φ‖ ∈ [0, π]`.
///
/// At exactly π the axis sign is ambiguous; it is fixed so that the first
/// nonzero axis component is positive.
pub fn log_map<T: Real>(r: &RotationMatrix<T>) -> TangentVector<T> {
    let m = r.matrix();
    let axial = vee_unchecked(m); // sin θ · axis
    let sin_theta = axial.norm();
    let cos_theta = (m.trace() - T::one()) * c(0.5);
    let theta = sin_theta.atan2(cos_theta);

    if theta < c(SMALL_ANGLE) {
        // θ / sin θ ≈ 1 + θ²/6
        return axial * (T::one() + theta * theta / c(6.0));
    }
    if theta < T::pi() - c(NEAR_PI) {
        return axial * (theta / sin_theta);
    }

    // Near π: (R + Rᵀ)/2 = cos θ·I + (1 − cos θ)·a·aᵀ.
    let sym: Matrix3<T> = (m + m.transpose()) * c::<T>(0.5);
    let outer: Matrix3<T> = (sym - Matrix3::identity() * cos_theta) / (T::one() - cos_theta);
    let diag = outer.diagonal();
    let mut col = 0;
    for i in 1..3 {
        if diag[i] > diag[col] {
            col = i;
        }
    }
    let mut axis: Vector3<T> = outer.column(col).into_owned();
    axis /= axis.norm();

    let orient = axis.dot(&axial);
    let flip = if orient.abs() > c(1e-12) {
        orient < T::zero()
    } else {
        first_nonzero_negative(axis.as_slice())
    };
    if flip {
        axis = -axis;
    }
    axis * theta
}

fn first_nonzero_negative<T: Real>(v: &[T]) -> bool {
    v.iter()
        .find(|x| x.abs() > c(1e-12))
        .is_some_and(|x| *x < T::zero())
}

fn angle_of<T: Real>(m: &Matrix3<T>) -> T {
    let sin_theta = vee_unchecked(m).norm();
    let cos_theta = ((m.trace() - T::one()) * c(0.5)).clamp(-T::one(), T::one());
    sin_theta.atan2(cos_theta)
}

/// Angle of `R1ᵀR2` in [0, π].
pub fn geodesic_distance<T: Real>(r1: &RotationMatrix<T>, r2: &RotationMatrix<T>) -> T {
    angle_of(&(r1.matrix().transpose() * r2.matrix()))
}

/// The standard map γ from S³ to SO(3); `γ(q) = γ(−q)`.
pub fn quat_to_rotmat<T: Real>(q: &UnitQuaternion<T>) -> RotationMatrix<T> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let one = T::one();
    let two = c::<T>(2.0);
    RotationMatrix(Matrix3::new(
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    ))
}

/// γ⁻¹, choosing the representative with `w ≥ 0`; when `w = 0` the first
/// nonzero vector component is made positive.
pub fn rotmat_to_quat<T: Real>(r: &RotationMatrix<T>) -> UnitQuaternion<T> {
    let m = r.matrix();
    let quarter = c::<T>(0.25);
    let one = T::one();
    let tr = m.trace();
    // Shepperd: pivot on the largest of 4w², 4x², 4y², 4z².
    let cands = [
        tr,
        m[(0, 0)] - m[(1, 1)] - m[(2, 2)],
        m[(1, 1)] - m[(0, 0)] - m[(2, 2)],
        m[(2, 2)] - m[(0, 0)] - m[(1, 1)],
    ];
    let mut k = 0;
    for i in 1..4 {
        if cands[i] > cands[k] {
            k = i;
        }
    }
    let s = (one + cands[k]).max(T::zero()).sqrt() * c(2.0); // 4·|component|
    let (w, x, y, z) = match k {
        0 => (
            quarter * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ),
        1 => (
            (m[(2, 1)] - m[(1, 2)]) / s,
            quarter * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ),
        2 => (
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            quarter * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ),
        _ => (
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            quarter * s,
        ),
    };
    let n = (w * w + x * x + y * y + z * z).sqrt();
    canonical_hemisphere(UnitQuaternion::new_unchecked(w / n, x / n, y / n, z / n))
}

/// Picks the representative of `{q, −q}` with `w > 0`, breaking `w = 0` ties on
/// the first nonzero vector component.
pub fn canonical_hemisphere<T: Real>(q: UnitQuaternion<T>) -> UnitQuaternion<T> {
    let tie = c::<T>(1e-12);
    let flip = if q.w.abs() > tie {
        q.w < T::zero()
    } else {
        first_nonzero_negative(&[q.x, q.y, q.z])
    };
    if flip {
        q.neg()
    } else {
        q
    }
}

/// `A = U·diag(s)·Vᵀ` with `U, V ∈ SO(3)`, `s1 ≥ s2 ≥ |s3|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProperSvd<T: Real> {
    pub u: RotationMatrix<T>,
    pub s: Vector3<T>,
    pub v: RotationMatrix<T>,
}

impl<T: Real> ProperSvd<T> {
    pub fn reconstruct(&self) -> Matrix3<T> {
        self.u.matrix() * Matrix3::from_diagonal(&self.s) * self.v.matrix().transpose()
    }

    /// The mode `U·Vᵀ` of the distributions parameterized by `A`.
    pub fn mode(&self) -> RotationMatrix<T> {
        self.u * self.v.transpose()
    }
}

/// Proper SVD: a standard SVD followed by sign corrections that move any
/// reflection into the sign of the smallest singular value.
pub fn proper_svd<T: Real>(a: &Matrix3<T>) -> ProperSvd<T> {
    let svd = a.svd(true, true);
    let u0 = svd.u.expect("requested U");
    let v0 = svd.v_t.expect("requested V^T").transpose();
    let sv = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        sv[j]
            .partial_cmp(&sv[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = Matrix3::zeros();
    let mut v = Matrix3::zeros();
    let mut s = Vector3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u0.column(src));
        v.set_column(dst, &v0.column(src));
        s[dst] = sv[src];
    }

    let du = u.determinant().signum();
    let dv = v.determinant().signum();
    if du < T::zero() {
        let col = -u.column(2);
        u.set_column(2, &col);
    }
    if dv < T::zero() {
        let col = -v.column(2);
        v.set_column(2, &col);
    }
    s[2] *= du * dv;

    ProperSvd {
        u: RotationMatrix(u),
        s,
        v: RotationMatrix(v),
    }
}

/// Orthogonal projection of a 3×3 matrix onto SO(3) (`U·Vᵀ` of its proper SVD).
pub fn project_to_so3<T: Real>(m: &Matrix3<T>) -> RotationMatrix<T> {
    proper_svd(m).mode()
}

/// Haar-uniform rotation from a normalized 4D Gaussian quaternion.
pub fn random_rotation<T: Real, R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix<T> {
    random_quaternion::<T, R>(rng).to_rotation()
}

/// Uniform point on S³.
pub fn random_quaternion<T: Real, R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<T> {
    loop {
        let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return UnitQuaternion::new_unchecked(
                c(g[0] / n),
                c(g[1] / n),
                c(g[2] / n),
                c(g[3] / n),
            );
        }
    }
}

/// Cumulative distribution of the rotation angle of a Haar-uniform rotation,
/// `(θ − sin θ)/π` on [0, π].
pub fn haar_angle_cdf(theta: f64) -> f64 {
    let t = theta.clamp(0.0, std::f64::consts::PI);
    (t - t.sin()) / std::f64::consts::PI
}

/// Haar density in exponential coordinates, `(1 − cos‖φ‖)/(4π²‖φ‖²)`.
///
/// Integrates to one over the ball of radius π. The value at the origin is
/// the limit `1/(8π²)`.
pub fn haar_tangent_density(phi: &Vector3<f64>) -> f64 {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let theta = phi.norm();
    if theta < 1e-4 {
        return (1.0 - theta * theta / 12.0) / (8.0 * pi2);
    }
    (1.0 - theta.cos()) / (4.0 * pi2 * theta * theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn rx90() -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
    }

    #[test]
    fn hat_layout() {
        assert_eq!(hat(&Vector3::<f64>::zeros()), Matrix3::zeros());
        let m = hat(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(
            m,
            Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0)
        );
        let phi = Vector3::new(0.4, -1.3, 2.2);
        assert_abs_diff_eq!(hat(&phi) * phi, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn vee_layout_and_rejection() {
        let m = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(vee(&m).unwrap(), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(vee(&Matrix3::<f64>::zeros()).unwrap(), Vector3::zeros());
        assert!(matches!(
            vee(&Matrix3::<f64>::identity()),
            Err(Error::NonSkewInput { .. })
        ));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(
            exp_map(&Vector3::<f64>::zeros()).into_inner(),
            Matrix3::identity()
        );
        let r = exp_map(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        assert_abs_diff_eq!(*r.matrix(), rx90(), epsilon = 1e-15);
        let tiny = exp_map(&Vector3::new(1e-12, 0.0, 0.0));
        assert_abs_diff_eq!(*tiny.matrix(), Matrix3::identity(), epsilon = 1e-9);
    }

    #[test]
    fn log_examples() {
        assert_eq!(
            log_map(&RotationMatrix::<f64>::identity()),
            Vector3::zeros()
        );
        let phi = Vector3::new(0.3, -0.2, 0.1);
        assert_abs_diff_eq!(log_map(&exp_map(&phi)), phi, epsilon = 1e-9);
        let flip =
            RotationMatrix::new(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        assert_abs_diff_eq!(log_map(&flip), Vector3::new(PI, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn log_at_pi_picks_positive_first_component() {
        for axis in [
            Vector3::new(1.0, -2.0, 0.5),
            Vector3::new(-1.0, 2.0, 0.5),
            Vector3::new(0.0, -1.0, 1.0),
        ] {
            let axis: Vector3<f64> = axis.normalize();
            let r = exp_map(&(axis * PI));
            let phi = log_map(&r);
            assert_abs_diff_eq!(phi.norm(), PI, epsilon = 1e-9);
            let first = phi.iter().find(|x| x.abs() > 1e-9).unwrap();
            assert!(*first > 0.0);
            assert_abs_diff_eq!(*exp_map(&phi).matrix(), *r.matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn log_just_below_pi_keeps_orientation() {
        let phi = Vector3::new(-0.3, 0.8, -0.5).normalize() * (PI - 1e-5);
        assert_abs_diff_eq!(log_map(&exp_map(&phi)), phi, epsilon = 1e-8);
    }

    #[test]
    fn geodesic_examples() {
        let id = RotationMatrix::<f64>::identity();
        assert_eq!(geodesic_distance(&id, &id), 0.0);
        for theta in [0.1, 1.0, 2.0, 3.0] {
            let r = exp_map(&Vector3::new(theta, 0.0, 0.0));
            assert_abs_diff_eq!(geodesic_distance(&id, &r), theta, epsilon = 1e-12);
        }
        let flip =
            RotationMatrix::new(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        assert_abs_diff_eq!(geodesic_distance(&id, &flip), PI, epsilon = 1e-12);
    }

    #[test]
    fn quaternion_examples() {
        let id = UnitQuaternion::<f64>::identity();
        assert_eq!(quat_to_rotmat(&id).into_inner(), Matrix3::identity());
        let x = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(
            quat_to_rotmat(&x).into_inner(),
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
        );
        let q = UnitQuaternion::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(*quat_to_rotmat(&q).matrix(), rx90(), epsilon = 1e-15);

        assert_eq!(rotmat_to_quat(&RotationMatrix::<f64>::identity()), id);
        let flip =
            RotationMatrix::new(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        assert_eq!(rotmat_to_quat(&flip), x);
    }

    #[test]
    fn proper_svd_examples() {
        let check = |a: Matrix3<f64>, s: [f64; 3]| {
            let p = proper_svd(&a);
            assert_abs_diff_eq!(p.reconstruct(), a, epsilon = 1e-12);
            assert_abs_diff_eq!(p.u.matrix().determinant(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.v.matrix().determinant(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.s, Vector3::from(s), epsilon = 1e-12);
            assert_abs_diff_eq!(*p.mode().matrix(), Matrix3::identity(), epsilon = 1e-12);
        };
        check(Matrix3::identity(), [1.0, 1.0, 1.0]);
        check(
            Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0)),
            [3.0, 2.0, 1.0],
        );
        check(
            Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, -1.0)),
            [3.0, 2.0, -1.0],
        );
    }

    #[test]
    fn proper_svd_of_zero_and_rank_one() {
        for a in [
            Matrix3::<f64>::zeros(),
            Vector3::new(1.0, 2.0, 3.0) * Vector3::new(-1.0, 0.5, 2.0).transpose(),
        ] {
            let p = proper_svd(&a);
            assert!((p.reconstruct() - a).norm() <= 1e-8 * a.norm().max(1.0));
            assert!(p.s[0] >= p.s[1] && p.s[1] >= p.s[2].abs());
        }
    }

    #[test]
    fn random_rotation_is_valid_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: RotationMatrix<f64> = random_rotation(&mut rng);
        let b: RotationMatrix<f64> = random_rotation(&mut rng);
        assert!(RotationMatrix::new(a.into_inner()).is_ok());
        assert!(geodesic_distance(&a, &b) > 1e-6);
    }

    #[test]
    fn f32_paths_agree_with_f64() {
        let phi = Vector3::new(0.7f32, -0.1, 0.4);
        let r = exp_map(&phi);
        assert!(RotationMatrix::new(r.into_inner()).is_ok());
        assert!((log_map(&r) - phi).norm() < 1e-5);
        let q = rotmat_to_quat(&r);
        assert!((quat_to_rotmat(&q).into_inner() - r.into_inner()).norm() < 1e-5);
    }
}
