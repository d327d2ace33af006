//! Quaternion Laplace and Bingham densities on S³.
//!
//! Both take `(M, Z)` with `M ∈ O(4)` and `Z = diag(0, z1, z2, z3)`,
//! `0 ≥ z1 ≥ z2 ≥ z3`, and are antipodally symmetric. Writing `B = M·Z·Mᵀ`:
//!
//! * Quaternion Laplace: `exp(−√t)/√t` with `t = −qᵀBq`,
//! * Bingham: `exp(qᵀBq)`.
//!
//! With `M` the matrix of `q ↦ ū·q·v` (u, v the quaternions of the proper SVD
//! factors of `A`) and `Z = −2·diag(0, s2+s3, s1+s3, s1+s2)`, one has
//! `−qᵀBq = tr(S − AᵀR)` for `q = γ⁻¹(R)`, so the Quaternion Laplace and
//! Bingham densities built by [`quat_param_from_a`] are the pull-backs of the
//! Rotation Laplace and matrix Fisher densities with the same `A`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;

use super::{clip_trace, laplace_log_kernel, log_sum_exp, So3Param, PAR_THRESHOLD};
use crate::error::{Error, Result};
use crate::grid::S3Grid;
use crate::scalar::{c, Real};
use crate::so3::{rotmat_to_quat, UnitQuaternion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuatKind {
    QuaternionLaplace,
    Bingham,
}

impl QuatKind {
    pub fn short_name(self) -> &'static str {
        match self {
            QuatKind::QuaternionLaplace => "ql",
            QuatKind::Bingham => "bingham",
        }
    }

    #[inline]
    pub fn log_unnormalized<T: Real>(self, param: &QuatParam<T>, q: &UnitQuaternion<T>) -> T {
        match self {
            QuatKind::QuaternionLaplace => ql_log_unnormalized(param, q),
            QuatKind::Bingham => bingham_log_unnormalized(param, q),
        }
    }
}

impl fmt::Display for QuatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for QuatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ql" | "quaternion-laplace" => Ok(QuatKind::QuaternionLaplace),
            "bingham" | "bh" => Ok(QuatKind::Bingham),
            other => Err(Error::InvalidConfig(format!(
                "unknown S3 distribution '{other}'"
            ))),
        }
    }
}

/// `(M, Z)` with the quadratic form `B = M·Z·Mᵀ` precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuatParam<T: Real> {
    m: Matrix4<T>,
    z: Vector4<T>,
    b: Matrix4<T>,
}

impl<T: Real> QuatParam<T> {
    pub fn new(m: Matrix4<T>, z: Vector4<T>) -> Result<Self> {
        let tol = 1e-8f64.max(T::VALIDATION_TOL);
        let ortho = (m.transpose() * m - Matrix4::identity())
            .norm()
            .to_f64_lossy();
        if !(ortho <= tol) {
            return Err(Error::InvalidParam(format!(
                "M is not orthogonal (|M^T M - I|_F = {ortho:e})"
            )));
        }
        if z[0] != T::zero() {
            return Err(Error::InvalidParam("Z[0] must be 0".into()));
        }
        if !(z[1] <= z[0] && z[2] <= z[1] && z[3] <= z[2]) || z.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParam(
                "Z must satisfy 0 >= z1 >= z2 >= z3".into(),
            ));
        }
        let b = m * Matrix4::from_diagonal(&z) * m.transpose();
        Ok(Self { m, z, b })
    }

    pub fn m(&self) -> &Matrix4<T> {
        &self.m
    }

    pub fn z(&self) -> &Vector4<T> {
        &self.z
    }

    /// `M·Z·Mᵀ`.
    pub fn quadratic_form(&self) -> &Matrix4<T> {
        &self.b
    }

    /// `qᵀ·M·Z·Mᵀ·q`, non-positive.
    #[inline]
    pub fn quad(&self, q: &UnitQuaternion<T>) -> T {
        let v = q.coords();
        v.dot(&(self.b * v))
    }

    /// The mode `±M·e0` (sign chosen with `w ≥ 0`).
    pub fn mode(&self) -> UnitQuaternion<T> {
        let col = self.m.column(0);
        let q =
            UnitQuaternion::normalize(col[0], col[1], col[2], col[3]).expect("orthogonal column");
        crate::so3::canonical_hemisphere(q)
    }
}

/// `(M, Z)` such that `−qᵀMZMᵀq = tr(S − AᵀR)` for `q = γ⁻¹(R)`.
pub fn quat_param_from_a<T: Real>(param: &So3Param<T>) -> QuatParam<T> {
    let svd = param.svd();
    let u = rotmat_to_quat(&svd.u);
    let v = rotmat_to_quat(&svd.v);
    // Mᵀ·q = ū·q·v
    let mt = u.conjugate().left_matrix() * v.right_matrix();
    let [s1, s2, s3] = param.singular_values();
    let m2 = c::<T>(-2.0);
    // min() guards the ordering against round-off when singular values tie or vanish.
    let z1 = (m2 * (s2 + s3)).min(T::zero());
    let z2 = (m2 * (s1 + s3)).min(z1);
    let z3 = (m2 * (s1 + s2)).min(z2);
    let z = Vector4::new(T::zero(), z1, z2, z3);
    QuatParam::new(mt.transpose(), z).expect("M is a product of unit quaternion multiplications")
}

/// Quaternion Laplace parameter equivalent to Rotation Laplace `A`.
pub fn ql_from_rl<T: Real>(param: &So3Param<T>) -> QuatParam<T> {
    quat_param_from_a(param)
}

/// `−√t − ½·ln t` with `t = max(1e-8, −qᵀMZMᵀq)`.
pub fn ql_log_unnormalized<T: Real>(param: &QuatParam<T>, q: &UnitQuaternion<T>) -> T {
    laplace_log_kernel(clip_trace(-param.quad(q)))
}

/// `qᵀMZMᵀq`.
pub fn bingham_log_unnormalized<T: Real>(param: &QuatParam<T>, q: &UnitQuaternion<T>) -> T {
    param.quad(q)
}

/// `ln F` with `F = Σ_i exp(log_unnormalized(q_i))·Δq`.
pub fn s3_log_normalization<T: Real>(kind: QuatKind, param: &QuatParam<T>, grid: &S3Grid<T>) -> T {
    let pts = grid.points();
    let logs: Vec<T> = if pts.len() >= PAR_THRESHOLD {
        pts.par_iter()
            .map(|q| kind.log_unnormalized(param, q))
            .collect()
    } else {
        pts.iter()
            .map(|q| kind.log_unnormalized(param, q))
            .collect()
    };
    log_sum_exp(&logs) + grid.delta().ln()
}

pub fn s3_normalization_factor<T: Real>(
    kind: QuatKind,
    param: &QuatParam<T>,
    grid: &S3Grid<T>,
) -> T {
    s3_log_normalization(kind, param, grid).exp()
}

/// Log density w.r.t. the surface measure of S³ (total mass 2π²).
pub fn s3_log_prob<T: Real>(
    kind: QuatKind,
    param: &QuatParam<T>,
    q: &UnitQuaternion<T>,
    grid: &S3Grid<T>,
) -> T {
    kind.log_unnormalized(param, q) - s3_log_normalization(kind, param, grid)
}
