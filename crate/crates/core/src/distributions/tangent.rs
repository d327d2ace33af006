//! Tangent-space behaviour near the mode.
//!
//! Writing `R = R0·exp(φ̂)` with `R0 = U·Vᵀ`,
//! `tr(S − AᵀR) = ½·φᵀ·V·diag(s2+s3, s1+s3, s1+s2)·Vᵀ·φ + O(‖φ‖³)`.
//! Near the mode the Rotation Laplace density is therefore a zero-mean
//! trivariate Laplace in φ with covariance `Σ = 4·V·diag(1/(s2+s3), …)·Vᵀ`,
//! and the matrix Fisher density is a Gaussian with `Σ = V·diag(1/(s2+s3), …)·Vᵀ`.
//!
//! # The trivariate Laplace normalizer
//!
//! The symmetric multivariate Laplace law in `d` dimensions has density
//! `2/((2π)^{d/2}·|Σ|^{1/2}) · (q/2)^{ν/2} · K_ν(√(2q))` with `q = xᵀΣ⁻¹x` and
//! `ν = (2 − d)/2`. For `d = 3`, `ν = −½` and `K_{−½}(ξ) = √(π/(2ξ))·e^{−ξ}`, so
//! `(q/2)^{−1/4}·K_{−½}(√(2q)) = √(π/2)·e^{−√(2q)}/√q` and the density collapses to
//!
//! ```text
//! p(x) = exp(−√(2q)) / (2π·√|Σ|·√q).
//! ```
//!
//! It is the law of `√W·L·g` with `W ~ Exp(1)`, `g ~ N(0, I₃)`, `L·Lᵀ = Σ`, which
//! has covariance `Σ`; [`tangent_sample`] draws from that mixture.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::{So3Kind, So3Param};
use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use crate::so3::{exp_map, RotationMatrix};

/// Symmetric positive-definite covariance of the tangent vector φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentCovariance<T: Real> {
    sigma: Matrix3<T>,
    chol: Matrix3<T>,
}

impl<T: Real> TangentCovariance<T> {
    pub fn new(sigma: Matrix3<T>) -> Result<Self> {
        let scale = sigma.norm().to_f64_lossy().max(1.0);
        let asym = (sigma - sigma.transpose()).norm().to_f64_lossy();
        if !(asym <= 1e-10f64.max(T::VALIDATION_TOL) * scale) {
            return Err(Error::InvalidParam(format!(
                "covariance not symmetric ({asym:e})"
            )));
        }
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::InvalidParam("covariance not positive definite".into()))?
            .l();
        Ok(Self { sigma, chol })
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.sigma
    }

    /// Lower Cholesky factor `L` with `L·Lᵀ = Σ`.
    pub fn cholesky_factor(&self) -> &Matrix3<T> {
        &self.chol
    }

    /// `xᵀΣ⁻¹x` via the Cholesky factor.
    pub fn mahalanobis_sq(&self, x: &Vector3<T>) -> T {
        let y = self
            .chol
            .solve_lower_triangular(x)
            .expect("Cholesky factor is nonsingular");
        y.norm_squared()
    }

    pub fn determinant(&self) -> T {
        let d = self.chol.diagonal();
        let p = d[0] * d[1] * d[2];
        p * p
    }
}

/// `(s2+s3, s1+s3, s1+s2)`, the curvature of the trace term along the V axes.
pub fn pairwise_sums<T: Real>(param: &So3Param<T>) -> [T; 3] {
    let [s1, s2, s3] = param.singular_values();
    [s2 + s3, s1 + s3, s1 + s2]
}

/// `V·diag(s2+s3, s1+s3, s1+s2)·Vᵀ`; `tr(S − AᵀR(φ)) ≈ ½·φᵀ·H·φ`.
pub fn tangent_hessian<T: Real>(param: &So3Param<T>) -> Matrix3<T> {
    let v = param.svd().v.matrix();
    v * Matrix3::from_diagonal(&Vector3::from(pairwise_sums(param))) * v.transpose()
}

/// Covariance of φ in the small-dispersion limit: `4·V·diag(1/(s_j+s_k))·Vᵀ`
/// for Rotation Laplace, without the factor 4 for matrix Fisher.
pub fn tangent_covariance<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
) -> Result<TangentCovariance<T>> {
    let sums = pairwise_sums(param);
    if sums.iter().any(|s| !(*s > c(1e-12))) {
        return Err(Error::DegenerateConcentration {
            sums: sums.map(|s| s.to_f64_lossy()),
        });
    }
    let scale: T = match kind {
        So3Kind::RotationLaplace => c(4.0),
        So3Kind::MatrixFisher => T::one(),
    };
    let v = param.svd().v.matrix();
    let d = Vector3::new(scale / sums[0], scale / sums[1], scale / sums[2]);
    let sigma = v * Matrix3::from_diagonal(&d) * v.transpose();
    // Symmetrize away round-off.
    TangentCovariance::new((sigma + sigma.transpose()) * c::<T>(0.5))
}

/// Unnormalized trivariate Laplace kernel `exp(−√(2q))/√q`, `q = φᵀΣ⁻¹φ`.
pub fn tangent_laplace_kernel<T: Real>(
    phi: &Vector3<T>,
    sigma: &TangentCovariance<T>,
) -> Result<T> {
    if phi.norm() < c(1e-12) {
        return Err(Error::SingularAtOrigin);
    }
    let q = sigma.mahalanobis_sq(phi);
    Ok((-(c::<T>(2.0) * q).sqrt()).exp() / q.sqrt())
}

/// Normalized trivariate Laplace density: the kernel divided by `2π·√|Σ|`.
pub fn tangent_laplace_density<T: Real>(
    phi: &Vector3<T>,
    sigma: &TangentCovariance<T>,
) -> Result<T> {
    let norm = T::two_pi() * sigma.determinant().sqrt();
    Ok(tangent_laplace_kernel(phi, sigma)? / norm)
}

/// Zero-mean trivariate Gaussian density.
pub fn tangent_gaussian_density<T: Real>(phi: &Vector3<T>, sigma: &TangentCovariance<T>) -> T {
    let q = sigma.mahalanobis_sq(phi);
    let norm = (T::two_pi() * T::two_pi() * T::two_pi() * sigma.determinant()).sqrt();
    (-q * c::<T>(0.5)).exp() / norm
}

fn draw_tangent<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    chol: &Matrix3<T>,
    laplace: bool,
) -> Vector3<T> {
    loop {
        let g = Vector3::new(
            c::<T>(rng.sample(StandardNormal)),
            c::<T>(rng.sample(StandardNormal)),
            c::<T>(rng.sample(StandardNormal)),
        );
        let mut phi = chol * g;
        if laplace {
            let w: f64 = rng.sample(Exp1);
            phi *= c::<T>(w.sqrt());
        }
        if phi.norm() < T::pi() {
            return phi;
        }
    }
}

/// Approximate Rotation Laplace sampler for concentrated parameters:
/// `mode·exp(φ̂)` with φ trivariate Laplace of covariance
/// `tangent_covariance(RotationLaplace, param)`, redrawing `‖φ‖ ≥ π`.
pub fn tangent_sample<T: Real, R: Rng + ?Sized>(
    param: &So3Param<T>,
    mode: &RotationMatrix<T>,
    rng: &mut R,
    n: usize,
) -> Result<Vec<RotationMatrix<T>>> {
    let sigma = tangent_covariance(So3Kind::RotationLaplace, param)?;
    Ok((0..n)
        .map(|_| mode * &exp_map(&draw_tangent(rng, sigma.cholesky_factor(), true)))
        .collect())
}

/// Matrix Fisher counterpart of [`tangent_sample`] with Gaussian φ.
pub fn tangent_gaussian_sample<T: Real, R: Rng + ?Sized>(
    param: &So3Param<T>,
    mode: &RotationMatrix<T>,
    rng: &mut R,
    n: usize,
) -> Result<Vec<RotationMatrix<T>>> {
    let sigma = tangent_covariance(So3Kind::MatrixFisher, param)?;
    Ok((0..n)
        .map(|_| mode * &exp_map(&draw_tangent(rng, sigma.cholesky_factor(), false)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{geodesic_distance, log_map, random_rotation};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn covariance_examples() {
        let id = So3Param::isotropic(1.0f64);
        let rl = tangent_covariance(So3Kind::RotationLaplace, &id).unwrap();
        assert_abs_diff_eq!(*rl.matrix(), Matrix3::identity() * 2.0, epsilon = 1e-12);
        let mf = tangent_covariance(So3Kind::MatrixFisher, &id).unwrap();
        assert_abs_diff_eq!(*mf.matrix(), Matrix3::identity() * 0.5, epsilon = 1e-12);
        let p = So3Param::new(Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0))).unwrap();
        let rl = tangent_covariance(So3Kind::RotationLaplace, &p).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(4.0 / 3.0, 1.0, 0.8));
        assert_abs_diff_eq!(*rl.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_concentration() {
        let p = So3Param::new(Matrix3::from_diagonal(&Vector3::new(3.0, 1.0, -1.0))).unwrap();
        assert!(matches!(
            tangent_covariance(So3Kind::RotationLaplace, &p),
            Err(Error::DegenerateConcentration { .. })
        ));
        assert!(tangent_covariance(So3Kind::MatrixFisher, &So3Param::isotropic(0.0)).is_err());
    }

    #[test]
    fn kernel_ratio_and_isotropy() {
        let sigma = TangentCovariance::new(Matrix3::<f64>::identity()).unwrap();
        let phi = Vector3::new(0.0, 0.6, 0.8);
        let ratio = tangent_laplace_kernel(&phi, &sigma).unwrap()
            / tangent_laplace_kernel(&(phi * 2.0), &sigma).unwrap();
        assert_abs_diff_eq!(ratio, 2.0 * 2f64.sqrt().exp(), epsilon = 1e-12);

        let iso = TangentCovariance::new(Matrix3::identity() * 0.3).unwrap();
        let a = tangent_laplace_density(&Vector3::new(0.5, 0.0, 0.0), &iso).unwrap();
        let b = tangent_laplace_density(&Vector3::new(0.3, -0.4, 0.0), &iso).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert!(matches!(
            tangent_laplace_kernel(&Vector3::zeros(), &iso),
            Err(Error::SingularAtOrigin)
        ));
    }

    #[test]
    fn sampler_collapses_for_huge_concentration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mode: RotationMatrix<f64> = random_rotation(&mut rng);
        let p = So3Param::isotropic(1e6);
        for r in tangent_sample(&p, &mode, &mut rng, 200).unwrap() {
            assert!(geodesic_distance(&r, &mode) < 1e-2);
        }
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let p = So3Param::isotropic(10.0f64);
        let mode = RotationMatrix::identity();
        let a = tangent_sample(&p, &mode, &mut ChaCha8Rng::seed_from_u64(5), 20).unwrap();
        let b = tangent_sample(&p, &mode, &mut ChaCha8Rng::seed_from_u64(5), 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_sampler_covariance() {
        let p = So3Param::new(Matrix3::from_diagonal(&Vector3::new(40.0, 30.0, 20.0))).unwrap();
        let mode = RotationMatrix::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 50_000;
        let mut cov = Matrix3::<f64>::zeros();
        for r in tangent_gaussian_sample(&p, &mode, &mut rng, n).unwrap() {
            let phi = log_map(&r);
            cov += phi * phi.transpose();
        }
        cov /= n as f64;
        let sigma = tangent_covariance(So3Kind::MatrixFisher, &p).unwrap();
        for i in 0..3 {
            let rel = cov[(i, i)] / sigma.matrix()[(i, i)] - 1.0;
            assert!(rel.abs() < 0.05, "axis {i}: {rel}");
        }
    }
}
