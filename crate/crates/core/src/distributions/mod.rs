//! Densities on SO(3): Rotation Laplace and matrix Fisher.
//!
//! Both are parameterized by an unconstrained 3×3 matrix `A` with proper SVD
//! `A = U·S·Vᵀ`. Up to normalization,
//!
//! * Rotation Laplace: `exp(−√t) / √t` with `t = tr(S − AᵀR)`,
//! * matrix Fisher: `exp(tr(AᵀR))`,
//!
//! with respect to the Haar measure of total mass one. Normalizers are grid
//! sums over an equivolumetric [`So3Grid`], carried out in the log domain.
//!
//! `t` is clipped below at [`TRACE_CLIP`] in every evaluation (densities,
//! normalizers and gradients alike), so the Rotation Laplace density is finite
//! at its mode.

pub mod quaternion;
pub mod tangent;

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::So3Grid;
use crate::scalar::{c, Real};
use crate::so3::{exp_map, proper_svd, ProperSvd, RotationMatrix};

pub use quaternion::{
    bingham_log_unnormalized, ql_from_rl, ql_log_unnormalized, quat_param_from_a,
    s3_log_normalization, s3_log_prob, s3_normalization_factor, QuatKind, QuatParam,
};
pub use tangent::{
    tangent_covariance, tangent_gaussian_sample, tangent_laplace_density, tangent_laplace_kernel,
    tangent_sample, TangentCovariance,
};

/// Lower clip applied to the Rotation Laplace trace term.
pub const TRACE_CLIP: f64 = 1e-8;

/// Grids at least this large are summed in parallel.
pub(crate) const PAR_THRESHOLD: usize = 4096;

/// Which SO(3) density a parameter `A` is plugged into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum So3Kind {
    #[serde(rename = "rl")]
    RotationLaplace,
    #[serde(rename = "mf")]
    MatrixFisher,
}

impl So3Kind {
    pub const ALL: [So3Kind; 2] = [So3Kind::RotationLaplace, So3Kind::MatrixFisher];

    pub fn short_name(self) -> &'static str {
        match self {
            So3Kind::RotationLaplace => "rl",
            So3Kind::MatrixFisher => "mf",
        }
    }

    /// Log of the unnormalized density at `r`.
    #[inline]
    pub fn log_unnormalized<T: Real>(self, param: &So3Param<T>, r: &RotationMatrix<T>) -> T {
        match self {
            So3Kind::RotationLaplace => rl_log_unnormalized(param, r),
            So3Kind::MatrixFisher => mf_log_unnormalized(param, r),
        }
    }
}

impl fmt::Display for So3Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for So3Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rl" | "rotation-laplace" | "laplace" => Ok(So3Kind::RotationLaplace),
            "mf" | "matrix-fisher" | "fisher" => Ok(So3Kind::MatrixFisher),
            other => Err(Error::InvalidConfig(format!(
                "unknown SO(3) distribution '{other}'"
            ))),
        }
    }
}

/// The parameter `A` together with its proper SVD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct So3Param<T: Real> {
    a: Matrix3<T>,
    svd: ProperSvd<T>,
}

impl<T: Real> So3Param<T> {
    pub fn new(a: Matrix3<T>) -> Result<Self> {
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParam("A has non-finite entries".into()));
        }
        Ok(Self {
            a,
            svd: proper_svd(&a),
        })
    }

    /// `A = s·I`.
    pub fn isotropic(s: T) -> Self {
        Self::new(Matrix3::identity() * s).expect("finite scale")
    }

    /// `A = R0·diag(s)`, whose mode is `R0`.
    pub fn from_mode(mode: &RotationMatrix<T>, s: [T; 3]) -> Result<Self> {
        Self::new(mode.matrix() * Matrix3::from_diagonal(&s.into()))
    }

    #[inline]
    pub fn a(&self) -> &Matrix3<T> {
        &self.a
    }

    #[inline]
    pub fn svd(&self) -> &ProperSvd<T> {
        &self.svd
    }

    /// Proper singular values `(s1, s2, s3)`.
    pub fn singular_values(&self) -> [T; 3] {
        [self.svd.s[0], self.svd.s[1], self.svd.s[2]]
    }

    #[inline]
    pub fn trace_s(&self) -> T {
        self.svd.s.sum()
    }

    pub fn mode(&self) -> RotationMatrix<T> {
        self.svd.mode()
    }
}

/// `U·Vᵀ`, the mode shared by the Rotation Laplace and matrix Fisher densities.
pub fn mode<T: Real>(param: &So3Param<T>) -> RotationMatrix<T> {
    param.mode()
}

/// `tr(AᵀR)` as the Frobenius inner product of `A` and `R`.
#[inline]
pub(crate) fn frobenius_dot<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    a.component_mul(b).sum()
}

/// `max(1e-8, tr(S − AᵀR))`.
#[inline]
pub fn rl_trace_term<T: Real>(param: &So3Param<T>, r: &RotationMatrix<T>) -> T {
    clip_trace(param.trace_s() - frobenius_dot(param.a(), r.matrix()))
}

#[inline]
pub(crate) fn clip_trace<T: Real>(t: T) -> T {
    t.max(c(TRACE_CLIP))
}

/// `k(t) = −√t − ½·ln t`, the log of the Laplace kernel `exp(−√t)/√t`.
#[inline]
pub fn laplace_log_kernel<T: Real>(t: T) -> T {
    -t.sqrt() - c::<T>(0.5) * t.ln()
}

/// `k'(t) = −1/(2√t) − 1/(2t)`.
#[inline]
pub fn laplace_log_kernel_derivative<T: Real>(t: T) -> T {
    let half = c::<T>(0.5);
    -half / t.sqrt() - half / t
}

pub fn rl_log_unnormalized<T: Real>(param: &So3Param<T>, r: &RotationMatrix<T>) -> T {
    laplace_log_kernel(rl_trace_term(param, r))
}

/// `tr(AᵀR)`.
pub fn mf_log_unnormalized<T: Real>(param: &So3Param<T>, r: &RotationMatrix<T>) -> T {
    frobenius_dot(param.a(), r.matrix())
}

/// Unnormalized log density at every grid point, in grid order.
pub fn grid_log_values<T: Real>(kind: So3Kind, param: &So3Param<T>, grid: &So3Grid<T>) -> Vec<T> {
    let pts = grid.points();
    if pts.len() >= PAR_THRESHOLD {
        pts.par_iter()
            .map(|r| kind.log_unnormalized(param, r))
            .collect()
    } else {
        pts.iter()
            .map(|r| kind.log_unnormalized(param, r))
            .collect()
    }
}

/// `ln Σ exp(x_i)`, shifted by the maximum so large concentrations do not overflow.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs
        .iter()
        .copied()
        .fold(T::min_value().unwrap(), |m, x| m.max(x));
    if !max.is_finite() {
        return max;
    }
    let sum = if xs.len() >= PAR_THRESHOLD {
        xs.par_iter()
            .map(|&x| (x - max).exp())
            .reduce(T::zero, |a, b| a + b)
    } else {
        xs.iter()
            .map(|&x| (x - max).exp())
            .fold(T::zero(), |a, b| a + b)
    };
    max + sum.ln()
}

/// `ln F` with `F = Σ_i exp(log_unnormalized(R_i))·ΔR`.
pub fn log_normalization<T: Real>(kind: So3Kind, param: &So3Param<T>, grid: &So3Grid<T>) -> T {
    log_sum_exp(&grid_log_values(kind, param, grid)) + grid.delta().ln()
}

/// The normalizer `F(A)` itself. Overflows to infinity for very concentrated
/// matrix Fisher parameters; prefer [`log_normalization`].
pub fn normalization_factor<T: Real>(kind: So3Kind, param: &So3Param<T>, grid: &So3Grid<T>) -> T {
    log_normalization(kind, param, grid).exp()
}

/// Log density w.r.t. the unit-mass Haar measure.
pub fn log_prob<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    r: &RotationMatrix<T>,
    grid: &So3Grid<T>,
) -> T {
    kind.log_unnormalized(param, r) - log_normalization(kind, param, grid)
}

/// Negative log-likelihood of a single observation.
pub fn nll_loss<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    r: &RotationMatrix<T>,
    grid: &So3Grid<T>,
) -> T {
    -log_prob(kind, param, r, grid)
}

/// `H = −Σ p_i ln p_i ΔR` over the grid.
pub fn entropy<T: Real>(kind: So3Kind, param: &So3Param<T>, grid: &So3Grid<T>) -> T {
    Density::new(kind, *param, grid).entropy()
}

/// A parameter bound to a grid, with its normalizer computed once.
#[derive(Debug, Clone)]
pub struct Density<'g, T: Real> {
    kind: So3Kind,
    param: So3Param<T>,
    grid: &'g So3Grid<T>,
    log_norm: T,
}

impl<'g, T: Real> Density<'g, T> {
    pub fn new(kind: So3Kind, param: So3Param<T>, grid: &'g So3Grid<T>) -> Self {
        let log_norm = log_normalization(kind, &param, grid);
        Self {
            kind,
            param,
            grid,
            log_norm,
        }
    }

    pub fn kind(&self) -> So3Kind {
        self.kind
    }

    pub fn param(&self) -> &So3Param<T> {
        &self.param
    }

    pub fn grid(&self) -> &'g So3Grid<T> {
        self.grid
    }

    pub fn log_normalization(&self) -> T {
        self.log_norm
    }

    pub fn log_prob(&self, r: &RotationMatrix<T>) -> T {
        self.kind.log_unnormalized(&self.param, r) - self.log_norm
    }

    pub fn prob(&self, r: &RotationMatrix<T>) -> T {
        self.log_prob(r).exp()
    }

    pub fn nll(&self, r: &RotationMatrix<T>) -> T {
        -self.log_prob(r)
    }

    /// Probability mass `p_i·ΔR` of each grid cell; sums to one.
    pub fn cell_masses(&self) -> Vec<T> {
        let ln_delta = self.grid.delta().ln();
        grid_log_values(self.kind, &self.param, self.grid)
            .into_iter()
            .map(|l| (l - self.log_norm + ln_delta).exp())
            .collect()
    }

    pub fn entropy(&self) -> T {
        let delta = self.grid.delta();
        let h = grid_log_values(self.kind, &self.param, self.grid)
            .into_iter()
            .map(|l| {
                let lp = l - self.log_norm;
                lp.exp() * lp
            })
            .fold(T::zero(), |a, b| a + b);
        -h * delta
    }

    /// Draws `n` rotations: a grid cell with probability `p_i·ΔR`, then a
    /// uniform tangent perturbation of norm at most the grid's cell radius.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<RotationMatrix<T>> {
        let masses: Vec<f64> = self
            .cell_masses()
            .iter()
            .map(|m| m.to_f64_lossy())
            .collect();
        let cells = WeightedIndex::new(&masses).expect("grid masses are finite and positive");
        let radius = self.grid.cell_radius();
        (0..n)
            .map(|_| {
                let i = cells.sample(rng);
                let jitter = uniform_ball::<T, R>(rng, radius);
                self.grid.points()[i] * exp_map(&jitter)
            })
            .collect()
    }
}

/// Categorical grid draw plus in-cell jitter; see [`Density::sample`].
pub fn sample<T: Real, R: Rng + ?Sized>(
    kind: So3Kind,
    param: &So3Param<T>,
    grid: &So3Grid<T>,
    rng: &mut R,
    n: usize,
) -> Vec<RotationMatrix<T>> {
    Density::new(kind, *param, grid).sample(rng, n)
}

fn uniform_ball<T: Real, R: Rng + ?Sized>(rng: &mut R, radius: f64) -> nalgebra::Vector3<T> {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let n2 = v.iter().map(|x| x * x).sum::<f64>();
        if n2 <= 1.0 {
            return nalgebra::Vector3::new(c(v[0] * radius), c(v[1] * radius), c(v[2] * radius));
        }
    }
}
