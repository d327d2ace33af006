//! Maximum-likelihood estimation of `A` from rotation observations.
//!
//! The objective is the mean negative log-likelihood
//! `L(A) = (1/n)·Σ_k −log p(R_k; A)` with the normalizer `F(A)` evaluated on a
//! grid. Its gradient is analytic: `∂tr(S)/∂A = U·Vᵀ` (proper SVD) and
//! `∂tr(AᵀR)/∂A = R`, and `∂log F/∂A` is differentiated through the same grid
//! sum that defines `F`. Where `s2 − |s3| < 1e-7` the SVD derivative is not
//! reliable, so `∂tr(S)/∂A` falls back to central differences.
//!
//! [`fit_mle`] runs plain gradient descent with a backtracking step.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    clip_trace, frobenius_dot, laplace_log_kernel, laplace_log_kernel_derivative, log_sum_exp,
    So3Kind, So3Param, PAR_THRESHOLD, TRACE_CLIP,
};
use crate::error::{Error, Result};
use crate::grid::{cached_grid, So3Grid};
use crate::scalar::{c, Real};
use crate::so3::{geodesic_distance, project_to_so3, proper_svd, RotationMatrix};

/// Singular-value gap below which `∂tr(S)/∂A` is taken by finite differences.
pub const SVD_DEGENERACY_GAP: f64 = 1e-7;
/// Step used by the finite-difference fallback.
pub const FD_STEP: f64 = 1e-5;
/// Backtracking gives up once the step falls below this.
pub const MIN_STEP: f64 = 1e-12;

/// Starting point of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// `A₀` = the proper-SVD projection of the mean observation.
    SpreadMatched,
    Explicit([[f64; 3]; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub kind: So3Kind,
    pub level: u32,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub init: Init,
}

impl FitConfig {
    pub fn new(kind: So3Kind) -> Self {
        Self {
            kind,
            level: 3,
            step: 20.0,
            max_iters: 300,
            tol: 1e-5,
            init: Init::SpreadMatched,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.level > crate::grid::MAX_LEVEL {
            return Err(Error::InvalidResolution(format!(
                "level {} exceeds {}",
                self.level,
                crate::grid::MAX_LEVEL
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::new(So3Kind::RotationLaplace)
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Backtracking fell below [`MIN_STEP`]; the last accepted iterate is kept.
    NoProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: So3Kind,
    pub a: [[f64; 3]; 3],
    /// Mean NLL after every accepted step, starting with the initial value.
    pub nll: Vec<f64>,
    /// `tr(S)` of the iterate alongside each `nll` entry.
    pub trace_s: Vec<f64>,
    pub grad_norm: f64,
    pub mode: [[f64; 3]; 3],
    pub converged: bool,
    pub stop: StopReason,
    pub iterations: usize,
    /// Iterations whose gradient used the finite-difference SVD fallback.
    pub degenerate_svd_steps: usize,
}

impl FitReport {
    pub fn a_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.a[i][j])
    }

    pub fn param(&self) -> So3Param<f64> {
        So3Param::new(self.a_matrix()).expect("fitted A is finite")
    }

    pub fn mode_rotation(&self) -> RotationMatrix<f64> {
        RotationMatrix::new_unchecked(Matrix3::from_fn(|i, j| self.mode[i][j]))
    }

    pub fn final_nll(&self) -> f64 {
        *self.nll.last().expect("NLL history is never empty")
    }
}

/// Gradient of the mean NLL, flagged when the SVD fallback was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllGradient<T: Real> {
    pub grad: Matrix3<T>,
    pub degenerate_svd: bool,
}

fn to_rows<T: Real>(m: &Matrix3<T>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)].to_f64_lossy()))
}

fn is_svd_degenerate<T: Real>(param: &So3Param<T>) -> bool {
    let [_, s2, s3] = param.singular_values();
    (s2 - s3.abs()).to_f64_lossy() < SVD_DEGENERACY_GAP
}

/// `∂tr(S)/∂A`: `U·Vᵀ` when the SVD is well separated, central differences otherwise.
fn trace_s_gradient<T: Real>(param: &So3Param<T>) -> (Matrix3<T>, bool) {
    if !is_svd_degenerate(param) {
        return (*param.mode().matrix(), false);
    }
    let h = c::<T>(FD_STEP);
    let a = *param.a();
    let g = Matrix3::from_fn(|i, j| {
        let mut plus = a;
        let mut minus = a;
        plus[(i, j)] += h;
        minus[(i, j)] -= h;
        (proper_svd(&plus).s.sum() - proper_svd(&minus).s.sum()) / (h + h)
    });
    (g, true)
}

/// Unclipped `t`-derivative of the Laplace log kernel, zero where `t` is clipped.
#[inline]
fn clipped_kernel_derivative<T: Real>(raw: T) -> T {
    if raw > c(TRACE_CLIP) {
        laplace_log_kernel_derivative(raw)
    } else {
        T::zero()
    }
}

/// Everything observation-independent: `ln F` and `∂ln F/∂A`.
struct Normalizer<T: Real> {
    log_norm: T,
    grad: Matrix3<T>,
}

fn log_values<T: Real>(kind: So3Kind, param: &So3Param<T>, grid: &So3Grid<T>) -> Vec<(T, T)> {
    // (log unnormalized value, raw trace term) per grid point.
    let tr_s = param.trace_s();
    let eval = |r: &RotationMatrix<T>| {
        let dot = frobenius_dot(param.a(), r.matrix());
        match kind {
            So3Kind::RotationLaplace => {
                let raw = tr_s - dot;
                (laplace_log_kernel(clip_trace(raw)), raw)
            }
            So3Kind::MatrixFisher => (dot, tr_s - dot),
        }
    };
    let pts = grid.points();
    if pts.len() >= PAR_THRESHOLD {
        pts.par_iter().map(eval).collect()
    } else {
        pts.iter().map(eval).collect()
    }
}

fn normalizer<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    grid: &So3Grid<T>,
    g_trace: &Matrix3<T>,
    want_grad: bool,
) -> Normalizer<T> {
    let vals = log_values(kind, param, grid);
    let logs: Vec<T> = vals.iter().map(|v| v.0).collect();
    let lse = log_sum_exp(&logs);
    let log_norm = lse + grid.delta().ln();
    if !want_grad {
        return Normalizer {
            log_norm,
            grad: Matrix3::zeros(),
        };
    }
    // Σ w_i·(scalar_i, R_i·scalar_i) with w_i = exp(l_i − lse) the cell probabilities.
    let term = |(r, &(l, raw)): (&RotationMatrix<T>, &(T, T))| -> (T, Matrix3<T>) {
        let w = (l - lse).exp();
        match kind {
            So3Kind::RotationLaplace => {
                let wk = w * clipped_kernel_derivative(raw);
                (wk, r.matrix() * wk)
            }
            So3Kind::MatrixFisher => (T::zero(), r.matrix() * w),
        }
    };
    let add = |a: (T, Matrix3<T>), b: (T, Matrix3<T>)| (a.0 + b.0, a.1 + b.1);
    let zero = || (T::zero(), Matrix3::zeros());
    let pts = grid.points();
    let (sk, sr) = if pts.len() >= PAR_THRESHOLD {
        pts.par_iter()
            .zip(vals.par_iter())
            .map(term)
            .reduce(zero, add)
    } else {
        pts.iter().zip(vals.iter()).map(term).fold(zero(), add)
    };
    let grad = match kind {
        So3Kind::RotationLaplace => g_trace * sk - sr,
        So3Kind::MatrixFisher => sr,
    };
    Normalizer { log_norm, grad }
}

/// `(−log-unnormalized value, its A-gradient)` for one observation.
fn data_term<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    g_trace: &Matrix3<T>,
    r: &RotationMatrix<T>,
) -> (T, Matrix3<T>) {
    let dot = frobenius_dot(param.a(), r.matrix());
    match kind {
        So3Kind::RotationLaplace => {
            let raw = param.trace_s() - dot;
            let value = -laplace_log_kernel(clip_trace(raw));
            (
                value,
                (g_trace - r.matrix()) * -clipped_kernel_derivative(raw),
            )
        }
        So3Kind::MatrixFisher => (-dot, -r.matrix()),
    }
}

fn check_observations<T: Real>(observations: &[RotationMatrix<T>]) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::InvalidParam("no observations".into()));
    }
    Ok(())
}

/// Mean NLL of the observations.
pub fn mean_nll<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    observations: &[RotationMatrix<T>],
    grid: &So3Grid<T>,
) -> Result<T> {
    check_observations(observations)?;
    let norm = normalizer(kind, param, grid, &Matrix3::zeros(), false);
    let g = Matrix3::zeros();
    let sum = observations
        .iter()
        .map(|r| data_term(kind, param, &g, r).0)
        .fold(T::zero(), |a, b| a + b);
    Ok(sum / c(observations.len() as f64) + norm.log_norm)
}

fn nll_and_gradient<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    observations: &[RotationMatrix<T>],
    grid: &So3Grid<T>,
) -> (T, NllGradient<T>) {
    let (g_trace, degenerate_svd) = trace_s_gradient(param);
    let norm = normalizer(kind, param, grid, &g_trace, true);
    let (sum_v, sum_g) = observations
        .iter()
        .map(|r| data_term(kind, param, &g_trace, r))
        .fold((T::zero(), Matrix3::zeros()), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = c::<T>(observations.len() as f64);
    (
        sum_v / n + norm.log_norm,
        NllGradient {
            grad: sum_g / n + norm.grad,
            degenerate_svd,
        },
    )
}

/// Gradient of the mean NLL with respect to `A`.
pub fn nll_gradient<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    observations: &[RotationMatrix<T>],
    grid: &So3Grid<T>,
) -> Result<NllGradient<T>> {
    check_observations(observations)?;
    Ok(nll_and_gradient(kind, param, observations, grid).1)
}

/// Central-difference gradient of the mean NLL, entry by entry.
pub fn nll_gradient_fd<T: Real>(
    kind: So3Kind,
    param: &So3Param<T>,
    observations: &[RotationMatrix<T>],
    grid: &So3Grid<T>,
    h: T,
) -> Result<Matrix3<T>> {
    check_observations(observations)?;
    let a = *param.a();
    let mut g = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut plus = a;
            let mut minus = a;
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            let fp = mean_nll(kind, &So3Param::new(plus)?, observations, grid)?;
            let fm = mean_nll(kind, &So3Param::new(minus)?, observations, grid)?;
            g[(i, j)] = (fp - fm) / (h + h);
        }
    }
    Ok(g)
}

fn initial_a<T: Real>(init: &Init, observations: &[RotationMatrix<T>]) -> Matrix3<T> {
    match init {
        Init::Zero => Matrix3::zeros(),
        Init::Explicit(rows) => Matrix3::from_fn(|i, j| c(rows[i][j])),
        Init::SpreadMatched => {
            let mean = observations
                .iter()
                .fold(Matrix3::zeros(), |acc, r| acc + r.matrix())
                / c::<T>(observations.len() as f64);
            project_to_so3(&mean).into_inner()
        }
    }
}

/// Gradient descent on the mean NLL over an explicit grid. A stalled line
/// search is an error; see [`fit_mle_lenient_on_grid`] to keep the iterate.
pub fn fit_mle_on_grid<T: Real>(
    observations: &[RotationMatrix<T>],
    config: &FitConfig,
    grid: &So3Grid<T>,
) -> Result<FitReport> {
    let report = fit_mle_lenient_on_grid(observations, config, grid)?;
    if report.stop == StopReason::NoProgress {
        return Err(Error::NoProgress {
            iterations: report.iterations,
            min_step: MIN_STEP,
        });
    }
    Ok(report)
}

/// Like [`fit_mle_on_grid`], but a stalled line search ends the descent with
/// [`StopReason::NoProgress`] instead of an error.
///
/// Stalls are expected for Rotation Laplace: every observation contributes a
/// `½·ln t` cusp to the NLL, floored by the clipping of `t`, and the descent
/// can settle on one.
pub fn fit_mle_lenient_on_grid<T: Real>(
    observations: &[RotationMatrix<T>],
    config: &FitConfig,
    grid: &So3Grid<T>,
) -> Result<FitReport> {
    config.validate()?;
    if observations.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 observations, got {}",
            observations.len()
        )));
    }
    let kind = config.kind;
    let mut param = So3Param::new(initial_a(&config.init, observations))?;
    let (mut nll, mut grad) = nll_and_gradient(kind, &param, observations, grid);
    let mut history = vec![nll.to_f64_lossy()];
    let mut trace_s = vec![param.trace_s().to_f64_lossy()];
    let mut degenerate_steps = usize::from(grad.degenerate_svd);
    let max_step = config.step;
    let mut step = max_step;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    'descent: loop {
        if grad.grad.norm().to_f64_lossy() <= config.tol {
            stop = StopReason::Converged;
            break;
        }
        if iterations == config.max_iters {
            break;
        }
        iterations += 1;
        loop {
            let candidate = So3Param::new(param.a() - grad.grad * c::<T>(step))?;
            let trial = mean_nll(kind, &candidate, observations, grid)?;
            if trial.is_finite() && trial <= nll {
                param = candidate;
                step = (step * 1.1).min(max_step);
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                stop = StopReason::NoProgress;
                break 'descent;
            }
        }
        let (v, g) = nll_and_gradient(kind, &param, observations, grid);
        nll = v;
        grad = g;
        degenerate_steps += usize::from(grad.degenerate_svd);
        history.push(nll.to_f64_lossy());
        trace_s.push(param.trace_s().to_f64_lossy());
    }

    Ok(FitReport {
        kind,
        a: to_rows(param.a()),
        nll: history,
        trace_s,
        grad_norm: grad.grad.norm().to_f64_lossy(),
        mode: to_rows(param.mode().matrix()),
        converged: stop == StopReason::Converged,
        stop,
        iterations,
        degenerate_svd_steps: degenerate_steps,
    })
}

/// [`fit_mle_on_grid`] on the cached grid of `config.level`.
pub fn fit_mle(observations: &[RotationMatrix<f64>], config: &FitConfig) -> Result<FitReport> {
    let grid = cached_grid(config.level)?;
    fit_mle_on_grid(observations, config, &grid)
}

/// Parameters used for the per-observation gradients of
/// [`gradient_magnitude_profile`].
#[derive(Debug, Clone, Copy)]
pub enum ParamSource<'a, T: Real> {
    Shared(&'a So3Param<T>),
    PerSample(&'a [So3Param<T>]),
}

/// Per-observation `(error in degrees, ‖∂NLL_k/∂A‖_F)`, where the error is the
/// geodesic distance between the mode and the observation.
pub fn gradient_magnitude_profile<T: Real>(
    kind: So3Kind,
    params: ParamSource<'_, T>,
    observations: &[RotationMatrix<T>],
    grid: &So3Grid<T>,
) -> Result<Vec<(f64, f64)>> {
    let one =
        |param: &So3Param<T>, norm: &Normalizer<T>, g_trace: &Matrix3<T>, r: &RotationMatrix<T>| {
            let g = data_term(kind, param, g_trace, r).1 + norm.grad;
            let err = geodesic_distance(&param.mode(), r)
                .to_f64_lossy()
                .to_degrees();
            (err, g.norm().to_f64_lossy())
        };
    match params {
        ParamSource::Shared(param) => {
            let (g_trace, _) = trace_s_gradient(param);
            let norm = normalizer(kind, param, grid, &g_trace, true);
            Ok(observations
                .iter()
                .map(|r| one(param, &norm, &g_trace, r))
                .collect())
        }
        ParamSource::PerSample(params) => {
            if params.len() != observations.len() {
                return Err(Error::InvalidParam(format!(
                    "{} parameters for {} observations",
                    params.len(),
                    observations.len()
                )));
            }
            Ok(params
                .iter()
                .zip(observations)
                .map(|(param, r)| {
                    let (g_trace, _) = trace_s_gradient(param);
                    let norm = normalizer(kind, param, grid, &g_trace, true);
                    one(param, &norm, &g_trace, r)
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::nll_loss;
    use approx::assert_relative_eq;

    fn diag(a: f64, b: f64, c: f64) -> RotationMatrix<f64> {
        RotationMatrix::new(Matrix3::from_diagonal(&nalgebra::Vector3::new(a, b, c))).unwrap()
    }

    #[test]
    fn mean_nll_matches_single_loss() {
        let grid = So3Grid::<f64>::new(1).unwrap();
        let p = So3Param::from_mode(&diag(1.0, -1.0, -1.0), [3.0, 2.0, 1.0]).unwrap();
        let obs = vec![RotationMatrix::identity(), diag(-1.0, 1.0, -1.0)];
        for kind in So3Kind::ALL {
            let expected = obs
                .iter()
                .map(|r| nll_loss(kind, &p, r, &grid))
                .sum::<f64>()
                / 2.0;
            assert_relative_eq!(
                mean_nll(kind, &p, &obs, &grid).unwrap(),
                expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn mf_symmetric_set_matches_finite_differences() {
        let grid = So3Grid::<f64>::new(1).unwrap();
        let obs = vec![
            RotationMatrix::identity(),
            diag(1.0, -1.0, -1.0),
            diag(-1.0, 1.0, -1.0),
            diag(-1.0, -1.0, 1.0),
        ];
        let p = So3Param::new(Matrix3::zeros()).unwrap();
        let g = nll_gradient(So3Kind::MatrixFisher, &p, &obs, &grid).unwrap();
        let fd = nll_gradient_fd(So3Kind::MatrixFisher, &p, &obs, &grid, 1e-5).unwrap();
        assert!((g.grad - fd).abs().max() < 1e-5);
    }

    #[test]
    fn zero_error_observation_gives_finite_gradient() {
        let grid = So3Grid::<f64>::new(1).unwrap();
        let p = So3Param::isotropic(5.0);
        let obs = vec![RotationMatrix::identity(), RotationMatrix::identity()];
        let g = nll_gradient(So3Kind::RotationLaplace, &p, &obs, &grid).unwrap();
        assert!(g.grad.iter().all(|x| x.is_finite()));
        let prof = gradient_magnitude_profile(
            So3Kind::RotationLaplace,
            ParamSource::Shared(&p),
            &obs,
            &grid,
        )
        .unwrap();
        assert_eq!(prof[0].0, 0.0);
        assert!(prof[0].1.is_finite());
    }

    #[test]
    fn degenerate_svd_is_flagged() {
        let grid = So3Grid::<f64>::new(0).unwrap();
        let obs = vec![RotationMatrix::identity(), diag(1.0, -1.0, -1.0)];
        let g = nll_gradient(
            So3Kind::MatrixFisher,
            &So3Param::isotropic(2.0),
            &obs,
            &grid,
        )
        .unwrap();
        assert!(g.degenerate_svd);
        let p = So3Param::new(Matrix3::from_diagonal(&nalgebra::Vector3::new(
            3.0, 2.0, 1.0,
        )))
        .unwrap();
        assert!(
            !nll_gradient(So3Kind::MatrixFisher, &p, &obs, &grid)
                .unwrap()
                .degenerate_svd
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::new(So3Kind::RotationLaplace);
        assert!(cfg.validate().is_ok());
        cfg.step = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.step = 1.0;
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_too_few_observations() {
        let grid = So3Grid::<f64>::new(0).unwrap();
        let cfg = FitConfig::new(So3Kind::MatrixFisher);
        assert!(fit_mle_on_grid(&[RotationMatrix::<f64>::identity()], &cfg, &grid).is_err());
        assert!(
            nll_gradient(So3Kind::MatrixFisher, &So3Param::isotropic(1.0), &[], &grid).is_err()
        );
    }
}
