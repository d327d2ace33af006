//! Synthetic robustness experiments: outlier injection, Rotation Laplace vs
//! matrix Fisher mode errors, gradient-magnitude profiles and
//! entropy-vs-error.
//!
//! Every experiment is deterministic given its seed. Trials may run on a
//! dedicated thread pool; results are always returned in input order.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{entropy, tangent_sample, So3Kind, So3Param};
use crate::error::{Error, Result};
use crate::fit::{
    fit_mle_lenient_on_grid, gradient_magnitude_profile, FitConfig, FitReport, ParamSource,
};
use crate::grid::{cached_grid, So3Grid};
use crate::io::{RotationFormat, RotationRecord, RotationTable};
use crate::so3::{geodesic_distance, random_rotation, RotationMatrix};

/// Outlier fractions of the robustness study.
pub const OUTLIER_FRACTIONS: [f64; 5] = [0.0, 0.01, 0.05, 0.10, 0.30];
/// Histogram bin width of the gradient profile, in degrees.
pub const PROFILE_BIN_DEG: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n: usize,
    /// Inlier concentration: inliers follow Rotation Laplace with `A = R*·s·I`.
    pub s: f64,
    pub outlier_fraction: f64,
    pub level: u32,
    pub kinds: Vec<So3Kind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 500,
            s: 10.0,
            outlier_fraction: 0.0,
            level: 3,
            kinds: So3Kind::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig(format!(
                "outlier fraction must lie in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("need n >= 2, got {}", self.n)));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "s must be positive, got {}",
                self.s
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidConfig("no distribution kinds".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_fraction(&self, outlier_fraction: f64) -> Self {
        Self {
            outlier_fraction,
            ..self.clone()
        }
    }
}

/// A synthetic dataset. `outlier` marks rows whose rotation was replaced by a
/// Haar-random one; fitters only ever see [`Dataset::rotations`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ground_truth: RotationMatrix<f64>,
    pub rotations: Vec<RotationMatrix<f64>>,
    pub outlier: Vec<bool>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn outlier_count(&self) -> usize {
        self.outlier.iter().filter(|&&o| o).count()
    }

    /// Rows `0..n` with outlier flags, labelled with the ground truth.
    pub fn to_table(&self, format: RotationFormat) -> RotationTable {
        RotationTable {
            format,
            records: self
                .rotations
                .iter()
                .zip(&self.outlier)
                .enumerate()
                .map(|(i, (r, &o))| RotationRecord {
                    id: i.to_string(),
                    rotation: *r,
                    outlier: Some(o),
                    label: Some(self.ground_truth),
                })
                .collect(),
        }
    }
}

/// Number of outliers injected into `n` observations: `round(f·n)`.
pub fn outlier_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Draws the ground truth `R*` (Haar), `n` inliers around it, then replaces
/// `round(f·n)` randomly chosen rows by Haar-random rotations.
pub fn synth(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ground_truth: RotationMatrix<f64> = random_rotation(&mut rng);
    let param = So3Param::from_mode(&ground_truth, [config.s; 3])?;
    let mut rotations = tangent_sample(&param, &ground_truth, &mut rng, config.n)?;
    let mut outlier = vec![false; config.n];
    let k = outlier_count(config.n, config.outlier_fraction);
    let mut picked = index::sample(&mut rng, config.n, k).into_vec();
    picked.sort_unstable();
    for i in picked {
        rotations[i] = random_rotation(&mut rng);
        outlier[i] = true;
    }
    Ok(Dataset {
        ground_truth,
        rotations,
        outlier,
    })
}

/// Runs `f` on a pool of `jobs` threads (the global pool when `None`).
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Geodesic error of a fit's mode against `truth`, in degrees.
pub fn mode_error_deg(report: &FitReport, truth: &RotationMatrix<f64>) -> f64 {
    geodesic_distance(&report.mode_rotation(), truth).to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub fraction: f64,
    pub dist: So3Kind,
    pub seed: u64,
    pub error_deg: f64,
    pub final_nll: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub fraction: f64,
    pub dist: So3Kind,
    pub median_error_deg: f64,
    pub mean_error_deg: f64,
    /// Share of seeds where Rotation Laplace's error is at most matrix Fisher's;
    /// `None` unless both kinds were fitted.
    pub rl_win_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub trials: Vec<TrialResult>,
    pub rows: Vec<CompareRow>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fits every kind to the dataset of every `(fraction, seed)` with seeds
/// `base.seed .. base.seed + trials`.
pub fn compare(
    base: &ExperimentConfig,
    fractions: &[f64],
    trials: usize,
    jobs: Option<usize>,
) -> Result<Comparison> {
    base.validate()?;
    if trials < 1 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    for &f in fractions {
        base.with_fraction(f).validate()?;
    }
    let grid = cached_grid(base.level)?;
    let jobs_list: Vec<(f64, u64)> = fractions
        .iter()
        .flat_map(|&f| (0..trials as u64).map(move |i| (f, i)))
        .collect();
    let run = |&(f, i): &(f64, u64)| -> Result<Vec<TrialResult>> {
        let cfg = base.with_fraction(f).with_seed(base.seed + i);
        let data = synth(&cfg)?;
        base.kinds
            .iter()
            .map(|&kind| {
                let report =
                    fit_mle_lenient_on_grid(&data.rotations, &fit_config(kind, base.level), &grid)?;
                Ok(TrialResult {
                    fraction: f,
                    dist: kind,
                    seed: cfg.seed,
                    error_deg: mode_error_deg(&report, &data.ground_truth),
                    final_nll: report.final_nll(),
                    converged: report.converged,
                })
            })
            .collect()
    };
    let nested: Vec<Result<Vec<TrialResult>>> =
        with_jobs(jobs, || jobs_list.par_iter().map(run).collect())?;
    let mut trials_out = Vec::new();
    for r in nested {
        trials_out.extend(r?);
    }
    // Deterministic order: fraction, dist, seed.
    let kind_pos = |k: So3Kind| {
        base.kinds
            .iter()
            .position(|&x| x == k)
            .unwrap_or(usize::MAX)
    };
    trials_out.sort_by(|a, b| {
        a.fraction
            .total_cmp(&b.fraction)
            .then(kind_pos(a.dist).cmp(&kind_pos(b.dist)))
            .then(a.seed.cmp(&b.seed))
    });

    let mut rows = Vec::new();
    for &f in fractions {
        let errs = |k: So3Kind| -> Vec<f64> {
            trials_out
                .iter()
                .filter(|t| t.fraction == f && t.dist == k)
                .map(|t| t.error_deg)
                .collect()
        };
        let win_rate = if base.kinds.contains(&So3Kind::RotationLaplace)
            && base.kinds.contains(&So3Kind::MatrixFisher)
        {
            let rl = errs(So3Kind::RotationLaplace);
            let mf = errs(So3Kind::MatrixFisher);
            let wins = rl.iter().zip(&mf).filter(|(a, b)| a <= b).count();
            Some(wins as f64 / rl.len() as f64)
        } else {
            None
        };
        for &kind in &base.kinds {
            let e = errs(kind);
            rows.push(CompareRow {
                fraction: f,
                dist: kind,
                median_error_deg: median(&e),
                mean_error_deg: mean(&e),
                rl_win_rate: win_rate,
            });
        }
    }
    Ok(Comparison {
        trials: trials_out,
        rows,
    })
}

/// Default optimizer settings of the experiments.
pub fn fit_config(kind: So3Kind, level: u32) -> FitConfig {
    FitConfig {
        level,
        ..FitConfig::new(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    pub lo_deg: f64,
    pub hi_deg: f64,
    pub count: usize,
    pub population_share: f64,
    pub grad_sum: f64,
    /// Bin gradient sum over the total gradient sum.
    pub grad_share: f64,
    /// Mean gradient magnitude in the bin, zero when empty.
    pub grad_mean: f64,
}

/// Bins `(error°, ‖∇‖)` pairs into `[0, 180]` in bins of `width` degrees. The
/// last bin is closed on the right.
pub fn bin_profile(profile: &[(f64, f64)], width: f64) -> Vec<ProfileBin> {
    let nbins = (180.0 / width).ceil() as usize;
    let mut counts = vec![0usize; nbins];
    let mut sums = vec![0.0f64; nbins];
    for &(e, g) in profile {
        let b = ((e / width).floor() as usize).min(nbins - 1);
        counts[b] += 1;
        sums[b] += g;
    }
    let total_n = profile.len().max(1) as f64;
    let total_g: f64 = sums.iter().sum();
    (0..nbins)
        .map(|b| ProfileBin {
            lo_deg: b as f64 * width,
            hi_deg: ((b + 1) as f64 * width).min(180.0),
            count: counts[b],
            population_share: counts[b] as f64 / total_n,
            grad_sum: sums[b],
            grad_share: if total_g > 0.0 {
                sums[b] / total_g
            } else {
                0.0
            },
            grad_mean: if counts[b] > 0 {
                sums[b] / counts[b] as f64
            } else {
                0.0
            },
        })
        .collect()
}

/// Gradient share over population share for observations with error at
/// least `min_deg`; `None` when no observation is that far out.
pub fn tail_share_ratio(profile: &[(f64, f64)], min_deg: f64) -> Option<f64> {
    let total_g: f64 = profile.iter().map(|p| p.1).sum();
    let tail: Vec<&(f64, f64)> = profile.iter().filter(|p| p.0 >= min_deg).collect();
    if tail.is_empty() || total_g <= 0.0 {
        return None;
    }
    let g_share = tail.iter().map(|p| p.1).sum::<f64>() / total_g;
    let p_share = tail.len() as f64 / profile.len() as f64;
    Some(g_share / p_share)
}

/// Fits `kind` to the observations and returns the fit with the
/// per-observation profile at the fitted parameter.
pub fn fitted_profile(
    kind: So3Kind,
    observations: &[RotationMatrix<f64>],
    grid: &So3Grid<f64>,
) -> Result<(FitReport, Vec<(f64, f64)>)> {
    let report = fit_mle_lenient_on_grid(observations, &fit_config(kind, grid.level()), grid)?;
    let param = report.param();
    let profile =
        gradient_magnitude_profile(kind, ParamSource::Shared(&param), observations, grid)?;
    Ok((report, profile))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub s: f64,
    pub seed: u64,
    pub dist: So3Kind,
    pub entropy: f64,
    pub error_deg: f64,
}

/// For each concentration group and seed, fits every kind to a clean
/// dataset and records the fitted entropy and mode error. Rows are ordered
/// by (group, dist, seed).
pub fn entropy_vs_error(
    base: &ExperimentConfig,
    concentrations: &[f64],
    trials: usize,
    jobs: Option<usize>,
) -> Result<Vec<EntropyRow>> {
    if concentrations.is_empty() {
        return Err(Error::InvalidConfig("no concentration groups".into()));
    }
    if trials < 1 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let grid = cached_grid(base.level)?;
    let cases: Vec<(f64, So3Kind, u64)> = concentrations
        .iter()
        .flat_map(|&s| {
            base.kinds
                .iter()
                .flat_map(move |&k| (0..trials as u64).map(move |i| (s, k, i)))
        })
        .collect();
    let run = |&(s, kind, i): &(f64, So3Kind, u64)| -> Result<EntropyRow> {
        let cfg = ExperimentConfig {
            s,
            seed: base.seed + i,
            ..base.clone()
        };
        let data = synth(&cfg)?;
        let report =
            fit_mle_lenient_on_grid(&data.rotations, &fit_config(kind, base.level), &grid)?;
        Ok(EntropyRow {
            s,
            seed: cfg.seed,
            dist: kind,
            entropy: entropy(kind, &report.param(), &grid),
            error_deg: mode_error_deg(&report, &data.ground_truth),
        })
    };
    with_jobs(jobs, || cases.par_iter().map(run).collect())?
}
