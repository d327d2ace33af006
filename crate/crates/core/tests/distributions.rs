use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotlaplace::distributions::tangent::tangent_hessian;
use rotlaplace::distributions::{
    entropy, log_normalization, ql_from_rl, ql_log_unnormalized, s3_log_normalization,
    tangent_covariance, tangent_laplace_density, tangent_sample, Density, QuatKind, So3Kind,
    So3Param,
};
use rotlaplace::grid::{S3Grid, So3Grid};
use rotlaplace::so3::{
    exp_map, geodesic_distance, haar_angle_cdf, haar_tangent_density, log_map, quat_to_rotmat,
    random_rotation, rotmat_to_quat, RotationMatrix,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_param(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> So3Param<f64> {
    let u: RotationMatrix<f64> = random_rotation(rng);
    let v: RotationMatrix<f64> = random_rotation(rng);
    let s = Vector3::from_fn(|_, _| rng.random_range(lo..hi));
    So3Param::new(u.matrix() * Matrix3::from_diagonal(&s) * v.matrix().transpose()).unwrap()
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let v = random_rotation::<f64, _>(rng);
    v.matrix().column(0).into_owned()
}

/// Largest gap between the empirical CDF of `xs` and `cdf`.
fn ks_statistic(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical value of the Kolmogorov-Smirnov statistic at significance 0.01.
fn ks_critical(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

fn lattice_integral(
    sigma: &Matrix3<f64>,
    cov: &rotlaplace::distributions::TangentCovariance<f64>,
    m: usize,
) -> f64 {
    let sd: [f64; 3] = std::array::from_fn(|i| sigma[(i, i)].sqrt());
    let h: [f64; 3] = std::array::from_fn(|i| 40.0 * sd[i] / m as f64);
    let coord = |axis: usize, k: usize| -20.0 * sd[axis] + (k as f64 + 0.5) * h[axis];
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let x = Vector3::new(coord(0, i), coord(1, j), coord(2, k));
                sum += tangent_laplace_density(&x, cov).unwrap();
            }
        }
    }
    sum * h[0] * h[1] * h[2]
}

#[test]
fn tangent_laplace_integrates_to_one_on_a_lattice() {
    let mut r = rng(3);
    let v: RotationMatrix<f64> = random_rotation(&mut r);
    let a = Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0)) * v.matrix().transpose();
    let cov = tangent_covariance(So3Kind::RotationLaplace, &So3Param::new(a).unwrap()).unwrap();
    // The midpoint rule converges as h² around the 1/‖φ‖ singularity, so
    // two lattices are combined by Richardson extrapolation.
    let coarse = lattice_integral(cov.matrix(), &cov, 100);
    let fine = lattice_integral(cov.matrix(), &cov, 200);
    let extrapolated = fine + (fine - coarse) / 3.0;
    assert!(
        (extrapolated - 1.0).abs() <= 1e-3,
        "coarse {coarse}, fine {fine}, extrapolated {extrapolated}"
    );
}

// Along R = mode·exp(φ̂) the trace term is exactly
// (1 − cos‖φ‖)/‖φ‖² · φᵀHφ, so the quadratic approximation has relative
// error 2(1 − cos θ)/θ² − 1 ≈ −θ²/12 whatever A and the direction.
#[test]
fn quadratic_form_error_is_the_closed_form() {
    let mut r = rng(11);
    for _ in 0..50 {
        let param = random_param(&mut r, 0.5, 20.0);
        let mode = param.mode();
        let h = tangent_hessian(&param);
        let u = unit_vector(&mut r);
        let mut errs = Vec::new();
        for theta in [0.1, 0.05, 0.025] {
            let phi = u * theta;
            let rot = mode * exp_map(&phi);
            let quad = 0.5 * phi.dot(&(h * phi));
            for kind in So3Kind::ALL {
                let exact = match kind {
                    So3Kind::RotationLaplace => {
                        rotlaplace::distributions::rl_trace_term(&param, &rot)
                    }
                    So3Kind::MatrixFisher => {
                        So3Kind::MatrixFisher.log_unnormalized(&param, &mode)
                            - So3Kind::MatrixFisher.log_unnormalized(&param, &rot)
                    }
                };
                let rel = exact / quad - 1.0;
                let predicted = 2.0 * (1.0 - theta.cos()) / (theta * theta) - 1.0;
                assert!(
                    (rel - predicted).abs() <= 1e-9 + 1e-6 * predicted.abs(),
                    "{rel} vs {predicted}"
                );
            }
            errs.push(2.0 * (1.0 - theta.cos()) / (theta * theta) - 1.0);
        }
        for w in errs.windows(2) {
            assert!((w[1] / w[0] - 0.25).abs() < 0.01);
        }
    }
}

#[test]
fn haar_density_expansion_near_identity() {
    let limit = 1.0 / (8.0 * PI * PI);
    let mut r = rng(5);
    for k in 1..=30 {
        let x = 0.01 * k as f64;
        let p = haar_tangent_density(&(unit_vector(&mut r) * x));
        assert!((p / limit - 1.0).abs() <= x * x / 10.0, "x = {x}");
    }
    assert!((haar_tangent_density(&Vector3::zeros()) - limit).abs() < 1e-15);

    // 4π ∫₀^π θ²·p(θ) dθ = 1 by Simpson's rule.
    let n = 2000;
    let h = PI / n as f64;
    let f = |t: f64| 4.0 * PI * t * t * haar_tangent_density(&Vector3::new(t, 0.0, 0.0));
    let mut total = f(0.0) + f(PI);
    for i in 1..n {
        total += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    assert!((total * h / 3.0 - 1.0).abs() < 1e-10);
}

#[test]
fn laplace_tail_is_heavier_than_fisher_at_matched_covariance() {
    let grid = So3Grid::<f64>::new(3).unwrap();
    let mut r = rng(21);
    let mut params = vec![
        So3Param::isotropic(5.0),
        So3Param::isotropic(10.0),
        So3Param::isotropic(20.0),
    ];
    for _ in 0..3 {
        params.push(random_param(&mut r, 2.0, 10.0));
    }
    for rl in params {
        // Σ_MF(c·A) = Σ_RL(A)/(4c), so c = 1/4 matches the covariances.
        let mf = So3Param::new(rl.a() / 4.0).unwrap();
        let sig_rl = tangent_covariance(So3Kind::RotationLaplace, &rl).unwrap();
        let sig_mf = tangent_covariance(So3Kind::MatrixFisher, &mf).unwrap();
        assert!((sig_rl.matrix() - sig_mf.matrix()).norm() < 1e-9);
        assert!(geodesic_distance(&rl.mode(), &mf.mode()) < 1e-9);

        let d_rl = Density::new(So3Kind::RotationLaplace, rl, &grid);
        let d_mf = Density::new(So3Kind::MatrixFisher, mf, &grid);
        for _ in 0..5 {
            let far = rl.mode() * exp_map(&(unit_vector(&mut r) * (PI - 1e-9)));
            assert!(d_rl.log_prob(&far) > d_mf.log_prob(&far));
        }
    }
}

#[test]
fn rl_and_ql_density_ratios_agree() {
    let mut r = rng(8);
    for _ in 0..20 {
        let param = random_param(&mut r, 0.0, 15.0);
        let ql = ql_from_rl(&param);
        for _ in 0..10 {
            let r1: RotationMatrix<f64> = random_rotation(&mut r);
            let r2: RotationMatrix<f64> = random_rotation(&mut r);
            let rl_ratio = (So3Kind::RotationLaplace.log_unnormalized(&param, &r1)
                - So3Kind::RotationLaplace.log_unnormalized(&param, &r2))
            .exp();
            let ql_ratio = (ql_log_unnormalized(&ql, &rotmat_to_quat(&r1))
                - ql_log_unnormalized(&ql, &rotmat_to_quat(&r2)))
            .exp();
            assert!(
                (rl_ratio / ql_ratio - 1.0).abs() <= 1e-6,
                "{rl_ratio} vs {ql_ratio}"
            );
        }
    }
}

#[test]
fn grid_argmax_lies_next_to_the_mode() {
    let grid = So3Grid::<f64>::new(3).unwrap();
    let s3 = S3Grid::<f64>::new(3).unwrap();
    // cell_radius is half the nearest-neighbour spacing, which understates
    // the covering radius of the Hopf cells; allow one full spacing.
    let radius = 2.0 * grid.cell_radius();
    let mut r = rng(13);
    let mut checked = 0;
    while checked < 8 {
        let param = random_param(&mut r, 0.5, 10.0);
        let [_, s2, s3v] = param.singular_values();
        if s2 + s3v <= 0.5 {
            continue;
        }
        checked += 1;
        for kind in So3Kind::ALL {
            let best = grid
                .points()
                .iter()
                .max_by(|x, y| {
                    kind.log_unnormalized(&param, x)
                        .total_cmp(&kind.log_unnormalized(&param, y))
                })
                .unwrap();
            let d = geodesic_distance(best, &param.mode());
            assert!(d <= radius, "{kind}: {d} > {radius}");
        }
        let ql = ql_from_rl(&param);
        let best = s3
            .points()
            .iter()
            .max_by(|x, y| ql_log_unnormalized(&ql, x).total_cmp(&ql_log_unnormalized(&ql, y)))
            .unwrap();
        assert!(geodesic_distance(&quat_to_rotmat(best), &param.mode()) <= radius);
    }
}

#[test]
fn uniform_parameter_samples_are_haar() {
    let grid = So3Grid::<f64>::new(3).unwrap();
    for kind in So3Kind::ALL {
        let density = Density::new(kind, So3Param::isotropic(0.0), &grid);
        let mut angles: Vec<f64> = density
            .sample(&mut rng(2), 4000)
            .iter()
            .map(|r| r.angle())
            .collect();
        let d = ks_statistic(&mut angles, haar_angle_cdf);
        assert!(d < ks_critical(angles.len()), "{kind}: D = {d}");
    }
}

#[test]
fn sampled_cap_mass_matches_grid_mass() {
    let grid = So3Grid::<f64>::new(3).unwrap();
    let cap = 30f64.to_radians();
    for kind in So3Kind::ALL {
        let density = Density::new(kind, So3Param::isotropic(10.0), &grid);
        let expected: f64 = density
            .cell_masses()
            .iter()
            .zip(grid.points())
            .filter(|(_, p)| p.angle() <= cap)
            .map(|(m, _)| m)
            .sum();
        let n = 10_000;
        let hits = density
            .sample(&mut rng(4), n)
            .iter()
            .filter(|r| r.angle() <= cap)
            .count();
        let got = hits as f64 / n as f64;
        assert!(
            (got - expected).abs() < 0.02,
            "{kind}: sampled {got}, grid {expected}"
        );
    }
}

#[test]
fn tangent_sample_covariance_matches() {
    let mut r = rng(17);
    let u: RotationMatrix<f64> = random_rotation(&mut r);
    let v: RotationMatrix<f64> = random_rotation(&mut r);
    let a = u.matrix()
        * Matrix3::from_diagonal(&Vector3::new(40.0, 30.0, 20.0))
        * v.matrix().transpose();
    let param = So3Param::new(a).unwrap();
    let mode = param.mode();
    let sigma = *tangent_covariance(So3Kind::RotationLaplace, &param)
        .unwrap()
        .matrix();
    let n = 100_000;
    let empirical = tangent_sample(&param, &mode, &mut r, n)
        .unwrap()
        .iter()
        .map(|x| {
            let phi = log_map(&(&mode.transpose() * x));
            phi * phi.transpose()
        })
        .fold(Matrix3::zeros(), |acc, m| acc + m)
        / n as f64;
    // φ is sampled in the body frame at the mode, hence expressed in the V axes.
    let rel = (empirical - sigma).norm() / sigma.norm();
    assert!(rel <= 0.05, "relative deviation {rel}");
}

#[test]
fn entropy_decreases_with_concentration() {
    let grid = So3Grid::<f64>::new(3).unwrap();
    for kind in So3Kind::ALL {
        let h: Vec<f64> = [1.0, 2.0, 5.0, 10.0, 20.0]
            .iter()
            .map(|&s| entropy(kind, &So3Param::isotropic(s), &grid))
            .collect();
        assert!(h.windows(2).all(|w| w[1] < w[0]), "{kind}: {h:?}");
        assert!(entropy(kind, &So3Param::isotropic(0.0), &grid).abs() < 1e-6);
    }
}

#[test]
fn normalization_refines_between_levels() {
    let param = So3Param::isotropic(5.0);
    let g3 = So3Grid::<f64>::new(3).unwrap();
    let g4 = So3Grid::<f64>::new(4).unwrap();
    let rl = (log_normalization(So3Kind::RotationLaplace, &param, &g3)
        - log_normalization(So3Kind::RotationLaplace, &param, &g4))
    .exp();
    assert!((rl - 1.0).abs() <= 0.01, "F3/F4 = {rl}");

    let ql = ql_from_rl(&param);
    let q3 = s3_log_normalization(
        QuatKind::QuaternionLaplace,
        &ql,
        &S3Grid::<f64>::new(3).unwrap(),
    );
    let q4 = s3_log_normalization(
        QuatKind::QuaternionLaplace,
        &ql,
        &S3Grid::<f64>::new(4).unwrap(),
    );
    assert!(((q3 - q4).exp() - 1.0).abs() <= 0.01);
}
