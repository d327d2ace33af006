//! `rotlap`: grids, densities, synthetic data, fitting and robustness analyses
//! for rotation distributions.
//!
//! Exit codes: 0 on success, 2 for bad input or configuration, 3 for
//! numerical failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rotlaplace::distributions::{entropy, s3_log_normalization, Density, QuatKind, So3Kind};
use rotlaplace::experiments::{
    self, bin_profile, compare, entropy_vs_error, fit_config, mode_error_deg, synth,
    tail_share_ratio, with_jobs, ExperimentConfig, PROFILE_BIN_DEG,
};
use rotlaplace::fit::{
    fit_mle_lenient_on_grid, gradient_magnitude_profile, FitConfig, Init, ParamSource, StopReason,
};
use rotlaplace::grid::{cached_grid_in, write_grid_bin, S3Grid, So3Grid};
use rotlaplace::io::{
    read_param_file, read_rotations_file, write_rotations, write_rotations_file, RotationFormat,
    RotationRecord, RotationTable,
};
use rotlaplace::so3::{canonical_hemisphere, geodesic_distance, rotmat_to_quat};
use rotlaplace::{Error, Result};

/// Directory of the on-disk grid cache; unset means memory-only caching.
const GRID_CACHE_ENV: &str = "SO3_GRID_CACHE";
const DEFAULT_LEVEL: u32 = 3;

#[derive(Parser)]
#[command(
    name = "rotlap",
    version,
    about = "Rotation Laplace and matrix Fisher distributions on SO(3)"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Grid level; the SO(3) grid has 72·8^level points [default: 3].
    #[arg(long, global = true)]
    level: Option<u32>,
    /// Random seed (first seed of multi-trial commands).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for multi-trial commands.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output path; stdout when omitted (required for binary output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the equivolumetric SO(3) grid of a level.
    Grid {
        #[arg(long, value_enum, default_value_t = GridFormat::Bin)]
        format: GridFormat,
    },
    /// Evaluate a density at query rotations.
    Density(DensityArgs),
    /// Generate a synthetic dataset with outlier injection.
    Synth(SynthArgs),
    /// Maximum-likelihood fit to a dataset.
    Fit(FitArgs),
    /// Rotation Laplace vs matrix Fisher mode errors across outlier fractions.
    Compare(CompareArgs),
    /// Per-observation NLL gradient magnitudes against prediction error.
    Gradprofile(GradprofileArgs),
    /// Entropy of fitted distributions against their mode error.
    Entropy(EntropyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GridFormat {
    Bin,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnyDist {
    Rl,
    Mf,
    Ql,
    Bingham,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Rl,
    Mf,
}

impl From<Dist> for So3Kind {
    fn from(d: Dist) -> Self {
        match d {
            Dist::Rl => So3Kind::RotationLaplace,
            Dist::Mf => So3Kind::MatrixFisher,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Rotmat9,
    QuatWxyz,
}

impl From<Format> for RotationFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Rotmat9 => RotationFormat::RotMat9,
            Format::QuatWxyz => RotationFormat::QuatWxyz,
        }
    }
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long, value_enum)]
    dist: AnyDist,
    /// JSON parameter file: {"a": 3x3} or {"m": 4x4, "z": [4]}.
    #[arg(long)]
    param: PathBuf,
    /// Rotation CSV of query points.
    #[arg(long)]
    queries: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observations per dataset.
    #[arg(long)]
    n: Option<usize>,
    /// Inlier concentration.
    #[arg(long)]
    s: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Fraction of rows replaced by Haar-random rotations.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Rotmat9)]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    /// Rotation CSV; label columns, when present, give the ground truth.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    dist: Option<Dist>,
    /// JSON fit configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Parameter file giving A₀ for `--init explicit`.
    #[arg(long)]
    init_param: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Zero,
    Spread,
    Explicit,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated outlier fractions.
    #[arg(long, value_delimiter = ',', default_values_t = experiments::OUTLIER_FRACTIONS.to_vec())]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, value_enum, value_delimiter = ',')]
    dists: Option<Vec<Dist>>,
    /// Also write every trial to this CSV.
    #[arg(long)]
    trials_out: Option<PathBuf>,
}

#[derive(Args)]
struct GradprofileArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    dist: Dist,
    /// Shared parameter file; the parameter is fitted to the data when omitted.
    #[arg(long)]
    param: Option<PathBuf>,
    /// Binned histogram CSV (2° bins).
    #[arg(long)]
    hist: Option<PathBuf>,
}

#[derive(Args)]
struct EntropyArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated concentration groups of synthetic clean datasets.
    #[arg(long, value_delimiter = ',', conflicts_with = "data")]
    concentrations: Option<Vec<f64>>,
    #[arg(long, default_value_t = 25)]
    trials: usize,
    #[arg(long, value_enum, value_delimiter = ',')]
    dists: Option<Vec<Dist>>,
    /// Dataset files, one group each, instead of synthetic groups.
    #[arg(long)]
    data: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match cli.command {
        Command::Grid { format } => cmd_grid(c, format),
        Command::Density(a) => cmd_density(c, &a),
        Command::Synth(a) => cmd_synth(c, &a),
        Command::Fit(a) => cmd_fit(c, &a),
        Command::Compare(a) => cmd_compare(c, &a),
        Command::Gradprofile(a) => cmd_gradprofile(c, &a),
        Command::Entropy(a) => cmd_entropy(c, &a),
    }
}

impl Common {
    fn level(&self) -> u32 {
        self.level.unwrap_or(DEFAULT_LEVEL)
    }
}

fn so3_grid(level: u32) -> Result<Arc<So3Grid<f64>>> {
    let dir = std::env::var_os(GRID_CACHE_ENV).map(PathBuf::from);
    cached_grid_in(level, dir.as_deref())
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn out_name(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"))
}

fn write_csv<S: Serialize>(out: &Option<PathBuf>, rows: &[S]) -> Result<()> {
    write_csv_to(output(out)?, &out_name(out), rows)
}

fn write_csv_file<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(BufWriter::new(file), path, rows)
}

fn write_csv_to<S: Serialize>(w: impl Write, name: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(name, e))?;
    }
    w.flush().map_err(|e| Error::io(name, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidParam(format!("{}: {other:?}", path.display())),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line().max(1), e.to_string()))
}

fn experiment_config(c: &Common, a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if a.config.is_none() || c.level.is_some() {
        cfg.level = c.level();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(s) = a.s {
        cfg.s = s;
    }
    Ok(cfg)
}

fn kinds(dists: &Option<Vec<Dist>>, default: &[So3Kind]) -> Vec<So3Kind> {
    match dists {
        Some(d) => d.iter().map(|&d| d.into()).collect(),
        None => default.to_vec(),
    }
}

fn cmd_grid(c: &Common, format: GridFormat) -> Result<ExitCode> {
    let grid = So3Grid::<f64>::new(c.level())?;
    match format {
        GridFormat::Bin => {
            let path = c
                .out
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("binary grid output needs --out".into()))?;
            write_grid_bin(&grid, path)?;
        }
        GridFormat::Csv => {
            let table = RotationTable {
                format: RotationFormat::RotMat9,
                records: grid
                    .points()
                    .iter()
                    .enumerate()
                    .map(|(i, r)| RotationRecord::new(i.to_string(), *r))
                    .collect(),
            };
            match &c.out {
                Some(p) => write_rotations_file(p, &table)?,
                None => write_rotations(io::stdout().lock(), &table)?,
            }
        }
    }
    eprintln!("wrote {} rotations (level {})", grid.len(), c.level());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DensityRow<'a> {
    id: &'a str,
    log_prob: f64,
    prob: f64,
}

fn cmd_density(c: &Common, a: &DensityArgs) -> Result<ExitCode> {
    let param = read_param_file(&a.param)?;
    let queries = read_rotations_file(&a.queries)?;
    let log_probs: Vec<f64> = match a.dist {
        AnyDist::Rl | AnyDist::Mf => {
            let kind = if a.dist == AnyDist::Rl {
                So3Kind::RotationLaplace
            } else {
                So3Kind::MatrixFisher
            };
            let grid = so3_grid(c.level())?;
            let density = Density::new(kind, param.so3_param()?, &grid);
            queries
                .records
                .iter()
                .map(|r| density.log_prob(&r.rotation))
                .collect()
        }
        AnyDist::Ql | AnyDist::Bingham => {
            let kind = if a.dist == AnyDist::Ql {
                QuatKind::QuaternionLaplace
            } else {
                QuatKind::Bingham
            };
            let qp = param.quat_param()?;
            let grid = S3Grid::<f64>::new(c.level())?;
            let log_f = s3_log_normalization(kind, &qp, &grid);
            queries
                .records
                .iter()
                .map(|r| kind.log_unnormalized(&qp, &rotmat_to_quat(&r.rotation)) - log_f)
                .collect()
        }
    };
    let rows: Vec<DensityRow> = queries
        .records
        .iter()
        .zip(&log_probs)
        .map(|(r, &lp)| DensityRow {
            id: &r.id,
            log_prob: lp,
            prob: lp.exp(),
        })
        .collect();
    write_csv(&c.out, &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(c: &Common, a: &SynthArgs) -> Result<ExitCode> {
    let mut cfg = experiment_config(c, &a.exp)?;
    if let Some(f) = a.fraction {
        cfg.outlier_fraction = f;
    }
    let data = synth(&cfg)?;
    let table = data.to_table(a.format.into());
    match &c.out {
        Some(p) => write_rotations_file(p, &table)?,
        None => write_rotations(io::stdout().lock(), &table)?,
    }
    eprintln!(
        "wrote {} rows ({} outliers), seed {}",
        data.len(),
        data.outlier_count(),
        cfg.seed
    );
    Ok(ExitCode::SUCCESS)
}

fn fit_settings(c: &Common, a: &FitArgs) -> Result<FitConfig> {
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if a.config.is_none() || c.level.is_some() {
        cfg.level = c.level();
    }
    if let Some(d) = a.dist {
        cfg.kind = d.into();
    }
    if let Some(s) = a.step {
        cfg.step = s;
    }
    if let Some(m) = a.max_iters {
        cfg.max_iters = m;
    }
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    match a.init {
        None => {}
        Some(InitArg::Zero) => cfg.init = Init::Zero,
        Some(InitArg::Spread) => cfg.init = Init::SpreadMatched,
        Some(InitArg::Explicit) => {
            let p = a
                .init_param
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("--init explicit needs --init-param".into()))?;
            let param = read_param_file(p)?.so3_param()?;
            let m = param.a();
            cfg.init = Init::Explicit(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    report: &'a rotlaplace::fit::FitReport,
    mode_wxyz: [f64; 4],
    error_deg: Option<f64>,
    entropy: f64,
}

fn cmd_fit(c: &Common, a: &FitArgs) -> Result<ExitCode> {
    let cfg = fit_settings(c, a)?;
    let table = read_rotations_file(&a.data)?;
    if table.records.is_empty() {
        return Err(Error::InvalidParam(format!(
            "{}: dataset is empty",
            a.data.display()
        )));
    }
    let grid = so3_grid(cfg.level)?;
    let report = fit_mle_lenient_on_grid(&table.rotations(), &cfg, &grid)?;
    let mode = report.mode_rotation();
    let q = canonical_hemisphere(rotmat_to_quat(&mode));
    let summary = FitOutput {
        report: &report,
        mode_wxyz: [q.w, q.x, q.y, q.z],
        error_deg: table
            .common_label()
            .map(|truth| mode_error_deg(&report, &truth)),
        entropy: entropy(cfg.kind, &report.param(), &grid),
    };
    let mut w = output(&c.out)?;
    serde_json::to_writer_pretty(&mut w, &summary)
        .map_err(|e| Error::io(out_name(&c.out), e.into()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(out_name(&c.out), e))?;
    eprintln!(
        "{} mode_wxyz=[{:.6}, {:.6}, {:.6}, {:.6}] error_deg={} nll={:.6} entropy={:.6} iterations={} stop={:?}",
        cfg.kind,
        q.w,
        q.x,
        q.y,
        q.z,
        summary.error_deg.map_or("n/a".to_string(), |e| format!("{e:.4}")),
        report.final_nll(),
        summary.entropy,
        report.iterations,
        report.stop,
    );
    if report.stop == StopReason::NoProgress {
        let err = Error::NoProgress {
            iterations: report.iterations,
            min_step: rotlaplace::fit::MIN_STEP,
        };
        eprintln!("error: {err}");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CompareCsvRow {
    fraction: f64,
    dist: So3Kind,
    median_error_deg: f64,
    mean_error_deg: f64,
    rl_win_rate: Option<f64>,
}

fn cmd_compare(c: &Common, a: &CompareArgs) -> Result<ExitCode> {
    let mut cfg = experiment_config(c, &a.exp)?;
    cfg.kinds = kinds(&a.dists, &cfg.kinds);
    let result = compare(&cfg, &a.fractions, a.trials, c.jobs)?;
    let rows: Vec<CompareCsvRow> = result
        .rows
        .iter()
        .map(|r| CompareCsvRow {
            fraction: r.fraction,
            dist: r.dist,
            median_error_deg: r.median_error_deg,
            mean_error_deg: r.mean_error_deg,
            rl_win_rate: r.rl_win_rate,
        })
        .collect();
    write_csv(&c.out, &rows)?;
    if let Some(p) = &a.trials_out {
        write_csv_file(p, &result.trials)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ProfileRow<'a> {
    id: &'a str,
    error_deg: f64,
    grad_norm: f64,
}

fn cmd_gradprofile(c: &Common, a: &GradprofileArgs) -> Result<ExitCode> {
    let kind: So3Kind = a.dist.into();
    let table = read_rotations_file(&a.data)?;
    if table.records.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "{}: need at least 2 observations",
            a.data.display()
        )));
    }
    let grid = so3_grid(c.level())?;
    let obs = table.rotations();
    let param = match &a.param {
        Some(p) => read_param_file(p)?.so3_param()?,
        None => fit_mle_lenient_on_grid(&obs, &fit_config(kind, c.level()), &grid)?.param(),
    };
    let profile = gradient_magnitude_profile(kind, ParamSource::Shared(&param), &obs, &grid)?;
    let rows: Vec<ProfileRow> = table
        .records
        .iter()
        .zip(&profile)
        .map(|(r, &(e, g))| ProfileRow {
            id: &r.id,
            error_deg: e,
            grad_norm: g,
        })
        .collect();
    write_csv(&c.out, &rows)?;
    if let Some(h) = &a.hist {
        write_csv_file(h, &bin_profile(&profile, PROFILE_BIN_DEG))?;
    }
    match tail_share_ratio(&profile, 170.0) {
        Some(r) => eprintln!("{kind}: gradient share / population share at >= 170 deg: {r:.3}"),
        None => eprintln!("{kind}: no observations at >= 170 deg"),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EntropyCsvRow {
    group: String,
    s: Option<f64>,
    seed: Option<u64>,
    dist: So3Kind,
    entropy: f64,
    error_deg: Option<f64>,
}

fn cmd_entropy(c: &Common, a: &EntropyArgs) -> Result<ExitCode> {
    let mut cfg = experiment_config(c, &a.exp)?;
    cfg.kinds = kinds(&a.dists, &cfg.kinds);
    let rows: Vec<EntropyCsvRow> = if !a.data.is_empty() {
        let grid = so3_grid(cfg.level)?;
        let mut rows = Vec::new();
        for path in &a.data {
            let table = read_rotations_file(path)?;
            let obs = table.rotations();
            for &kind in &cfg.kinds {
                let report = with_jobs(c.jobs, || {
                    fit_mle_lenient_on_grid(&obs, &fit_config(kind, cfg.level), &grid)
                })??;
                rows.push(EntropyCsvRow {
                    group: path.display().to_string(),
                    s: None,
                    seed: None,
                    dist: kind,
                    entropy: entropy(kind, &report.param(), &grid),
                    error_deg: table
                        .common_label()
                        .map(|t| geodesic_distance(&report.mode_rotation(), &t).to_degrees()),
                });
            }
        }
        rows
    } else {
        let groups = a.concentrations.clone().unwrap_or_else(|| vec![2.0, 20.0]);
        entropy_vs_error(&cfg, &groups, a.trials, c.jobs)?
            .into_iter()
            .map(|r| EntropyCsvRow {
                group: format!("s={}", r.s),
                s: Some(r.s),
                seed: Some(r.seed),
                dist: r.dist,
                entropy: r.entropy,
                error_deg: Some(r.error_deg),
            })
            .collect()
    };
    write_csv(&c.out, &rows)?;
    summarize_entropy(&rows, &cfg.kinds);
    Ok(ExitCode::SUCCESS)
}

/// Pairs the lowest- and highest-concentration groups seed by seed.
fn summarize_entropy(rows: &[EntropyCsvRow], kinds: &[So3Kind]) {
    let mut groups: Vec<f64> = rows.iter().filter_map(|r| r.s).collect();
    groups.sort_by(f64::total_cmp);
    groups.dedup();
    let (Some(&lo), Some(&hi)) = (groups.first(), groups.last()) else {
        return;
    };
    if lo == hi {
        return;
    }
    for &kind in kinds {
        let pick = |s: f64| -> Vec<&EntropyCsvRow> {
            rows.iter()
                .filter(|r| r.dist == kind && r.s == Some(s))
                .collect()
        };
        let (a, b) = (pick(lo), pick(hi));
        let n = a.len().min(b.len());
        if n == 0 {
            continue;
        }
        let lower_entropy = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| y.entropy < x.entropy)
            .count();
        let lower_error = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| y.error_deg <= x.error_deg)
            .count();
        eprintln!(
            "{kind}: s={hi} vs s={lo}: lower entropy in {lower_entropy}/{n}, error no larger in {lower_error}/{n}"
        );
    }
}
