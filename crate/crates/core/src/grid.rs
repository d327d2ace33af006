//! Equivolumetric grids on SO(3) and S³.
//!
//! The SO(3) grid threads `6·2^level` equally spaced Hopf-fibre angles through
//! each of the `12·4^level` HEALPix pixel centers, giving `72·8^level`
//! rotations of equal Haar volume. The S³ grid holds both lifts `±q` of every
//! SO(3) grid rotation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::num::NonZero;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::so3::{RotationMatrix, UnitQuaternion};

/// Highest supported refinement level (`72·8^5 ≈ 2.4M` rotations).
pub const MAX_LEVEL: u32 = 5;

/// Number of rotations in the SO(3) grid at `level`.
pub const fn so3_grid_len(level: u32) -> usize {
    72 * 8usize.pow(level)
}

fn check_level(level: u32) -> Result<()> {
    if level > MAX_LEVEL {
        return Err(Error::InvalidResolution(format!(
            "level {level} outside [0, {MAX_LEVEL}]"
        )));
    }
    Ok(())
}

/// HEALPix pixel centers (RING ordering) as `(colatitude, azimuth)` pairs.
pub fn healpix_centers(nside: usize) -> Result<Vec<(f64, f64)>> {
    if nside == 0 || !nside.is_power_of_two() {
        return Err(Error::InvalidResolution(format!(
            "nside {nside} is not a power of two"
        )));
    }
    let n = nside as f64;
    let npix = 12 * nside * nside;
    let ncap = 2 * nside * (nside - 1);
    let mut out = Vec::with_capacity(npix);
    for p in 0..npix {
        let (z, phi) = if p < ncap {
            // North polar cap: ring i has 4i pixels.
            let i = ((1.0 + ((1 + 2 * p) as f64).sqrt()) / 2.0).floor() as usize;
            let j = p + 1 - 2 * i * (i - 1);
            let fi = i as f64;
            (
                1.0 - fi * fi / (3.0 * n * n),
                PI / (2.0 * fi) * (j as f64 - 0.5),
            )
        } else if p < npix - ncap {
            let ip = p - ncap;
            let i = ip / (4 * nside) + nside;
            let j = ip % (4 * nside) + 1;
            let shift = if (i + nside) % 2 == 1 { 1.0 } else { 0.5 };
            (
                4.0 / 3.0 - 2.0 * i as f64 / (3.0 * n),
                PI / (2.0 * n) * (j as f64 - shift),
            )
        } else {
            let ip = npix - p;
            let i = ((1.0 + ((2 * ip - 1) as f64).sqrt()) / 2.0).floor() as usize;
            let j = 4 * i + 1 - (ip - 2 * i * (i - 1));
            let fi = i as f64;
            (
                -1.0 + fi * fi / (3.0 * n * n),
                PI / (2.0 * fi) * (j as f64 - 0.5),
            )
        };
        out.push((z.clamp(-1.0, 1.0).acos(), phi));
    }
    Ok(out)
}

/// HEALPix pixel centers as unit vectors; `12·nside²` equal-area pixels.
pub fn healpix_sphere_grid(nside: usize) -> Result<Vec<Vector3<f64>>> {
    Ok(healpix_centers(nside)?
        .into_iter()
        .map(|(theta, phi)| {
            Vector3::new(
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            )
        })
        .collect())
}

/// Hopf coordinates to a unit quaternion: `θ, φ` locate the base point on S²,
/// `ψ` the position along its fibre.
pub fn hopf_quaternion(theta: f64, phi: f64, psi: f64) -> [f64; 4] {
    let (ct, st) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    [
        ct * (psi / 2.0).cos(),
        ct * (psi / 2.0).sin(),
        st * (phi + psi / 2.0).cos(),
        st * (phi + psi / 2.0).sin(),
    ]
}

fn hopf_quaternions(level: u32) -> Result<Vec<[f64; 4]>> {
    check_level(level)?;
    let nside = 1usize << level;
    let centers = healpix_centers(nside)?;
    let n_psi = 6 * nside;
    let mut out = Vec::with_capacity(centers.len() * n_psi);
    for &(theta, phi) in &centers {
        for k in 0..n_psi {
            let psi = 2.0 * PI * (k as f64 + 0.5) / n_psi as f64;
            out.push(hopf_quaternion(theta, phi, psi));
        }
    }
    Ok(out)
}

fn quat_to_matrix_f64(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Largest nearest-neighbour half-distance (radians) over a set of rotations
/// given as quaternions. Both lifts are indexed so chord distance in R⁴ tracks
/// geodesic distance `2·acos|q·q'|`.
fn max_nn_half_distance(quats: &[[f64; 4]]) -> f64 {
    if quats.len() < 2 {
        return PI;
    }
    let mut pts = Vec::with_capacity(2 * quats.len());
    pts.extend_from_slice(quats);
    pts.extend(quats.iter().map(|q| q.map(|x| -x)));
    let tree: ImmutableKdTree<f64, u32, 4, 32> = ImmutableKdTree::new_from_slice(&pts);
    let two = NonZero::new(2).unwrap();
    let mut worst = 0.0f64;
    for q in quats {
        // The closest hit is the point itself.
        let nn = tree.nearest_n::<SquaredEuclidean>(q, two);
        let chord = nn.iter().map(|n| n.distance).fold(0.0, f64::max).sqrt();
        // |q − q'| = 2 sin(d/4) with d the rotation distance.
        let d = 4.0 * (chord / 2.0).min(1.0).asin();
        worst = worst.max(d / 2.0);
    }
    worst
}

/// Equivolumetric grid on SO(3) with uniform Haar weight `1/|G|` per point.
#[derive(Debug)]
pub struct So3Grid<T: Real> {
    level: u32,
    points: Vec<RotationMatrix<T>>,
    cell_radius: OnceLock<f64>,
}

impl<T: Real> So3Grid<T> {
    /// Builds the Hopf grid at `level ∈ [0, 5]`.
    pub fn new(level: u32) -> Result<Self> {
        let quats = hopf_quaternions(level)?;
        let points = quats
            .iter()
            .map(|q| RotationMatrix::new_unchecked(quat_to_matrix_f64(q).map(T::lit)))
            .collect();
        Ok(Self {
            level,
            points,
            cell_radius: OnceLock::new(),
        })
    }

    /// Wraps an explicit point set (e.g. read back from a cache file).
    pub fn from_points(level: u32, points: Vec<RotationMatrix<T>>) -> Result<Self> {
        check_level(level)?;
        if points.len() != so3_grid_len(level) {
            return Err(Error::InvalidResolution(format!(
                "level {level} grid must hold {} rotations, got {}",
                so3_grid_len(level),
                points.len()
            )));
        }
        Ok(Self {
            level,
            points,
            cell_radius: OnceLock::new(),
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[RotationMatrix<T>] {
        &self.points
    }

    /// Haar weight ΔR of every cell.
    pub fn delta(&self) -> T {
        T::one() / T::lit(self.points.len() as f64)
    }

    /// Max over grid points of half the distance to the nearest other point, radians.
    pub fn cell_radius(&self) -> f64 {
        *self.cell_radius.get_or_init(|| {
            let quats: Vec<[f64; 4]> = self
                .points
                .iter()
                .map(|r| {
                    let q = r.to_quaternion();
                    [q.w, q.x, q.y, q.z].map(|x| x.to_f64_lossy())
                })
                .collect();
            max_nn_half_distance(&quats)
        })
    }
}

/// Equivolumetric grid on S³: both lifts of every SO(3) grid rotation, each
/// weighted `Δq = 2π²/|G_q|`.
#[derive(Debug, Clone)]
pub struct S3Grid<T: Real> {
    level: u32,
    points: Vec<UnitQuaternion<T>>,
}

impl<T: Real> S3Grid<T> {
    pub fn new(level: u32) -> Result<Self> {
        let quats = hopf_quaternions(level)?;
        let mut points = Vec::with_capacity(2 * quats.len());
        for q in &quats {
            let q = q.map(T::lit);
            points.push(UnitQuaternion::new_unchecked(q[0], q[1], q[2], q[3]));
        }
        let neg: Vec<_> = points.iter().map(|q| q.neg()).collect();
        points.extend(neg);
        Ok(Self { level, points })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[UnitQuaternion<T>] {
        &self.points
    }

    /// Surface weight Δq of every cell; the weights sum to 2π².
    pub fn delta(&self) -> T {
        T::lit(2.0 * PI * PI) / T::lit(self.points.len() as f64)
    }
}

type GridCache = Mutex<HashMap<u32, Arc<So3Grid<f64>>>>;

fn cache() -> &'static GridCache {
    static CACHE: OnceLock<GridCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Process-wide shared `f64` grid for `level`, built on first use.
pub fn cached_grid(level: u32) -> Result<Arc<So3Grid<f64>>> {
    check_level(level)?;
    if let Some(g) = cache().lock().unwrap().get(&level) {
        return Ok(Arc::clone(g));
    }
    // Build outside the lock; a concurrent builder for the same level just loses the race.
    let grid = Arc::new(So3Grid::new(level)?);
    let mut guard = cache().lock().unwrap();
    Ok(Arc::clone(guard.entry(level).or_insert(grid)))
}

/// Like [`cached_grid`], additionally persisting grids as binary files in `dir`.
pub fn cached_grid_in(level: u32, dir: Option<&Path>) -> Result<Arc<So3Grid<f64>>> {
    let Some(dir) = dir else {
        return cached_grid(level);
    };
    check_level(level)?;
    if let Some(g) = cache().lock().unwrap().get(&level) {
        return Ok(Arc::clone(g));
    }
    let path = dir.join(format!("so3grid_level{level}.bin"));
    let grid = match read_grid_bin(&path) {
        Ok(g) if g.level() == level => g,
        _ => {
            let g = So3Grid::new(level)?;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_grid_bin(&g, &path)?;
            g
        }
    };
    let mut guard = cache().lock().unwrap();
    Ok(Arc::clone(guard.entry(level).or_insert(Arc::new(grid))))
}

/// Magic bytes opening a binary grid file.
pub const GRID_MAGIC: &[u8; 9] = b"SO3GRIDv1";

/// Writes `SO3GRIDv1`, u32 level, u64 count, then count×9 f64 row-major, all little-endian.
pub fn write_grid_bin(grid: &So3Grid<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(GRID_MAGIC)?;
    write(&grid.level().to_le_bytes())?;
    write(&(grid.len() as u64).to_le_bytes())?;
    for r in grid.points() {
        let m = r.matrix();
        for i in 0..3 {
            for j in 0..3 {
                write(&m[(i, j)].to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_grid_bin(path: impl AsRef<Path>) -> Result<So3Grid<f64>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::parse(PathBuf::from(path), 1, msg.to_string());
    if bytes.len() < 21 || &bytes[..9] != GRID_MAGIC {
        return Err(bad("missing SO3GRIDv1 header"));
    }
    let level = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let body = &bytes[21..];
    if body.len() != count * 72 {
        return Err(bad("payload length does not match rotation count"));
    }
    let points = body
        .chunks_exact(72)
        .map(|chunk| {
            let v: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            RotationMatrix::new_unchecked(Matrix3::from_row_slice(&v))
        })
        .collect();
    So3Grid::from_points(level, points)
}
