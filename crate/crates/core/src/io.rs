//! File formats: rotation CSV tables and parameter JSON.
//!
//! A rotation table is a comma-separated file whose first header cell names
//! the layout, `id:rotmat9` or `id:quat_wxyz`:
//!
//! ```text
//! id:rotmat9,r00,r01,r02,r10,r11,r12,r20,r21,r22[,outlier][,label_r00,...,label_r22]
//! id:quat_wxyz,w,x,y,z[,outlier][,label_w,label_x,label_y,label_z]
//! ```
//!
//! `outlier` is `0` or `1`; the `label_*` columns hold a reference rotation
//! used to report errors. Parsed matrices must be orthonormal to within 1e-6
//! and are then projected onto SO(3); quaternions must have unit norm to
//! within 1e-6 and are renormalized.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::distributions::{quat_param_from_a, QuatParam, So3Param};
use crate::error::{Error, Result};
use crate::so3::{quat_to_rotmat, rotmat_to_quat, RotationMatrix, UnitQuaternion};

/// Tolerance for accepting parsed rotations and quaternions.
pub const INPUT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationFormat {
    #[default]
    RotMat9,
    QuatWxyz,
}

impl RotationFormat {
    pub fn name(self) -> &'static str {
        match self {
            RotationFormat::RotMat9 => "rotmat9",
            RotationFormat::QuatWxyz => "quat_wxyz",
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            RotationFormat::RotMat9 => &[
                "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
            ],
            RotationFormat::QuatWxyz => &["w", "x", "y", "z"],
        }
    }

    fn encode(self, r: &RotationMatrix<f64>) -> Vec<f64> {
        match self {
            RotationFormat::RotMat9 => {
                let m = r.matrix();
                (0..9).map(|k| m[(k / 3, k % 3)]).collect()
            }
            RotationFormat::QuatWxyz => rotmat_to_quat(r).coords().iter().copied().collect(),
        }
    }

    fn decode(self, v: &[f64]) -> Result<RotationMatrix<f64>> {
        match self {
            RotationFormat::RotMat9 => {
                RotationMatrix::from_approx(Matrix3::from_fn(|i, j| v[3 * i + j]), INPUT_TOL)
            }
            RotationFormat::QuatWxyz => {
                let n2 = v.iter().map(|x| x * x).sum::<f64>();
                if !((n2.sqrt() - 1.0).abs() <= INPUT_TOL) {
                    return Err(Error::InvalidQuaternion { norm_sq: n2 });
                }
                Ok(quat_to_rotmat(&UnitQuaternion::normalize(
                    v[0], v[1], v[2], v[3],
                )?))
            }
        }
    }
}

impl fmt::Display for RotationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotmat9" => Ok(RotationFormat::RotMat9),
            "quat_wxyz" => Ok(RotationFormat::QuatWxyz),
            other => Err(Error::InvalidConfig(format!(
                "unknown rotation format '{other}' (expected rotmat9 or quat_wxyz)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationRecord {
    pub id: String,
    pub rotation: RotationMatrix<f64>,
    pub outlier: Option<bool>,
    pub label: Option<RotationMatrix<f64>>,
}

impl RotationRecord {
    pub fn new(id: impl Into<String>, rotation: RotationMatrix<f64>) -> Self {
        Self {
            id: id.into(),
            rotation,
            outlier: None,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RotationTable {
    pub format: RotationFormat,
    pub records: Vec<RotationRecord>,
}

impl RotationTable {
    pub fn rotations(&self) -> Vec<RotationMatrix<f64>> {
        self.records.iter().map(|r| r.rotation).collect()
    }

    /// The label shared by every row, if all rows carry the same one.
    pub fn common_label(&self) -> Option<RotationMatrix<f64>> {
        let first = self.records.first()?.label?;
        self.records
            .iter()
            .all(|r| r.label == Some(first))
            .then_some(first)
    }
}

/// Writes a table. The `outlier` and label columns are emitted when the
/// first record has them; every record must then have them too.
pub fn write_rotations<W: Write>(writer: W, table: &RotationTable) -> Result<()> {
    let fmt = table.format;
    let with_outlier = table.records.first().is_some_and(|r| r.outlier.is_some());
    let with_label = table.records.first().is_some_and(|r| r.label.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![format!("id:{}", fmt.name())];
    header.extend(fmt.columns().iter().map(|c| c.to_string()));
    if with_outlier {
        header.push("outlier".into());
    }
    if with_label {
        header.extend(fmt.columns().iter().map(|c| format!("label_{c}")));
    }
    w.write_record(&header).map_err(csv_write_error)?;
    for rec in &table.records {
        let mut row = vec![rec.id.clone()];
        row.extend(fmt.encode(&rec.rotation).iter().map(|x| x.to_string()));
        if with_outlier {
            let o = rec.outlier.ok_or_else(|| {
                Error::InvalidParam(format!("record '{}' lacks an outlier flag", rec.id))
            })?;
            row.push(if o { "1" } else { "0" }.into());
        }
        if with_label {
            let l = rec
                .label
                .ok_or_else(|| Error::InvalidParam(format!("record '{}' lacks a label", rec.id)))?;
            row.extend(fmt.encode(&l).iter().map(|x| x.to_string()));
        }
        w.write_record(&row).map_err(csv_write_error)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn csv_write_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::InvalidParam(format!("csv: {other:?}")),
    }
}

pub fn write_rotations_file(path: impl AsRef<Path>, table: &RotationTable) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rotations(BufWriter::new(file), table).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Column layout derived from a header row.
struct Layout {
    format: RotationFormat,
    outlier: Option<usize>,
    label: Option<usize>,
}

fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<Layout> {
    let first = header.get(0).unwrap_or("").trim();
    let fmt_name = first.strip_prefix("id:").ok_or_else(|| {
        Error::parse(
            path,
            1,
            format!("first header cell must be 'id:<format>', got '{first}'"),
        )
    })?;
    let format: RotationFormat = fmt_name
        .parse()
        .map_err(|e: Error| Error::parse(path, 1, e.to_string()))?;
    let cols = format.columns();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 1 + cols.len() || names[1..=cols.len()] != *cols {
        return Err(Error::parse(
            path,
            1,
            format!("expected columns {} after the id column", cols.join(",")),
        ));
    }
    let mut next = 1 + cols.len();
    let mut outlier = None;
    if names.get(next) == Some(&"outlier") {
        outlier = Some(next);
        next += 1;
    }
    let mut label = None;
    if names.len() > next {
        let want: Vec<String> = cols.iter().map(|c| format!("label_{c}")).collect();
        if names.len() != next + cols.len() || names[next..] != want[..] {
            return Err(Error::parse(
                path,
                1,
                format!("unexpected trailing columns {:?}", &names[next..]),
            ));
        }
        label = Some(next);
    }
    Ok(Layout {
        format,
        outlier,
        label,
    })
}

fn parse_floats(
    path: &Path,
    line: usize,
    rec: &csv::StringRecord,
    start: usize,
    n: usize,
) -> Result<Vec<f64>> {
    (start..start + n)
        .map(|k| {
            let cell = rec.get(k).unwrap_or("").trim();
            cell.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    Error::parse(
                        path,
                        line,
                        format!("column {}: '{cell}' is not a finite number", k + 1),
                    )
                })
        })
        .collect()
}

/// Reads a table; `path` is used only in error messages.
pub fn read_rotations<R: Read>(reader: R, path: &Path) -> Result<RotationTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        None => return Err(Error::parse(path, 1, "missing header row")),
        Some(r) => r.map_err(|e| csv_read_error(path, e))?,
    };
    let layout = parse_header(path, &header)?;
    let width = header.len();
    let n = layout.format.columns().len();
    let mut records = Vec::new();
    for row in rows {
        let rec = row.map_err(|e| csv_read_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(Error::parse(
                path,
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let at = |e: Error| Error::parse(path, line, e.to_string());
        let rotation = layout
            .format
            .decode(&parse_floats(path, line, &rec, 1, n)?)
            .map_err(at)?;
        let outlier = match layout.outlier {
            None => None,
            Some(k) => Some(match rec.get(k).map(str::trim) {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                other => {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("outlier flag must be 0 or 1, got '{}'", other.unwrap_or("")),
                    ))
                }
            }),
        };
        let label = match layout.label {
            None => None,
            Some(k) => Some(
                layout
                    .format
                    .decode(&parse_floats(path, line, &rec, k, n)?)
                    .map_err(at)?,
            ),
        };
        records.push(RotationRecord {
            id: rec.get(0).unwrap_or("").trim().to_string(),
            rotation,
            outlier,
            label,
        });
    }
    Ok(RotationTable {
        format: layout.format,
        records,
    })
}

fn csv_read_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::Utf8 { err, .. } => {
            Error::parse(path, line, format!("invalid UTF-8: {err}"))
        }
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

pub fn read_rotations_file(path: impl AsRef<Path>) -> Result<RotationTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rotations(BufReader::new(file), path)
}

/// Contents of a parameter file: either `{"a": 3×3}` or `{"m": 4×4, "z": [4]}`,
/// matrices row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ParamFile {
    So3 { a: [[f64; 3]; 3] },
    Quat { m: [[f64; 4]; 4], z: [f64; 4] },
}

impl ParamFile {
    pub fn from_so3(param: &So3Param<f64>) -> Self {
        let a = param.a();
        ParamFile::So3 {
            a: std::array::from_fn(|i| std::array::from_fn(|j| a[(i, j)])),
        }
    }

    pub fn so3_param(&self) -> Result<So3Param<f64>> {
        match self {
            ParamFile::So3 { a } => So3Param::new(Matrix3::from_fn(|i, j| a[i][j])),
            ParamFile::Quat { .. } => Err(Error::InvalidParam(
                "SO(3) densities need an 'a' matrix, not (m, z)".into(),
            )),
        }
    }

    /// `(M, Z)` as given, or derived from `A`.
    pub fn quat_param(&self) -> Result<QuatParam<f64>> {
        match self {
            ParamFile::So3 { .. } => Ok(quat_param_from_a(&self.so3_param()?)),
            ParamFile::Quat { m, z } => {
                QuatParam::new(Matrix4::from_fn(|i, j| m[i][j]), Vector4::from(*z))
            }
        }
    }
}

pub fn parse_param(text: &str, path: &Path) -> Result<ParamFile> {
    serde_json::from_str(text).map_err(|e| {
        Error::parse(
            path,
            e.line().max(1),
            format!("{e}; expected {{\"a\": 3x3}} or {{\"m\": 4x4, \"z\": [4 numbers]}}"),
        )
    })
}

pub fn read_param_file(path: impl AsRef<Path>) -> Result<ParamFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_param(&text, path)
}
