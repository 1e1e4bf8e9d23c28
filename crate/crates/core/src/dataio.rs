//! CSV ingestion, standardization and synthetic fixtures.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::matcore::DenseMatrix;

/// Standard deviation of the additive noise in synthetic responses.
pub const SYNTH_NOISE_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: Option<DenseMatrix>,
    pub name: String,
    pub provenance: String,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: Option<DenseMatrix>, name: impl Into<String>) -> Result<Self> {
        if let Some(y) = &y {
            if y.rows() != x.rows() {
                return Err(shape_err(
                    "dataset response",
                    format!("{} rows", x.rows()),
                    format!("{} rows", y.rows()),
                ));
            }
        }
        Ok(Self { x, y, name: name.into(), provenance: String::new() })
    }
}

/// Which column holds the response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResponseColumn {
    Index(usize),
    /// Header name; requires `has_header`.
    Name(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StandardizeTarget {
    Columns,
    Response,
    Both,
}

/// Reads a dense numeric CSV. Parse errors report 0-based body row and
/// column indices.
pub fn load_matrix_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    response: Option<&ResponseColumn>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut ds = read_matrix_csv(file, has_header, response)?;
    ds.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ds.provenance = format!("csv:{}", path.display());
    Ok(ds)
}

/// [`load_matrix_csv`] over any reader.
pub fn read_matrix_csv<R: Read>(
    reader: R,
    has_header: bool,
    response: Option<&ResponseColumn>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Option<Vec<String>> = if has_header {
        let h = rdr.headers().map_err(csv_err)?;
        Some(h.iter().map(str::to_owned).collect())
    } else {
        None
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let width = rows.first().map(Vec::len).or(headers.as_ref().map(Vec::len));
        if let Some(w) = width {
            if rec.len() != w {
                return Err(Error::RaggedRows { row: r, expected: w, found: rec.len() });
            }
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: r,
                    col: c,
                    message: format!("not a number: {cell:?}"),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse { row: r, col: c, message: "non-finite value".into() })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    if rows.is_empty() || rows[0].is_empty() {
        let cols = rows.first().map_or(0, Vec::len);
        return Err(Error::EmptyMatrix { rows: rows.len(), cols });
    }
    let ncols = rows[0].len();
    let resp = match response {
        None => None,
        Some(ResponseColumn::Index(i)) => Some(*i),
        Some(ResponseColumn::Name(name)) => {
            let h = headers
                .as_ref()
                .ok_or_else(|| Error::InvalidDimensions("named response column needs a header".into()))?;
            Some(h.iter().position(|s| s == name).ok_or_else(|| {
                Error::InvalidDimensions(format!("no column named {name:?}"))
            })?)
        }
    };
    if let Some(i) = resp {
        if i >= ncols {
            return Err(Error::InvalidDimensions(format!(
                "response column {i} out of range for {ncols} columns"
            )));
        }
        if ncols < 2 {
            return Err(Error::EmptyMatrix { rows: rows.len(), cols: 0 });
        }
    }
    let n = rows.len();
    let p = ncols - usize::from(resp.is_some());
    let mut x = DMatrix::zeros(n, p);
    let mut y = resp.map(|_| DMatrix::zeros(n, 1));
    for (r, row) in rows.iter().enumerate() {
        let mut j = 0;
        for (c, v) in row.iter().enumerate() {
            if Some(c) == resp {
                y.as_mut().unwrap()[(r, 0)] = *v;
            } else {
                x[(r, j)] = *v;
                j += 1;
            }
        }
    }
    let y = y.map(DenseMatrix::new).transpose()?;
    Dataset::new(DenseMatrix::new(x)?, y, "")
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.record() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Parse { row, col: 0, message: format!("{other:?}") },
    }
}

/// Writes `x` as comma-separated rows with 17 significant digits, enough to
/// round-trip every `f64` exactly.
pub fn write_matrix_csv(path: impl AsRef<Path>, x: &DenseMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(matrix_to_csv(x).as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn matrix_to_csv(x: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.16e}", x[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Centers and scales the targeted columns to mean 0 and sample standard
/// deviation 1 (denominator `n - 1`).
pub fn standardize(ds: &Dataset, target: StandardizeTarget) -> Result<Dataset> {
    let mut out = ds.clone();
    if matches!(target, StandardizeTarget::Columns | StandardizeTarget::Both) {
        out.x = standardize_columns(&ds.x, "x")?;
    }
    if matches!(target, StandardizeTarget::Response | StandardizeTarget::Both) {
        let y = ds
            .y
            .as_ref()
            .ok_or_else(|| Error::InvalidDimensions("dataset has no response".into()))?;
        out.y = Some(standardize_columns(y, "y")?);
    }
    Ok(out)
}

fn standardize_columns(a: &DenseMatrix, label: &str) -> Result<DenseMatrix> {
    let n = a.rows();
    if n < 2 {
        return Err(Error::InvalidDimensions("standardization needs at least 2 rows".into()));
    }
    let mut m = a.as_matrix().clone();
    for j in 0..m.ncols() {
        let mut col = m.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
        // relative threshold: a constant column leaves only rounding residue
        if sd.is_nan() || sd <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::ZeroVariance { column: format!("{label}[{j}]") });
        }
        col.scale_mut(1.0 / sd);
    }
    Ok(DenseMatrix::wrap(m))
}

fn check_synth(n: usize, p: usize) -> Result<()> {
    if p == 0 || n < p {
        return Err(Error::InvalidDimensions(format!("need n >= p >= 1 (n = {n}, p = {p})")));
    }
    Ok(())
}

fn normal_matrix<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    // row-major fill so the stream is independent of storage order
    let entries: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(n, p, &entries)
}

/// `y = X beta0 + noise`, drawing `beta0` then the noise from `rng`.
fn finish_synth<R: Rng + ?Sized>(x: DMatrix<f64>, name: String, rng: &mut R) -> Result<Dataset> {
    let p = x.ncols();
    let beta0 = DMatrix::from_iterator(p, 1, (0..p).map(|_| -> f64 { StandardNormal.sample(rng) }));
    let noise = DMatrix::from_iterator(
        x.nrows(),
        1,
        (0..x.nrows()).map(|_| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            SYNTH_NOISE_STD * z
        }),
    );
    let y = &x * &beta0 + noise;
    let beta_txt: Vec<String> = beta0.iter().map(|b| format!("{b:.16e}")).collect();
    let provenance =
        format!("{name}; noise_std={SYNTH_NOISE_STD}; beta0=[{}]", beta_txt.join(","));
    let mut ds = Dataset::new(DenseMatrix::new(x)?, Some(DenseMatrix::new(y)?), name)?;
    ds.provenance = provenance;
    Ok(ds)
}

/// I.i.d. standard normal design.
pub fn synth_gaussian<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<Dataset> {
    check_synth(n, p)?;
    let x = normal_matrix(n, p, rng);
    finish_synth(x, format!("gaussian(n={n},p={p})"), rng)
}

/// Gaussian design whose first `spike` rows are scaled by `sqrt(n)`.
pub fn synth_coherent<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    spike: usize,
    rng: &mut R,
) -> Result<Dataset> {
    check_synth(n, p)?;
    if spike > n {
        return Err(Error::InvalidDimensions(format!("spike {spike} exceeds n = {n}")));
    }
    let mut x = normal_matrix(n, p, rng);
    let s = (n as f64).sqrt();
    for i in 0..spike {
        x.row_mut(i).scale_mut(s);
    }
    finish_synth(x, format!("coherent(n={n},p={p},spike={spike})"), rng)
}

/// Gaussian design with row `i` (1-based) scaled by `i^-exponent`.
pub fn synth_powerlaw_rows<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    exponent: f64,
    rng: &mut R,
) -> Result<Dataset> {
    check_synth(n, p)?;
    if !exponent.is_finite() {
        return Err(Error::InvalidDimensions("exponent must be finite".into()));
    }
    let mut x = normal_matrix(n, p, rng);
    for i in 0..n {
        x.row_mut(i).scale_mut(((i + 1) as f64).powf(-exponent));
    }
    let name = if exponent == 0.0 {
        format!("gaussian(n={n},p={p})")
    } else {
        format!("powerlaw(n={n},p={p},exponent={exponent})")
    };
    finish_synth(x, name, rng)
}
