//! Least-squares and CUR estimators: exact, sketched and debiased.

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use crate::error::{shape_err, Error, Result};
use crate::matcore::{check_cur_shapes, factorize, pinv, DenseMatrix};
use crate::sketching::{RowSample, SketchOperator};

/// A least-squares coefficient vector and how it was obtained.
#[derive(Clone, Debug)]
pub struct OlsSolution {
    pub beta: DenseMatrix,
    /// `"exact"` or the tag of the sketch used.
    pub sketch: String,
    pub embedding_passed: Option<bool>,
}

/// Columns and rows selected from `X` for a CUR decomposition.
#[derive(Clone, Debug)]
pub struct CurSelection {
    pub c: DenseMatrix,
    pub r: DenseMatrix,
    pub col_ids: Vec<usize>,
    pub row_ids: Vec<usize>,
}

impl CurSelection {
    /// `C = X[:, cols]`, `R = X[rows, :]`. Indices must be distinct and in range.
    pub fn from_indices(x: &DenseMatrix, col_ids: Vec<usize>, row_ids: Vec<usize>) -> Result<Self> {
        check_ids("columns", &col_ids, x.cols())?;
        check_ids("rows", &row_ids, x.rows())?;
        let c = x.select_columns(col_ids.iter());
        let r = x.select_rows(row_ids.iter());
        Ok(CurSelection {
            c: DenseMatrix::wrap(c),
            r: DenseMatrix::wrap(r),
            col_ids,
            row_ids,
        })
    }
}

fn check_ids(what: &'static str, ids: &[usize], bound: usize) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::InvalidDimensions(format!("no {what} selected")));
    }
    let mut seen = vec![false; bound];
    for &i in ids {
        if i >= bound || seen[i] {
            return Err(Error::InvalidDimensions(format!(
                "{what} index {i} out of range or repeated"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// A CUR core matrix and the selection it belongs to.
#[derive(Clone, Debug)]
pub struct CurSolution {
    pub u: DenseMatrix,
    pub col_ids: Vec<usize>,
    pub row_ids: Vec<usize>,
    /// Tags of the column-side and row-side sketches.
    pub sketches: (String, String),
}

fn check_response(x: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    if y.rows() != x.rows() {
        return Err(shape_err(
            "response",
            format!("{} rows", x.rows()),
            format!("{} rows", y.rows()),
        ));
    }
    Ok(())
}

/// `beta = X^dagger y`.
pub fn ols_exact(x: &DenseMatrix, y: &DenseMatrix) -> Result<OlsSolution> {
    check_response(x, y)?;
    let beta = factorize(x, None).solve(y);
    Ok(OlsSolution {
        beta: DenseMatrix::wrap(beta),
        sketch: "exact".into(),
        embedding_passed: None,
    })
}

/// `beta = (S X)^dagger S y` for any sketch realization.
pub fn ols_subsampled(x: &DenseMatrix, y: &DenseMatrix, op: &SketchOperator) -> Result<OlsSolution> {
    check_response(x, y)?;
    let sx = op.apply(x)?;
    let sy = op.apply(y)?;
    Ok(OlsSolution {
        beta: DenseMatrix::wrap(factorize(&sx, None).solve(&sy)),
        sketch: op.tag().into(),
        embedding_passed: None,
    })
}

/// Debiased sketched OLS: the sample's base and debias weights are applied
/// to both the rows of `X` and the entries of `y`.
pub fn ols_debiased(x: &DenseMatrix, y: &DenseMatrix, sample: &RowSample) -> Result<OlsSolution> {
    let op = SketchOperator::row_sampling(sample.clone(), true, x.rows())?;
    ols_subsampled(x, y, &op)
}

/// `X (S X)^dagger S`, an `n x n` oblique projection.
pub fn oblique_projection(x: &DenseMatrix, op: &SketchOperator) -> Result<DenseMatrix> {
    let sx = op.apply(x)?;
    let a = pinv(&sx);
    let at_s = op.apply_transpose(&a.transpose())?.transpose();
    Ok(DenseMatrix::wrap(x.as_matrix() * at_s))
}

/// Sequential weighted sampling without replacement: `k` distinct indices,
/// each draw proportional to the remaining weights.
fn draw_distinct<R: Rng + ?Sized>(
    what: &'static str,
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let available = weights.iter().filter(|w| **w > 0.0).count();
    if available < k {
        return Err(Error::InsufficientNonzero {
            what,
            available,
            requested: k,
        });
    }
    let mut remaining = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let dist = WeightedIndex::new(&remaining).expect("positive remaining mass");
        let i = dist.sample(rng);
        out.push(i);
        remaining[i] = 0.0;
    }
    Ok(out)
}

/// Picks `c` distinct columns by squared column norm and `r` distinct rows
/// by squared row norm, both without replacement.
pub fn select_columns_rows<R: Rng + ?Sized>(
    x: &DenseMatrix,
    c: usize,
    r: usize,
    rng: &mut R,
) -> Result<CurSelection> {
    if c == 0 || c > x.cols() || r == 0 || r > x.rows() {
        return Err(Error::InvalidDimensions(format!(
            "need 1 <= c <= {} and 1 <= r <= {} (c = {c}, r = {r})",
            x.cols(),
            x.rows()
        )));
    }
    let col_w: Vec<f64> = x.column_iter().map(|col| col.norm_squared()).collect();
    let row_w: Vec<f64> = x.row_iter().map(|row| row.norm_squared()).collect();
    let col_ids = draw_distinct("columns", &col_w, c, rng)?;
    let row_ids = draw_distinct("rows", &row_w, r, rng)?;
    CurSelection::from_indices(x, col_ids, row_ids)
}

/// `U = C^dagger X R^dagger`.
pub fn cur_exact(x: &DenseMatrix, sel: &CurSelection) -> Result<CurSolution> {
    check_cur_shapes(x, &sel.c, &sel.r)?;
    let u = pinv(&sel.c) * x.as_matrix() * pinv(&sel.r);
    Ok(CurSolution {
        u: DenseMatrix::wrap(u),
        col_ids: sel.col_ids.clone(),
        row_ids: sel.row_ids.clone(),
        sketches: ("exact".into(), "exact".into()),
    })
}

/// `U = (S_C C)^dagger (S_C X S_R^T) (R S_R^T)^dagger`, with `S_C` acting on
/// the `n` rows and `S_R` on the `p` columns.
pub fn cur_fast(
    x: &DenseMatrix,
    sel: &CurSelection,
    op_c: &SketchOperator,
    op_r: &SketchOperator,
) -> Result<CurSolution> {
    check_cur_shapes(x, &sel.c, &sel.r)?;
    if op_r.input_dim() != x.cols() {
        return Err(shape_err(
            "cur_fast: row-side sketch",
            format!("input dimension {}", x.cols()),
            format!("input dimension {}", op_r.input_dim()),
        ));
    }
    let sc_c = op_c.apply(&sel.c)?;
    let sc_x = op_c.apply(x)?;
    let core = op_r.apply(&sc_x.transpose())?.transpose();
    let r_sr = op_r.apply(&sel.r.transpose())?.transpose();
    let u = pinv(&sc_c) * core * pinv(&r_sr);
    Ok(CurSolution {
        u: DenseMatrix::wrap(u),
        col_ids: sel.col_ids.clone(),
        row_ids: sel.row_ids.clone(),
        sketches: (op_c.tag().into(), op_r.tag().into()),
    })
}

/// Debiased fast CUR. `sample_c` must carry debias weights computed from the
/// leverage of `C`, `sample_r` from the leverage of `R^T`.
pub fn cur_debiased(
    x: &DenseMatrix,
    sel: &CurSelection,
    sample_c: &RowSample,
    sample_r: &RowSample,
) -> Result<CurSolution> {
    let op_c = SketchOperator::row_sampling(sample_c.clone(), true, x.rows())?;
    let op_r = SketchOperator::row_sampling(sample_r.clone(), true, x.cols())?;
    cur_fast(x, sel, &op_c, &op_r)
}
