//! Executes a validated config cell by cell.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use oblique::adversarial::{default_gamma_grid, lower_bound_instance, scalar_debias_floor, LowerBoundInstance};
use oblique::dataio::{
    load_matrix_csv, standardize, synth_coherent, synth_gaussian, synth_powerlaw_rows,
    ResponseColumn, StandardizeTarget,
};
use oblique::estimators::{select_columns_rows, CurSelection};
use oblique::inversion::{gaussian_inverse_scale, solve_fixed_point_d, FixedPointOptions};
use oblique::matcore::{pseudoinverse, thin_factorize};
use oblique::metrics::{
    conditioning_eps, delta_cur, delta_x, mc_inverse_gram_mean, monte_carlo_bias_variance,
    projection_moments, residual_vector, Arm, CurExperiment, OlsExperiment, SketchFamily,
    ZetaPolicy, DEFAULT_DELTA,
};
use oblique::oracle::{enumerate_expectation_beta, EnumerationBudget};
use oblique::sketching::build_distribution;
use oblique::DenseMatrix;

use crate::config::{
    Cell, ConfigError, DataSpec, ExperimentKind, FamilySpec, ResolvedSketch, ResponseSpec,
    StandardizeSpec, SynthKind, ValidatedConfig,
};

/// Salt separating the CUR column/row pre-selection stream from the trials.
const SELECTION_SALT: u64 = 0x5e1e_c7ed_c0de_0001;

/// One `(sketch, m)` cell of the sweep. Field order is the file column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub sketch: String,
    pub debiased: bool,
    pub m: Option<usize>,
    pub m_c: Option<usize>,
    pub m_r: Option<usize>,
    pub bias: f64,
    pub variance: f64,
    pub bias_rel: f64,
    pub variance_rel: f64,
    pub bias_stderr: Option<f64>,
    pub variance_stderr: Option<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub predicted: Option<f64>,
    pub wall_time_ms: Option<u64>,
    pub seed: u64,
}

impl ResultRow {
    /// `m`, or `m_c/m_r` for CUR cells.
    pub fn size_label(&self) -> String {
        match (self.m, self.m_c, self.m_r) {
            (Some(m), _, _) => m.to_string(),
            (None, Some(a), Some(b)) => format!("{a}/{b}"),
            _ => String::new(),
        }
    }
}

pub const COLUMNS: [&str; 17] = [
    "experiment",
    "sketch",
    "debiased",
    "m",
    "m_c",
    "m_r",
    "bias",
    "variance",
    "bias_rel",
    "variance_rel",
    "bias_stderr",
    "variance_stderr",
    "accepted",
    "rejected",
    "predicted",
    "wall_time_ms",
    "seed",
];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading data: {0}")]
    Data(oblique::Error),
    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: oblique::Error,
    },
    #[error("writing results: {0}")]
    Io(String),
}

impl RunError {
    /// 2 for configuration problems, 3 when every trial of a cell was
    /// rejected, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Data(_) => 2,
            RunError::Cell { source: oblique::Error::AllTrialsRejected { .. }, .. } => 3,
            RunError::Cell { source: oblique::Error::BudgetExceeded { .. }, .. } => 2,
            _ => 1,
        }
    }
}

/// Design (and response) the sweep runs on.
pub struct LoadedData {
    pub x: DenseMatrix,
    pub y: Option<DenseMatrix>,
    pub provenance: String,
    pub instance: Option<LowerBoundInstance>,
}

pub fn load_data(cfg: &ValidatedConfig) -> Result<LoadedData, RunError> {
    let seed = cfg.raw.seed;
    match &cfg.raw.data {
        DataSpec::Csv { path, header, response, standardize: st } => {
            let resp = response.as_ref().map(|r| match r {
                ResponseSpec::Index(i) => ResponseColumn::Index(*i),
                ResponseSpec::Name(s) => ResponseColumn::Name(s.clone()),
            });
            let mut ds = load_matrix_csv(path, *header, resp.as_ref()).map_err(RunError::Data)?;
            let target = match st {
                StandardizeSpec::None => None,
                StandardizeSpec::Columns => Some(StandardizeTarget::Columns),
                StandardizeSpec::Response => Some(StandardizeTarget::Response),
                StandardizeSpec::Both => Some(StandardizeTarget::Both),
            };
            if let Some(t) = target {
                ds = standardize(&ds, t).map_err(RunError::Data)?;
            }
            Ok(LoadedData { x: ds.x, y: ds.y, provenance: ds.provenance, instance: None })
        }
        DataSpec::Synthetic { kind, n, p, spike, exponent, seed: data_seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(data_seed.unwrap_or(seed));
            let ds = match kind {
                SynthKind::Gaussian => synth_gaussian(*n, *p, &mut rng),
                SynthKind::Coherent => synth_coherent(*n, *p, spike.unwrap_or(0), &mut rng),
                SynthKind::Powerlaw => synth_powerlaw_rows(*n, *p, exponent.unwrap_or(0.0), &mut rng),
            }
            .map_err(RunError::Data)?;
            Ok(LoadedData {
                x: ds.x,
                y: ds.y,
                provenance: format!("synthetic fixture {}", ds.provenance),
                instance: None,
            })
        }
        DataSpec::Lowerbound { k, n } => {
            let inst = lower_bound_instance(*k, *n).map_err(RunError::Data)?;
            Ok(LoadedData {
                x: inst.x.clone(),
                y: Some(inst.y.clone()),
                provenance: format!("lower-bound instance k={k} n={n}"),
                instance: Some(inst),
            })
        }
    }
}

fn family_for(sk: &ResolvedSketch, a: &DenseMatrix) -> oblique::Result<SketchFamily> {
    Ok(match &sk.family {
        FamilySpec::Rows(kind) => SketchFamily::RowSampling(build_distribution(a, *kind)?),
        FamilySpec::Srht => SketchFamily::Srht,
        FamilySpec::Gaussian => SketchFamily::Gaussian,
        FamilySpec::SparseSign(s) => SketchFamily::SparseSign { s: *s },
    })
}

fn arm(debiased: bool) -> Arm {
    if debiased {
        Arm::Debiased
    } else {
        Arm::Classical
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Cell results before the bookkeeping columns are filled in.
struct Measured {
    bias: f64,
    variance: f64,
    bias_rel: f64,
    variance_rel: f64,
    bias_stderr: Option<f64>,
    variance_stderr: Option<f64>,
    accepted: usize,
    rejected: usize,
    predicted: Option<f64>,
}

struct Context<'a> {
    cfg: &'a ValidatedConfig,
    data: &'a LoadedData,
    selection: Option<CurSelection>,
    residual: Option<DenseMatrix>,
}

impl Context<'_> {
    fn y(&self) -> oblique::Result<&DenseMatrix> {
        self.data
            .y
            .as_ref()
            .ok_or_else(|| oblique::Error::InvalidDimensions("experiment needs a response".into()))
    }

    fn run_cell(&self, sk: Option<&ResolvedSketch>, cell: Cell) -> oblique::Result<Measured> {
        let cfg = self.cfg;
        let x = &self.data.x;
        let trials = cfg.raw.trials;
        let seed = cfg.raw.seed;
        let zeta = cfg.zeta;
        match (cfg.raw.experiment, cell) {
            (ExperimentKind::Ols, Cell::Single(m)) => {
                let sk = sk.expect("validated");
                let fam = family_for(sk, x)?;
                let predicted = match (&fam, &self.residual) {
                    (SketchFamily::RowSampling(plan), Some(r)) => Some(delta_x(plan, m, r)?),
                    _ => None,
                };
                let exp = OlsExperiment::new(x, self.y()?, fam, m, &[arm(sk.debiased)], zeta)?;
                let st = monte_carlo_bias_variance(&exp, trials, seed)?;
                Ok(Measured {
                    bias: st.bias,
                    variance: st.variance,
                    bias_rel: st.relative_bias(),
                    variance_rel: st.relative_variance(),
                    bias_stderr: finite(st.bias_stderr),
                    variance_stderr: finite(st.variance_stderr),
                    accepted: st.accepted,
                    rejected: st.rejected,
                    predicted,
                })
            }
            (ExperimentKind::Cur, Cell::Pair(m_c, m_r)) => {
                let sk = sk.expect("validated");
                let sel = self.selection.as_ref().expect("selection drawn for cur");
                let r_t = sel.r.transpose();
                let fam_c = family_for(sk, &sel.c)?;
                let fam_r = family_for(sk, &r_t)?;
                let predicted = match (&fam_c, &fam_r) {
                    (SketchFamily::RowSampling(pc), SketchFamily::RowSampling(pr)) => {
                        Some(delta_cur(x, sel, pc, pr, m_c, m_r)?.total(0.0))
                    }
                    _ => None,
                };
                let exp =
                    CurExperiment::new(x, sel, fam_c, fam_r, m_c, m_r, &[arm(sk.debiased)], zeta)?;
                let st = monte_carlo_bias_variance(&exp, trials, seed)?;
                Ok(Measured {
                    bias: st.bias,
                    variance: st.variance,
                    bias_rel: st.relative_bias(),
                    variance_rel: st.relative_variance(),
                    bias_stderr: finite(st.bias_stderr),
                    variance_stderr: finite(st.variance_stderr),
                    accepted: st.accepted,
                    rejected: st.rejected,
                    predicted,
                })
            }
            (ExperimentKind::Projection, Cell::Single(m)) => {
                let sk = sk.expect("validated");
                let fam = family_for(sk, x)?;
                let mom = projection_moments(x, fam, m, sk.debiased, trials, zeta, seed)?;
                Ok(Measured {
                    bias: mom.bias_f2,
                    variance: mom.second_moment,
                    bias_rel: mom.bias_f2 / mom.perp_f2,
                    variance_rel: mom.second_moment / mom.perp_f2,
                    bias_stderr: None,
                    variance_stderr: finite(mom.second_moment_stderr),
                    accepted: mom.accepted,
                    rejected: mom.rejected,
                    predicted: mom.predicted_trace,
                })
            }
            (ExperimentKind::Lowerbound, Cell::Single(m)) => {
                let inst = self.data.instance.as_ref().expect("lowerbound data");
                let r = residual_vector(&inst.x, &inst.y)?;
                let predicted = delta_x(&inst.plan, m, &r)?;
                let (floor, st) =
                    scalar_debias_floor(inst, m, &default_gamma_grid(), trials, zeta, seed)?;
                Ok(Measured {
                    bias: floor.min_bias,
                    variance: st.variance,
                    bias_rel: floor.normalized,
                    variance_rel: st.relative_variance(),
                    bias_stderr: None,
                    variance_stderr: finite(st.variance_stderr),
                    accepted: st.accepted,
                    rejected: st.rejected,
                    predicted: Some(predicted),
                })
            }
            (ExperimentKind::OracleCheck, Cell::Single(m)) => {
                let sk = sk.expect("validated");
                let fam = family_for(sk, x)?;
                let SketchFamily::RowSampling(plan) = &fam else {
                    unreachable!("validated: row sampling only")
                };
                let exact = enumerate_expectation_beta(
                    x,
                    self.y()?,
                    plan,
                    m,
                    sk.debiased,
                    EnumerationBudget::default(),
                )?;
                let exp = OlsExperiment::new(x, self.y()?, fam, m, &[arm(sk.debiased)], zeta)?;
                let st = monte_carlo_bias_variance(&exp, trials, seed)?;
                Ok(Measured {
                    bias: st.bias,
                    variance: st.variance,
                    bias_rel: st.relative_bias(),
                    variance_rel: st.relative_variance(),
                    bias_stderr: finite(st.bias_stderr),
                    variance_stderr: finite(st.variance_stderr),
                    accepted: st.accepted,
                    rejected: st.rejected,
                    predicted: Some(exact.exact_bias),
                })
            }
            (ExperimentKind::InversionCheck, Cell::Single(m)) => {
                let sk = sk.expect("validated");
                let fam = family_for(sk, x)?;
                let naive = pseudoinverse(&DenseMatrix::new(x.as_matrix().transpose() * x.as_matrix())?, None)?
                    .into_inner();
                let target: DMatrix<f64> = match &fam {
                    SketchFamily::RowSampling(plan) => {
                        solve_fixed_point_d(x, plan, m, FixedPointOptions::default())?.inverse_gram(x)?
                    }
                    _ => &naive * gaussian_inverse_scale(m, x.cols())?,
                };
                let mc = mc_inverse_gram_mean(x, fam, m, trials, zeta, seed)?;
                let bias = (&mc.mean - &target).norm_squared();
                let variance = (&mc.mean - &naive).norm_squared();
                Ok(Measured {
                    bias,
                    variance,
                    bias_rel: bias / target.norm_squared(),
                    variance_rel: variance / naive.norm_squared(),
                    bias_stderr: None,
                    variance_stderr: None,
                    accepted: mc.accepted,
                    rejected: mc.rejected,
                    predicted: Some((&target - &naive).norm_squared()),
                })
            }
            (kind, cell) => unreachable!("validated config produced {cell:?} for {}", kind.tag()),
        }
    }
}

fn cell_label(sk: Option<&ResolvedSketch>, cell: Cell) -> String {
    let tag = sk.map_or("custom", |s| s.tag.as_str());
    let deb = sk.is_some_and(|s| s.debiased);
    match cell {
        Cell::Single(m) => format!("{tag} debiased={deb} m={m}"),
        Cell::Pair(a, b) => format!("{tag} debiased={deb} m_c={a} m_r={b}"),
    }
}

fn draw_selection(cfg: &ValidatedConfig, x: &DenseMatrix) -> Result<Option<CurSelection>, RunError> {
    if cfg.raw.experiment != ExperimentKind::Cur {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.raw.seed ^ SELECTION_SALT);
    let (c, r) = (cfg.raw.c.unwrap_or(0), cfg.raw.r.unwrap_or(0));
    select_columns_rows(x, c, r, &mut rng).map(Some).map_err(RunError::Data)
}

/// Runs every cell in config order, calling `progress` after each.
pub fn run_experiment(
    cfg: &ValidatedConfig,
    data: &LoadedData,
    mut progress: impl FnMut(&ResultRow),
) -> Result<Vec<ResultRow>, RunError> {
    let residual = match (cfg.raw.experiment, &data.y) {
        (ExperimentKind::Ols, Some(y)) => Some(residual_vector(&data.x, y).map_err(RunError::Data)?),
        _ => None,
    };
    let ctx = Context { cfg, data, selection: draw_selection(cfg, &data.x)?, residual };
    let sketches: Vec<Option<&ResolvedSketch>> = if cfg.sketches.is_empty() {
        vec![None]
    } else {
        cfg.sketches.iter().map(Some).collect()
    };
    let mut rows = Vec::new();
    for sk in sketches {
        for &cell in &cfg.cells {
            let start = Instant::now();
            let res = ctx
                .run_cell(sk, cell)
                .map_err(|source| RunError::Cell { cell: cell_label(sk, cell), source })?;
            let elapsed = start.elapsed().as_millis() as u64;
            let (m, m_c, m_r) = match cell {
                Cell::Single(m) => (Some(m), None, None),
                Cell::Pair(a, b) => (None, Some(a), Some(b)),
            };
            let row = ResultRow {
                experiment: cfg.id(),
                sketch: sk.map_or_else(|| "custom".into(), |s| s.tag.clone()),
                debiased: sk.is_some_and(|s| s.debiased),
                m,
                m_c,
                m_r,
                bias: res.bias,
                variance: res.variance,
                bias_rel: res.bias_rel,
                variance_rel: res.variance_rel,
                bias_stderr: res.bias_stderr,
                variance_stderr: res.variance_stderr,
                accepted: res.accepted,
                rejected: res.rejected,
                predicted: res.predicted,
                wall_time_ms: Some(elapsed),
                seed: cfg.raw.seed,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// `min_i ||x_i||^2 / ||X||_F^2`, also as the exponent `alpha` in `n^-alpha`.
/// Reported only; nothing depends on it.
fn row_norm_line(x: &DenseMatrix) -> String {
    let m = x.as_matrix();
    let total = m.norm_squared();
    let min = m.row_iter().map(|r| r.norm_squared()).fold(f64::INFINITY, f64::min);
    let ratio = min / total;
    let alpha = -ratio.ln() / (m.nrows() as f64).ln();
    format!("min row-norm ratio: {ratio:.6e} (alpha = {alpha:.4})")
}

/// Human-readable notes for `validate`, including the automatic epsilon of
/// every cell when the acceptance event uses it.
pub fn diagnostics(cfg: &ValidatedConfig, data: &LoadedData) -> Result<Vec<String>, RunError> {
    let mut out = vec![
        format!("experiment {} ({})", cfg.id(), cfg.raw.experiment.tag()),
        format!("data: {}x{} {}", data.x.rows(), data.x.cols(), data.provenance),
        format!("cells: {}", cfg.cells.len() * cfg.sketches.len().max(1)),
        format!("zeta: {}", cfg.zeta.tag()),
        row_norm_line(&data.x),
    ];
    if cfg.zeta != ZetaPolicy::auto() {
        return Ok(out);
    }
    let sel = draw_selection(cfg, &data.x)?;
    let rank = |a: &DenseMatrix| -> Result<usize, RunError> {
        Ok(thin_factorize(a, None).map_err(RunError::Data)?.numeric_rank)
    };
    let eps_line = |label: &str, sk: Option<&ResolvedSketch>, a: &DenseMatrix, m: usize| {
        let theta = match sk {
            Some(sk) => family_for(sk, a).map_err(RunError::Data)?.theta_max(),
            None => data.instance.as_ref().map_or(1.0, |i| i.plan.theta_max()),
        };
        let eps = conditioning_eps(rank(a)?, theta, m, DEFAULT_DELTA);
        Ok::<String, RunError>(format!("zeta eps (auto) for {label} at m={m}: {eps:.6}"))
    };
    let sketches: Vec<Option<&ResolvedSketch>> = if cfg.sketches.is_empty() {
        vec![None]
    } else {
        cfg.sketches.iter().map(Some).collect()
    };
    for sk in sketches {
        let tag = sk.map_or("custom", |s| s.tag.as_str());
        for &cell in &cfg.cells {
            match (cell, &sel) {
                (Cell::Single(m), _) => out.push(eps_line(tag, sk, &data.x, m)?),
                (Cell::Pair(mc, mr), Some(sel)) => {
                    out.push(eps_line(&format!("{tag} (C side)"), sk, &sel.c, mc)?);
                    out.push(eps_line(&format!("{tag} (R side)"), sk, &sel.r.transpose(), mr)?);
                }
                (Cell::Pair(..), None) => unreachable!("cur always draws a selection"),
            }
        }
    }
    Ok(out)
}
