//! Per-trial sketch realizations shared by the Monte-Carlo drivers.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matcore::DenseMatrix;
use crate::sketching::{
    gaussian_operator, merge_squared, sparse_sign_operator, srht_operator, RowSampler,
    SamplingPlan, SketchOperator, DEFAULT_DEBIAS_FLOOR,
};

/// Which random sketch a Monte-Carlo experiment draws each trial.
#[derive(Clone, Debug)]
pub enum SketchFamily {
    /// I.i.d. row sampling from a plan (debiased arm uses its leverage).
    RowSampling(SamplingPlan),
    /// SRHT; the debiased arm uses leverage of the rotated design.
    Srht,
    Gaussian,
    SparseSign { s: usize },
}

impl SketchFamily {
    pub fn tag(&self) -> String {
        match self {
            SketchFamily::RowSampling(plan) => plan.kind().tag(),
            SketchFamily::Srht => "srht".into(),
            SketchFamily::Gaussian => "gaussian".into(),
            SketchFamily::SparseSign { s } => format!("sparse_sign({s})"),
        }
    }

    /// `theta_max` used for the automatic conditioning epsilon. Mixing
    /// sketches are treated as exact-leverage sampling.
    pub fn theta_max(&self) -> f64 {
        match self {
            SketchFamily::RowSampling(plan) => plan.theta_max(),
            _ => 1.0,
        }
    }
}

/// A drawn sketch, in whichever form is cheapest to apply.
pub(crate) enum Realization {
    /// Distinct sampled rows with summed squared weights (`diag(S^T S)`).
    Rows {
        classical: Vec<(usize, f64)>,
        debiased: Option<Vec<(usize, f64)>>,
    },
    Dense {
        classical: SketchOperator,
        debiased: Option<SketchOperator>,
    },
}

#[derive(Clone, Copy)]
pub(crate) enum ArmSketch<'a> {
    Rows(&'a [(usize, f64)]),
    Dense(&'a SketchOperator),
}

impl Realization {
    pub(crate) fn arm(&self, debiased: bool) -> ArmSketch<'_> {
        match (self, debiased) {
            (Realization::Rows { classical, .. }, false) => ArmSketch::Rows(classical),
            (Realization::Rows { debiased: Some(d), .. }, true) => ArmSketch::Rows(d),
            (Realization::Dense { classical, .. }, false) => ArmSketch::Dense(classical),
            (Realization::Dense { debiased: Some(d), .. }, true) => ArmSketch::Dense(d),
            _ => unreachable!("debiased arm requested without debias weights"),
        }
    }
}

impl ArmSketch<'_> {
    /// A matrix `T` with `T^T T = A^T S^T S A`: the compressed rows for row
    /// sampling, `S A` otherwise.
    pub(crate) fn sketch_rows(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            ArmSketch::Rows(diag) => Ok(DMatrix::from_fn(diag.len(), a.ncols(), |r, c| {
                let (i, w2) = diag[r];
                w2.sqrt() * a[(i, c)]
            })),
            ArmSketch::Dense(op) => op.apply(a),
        }
    }
}

/// Draws realizations of one sketch family over `n` input rows.
pub(crate) struct Sketcher {
    family: SketchFamily,
    m: usize,
    n: usize,
    sampler: Option<RowSampler>,
    /// Squared debias factor per row (row sampling only).
    debias_sq: Option<Vec<f64>>,
    /// Design whose rotated leverage defines the SRHT debias weights.
    debias_design: Option<DenseMatrix>,
}

impl Sketcher {
    /// `design` is the matrix whose leverage the debiased arm corrects for.
    pub(crate) fn new(
        family: SketchFamily,
        m: usize,
        design: &DenseMatrix,
        debias: bool,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDimensions("sketch size m must be >= 1".into()));
        }
        let n = design.rows();
        let mut sampler = None;
        let mut debias_sq = None;
        let mut debias_design = None;
        match &family {
            SketchFamily::RowSampling(plan) => {
                if plan.len() != n {
                    return Err(Error::InvalidDistribution(format!(
                        "plan over {} rows for a design with {n} rows",
                        plan.len()
                    )));
                }
                sampler = Some(plan.sampler());
                if debias {
                    // Fail up front if any drawable row makes the debias
                    // weight undefined.
                    let f = plan.debias_factors(m, DEFAULT_DEBIAS_FLOOR)?;
                    debias_sq = Some(f.iter().map(|d| d.map_or(0.0, |d| d * d)).collect());
                }
            }
            SketchFamily::Srht => {
                if debias {
                    debias_design = Some(design.clone());
                }
            }
            SketchFamily::Gaussian | SketchFamily::SparseSign { .. } => {
                if debias {
                    return Err(Error::Undefined(format!(
                        "no debiased variant of the {} sketch",
                        family.tag()
                    )));
                }
            }
        }
        Ok(Sketcher {
            family,
            m,
            n,
            sampler,
            debias_sq,
            debias_design,
        })
    }

    pub(crate) fn family(&self) -> &SketchFamily {
        &self.family
    }

    pub(crate) fn m(&self) -> usize {
        self.m
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Realization> {
        match &self.family {
            SketchFamily::RowSampling(plan) => {
                let sampler = self.sampler.as_ref().expect("row sampler");
                let pi = plan.probabilities();
                let mut indices = Vec::with_capacity(self.m);
                let mut weights = Vec::with_capacity(self.m);
                for _ in 0..self.m {
                    let i = sampler.draw_index(rng);
                    indices.push(i);
                    weights.push(1.0 / (self.m as f64 * pi[i]).sqrt());
                }
                let classical = merge_squared(&indices, &weights);
                let debiased = self.debias_sq.as_ref().map(|d2| {
                    classical.iter().map(|&(i, w2)| (i, w2 * d2[i])).collect()
                });
                Ok(Realization::Rows {
                    classical,
                    debiased,
                })
            }
            SketchFamily::Srht => {
                let op = srht_operator(self.n, self.m, rng)?;
                let debiased = match (&self.debias_design, &op) {
                    (Some(x), SketchOperator::Srht(s)) => Some(SketchOperator::Srht(
                        s.clone().with_debias(x, DEFAULT_DEBIAS_FLOOR)?,
                    )),
                    _ => None,
                };
                Ok(Realization::Dense {
                    classical: op,
                    debiased,
                })
            }
            SketchFamily::Gaussian => Ok(Realization::Dense {
                classical: gaussian_operator(self.n, self.m, rng)?,
                debiased: None,
            }),
            SketchFamily::SparseSign { s } => Ok(Realization::Dense {
                classical: sparse_sign_operator(self.n, self.m, *s, rng)?,
                debiased: None,
            }),
        }
    }
}
