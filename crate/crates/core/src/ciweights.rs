//! Conditional information of Gaussian observations and its transformation
//! into calibration weights.
//!
//! For jointly Gaussian observations the entropy of one observation given a
//! conditioning set drops below the univariate entropy as the sets become
//! correlated. The weight transform maps that information overlap onto
//! [0, 1] so that an isolated observation keeps weight 1 while k + 1
//! coincident observations each get 1 / (k + 1):
//!
//! 1. f1 = 1 - exp(-2 (H(Y) - H(Y | rest))), the proportion of variance
//!    removed by kriging the observation from the rest;
//! 2. f1* = ((m + 1)(k m + 1) / ((k + 1) m^2)) f1, with m the partial sill
//!    to nugget ratio and k the conditioning-set size;
//! 3. w = 1 - f1*, clamped to [0, 1].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpsim::factorize;
use crate::spatial::{Location, ObservationSet};
use crate::variogram::VariogramModel;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A covariance matrix with its factorization and the variogram-derived
/// scalars the weight transform needs.
pub struct CovarianceContext {
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    marginal_variance: f64,
    sill_to_nugget: f64,
}

impl CovarianceContext {
    /// Build the covariance of the observations under a fitted variogram.
    /// Requires spatially correlated variance (partial sill > 0).
    pub fn from_model(locations: &[Location], model: &VariogramModel) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::NoObservations);
        }
        let m = model.sill_to_nugget_ratio();
        if m <= 0.0 {
            return Err(Error::invalid(
                "partial sill is zero: no spatial dependence to weight",
            ));
        }
        let sigma = model.covariance_matrix(locations);
        let chol = factorize(&sigma)?;
        Ok(CovarianceContext {
            sigma,
            chol,
            marginal_variance: model.total_sill(),
            sill_to_nugget: m,
        })
    }

    /// Wrap an explicit SPD covariance matrix whose diagonal entries all
    /// equal the marginal variance.
    pub fn new(sigma: DMatrix<f64>, sill_to_nugget: f64) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.is_empty() {
            return Err(Error::invalid("covariance matrix must be square and non-empty"));
        }
        if sill_to_nugget <= 0.0 {
            return Err(Error::invalid("sill-to-nugget ratio must be positive"));
        }
        let marginal_variance = sigma[(0, 0)];
        for i in 0..sigma.nrows() {
            if (sigma[(i, i)] - marginal_variance).abs() > 1e-10 * marginal_variance.abs() {
                return Err(Error::invalid(
                    "diagonal entries must all equal the marginal variance",
                ));
            }
        }
        let chol = factorize(&sigma)?;
        Ok(CovarianceContext {
            sigma,
            chol,
            marginal_variance,
            sill_to_nugget,
        })
    }

    pub fn len(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn marginal_variance(&self) -> f64 {
        self.marginal_variance
    }

    /// m: ratio of the partial sill to the nugget.
    pub fn sill_to_nugget_ratio(&self) -> f64 {
        self.sill_to_nugget
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Entropy of a single observation: (1 + ln 2 pi + ln v) / 2, in nats.
    pub fn univariate_entropy(&self) -> f64 {
        0.5 * (1.0 + LN_2PI + self.marginal_variance.ln())
    }

    fn submatrix(&self, subset: &[usize]) -> Result<DMatrix<f64>> {
        for &i in subset {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "index {i} out of range for {} observations",
                    self.len()
                )));
            }
        }
        let k = subset.len();
        Ok(DMatrix::from_fn(k, k, |r, c| {
            self.sigma[(subset[r], subset[c])]
        }))
    }

    fn log_det_subset(&self, subset: &[usize]) -> Result<f64> {
        let sub = self.submatrix(subset)?;
        let chol = Cholesky::new(sub).ok_or_else(|| {
            Error::Singular(format!(
                "covariance submatrix of order {} is singular",
                subset.len()
            ))
        })?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// Joint differential entropy of the subset, in nats:
    /// k/2 + (k/2) ln 2 pi + (1/2) ln det Sigma_subset.
    pub fn joint_entropy(&self, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Err(Error::invalid("entropy of an empty subset is undefined"));
        }
        let k = subset.len() as f64;
        Ok(0.5 * k * (1.0 + LN_2PI) + 0.5 * self.log_det_subset(subset)?)
    }

    /// Conditional information of `target` given the conditioning set:
    /// (1 + ln 2 pi + ln(det Sigma_{given + target} / det Sigma_given)) / 2.
    /// An empty conditioning set yields the univariate entropy.
    pub fn conditional_information(&self, target: usize, given: &[usize]) -> Result<f64> {
        if given.contains(&target) {
            return Err(Error::invalid("target must not be in the conditioning set"));
        }
        if given.is_empty() {
            if target >= self.len() {
                return Err(Error::invalid(format!("index {target} out of range")));
            }
            return Ok(self.univariate_entropy());
        }
        let mut joint: Vec<usize> = given.to_vec();
        joint.push(target);
        let log_det_ratio = self.log_det_subset(&joint)? - self.log_det_subset(given)?;
        Ok(0.5 * (1.0 + LN_2PI + log_det_ratio))
    }

    /// Simple kriging variance of `target` predicted from `given`:
    /// v - c^T Sigma_given^{-1} c.
    pub fn kriging_variance(&self, target: usize, given: &[usize]) -> Result<f64> {
        if given.contains(&target) {
            return Err(Error::invalid("target must not be in the conditioning set"));
        }
        if target >= self.len() {
            return Err(Error::invalid(format!("index {target} out of range")));
        }
        if given.is_empty() {
            return Ok(self.marginal_variance);
        }
        let sub = self.submatrix(given)?;
        let chol = Cholesky::new(sub).ok_or_else(|| {
            Error::Singular(format!(
                "conditioning covariance of order {} is singular",
                given.len()
            ))
        })?;
        let c = DVector::from_iterator(
            given.len(),
            given.iter().map(|&j| self.sigma[(j, target)]),
        );
        let solved = chol.solve(&c);
        Ok(self.marginal_variance - c.dot(&solved))
    }

    /// Proportion of the marginal variance removed by kriging the target from
    /// the conditioning set: f1 = 1 - kriging variance / marginal variance.
    /// Zero when the set is empty (the kriging variance equals the sill).
    pub fn variance_reduction_f1(&self, target: usize, given: &[usize]) -> Result<f64> {
        let kv = self.kriging_variance(target, given)?;
        Ok((1.0 - kv / self.marginal_variance).clamp(0.0, 1.0))
    }

    /// Leave-one-out kriging variances for every observation from one
    /// factorization: var(Y_i | rest) = 1 / (Sigma^{-1})_{ii}.
    pub fn leave_one_out_kriging_variances(&self) -> Vec<f64> {
        let inverse = self.chol.inverse();
        (0..self.len()).map(|i| 1.0 / inverse[(i, i)]).collect()
    }
}

/// Per-observation weights with the intermediate quantities of the
/// transformation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightVector {
    /// Calibration weights in [0, 1].
    pub w: Vec<f64>,
    /// Step-1 variance reductions.
    pub f1: Vec<f64>,
    /// Step-2 rescaled reductions.
    pub f1_star: Vec<f64>,
    /// Conditional information of each observation given all others (nats).
    pub ci: Vec<f64>,
    /// True when the model carried no spatially correlated variance and the
    /// weights defaulted to 1.
    pub no_spatial_dependence: bool,
}

impl WeightVector {
    fn all_ones(n: usize, ci: f64) -> Self {
        WeightVector {
            w: vec![1.0; n],
            f1: vec![0.0; n],
            f1_star: vec![0.0; n],
            ci: vec![ci; n],
            no_spatial_dependence: true,
        }
    }
}

/// Compute the calibration weight of every observation, conditioning each on
/// all n - 1 others (so k = n - 1 in the step-2 factor).
///
/// A model with zero partial sill has no spatial dependence to discount; the
/// weights are all 1 and the result is flagged.
pub fn compute_weights(
    residuals: &ObservationSet,
    model: &VariogramModel,
) -> Result<WeightVector> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 observations to weight"));
    }
    let m = model.sill_to_nugget_ratio();
    if m <= 0.0 {
        let v = model.total_sill();
        return Ok(WeightVector::all_ones(n, 0.5 * (1.0 + LN_2PI + v.ln())));
    }
    let ctx = CovarianceContext::from_model(residuals.locations(), model)?;
    compute_weights_with(&ctx)
}

/// The weight transform applied to an existing covariance context.
pub fn compute_weights_with(ctx: &CovarianceContext) -> Result<WeightVector> {
    let n = ctx.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 observations to weight"));
    }
    let v = ctx.marginal_variance();
    let m = ctx.sill_to_nugget_ratio();
    let k = (n - 1) as f64;
    let step2_factor = (m + 1.0) * (k * m + 1.0) / ((k + 1.0) * m * m);

    let kriging_variances = ctx.leave_one_out_kriging_variances();
    let mut weights = WeightVector {
        w: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        f1_star: Vec::with_capacity(n),
        ci: Vec::with_capacity(n),
        no_spatial_dependence: false,
    };
    for kv in kriging_variances {
        let f1 = (1.0 - kv / v).clamp(0.0, 1.0);
        let f1_star = step2_factor * f1;
        weights.ci.push(0.5 * (1.0 + LN_2PI + kv.ln()));
        weights.f1.push(f1);
        weights.f1_star.push(f1_star);
        weights.w.push((1.0 - f1_star).clamp(0.0, 1.0));
    }
    Ok(weights)
}

/// Closed form for the step-1 reduction when the target coincides with k
/// duplicates: f1 = k m^2 / ((k m + 1)(m + 1)).
pub fn coincident_f1(k: usize, m: f64) -> f64 {
    let k = k as f64;
    k * m * m / ((k * m + 1.0) * (m + 1.0))
}
