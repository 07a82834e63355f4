//! Parametric variogram models (exponential and Matérn), the Matheron
//! empirical variogram of model residuals, and weighted-least-squares fitting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::optimize;
use crate::spatial::{max_pairwise_distance, Location, ObservationSet};
use crate::special::bessel_k;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramFamily {
    Exponential,
    Matern,
}

/// A stationary isotropic variogram:
/// gamma(h) = nugget + partial_sill * (1 - correlation(h)) for h > 0, and
/// gamma(0) = 0.
///
/// The Matérn correlation is
/// (1 / (2^(kappa-1) Gamma(kappa))) (h/range)^kappa K_kappa(h/range);
/// kappa = 0.5 reduces to the exponential exp(-h/range).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVariogramModel", into = "RawVariogramModel")]
pub struct VariogramModel {
    family: VariogramFamily,
    nugget: f64,
    partial_sill: f64,
    range: f64,
    smoothness: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawVariogramModel {
    family: VariogramFamily,
    nugget: f64,
    partial_sill: f64,
    range: f64,
    smoothness: Option<f64>,
}

impl TryFrom<RawVariogramModel> for VariogramModel {
    type Error = Error;
    fn try_from(raw: RawVariogramModel) -> Result<Self> {
        VariogramModel::new(
            raw.family,
            raw.nugget,
            raw.partial_sill,
            raw.range,
            raw.smoothness,
        )
    }
}

impl From<VariogramModel> for RawVariogramModel {
    fn from(m: VariogramModel) -> Self {
        RawVariogramModel {
            family: m.family,
            nugget: m.nugget,
            partial_sill: m.partial_sill,
            range: m.range,
            smoothness: m.smoothness,
        }
    }
}

impl VariogramModel {
    pub fn new(
        family: VariogramFamily,
        nugget: f64,
        partial_sill: f64,
        range: f64,
        smoothness: Option<f64>,
    ) -> Result<Self> {
        if !(nugget.is_finite() && nugget > 0.0) {
            return Err(Error::invalid(format!("nugget must be > 0, got {nugget}")));
        }
        if !(partial_sill.is_finite() && partial_sill >= 0.0) {
            return Err(Error::invalid(format!(
                "partial sill must be >= 0, got {partial_sill}"
            )));
        }
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::invalid(format!("range must be > 0, got {range}")));
        }
        match (family, smoothness) {
            (VariogramFamily::Matern, Some(k)) if k.is_finite() && k > 0.0 => {}
            (VariogramFamily::Matern, s) => {
                return Err(Error::invalid(format!(
                    "Matern requires smoothness > 0, got {s:?}"
                )))
            }
            (VariogramFamily::Exponential, _) => {}
        }
        let smoothness = match family {
            VariogramFamily::Matern => smoothness,
            VariogramFamily::Exponential => None,
        };
        Ok(VariogramModel {
            family,
            nugget,
            partial_sill,
            range,
            smoothness,
        })
    }

    pub fn exponential(nugget: f64, partial_sill: f64, range: f64) -> Result<Self> {
        Self::new(VariogramFamily::Exponential, nugget, partial_sill, range, None)
    }

    pub fn matern(nugget: f64, partial_sill: f64, range: f64, smoothness: f64) -> Result<Self> {
        Self::new(
            VariogramFamily::Matern,
            nugget,
            partial_sill,
            range,
            Some(smoothness),
        )
    }

    pub fn family(&self) -> VariogramFamily {
        self.family
    }

    /// Nugget variance tau^2: the spatially independent variance.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Partial sill sigma^2: the spatially correlated variance.
    pub fn partial_sill(&self) -> f64 {
        self.partial_sill
    }

    /// Range parameter phi (km).
    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    pub fn total_sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    /// Ratio of the partial sill to the nugget (m in the weight transform).
    pub fn sill_to_nugget_ratio(&self) -> f64 {
        self.partial_sill / self.nugget
    }

    /// Correlation of the spatially structured component at separation h >= 0;
    /// 1 at h = 0.
    pub fn correlation(&self, h: f64) -> f64 {
        debug_assert!(h >= 0.0);
        if h <= 0.0 {
            return 1.0;
        }
        let scaled = h / self.range;
        match self.family {
            VariogramFamily::Exponential => (-scaled).exp(),
            VariogramFamily::Matern => {
                let kappa = self.smoothness.expect("validated on construction");
                matern_correlation(scaled, kappa)
            }
        }
    }

    /// Semivariance gamma(h); gamma(0) = 0 by convention.
    pub fn evaluate(&self, h: f64) -> Result<f64> {
        check_lag(h)?;
        if h == 0.0 {
            return Ok(0.0);
        }
        Ok(self.nugget + self.partial_sill * (1.0 - self.correlation(h)))
    }

    /// Covariance at separation h: total sill minus gamma(h) for h > 0;
    /// coincident points share the nugget, so Cov(0) is the full sill.
    pub fn to_covariance(&self, h: f64) -> Result<f64> {
        check_lag(h)?;
        if h == 0.0 {
            return Ok(self.total_sill());
        }
        Ok(self.partial_sill * self.correlation(h))
    }

    /// Covariance matrix over sites. The diagonal carries the full sill; two
    /// distinct observations at the same site share only the partial sill,
    /// because the nugget acts as independent per-observation noise.
    pub fn covariance_matrix(&self, locations: &[Location]) -> DMatrix<f64> {
        let n = locations.len();
        let mut sigma = DMatrix::zeros(n, n);
        for i in 0..n {
            sigma[(i, i)] = self.total_sill();
            for j in (i + 1)..n {
                let cov = self.partial_sill * self.correlation(locations[i].distance(&locations[j]));
                sigma[(i, j)] = cov;
                sigma[(j, i)] = cov;
            }
        }
        sigma
    }

    /// Distance at which the correlation decays to 5%.
    pub fn practical_range(&self) -> f64 {
        let target = 0.05;
        let mut hi = self.range;
        while self.correlation(hi) > target {
            hi *= 2.0;
            if hi > 1e9 * self.range {
                return hi;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.correlation(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_lag(h: f64) -> Result<()> {
    if !h.is_finite() || h < 0.0 {
        return Err(Error::invalid(format!("lag must be finite and >= 0, got {h}")));
    }
    Ok(())
}

/// Matérn correlation at scaled lag x = h/phi.
pub fn matern_correlation(scaled: f64, kappa: f64) -> f64 {
    if scaled <= 1e-10 {
        return 1.0;
    }
    let norm = (0.5f64).powf(kappa - 1.0) / gamma(kappa);
    let value = norm * scaled.powf(kappa) * bessel_k(kappa, scaled);
    value.min(1.0)
}

/// Binned Matheron estimate of the variogram of residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    pub bin_centres: Vec<f64>,
    pub semivariances: Vec<f64>,
    pub pair_counts: Vec<usize>,
}

impl EmpiricalVariogram {
    pub fn occupied_bins(&self) -> usize {
        self.pair_counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Matheron method-of-moments estimator: per bin,
/// gamma_hat = (1 / (2 N_h)) sum (e_i - e_j)^2 over pairs with distance in
/// the bin. Bins have equal width max_dist / n_bins; empty bins carry a pair
/// count of 0.
pub fn empirical_variogram(
    residuals: &ObservationSet,
    n_bins: usize,
    max_dist: f64,
) -> Result<EmpiricalVariogram> {
    if residuals.len() < 2 {
        return Err(Error::invalid("need at least 2 observations"));
    }
    if n_bins < 1 {
        return Err(Error::invalid("need at least 1 bin"));
    }
    if !(max_dist.is_finite() && max_dist > 0.0) {
        return Err(Error::invalid(format!("max_dist must be > 0, got {max_dist}")));
    }
    let width = max_dist / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let locs = residuals.locations();
    let vals = residuals.values();
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            let d = locs[i].distance(&locs[j]);
            if d > max_dist {
                continue;
            }
            let bin = ((d / width) as usize).min(n_bins - 1);
            sums[bin] += (vals[i] - vals[j]).powi(2);
            counts[bin] += 1;
        }
    }
    let semivariances = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / (2.0 * c as f64) } else { 0.0 })
        .collect();
    let bin_centres = (0..n_bins).map(|b| (b as f64 + 0.5) * width).collect();
    Ok(EmpiricalVariogram {
        bin_centres,
        semivariances,
        pair_counts: counts,
    })
}

/// Default binning: 15 bins up to half the maximum pairwise distance.
pub fn default_empirical_variogram(residuals: &ObservationSet) -> Result<EmpiricalVariogram> {
    let max = max_pairwise_distance(residuals.locations());
    if max <= 0.0 {
        return Err(Error::invalid(
            "all observations coincide; no lag structure to bin",
        ));
    }
    empirical_variogram(residuals, 15, 0.5 * max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedVariogram {
    pub model: VariogramModel,
    pub converged: bool,
    /// Final Cressie weighted-least-squares objective.
    pub objective: f64,
    /// Whether the fitted model explains the empirical variogram markedly
    /// better than a flat (nugget-only) fit. False means the residuals are
    /// indistinguishable from spatially independent noise and weighting
    /// should be skipped.
    pub dependence_detected: bool,
}

/// Cressie-weighted least squares over (nugget, partial sill, range) with the
/// smoothness fixed: minimises sum N_h (gamma_hat - gamma)^2 / gamma^2 by a
/// bounded Nelder-Mead search from `initial`. When the search stalls before
/// the evaluation cap the best model so far is returned with
/// `converged = false`.
pub fn fit(
    empirical: &EmpiricalVariogram,
    family: VariogramFamily,
    kappa_fixed: f64,
    initial: &VariogramModel,
) -> Result<FittedVariogram> {
    let occupied: Vec<(f64, f64, f64)> = empirical
        .bin_centres
        .iter()
        .zip(&empirical.semivariances)
        .zip(&empirical.pair_counts)
        .filter(|&(_, &c)| c > 0)
        .map(|((&h, &g), &c)| (h, g, c as f64))
        .collect();
    if occupied.len() < 3 {
        return Err(Error::TooFewBins {
            occupied: occupied.len(),
            needed: 3,
        });
    }
    let sill_guess = occupied.iter().map(|&(_, g, _)| g).fold(0.0, f64::max);
    if sill_guess <= 0.0 {
        return Err(Error::VariogramFit(
            "all semivariances are zero; degenerate fit".into(),
        ));
    }
    // The range is only identified within the observed lags.
    let max_centre = occupied.iter().map(|&(h, _, _)| h).fold(0.0, f64::max);
    let bounds = [
        (1e-8 * sill_guess, 2.0 * sill_guess),
        (0.0, 2.0 * sill_guess),
        (1e-3 * max_centre, max_centre),
    ];
    let smoothness = match family {
        VariogramFamily::Matern => Some(kappa_fixed),
        VariogramFamily::Exponential => None,
    };

    let objective = |x: &[f64]| -> f64 {
        let model = match VariogramModel::new(family, x[0], x[1], x[2], smoothness) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        occupied
            .iter()
            .map(|&(h, g_hat, n)| {
                let g = model.nugget + model.partial_sill * (1.0 - model.correlation(h));
                n * (g_hat - g).powi(2) / (g * g)
            })
            .sum()
    };

    let x0 = [
        initial.nugget.clamp(bounds[0].0, bounds[0].1),
        initial.partial_sill.clamp(bounds[1].0, bounds[1].1),
        initial.range.clamp(bounds[2].0, bounds[2].1),
    ];
    let out = optimize::polish(objective, &x0, &bounds, 4, 2000)?;
    let model = VariogramModel::new(family, out.x[0], out.x[1], out.x[2], smoothness)?;

    // Best flat fit sum N (g_hat - c)^2 / c^2 has the closed-form optimum
    // c = sum N g_hat^2 / sum N g_hat; the fitted model must beat it by a
    // clear margin before the residuals count as spatially dependent.
    let ng: f64 = occupied.iter().map(|&(_, g, n)| n * g).sum();
    let ngg: f64 = occupied.iter().map(|&(_, g, n)| n * g * g).sum();
    let flat_objective = if ng > 0.0 {
        let c = ngg / ng;
        occupied
            .iter()
            .map(|&(_, g, n)| n * (g - c).powi(2) / (c * c))
            .sum::<f64>()
    } else {
        0.0
    };
    let dependence_detected = out.value < DEPENDENCE_OBJECTIVE_RATIO * flat_objective;

    Ok(FittedVariogram {
        model,
        converged: out.converged,
        objective: out.value,
        dependence_detected,
    })
}

/// Fitted-to-flat objective ratio below which residuals count as spatially
/// dependent.
pub const DEPENDENCE_OBJECTIVE_RATIO: f64 = 0.75;

/// Moment-based starting point for `fit`: the nugget from the shortest
/// occupied lag, the sill from the long-lag plateau, and the range from the
/// lag where the semivariance first reaches 63% of the way to the sill.
pub fn initial_guess(
    empirical: &EmpiricalVariogram,
    family: VariogramFamily,
    kappa_fixed: f64,
) -> Result<VariogramModel> {
    let occupied: Vec<(f64, f64)> = empirical
        .bin_centres
        .iter()
        .zip(&empirical.semivariances)
        .zip(&empirical.pair_counts)
        .filter(|&(_, &c)| c > 0)
        .map(|((&h, &g), _)| (h, g))
        .collect();
    if occupied.is_empty() {
        return Err(Error::VariogramFit("no occupied bins".into()));
    }
    let tail_start = occupied.len() - occupied.len().div_ceil(3);
    let sill = (occupied[tail_start..].iter().map(|&(_, g)| g).sum::<f64>()
        / (occupied.len() - tail_start) as f64)
        .max(1e-12);
    let nugget = occupied[0].1.clamp(0.05 * sill, 0.9 * sill);
    let target = nugget + 0.63 * (sill - nugget);
    let range_lag = occupied
        .iter()
        .find(|&&(_, g)| g >= target)
        .map(|&(h, _)| h)
        .unwrap_or(occupied[occupied.len() / 2].0);
    // For the Matérn the effective decay scale is a few range parameters.
    let range = (range_lag / 2.0).max(1e-3);
    let smoothness = match family {
        VariogramFamily::Matern => Some(kappa_fixed),
        VariogramFamily::Exponential => None,
    };
    VariogramModel::new(family, nugget, (sill - nugget).max(0.0), range, smoothness)
}

/// Moran's I of the residuals over a symmetrised k-nearest-neighbour graph,
/// with the moments of I under the null of independent normal residuals.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MoranTest {
    pub statistic: f64,
    pub expected: f64,
    pub variance: f64,
    /// Standardised statistic; large positive values indicate positive
    /// spatial autocorrelation.
    pub z: f64,
}

pub fn morans_i(residuals: &ObservationSet, k_neighbors: usize) -> Result<MoranTest> {
    let n = residuals.len();
    if n < 4 {
        return Err(Error::invalid("Moran's I needs at least 4 observations"));
    }
    let k = k_neighbors.clamp(1, n - 1);
    let locs = residuals.locations();

    // Symmetrised kNN adjacency.
    let mut w = vec![vec![false; n]; n];
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (locs[i].distance(&locs[j]), j))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in dists.iter().take(k) {
            w[i][j] = true;
            w[j][i] = true;
        }
    }

    let mean = residuals.mean_value();
    let z: Vec<f64> = residuals.values().iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    if ss <= 0.0 {
        return Err(Error::invalid("constant residuals have no autocorrelation"));
    }

    let mut s0 = 0.0;
    let mut cross = 0.0;
    let mut degree = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if w[i][j] {
                s0 += 1.0;
                cross += z[i] * z[j];
                degree[i] += 1.0;
            }
        }
    }
    let nf = n as f64;
    let statistic = nf / s0 * cross / ss;
    let expected = -1.0 / (nf - 1.0);
    // Normality-assumption moments; binary symmetric weights give
    // S1 = 2 S0 and S2 = sum (2 deg_i)^2.
    let s1 = 2.0 * s0;
    let s2: f64 = degree.iter().map(|d| (2.0 * d).powi(2)).sum();
    let variance = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0)
        / (s0 * s0 * (nf * nf - 1.0))
        - expected * expected;
    let z_score = (statistic - expected) / variance.sqrt();
    Ok(MoranTest {
        statistic,
        expected,
        variance,
        z: z_score,
    })
}

/// One-sided 1% normal critical value for the Moran z-score.
pub const MORAN_Z_CRITICAL: f64 = 2.326;

/// Convenience wrapper for residual diagnostics: default binning, moment
/// initial guess, Matérn fit with fixed smoothness. `dependence_detected`
/// comes from Moran's I on the raw residuals (4-nearest-neighbour graph,
/// one-sided 1% level), which is far sharper than the binned objective
/// comparison `fit` falls back on.
pub fn fit_residual_variogram(residuals: &ObservationSet, kappa: f64) -> Result<FittedVariogram> {
    fit_residual_variogram_from(residuals, kappa, None)
}

/// As `fit_residual_variogram`, but optionally warm-started from an earlier
/// fit so that iterated refits stay in one basin of the WLS surface instead
/// of hopping between near-equivalent optima.
pub fn fit_residual_variogram_from(
    residuals: &ObservationSet,
    kappa: f64,
    warm_start: Option<&VariogramModel>,
) -> Result<FittedVariogram> {
    let empirical = default_empirical_variogram(residuals)?;
    let moment_init = initial_guess(&empirical, VariogramFamily::Matern, kappa)?;
    let mut fitted = fit(&empirical, VariogramFamily::Matern, kappa, &moment_init)?;
    if let Some(previous) = warm_start {
        let warm = fit(&empirical, VariogramFamily::Matern, kappa, previous)?;
        if warm.objective < fitted.objective {
            fitted = warm;
        }
    }
    fitted.dependence_detected = morans_i(residuals, 4)
        .map(|t| t.z > MORAN_Z_CRITICAL)
        .unwrap_or(false);
    Ok(fitted)
}
