//! Unweighted and weighted cost functions, their Gaussian-likelihood
//! identities, and the mean estimators compared in the simulation studies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize;
use crate::spatial::ObservationSet;
use crate::variogram::VariogramModel;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} observed vs {} predicted",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok(())
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::invalid(format!(
            "length mismatch: {} weights vs {n} observations",
            w.len()
        )));
    }
    if w.iter().any(|wi| !(0.0..=1.0).contains(wi)) {
        return Err(Error::invalid("weights must lie in [0, 1]"));
    }
    Ok(())
}

/// Mean square error: (1/n) sum (y_hat_i - y_i)^2.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| (b - a).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

/// Weighted mean square error: (1/n) sum w_i (y_hat_i - y_i)^2.
pub fn wmse(y: &[f64], y_hat: &[f64], w: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    check_weights(w, y.len())?;
    Ok(y.iter()
        .zip(y_hat)
        .zip(w)
        .map(|((a, b), wi)| wi * (b - a).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

/// Mean absolute error. Provided for completeness; the experiments exercise
/// the MSE family only.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (b - a).abs()).sum::<f64>() / y.len() as f64)
}

/// Weighted mean absolute error.
pub fn wmae(y: &[f64], y_hat: &[f64], w: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    check_weights(w, y.len())?;
    Ok(y.iter()
        .zip(y_hat)
        .zip(w)
        .map(|((a, b), wi)| wi * (b - a).abs())
        .sum::<f64>()
        / y.len() as f64)
}

/// Negative log-likelihood of independent Gaussians with common scale:
/// sum (y_hat_i - y_i)^2 / (2 sigma^2) + ln(sigma sqrt(2 pi)).
/// Equals n MSE / (2 sigma^2) + n ln(sigma sqrt(2 pi)).
pub fn gaussian_nll(y: &[f64], y_hat: &[f64], sigma: f64) -> Result<f64> {
    check_lengths(y, y_hat)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let per_point_const = sigma.ln() + 0.5 * LN_2PI;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| (b - a).powi(2) / (2.0 * sigma * sigma) + per_point_const)
        .sum())
}

/// Negative log-likelihood of independent Laplace errors with scale b; the
/// MAE analogue of `gaussian_nll`.
pub fn laplace_nll(y: &[f64], y_hat: &[f64], b: f64) -> Result<f64> {
    check_lengths(y, y_hat)?;
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::invalid(format!("scale must be > 0, got {b}")));
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, bhat)| (bhat - a).abs() / b + (2.0 * b).ln())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    Unweighted,
    Weighted,
}

/// Minimiser of the (weighted) MSE over a constant mean surface:
/// sum w_i y_i / sum w_i. Weights come from the argument, falling back to the
/// observation set's own weight column.
pub fn estimate_mean(obs: &ObservationSet, mode: MeanMode, w: Option<&[f64]>) -> Result<f64> {
    match mode {
        MeanMode::Unweighted => Ok(obs.mean_value()),
        MeanMode::Weighted => {
            let w = w
                .or_else(|| obs.weights())
                .ok_or_else(|| Error::invalid("weighted mode requires weights"))?;
            check_weights(w, obs.len())?;
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid("all weights are zero"));
            }
            Ok(obs
                .values()
                .iter()
                .zip(w)
                .map(|(y, wi)| wi * y)
                .sum::<f64>()
                / total)
        }
    }
}

/// Search box for the full spatial likelihood.
#[derive(Debug, Clone, Copy)]
pub struct MlBounds {
    pub nugget: (f64, f64),
    pub partial_sill: (f64, f64),
    pub range: (f64, f64),
}

impl MlBounds {
    /// nugget and partial sill in [1e-6, 10 * sample variance], range in
    /// [0.1, bounding-box diagonal].
    pub fn defaults(obs: &ObservationSet) -> Self {
        let var = obs.value_variance().max(1e-6);
        let diag = obs.bounding_diagonal().max(1.0);
        MlBounds {
            nugget: (1e-6, 10.0 * var),
            partial_sill: (1e-6, 10.0 * var),
            range: (0.1, diag),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpatialMlFit {
    pub mean: f64,
    pub model: VariogramModel,
    pub converged: bool,
    pub nll: f64,
}

/// Full spatial maximum likelihood for a constant-mean Gaussian process with
/// Matérn covariance (smoothness fixed).
///
/// Two nuisance dimensions fall out in closed form at each covariance
/// setting: the mean is the GLS value (1' Sigma^{-1} y) / (1' Sigma^{-1} 1)
/// and the overall variance scale s of Sigma = s (w I + (1 - w) R(phi))
/// minimises the likelihood at s = r' C^{-1} r / n. The bounded search then
/// runs over (nugget share w, range phi) only, with s clamped back into the
/// requested nugget/partial-sill boxes.
pub fn spatial_ml_mean(
    obs: &ObservationSet,
    kappa_fixed: f64,
    bounds: Option<MlBounds>,
) -> Result<SpatialMlFit> {
    let n = obs.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "full spatial likelihood needs at least 5 observations, got {n}"
        )));
    }
    let bounds = bounds.unwrap_or_else(|| MlBounds::defaults(obs));
    let profiler = ScaleProfiler::new(obs, kappa_fixed, bounds);
    let box2 = [(1e-4, 1.0 - 1e-4), bounds.range];

    let nll_of = |x: &[f64]| -> f64 {
        match profiler.evaluate(x[0], x[1]) {
            Some(p) => p.nll,
            None => f64::INFINITY,
        }
    };
    let out = optimize::minimize_bounded(nll_of, &box2, 900, 0x5eed_11)?;
    let best = profiler
        .evaluate(out.x[0], out.x[1])
        .ok_or_else(|| Error::Singular("covariance singular at the optimum".into()))?;
    let model = VariogramModel::matern(
        best.scale * out.x[0],
        best.scale * (1.0 - out.x[0]),
        out.x[1],
        kappa_fixed,
    )?;
    Ok(SpatialMlFit {
        mean: best.mean,
        model,
        converged: out.converged && best.nll.is_finite(),
        nll: best.nll,
    })
}

struct ProfilePoint {
    nll: f64,
    mean: f64,
    scale: f64,
}

struct ScaleProfiler {
    distances: nalgebra::DMatrix<f64>,
    y: nalgebra::DVector<f64>,
    kappa: f64,
    bounds: MlBounds,
}

impl ScaleProfiler {
    fn new(obs: &ObservationSet, kappa: f64, bounds: MlBounds) -> Self {
        ScaleProfiler {
            distances: crate::spatial::distance_matrix(obs.locations()),
            y: nalgebra::DVector::from_column_slice(obs.values()),
            kappa,
            bounds,
        }
    }

    fn evaluate(&self, nugget_share: f64, range: f64) -> Option<ProfilePoint> {
        use crate::variogram::matern_correlation;
        let n = self.y.len();
        if !(0.0 < nugget_share && nugget_share < 1.0) || range <= 0.0 {
            return None;
        }
        let structured = 1.0 - nugget_share;
        let mut c = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            c[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let rho = structured * matern_correlation(self.distances[(i, j)] / range, self.kappa);
                c[(i, j)] = rho;
                c[(j, i)] = rho;
            }
        }
        let chol = nalgebra::Cholesky::new(c)?;
        let ones = nalgebra::DVector::from_element(n, 1.0);
        let ci_y = chol.solve(&self.y);
        let ci_1 = chol.solve(&ones);
        let denom = ones.dot(&ci_1);
        if denom <= 0.0 {
            return None;
        }
        let mean = ones.dot(&ci_y) / denom;
        let r = &self.y - &ones * mean;
        let quad = r.dot(&chol.solve(&r));
        if quad <= 0.0 {
            return None;
        }
        // Optimal scale, kept inside the requested component boxes.
        let s_lo = (self.bounds.nugget.0 / nugget_share)
            .max(self.bounds.partial_sill.0 / structured);
        let s_hi = (self.bounds.nugget.1 / nugget_share)
            .min(self.bounds.partial_sill.1 / structured);
        if s_lo > s_hi {
            return None;
        }
        let scale = (quad / n as f64).clamp(s_lo, s_hi);
        let log_det_c =
            2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let nll = 0.5
            * (quad / scale + n as f64 * scale.ln() + log_det_c + n as f64 * LN_2PI);
        Some(ProfilePoint { nll, mean, scale })
    }
}

/// GLS mean and Gaussian NLL for fixed covariance parameters. None when the
/// covariance cannot be factorized.
pub fn profile_nll(
    obs: &ObservationSet,
    nugget: f64,
    partial_sill: f64,
    range: f64,
    kappa: f64,
) -> Option<(f64, f64)> {
    let model = VariogramModel::matern(nugget, partial_sill, range, kappa).ok()?;
    let sigma = model.covariance_matrix(obs.locations());
    let chol = nalgebra::Cholesky::new(sigma)?;
    let n = obs.len();
    let y = nalgebra::DVector::from_column_slice(obs.values());
    let ones = nalgebra::DVector::from_element(n, 1.0);
    let siy = chol.solve(&y);
    let si1 = chol.solve(&ones);
    let denom = ones.dot(&si1);
    if denom <= 0.0 {
        return None;
    }
    let mean = ones.dot(&siy) / denom;
    let r = &y - &ones * mean;
    let quad = r.dot(&chol.solve(&r));
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some((0.5 * (quad + log_det + n as f64 * LN_2PI), mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpsim::{simulate_gp, stream_seed, SALT_FIELD};
    use crate::spatial::Location;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wmse_with_unit_weights_is_mse() {
        let y = [1.0, 2.0, 3.5];
        let y_hat = [0.5, 2.5, 3.0];
        let w = [1.0, 1.0, 1.0];
        assert_relative_eq!(
            wmse(&y, &y_hat, &w).unwrap(),
            mse(&y, &y_hat).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn perfect_fit_zero_cost() {
        let y = [1.0, -2.0, 0.25];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn wmse_hand_example() {
        let y = [0.0, 0.0];
        let y_hat = [1.0, 3.0];
        let w = [1.0, 0.5];
        assert_relative_eq!(wmse(&y, &y_hat, &w).unwrap(), 2.75);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wmse(&[1.0, 2.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn nll_perfect_fit_constant_term() {
        let y = [3.0, -1.0];
        let v = gaussian_nll(&y, &y, 1.0).unwrap();
        assert_relative_eq!(v, (2.0f64 * std::f64::consts::PI).sqrt().ln() * 2.0);
        assert_abs_diff_eq!(v, 1.8379, epsilon = 1e-4);
    }

    #[test]
    fn nll_identity_with_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(2..40);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y_hat: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let sigma = rng.random_range(0.1..4.0);
            let direct = gaussian_nll(&y, &y_hat, sigma).unwrap();
            let via_mse = n as f64 * mse(&y, &y_hat).unwrap() / (2.0 * sigma * sigma)
                + n as f64 * (sigma * (2.0f64 * std::f64::consts::PI).sqrt()).ln();
            assert_abs_diff_eq!(direct, via_mse, epsilon = 1e-10);
        }
    }

    #[test]
    fn doubling_sigma_shifts_by_n_ln2() {
        let y = [1.0, 2.0, 3.0];
        let a = gaussian_nll(&y, &y, 1.0).unwrap();
        let b = gaussian_nll(&y, &y, 2.0).unwrap();
        assert_relative_eq!(b - a, 3.0 * 2.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(gaussian_nll(&[1.0], &[1.0], 0.0).is_err());
        assert!(gaussian_nll(&[1.0], &[1.0], -1.0).is_err());
    }

    fn obs_with(values: &[f64], weights: Option<Vec<f64>>) -> ObservationSet {
        let locs = (0..values.len())
            .map(|i| Location::new(i as f64, 0.0))
            .collect();
        ObservationSet::new(locs, values.to_vec(), weights).unwrap()
    }

    #[test]
    fn equal_weights_give_sample_mean() {
        let o = obs_with(&[1.0, 2.0, 6.0], None);
        let m = estimate_mean(&o, MeanMode::Weighted, Some(&[0.5, 0.5, 0.5])).unwrap();
        assert_relative_eq!(m, 3.0);
        assert_relative_eq!(estimate_mean(&o, MeanMode::Unweighted, None).unwrap(), 3.0);
    }

    #[test]
    fn zero_weight_drops_point() {
        let o = obs_with(&[0.0, 10.0], None);
        let m = estimate_mean(&o, MeanMode::Weighted, Some(&[1.0, 0.0])).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let o = obs_with(&[0.0, 10.0], None);
        assert!(estimate_mean(&o, MeanMode::Weighted, Some(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn weighted_mode_requires_weights() {
        let o = obs_with(&[0.0, 10.0], None);
        assert!(estimate_mean(&o, MeanMode::Weighted, None).is_err());
    }

    #[test]
    fn duplicated_triple_counts_once_under_ci_weights() {
        // Three identical observations at weight 1/3 each contribute like a
        // single point against an isolated one.
        let o = obs_with(&[6.0, 6.0, 6.0, 0.0], None);
        let w = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0];
        let weighted = estimate_mean(&o, MeanMode::Weighted, Some(&w)).unwrap();
        let two_point = obs_with(&[6.0, 0.0], None);
        assert_relative_eq!(
            weighted,
            estimate_mean(&two_point, MeanMode::Unweighted, None).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn weighted_mean_invariant_to_weight_scale() {
        let o = obs_with(&[1.0, 4.0, -2.0, 0.5], None);
        let w = [0.9, 0.4, 0.7, 0.2];
        let scaled: Vec<f64> = w.iter().map(|x| x * 0.5).collect();
        let a = estimate_mean(&o, MeanMode::Weighted, Some(&w)).unwrap();
        let b = estimate_mean(&o, MeanMode::Weighted, Some(&scaled)).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-13);
    }

    #[test]
    fn gls_reduces_to_sample_mean_under_iid() {
        // Pure-nugget truth: the GLS mean must equal the sample mean.
        let locs: Vec<Location> = (0..12)
            .map(|i| Location::new((i % 4) as f64 * 10.0, (i / 4) as f64 * 10.0))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        let obs = ObservationSet::new(locs, values, None).unwrap();
        let (_, mean) = profile_nll(&obs, 2.0, 1e-9, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(mean, obs.mean_value(), epsilon = 1e-8);
    }

    #[test]
    fn gls_matches_direct_formula() {
        let model = VariogramModel::matern(0.8, 3.0, 3.0, 1.0).unwrap();
        let locs: Vec<Location> = (0..10)
            .map(|i| Location::new(i as f64 * 1.7, (i * i % 7) as f64))
            .collect();
        let obs = simulate_gp(&locs, &model, 2.0, 55).unwrap();
        let (_, mean) = profile_nll(&obs, 0.8, 3.0, 3.0, 1.0).unwrap();
        // direct dense evaluation
        let sigma = model.covariance_matrix(obs.locations());
        let inv = sigma.try_inverse().unwrap();
        let ones = nalgebra::DVector::from_element(10, 1.0);
        let y = nalgebra::DVector::from_column_slice(obs.values());
        let direct = ones.dot(&(&inv * &y)) / ones.dot(&(&inv * &ones));
        assert_abs_diff_eq!(mean, direct, epsilon = 1e-9);
    }

    #[test]
    fn gls_equals_wmse_minimizer_for_diagonal_covariance() {
        // Sigma = diag(1/w_i): GLS mean = sum w y / sum w.
        let w = [0.2, 0.9, 0.5, 1.0, 0.7];
        let values = [3.0, -1.0, 0.5, 2.0, 4.0];
        let locs: Vec<Location> = (0..5).map(|i| Location::new(i as f64, 0.0)).collect();
        let obs = ObservationSet::new(locs.clone(), values.to_vec(), None).unwrap();
        let sigma =
            nalgebra::DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 / w[i] } else { 0.0 });
        let chol = nalgebra::Cholesky::new(sigma).unwrap();
        let ones = nalgebra::DVector::from_element(5, 1.0);
        let y = nalgebra::DVector::from_column_slice(&values);
        let gls = ones.dot(&chol.solve(&y)) / ones.dot(&chol.solve(&ones));
        let wmse_min = estimate_mean(&obs, MeanMode::Weighted, Some(&w)).unwrap();
        assert_abs_diff_eq!(gls, wmse_min, epsilon = 1e-12);
    }

    #[test]
    fn spatial_ml_spread_no_worse_than_unweighted() {
        // 100 mid-dependence replicates at clustered sites: the ML estimator
        // spread stays at or below the unweighted spread.
        let truth = crate::gpsim::spatial_dependence_setting(crate::gpsim::DependenceLevel::Mid);
        let sites = crate::gpsim::kelud_like_layout();
        let mut ml = Vec::new();
        let mut unweighted = Vec::new();
        for r in 0..100u64 {
            let obs = simulate_gp(&sites, &truth, 0.0, stream_seed(71, r, SALT_FIELD)).unwrap();
            unweighted.push(obs.mean_value());
            ml.push(spatial_ml_mean(&obs, 1.0, None).unwrap().mean);
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
        };
        assert!(
            sd(&ml) <= sd(&unweighted) * 1.02,
            "ml sd {} vs unweighted sd {}",
            sd(&ml),
            sd(&unweighted)
        );
    }
}
