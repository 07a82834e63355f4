//! Iterative reweighted calibration around a pluggable forward model.
//!
//! The loop: calibrate with equal weights, fit a variogram to the residuals,
//! turn it into conditional-information weights, recalibrate with the
//! weighted cost, and repeat until the weights stop moving (their maximum
//! absolute change falls under the convergence threshold).

use std::fmt::Write as _;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::ciweights::compute_weights;
use crate::error::{Error, Result};
use crate::gpsim::Rect;
use crate::optimize;
use crate::spatial::{Location, ObservationSet};
use crate::variogram::{fit_residual_variogram_from, FittedVariogram, VariogramModel};

/// A deterministic parametric predictor of the observed quantity at sites.
pub trait ForwardModel: Sync {
    fn name(&self) -> &str;
    fn parameter_names(&self) -> Vec<String>;
    /// Finite per-parameter [lo, hi] with lo < hi.
    fn bounds(&self) -> Vec<(f64, f64)>;
    fn predict(&self, theta: &[f64], locations: &[Location]) -> Result<Vec<f64>>;
}

fn check_theta(model: &dyn ForwardModel, theta: &[f64]) -> Result<()> {
    let bounds = model.bounds();
    if theta.len() != bounds.len() {
        return Err(Error::ForwardModel {
            model: model.name().into(),
            message: format!(
                "expected {} parameters, got {}",
                bounds.len(),
                theta.len()
            ),
        });
    }
    Ok(())
}

/// A flat mean surface; the forward model of the Gaussian-process studies.
#[derive(Debug, Clone)]
pub struct ConstantMean {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ConstantMean {
    fn default() -> Self {
        ConstantMean {
            lo: -100.0,
            hi: 100.0,
        }
    }
}

impl ForwardModel for ConstantMean {
    fn name(&self) -> &str {
        "constant_mean"
    }

    fn parameter_names(&self) -> Vec<String> {
        vec!["mean".into()]
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(self.lo, self.hi)]
    }

    fn predict(&self, theta: &[f64], locations: &[Location]) -> Result<Vec<f64>> {
        check_theta(self, theta)?;
        Ok(vec![theta[0]; locations.len()])
    }
}

/// A smooth positive deposition surface standing in for a full dispersal
/// code: an elliptical Gaussian plume centred on the source with parameters
/// (total mass, wind offset x, wind offset y, spread, elongation).
///
/// load(x, y) = M / (2 pi rho^2 alpha) *
///     exp(-[((x - cx - u) / (rho alpha))^2 + ((y - cy - v) / rho)^2] / 2)
///
/// which integrates to M over the plane.
#[derive(Debug, Clone)]
pub struct ToyPlume {
    pub source: Location,
    pub bounds: [(f64, f64); 5],
}

impl ToyPlume {
    pub fn new(source: Location) -> Self {
        ToyPlume {
            source,
            bounds: [
                (1e4, 2.5e5), // total mass
                (-6.0, 6.0),  // wind offset x (km)
                (-6.0, 6.0),  // wind offset y (km)
                (3.0, 16.0),  // spread (km)
                (1.0, 3.0),   // elongation
            ],
        }
    }

    pub fn centred_on(domain: &Rect) -> Self {
        Self::new(domain.centre())
    }
}

impl ForwardModel for ToyPlume {
    fn name(&self) -> &str {
        "toy_plume"
    }

    fn parameter_names(&self) -> Vec<String> {
        ["mass", "offset_x", "offset_y", "spread", "elongation"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.to_vec()
    }

    fn predict(&self, theta: &[f64], locations: &[Location]) -> Result<Vec<f64>> {
        check_theta(self, theta)?;
        let (mass, u, v, spread, elongation) =
            (theta[0], theta[1], theta[2], theta[3], theta[4]);
        if !(mass > 0.0 && spread > 0.0 && elongation >= 1.0) {
            return Err(Error::ForwardModel {
                model: self.name().into(),
                message: format!(
                    "need mass > 0, spread > 0, elongation >= 1; got ({mass}, {spread}, {elongation})"
                ),
            });
        }
        let peak = mass / (2.0 * std::f64::consts::PI * spread * spread * elongation);
        let cx = self.source.x + u;
        let cy = self.source.y + v;
        Ok(locations
            .iter()
            .map(|l| {
                let dx = (l.x - cx) / (spread * elongation);
                let dy = (l.y - cy) / spread;
                peak * (-0.5 * (dx * dx + dy * dy)).exp()
            })
            .collect())
    }
}

/// Adapter that drives an external executable through the filesystem.
///
/// The command template is run through `sh -c` after substituting `{params}`
/// (a `name=value` parameter file), `{sites}` (a `x_km,y_km` CSV) and
/// `{out}` (the path the process must fill with one predicted value per
/// line, in site order). Each call gets its own temporary directory, so
/// predictions may run concurrently.
#[derive(Debug, Clone)]
pub struct ExternalModel {
    pub name: String,
    pub parameters: Vec<ExternalParameter>,
    pub command: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalParameter {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl ForwardModel for ExternalModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.parameters.iter().map(|p| (p.lo, p.hi)).collect()
    }

    fn predict(&self, theta: &[f64], locations: &[Location]) -> Result<Vec<f64>> {
        check_theta(self, theta)?;
        let dir = tempdir()?;
        let params_path = dir.join("params.txt");
        let sites_path = dir.join("sites.csv");
        let out_path = dir.join("predicted.csv");

        let mut params = String::new();
        for (p, value) in self.parameters.iter().zip(theta) {
            writeln!(params, "{}={}", p.name, value).expect("string write");
        }
        std::fs::write(&params_path, params)?;

        let mut sites = String::from("x_km,y_km\n");
        for l in locations {
            writeln!(sites, "{},{}", l.x, l.y).expect("string write");
        }
        std::fs::write(&sites_path, sites)?;

        let command = self
            .command
            .replace("{params}", &params_path.display().to_string())
            .replace("{sites}", &sites_path.display().to_string())
            .replace("{out}", &out_path.display().to_string());
        let output = Command::new("sh").arg("-c").arg(&command).output()?;
        if !output.status.success() {
            let err = Err(Error::External {
                message: format!(
                    "command exited with {}: stderr: {} stdout: {}",
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim(),
                    String::from_utf8_lossy(&output.stdout).trim(),
                ),
            });
            let _ = std::fs::remove_dir_all(&dir);
            return err;
        }

        let text = std::fs::read_to_string(&out_path).map_err(|e| Error::External {
            message: format!("missing output file {}: {e}", out_path.display()),
        })?;
        let _ = std::fs::remove_dir_all(&dir);
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(line.parse::<f64>().map_err(|_| Error::External {
                message: format!("non-numeric prediction on line {}: '{line}'", i + 1),
            })?);
        }
        if values.len() != locations.len() {
            return Err(Error::External {
                message: format!(
                    "expected {} predictions, got {}",
                    locations.len(),
                    values.len()
                ),
            });
        }
        Ok(values)
    }
}

fn tempdir() -> Result<std::path::PathBuf> {
    let base = std::env::temp_dir();
    for attempt in 0..64 {
        let candidate = base.join(format!(
            "geocal-ext-{}-{}-{attempt}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0)
        ));
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::External {
        message: "could not create a temporary directory".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Mse,
    Wmse,
}

/// Settings for `calibrate_iterative`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    #[serde(default = "default_cost")]
    pub cost: CostKind,
    /// Objective-evaluation budget for each optimization round.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Reweighting stops once max |delta w| falls below this.
    #[serde(default = "default_threshold")]
    pub convergence_threshold: f64,
    #[serde(default = "default_max_reweights")]
    pub max_reweight_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Calibrate on log10-transformed values (positive data only); matches
    /// residual magnitudes of deposit-load survey data.
    #[serde(default)]
    pub log10_transform: bool,
    /// Smoothness of the Matérn refit to residuals each round.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_cost() -> CostKind {
    CostKind::Wmse
}
fn default_budget() -> usize {
    6000
}
fn default_threshold() -> f64 {
    0.1
}
fn default_max_reweights() -> usize {
    10
}
fn default_kappa() -> f64 {
    1.0
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            cost: default_cost(),
            budget: default_budget(),
            convergence_threshold: default_threshold(),
            max_reweight_iterations: default_max_reweights(),
            seed: 0,
            log10_transform: false,
            kappa: default_kappa(),
        }
    }
}

impl CalibrationConfig {
    fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::invalid("optimizer budget must be >= 1"));
        }
        if !(self.convergence_threshold.is_finite() && self.convergence_threshold >= 0.0) {
            return Err(Error::invalid("convergence threshold must be >= 0"));
        }
        Ok(())
    }
}

/// One row of the calibration trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationIteration {
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    /// Variogram fitted to the residuals that produced `weights`; absent for
    /// the initial equal-weight round and when the fit fell back.
    pub variogram: Option<FittedVariogram>,
    /// max |w - w_previous|; absent for the initial round.
    pub max_delta_w: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub iterations: Vec<CalibrationIteration>,
    pub converged: bool,
    /// Number of optimizations run with non-initial weights.
    pub weight_rounds: usize,
}

impl CalibrationResult {
    pub fn theta(&self) -> &[f64] {
        &self.iterations.last().expect("at least one iteration").theta
    }

    pub fn weights(&self) -> &[f64] {
        &self
            .iterations
            .last()
            .expect("at least one iteration")
            .weights
    }

    /// The equal-weight estimate from the first round.
    pub fn unweighted_theta(&self) -> &[f64] {
        &self.iterations.first().expect("at least one iteration").theta
    }
}

fn transform(values: &[f64], log10: bool) -> Result<Vec<f64>> {
    if !log10 {
        return Ok(values.to_vec());
    }
    values
        .iter()
        .map(|&v| {
            if v > 0.0 {
                Ok(v.log10())
            } else {
                Err(Error::invalid(format!(
                    "log10 transform requires positive values, got {v}"
                )))
            }
        })
        .collect()
}

/// Bounded global search (differential evolution) plus a Nelder-Mead polish
/// of the (weighted) cost over the model's parameter box.
pub fn optimize_params(
    model: &dyn ForwardModel,
    obs: &ObservationSet,
    cost_kind: CostKind,
    weights: &[f64],
    log10: bool,
    budget: usize,
    seed: u64,
) -> Result<optimize::OptimizeOutcome> {
    let bounds = model.bounds();
    if weights.len() != obs.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} observations",
            weights.len(),
            obs.len()
        )));
    }
    let y = transform(obs.values(), log10)?;
    let locations = obs.locations();
    let n = y.len() as f64;

    let mut predict_error: Option<Error> = None;
    let objective = |theta: &[f64]| -> f64 {
        if predict_error.is_some() {
            return f64::INFINITY;
        }
        let predicted = match model.predict(theta, locations) {
            Ok(p) => p,
            Err(Error::External { message }) => {
                predict_error = Some(Error::External { message });
                return f64::INFINITY;
            }
            Err(_) => return f64::INFINITY,
        };
        let mut total = 0.0;
        for (i, (p, yi)) in predicted.iter().zip(&y).enumerate() {
            let p = if log10 {
                if *p <= 0.0 {
                    return f64::INFINITY;
                }
                p.log10()
            } else {
                *p
            };
            let sq = (p - yi).powi(2);
            total += match cost_kind {
                CostKind::Mse => sq,
                CostKind::Wmse => weights[i] * sq,
            };
        }
        total / n
    };

    let out = optimize::minimize_bounded(objective, &bounds, budget, seed)?;
    if let Some(e) = predict_error {
        return Err(e);
    }
    if !out.value.is_finite() {
        return Err(Error::Optimizer(
            "objective stayed non-finite over the whole budget".into(),
        ));
    }
    Ok(out)
}

/// The reweighted calibration loop.
///
/// Round 0 calibrates with equal weights. Each later round refits the
/// residual variogram, recomputes conditional-information weights, and stops
/// as soon as the weights moved less than the threshold from the previous
/// round (without re-optimizing, since the weights in force are unchanged);
/// otherwise it re-optimizes with the new weights, up to the iteration cap.
/// `cost = Mse` skips reweighting entirely.
pub fn calibrate_iterative(
    model: &dyn ForwardModel,
    obs: &ObservationSet,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    config.validate()?;
    let n = obs.len();
    let ones = vec![1.0; n];
    let first = optimize_params(
        model,
        obs,
        CostKind::Mse,
        &ones,
        config.log10_transform,
        config.budget,
        config.seed,
    )?;
    let mut iterations = vec![CalibrationIteration {
        theta: first.x.clone(),
        weights: ones.clone(),
        variogram: None,
        max_delta_w: None,
    }];

    if config.cost == CostKind::Mse || config.max_reweight_iterations == 0 {
        return Ok(CalibrationResult {
            iterations,
            converged: true,
            weight_rounds: 0,
        });
    }

    let mut theta = first.x;
    let mut previous_weights = ones;
    let mut previous_model: Option<VariogramModel> = None;
    let mut converged = false;
    let mut weight_rounds = 0;

    for round in 1..=config.max_reweight_iterations {
        let predicted = model.predict(&theta, obs.locations())?;
        let residuals: Vec<f64> = transform(&predicted, config.log10_transform)?
            .iter()
            .zip(transform(obs.values(), config.log10_transform)?)
            .map(|(p, y)| p - y)
            .collect();
        let residual_obs = obs.with_values(residuals)?;

        let refit =
            fit_residual_variogram_from(&residual_obs, config.kappa, previous_model.as_ref());
        let (variogram, weights) = match refit {
            Ok(fitted) if fitted.dependence_detected => {
                let wv = compute_weights(&residual_obs, &fitted.model)?;
                previous_model = Some(fitted.model);
                (Some(fitted), wv.w)
            }
            // Residuals indistinguishable from independent noise.
            Ok(fitted) => (Some(fitted), vec![1.0; n]),
            // Unfittable residual structure: fall back to equal weights.
            Err(_) => (None, vec![1.0; n]),
        };

        let max_delta = weights
            .iter()
            .zip(&previous_weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        if max_delta < config.convergence_threshold {
            iterations.push(CalibrationIteration {
                theta: theta.clone(),
                weights,
                variogram,
                max_delta_w: Some(max_delta),
            });
            converged = true;
            break;
        }

        // Same seed every round: the optimizer explores identical population
        // paths over the reweighted objective, so weight deltas between
        // rounds reflect the weights, not search noise.
        let out = optimize_params(
            model,
            obs,
            CostKind::Wmse,
            &weights,
            config.log10_transform,
            config.budget,
            config.seed,
        )?;
        let _ = round;
        theta = out.x;
        weight_rounds += 1;
        iterations.push(CalibrationIteration {
            theta: theta.clone(),
            weights: weights.clone(),
            variogram,
            max_delta_w: Some(max_delta),
        });
        previous_weights = weights;
    }

    Ok(CalibrationResult {
        iterations,
        converged,
        weight_rounds,
    })
}
