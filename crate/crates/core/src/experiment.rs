//! Replicated simulation studies: generate spatially correlated datasets,
//! run the configured estimators, and summarise bias and spread.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    calibrate_iterative, CalibrationConfig, CostKind, ForwardModel, ToyPlume,
};
use crate::ciweights::compute_weights;
use crate::cost::{estimate_mean, spatial_ml_mean, MeanMode};
use crate::error::{Error, Result};
use crate::gpsim::{
    sample_locations, simulate_gp, spatial_dependence_setting, stream_seed, DependenceLevel,
    Rect, SamplingScheme, SALT_FIELD, SALT_LOCATIONS,
};
use crate::spatial::{Location, ObservationSet};
use crate::variogram::{fit_residual_variogram, VariogramModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Unweighted,
    Weighted,
    SpatialMl,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Unweighted => "unweighted",
            EstimatorKind::Weighted => "weighted",
            EstimatorKind::SpatialMl => "spatial_ml",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardModelKind {
    #[default]
    ConstantMean,
    ToyPlume,
}

/// A reproducible simulation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentScenario {
    #[serde(default)]
    pub name: Option<String>,
    pub scheme: SamplingScheme,
    #[serde(default = "default_dependence")]
    pub dependence: DependenceLevel,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub forward_model: ForwardModelKind,
    /// Residual variogram for the plume study; defaults to the deposit-load
    /// residual fit (Matérn, nugget 0.0106, partial sill 0.0407, range 2.84).
    #[serde(default)]
    pub residual_variogram: Option<VariogramModel>,
    /// True plume parameters; defaults to the bundled truth.
    #[serde(default)]
    pub plume_truth: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Overrides for the plume calibration loop.
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
}

fn default_dependence() -> DependenceLevel {
    DependenceLevel::Mid
}

fn default_replicates() -> usize {
    100
}

pub fn default_plume_truth() -> Vec<f64> {
    vec![5.0e4, 3.0, -2.0, 8.0, 1.5]
}

pub fn default_residual_variogram() -> VariogramModel {
    VariogramModel::matern(0.0105742, 0.04067892, 2.84104255, 1.0).expect("valid preset")
}

/// One estimate of one parameter in one replicate.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateRecord {
    pub replicate: usize,
    pub estimator: EstimatorKind,
    pub parameter: String,
    pub estimate: f64,
}

/// Convergence bookkeeping for the plume calibrations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub replicate: usize,
    pub converged: bool,
    pub weight_rounds: usize,
    pub max_delta_w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasSpread {
    /// Median estimate minus truth; percentage of truth when `percentage`.
    pub median_bias: f64,
    /// Median absolute deviation from the median estimate; percentage of
    /// truth when `percentage`.
    pub median_abs_deviation: f64,
    /// False when the truth is zero and the values are reported absolutely.
    pub percentage: bool,
}

/// Median bias and median absolute deviation of the estimates against the
/// truth, as percentages of |truth| so the spread stays positive for
/// negative parameters. A zero truth switches to absolute values (flagged
/// with `percentage = false`).
pub fn summarize(estimates: &[f64], truth: f64) -> Result<BiasSpread> {
    if estimates.is_empty() {
        return Err(Error::invalid("no estimates to summarize"));
    }
    let med = median(estimates);
    let deviations: Vec<f64> = estimates.iter().map(|e| (e - med).abs()).collect();
    let mad = median(&deviations);
    if truth == 0.0 {
        Ok(BiasSpread {
            median_bias: med,
            median_abs_deviation: mad,
            percentage: false,
        })
    } else {
        Ok(BiasSpread {
            median_bias: 100.0 * (med - truth) / truth.abs(),
            median_abs_deviation: 100.0 * mad / truth.abs(),
            percentage: true,
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterStats {
    pub truth: f64,
    pub median_bias: f64,
    pub median_abs_deviation: f64,
    pub percentage: bool,
    pub sample_sd: f64,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub name: Option<String>,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: BTreeMap<String, BTreeMap<String, ParameterStats>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutput {
    pub summary: ScenarioSummary,
    pub records: Vec<EstimateRecord>,
    pub calibration_stats: Option<Vec<CalibrationStats>>,
}

/// The one-round weighting procedure for the process-mean experiments:
/// residuals from the equal-weight fit, a Matérn refit, conditional-
/// information weights, then the weighted mean. Falls back to the sample
/// mean when the residual variogram cannot be fitted.
pub fn weighted_mean_estimate(obs: &ObservationSet) -> f64 {
    let unweighted = obs.mean_value();
    let residuals: Vec<f64> = obs.values().iter().map(|y| unweighted - y).collect();
    let residual_obs = match obs.with_values(residuals) {
        Ok(o) => o,
        Err(_) => return unweighted,
    };
    let weights = match fit_residual_variogram(&residual_obs, 1.0) {
        Ok(fitted) if fitted.dependence_detected => {
            match compute_weights(&residual_obs, &fitted.model) {
                Ok(wv) => wv.w,
                Err(_) => return unweighted,
            }
        }
        _ => return unweighted,
    };
    estimate_mean(obs, MeanMode::Weighted, Some(&weights)).unwrap_or(unweighted)
}

fn validate(scenario: &ExperimentScenario) -> Result<()> {
    if scenario.replicates == 0 {
        return Err(Error::invalid("replicates must be >= 1"));
    }
    if scenario.estimators.is_empty() {
        return Err(Error::invalid("estimator set must not be empty"));
    }
    if scenario.forward_model == ForwardModelKind::ToyPlume
        && scenario.estimators.contains(&EstimatorKind::SpatialMl)
    {
        return Err(Error::invalid(
            "spatial_ml estimates a process mean; use it with the constant_mean model",
        ));
    }
    if let Some(truth) = &scenario.plume_truth {
        if truth.len() != 5 {
            return Err(Error::invalid(format!(
                "plume truth needs 5 parameters, got {}",
                truth.len()
            )));
        }
    }
    Ok(())
}

/// Run every replicate of a scenario. Replicates execute in parallel, each
/// on its own RNG stream derived from (seed, replicate), so the output is
/// deterministic given the scenario.
pub fn run_scenario(scenario: &ExperimentScenario) -> Result<ScenarioOutput> {
    validate(scenario)?;
    match scenario.forward_model {
        ForwardModelKind::ConstantMean => run_constant_mean(scenario),
        ForwardModelKind::ToyPlume => run_toy_plume(scenario),
    }
}

fn resolve_sites(
    scenario: &ExperimentScenario,
    replicate: usize,
    fixed: &Option<Vec<Location>>,
) -> Result<Vec<Location>> {
    match fixed {
        Some(sites) => Ok(sites.clone()),
        None => sample_locations(
            &scenario.scheme,
            stream_seed(scenario.seed, replicate as u64, SALT_LOCATIONS),
        ),
    }
}

fn fixed_sites(scenario: &ExperimentScenario) -> Result<Option<Vec<Location>>> {
    match &scenario.scheme {
        SamplingScheme::RandomN { .. } => Ok(None),
        other => Ok(Some(sample_locations(
            other,
            stream_seed(scenario.seed, 0, SALT_LOCATIONS),
        )?)),
    }
}

fn run_constant_mean(scenario: &ExperimentScenario) -> Result<ScenarioOutput> {
    let truth_model = spatial_dependence_setting(scenario.dependence);
    let sites = fixed_sites(scenario)?;

    let per_replicate: Vec<Result<Vec<EstimateRecord>>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<Vec<EstimateRecord>> {
                let locations = resolve_sites(scenario, r, &sites)?;
                let obs = simulate_gp(
                    &locations,
                    &truth_model,
                    0.0,
                    stream_seed(scenario.seed, r as u64, SALT_FIELD),
                )?;
                let mut records = Vec::new();
                for estimator in &scenario.estimators {
                    let estimate = match estimator {
                        EstimatorKind::Unweighted => obs.mean_value(),
                        EstimatorKind::Weighted => weighted_mean_estimate(&obs),
                        EstimatorKind::SpatialMl => spatial_ml_mean(&obs, 1.0, None)?.mean,
                    };
                    records.push(EstimateRecord {
                        replicate: r,
                        estimator: *estimator,
                        parameter: "mean".into(),
                        estimate,
                    });
                }
                Ok(records)
            };
            run().map_err(|e| e.with_replicate(r))
        })
        .collect();

    let mut records = Vec::new();
    for replicate in per_replicate {
        records.extend(replicate?);
    }
    let truths = BTreeMap::from([("mean".to_string(), 0.0)]);
    Ok(ScenarioOutput {
        summary: summarise_records(scenario, &records, &truths)?,
        records,
        calibration_stats: None,
    })
}

fn run_toy_plume(scenario: &ExperimentScenario) -> Result<ScenarioOutput> {
    let plume = ToyPlume::centred_on(&Rect::square(50.0));
    let truth = scenario.plume_truth.clone().unwrap_or_else(default_plume_truth);
    let residual_model = scenario
        .residual_variogram
        .unwrap_or_else(default_residual_variogram);
    let config_base = scenario.calibration.clone().unwrap_or(CalibrationConfig {
        cost: CostKind::Wmse,
        log10_transform: true,
        ..CalibrationConfig::default()
    });
    let sites = fixed_sites(scenario)?;
    let names = plume.parameter_names();

    let per_replicate: Vec<Result<(Vec<EstimateRecord>, CalibrationStats)>> = (0
        ..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<(Vec<EstimateRecord>, CalibrationStats)> {
                let locations = resolve_sites(scenario, r, &sites)?;
                let surface = plume.predict(&truth, &locations)?;
                let noise = simulate_gp(
                    &locations,
                    &residual_model,
                    0.0,
                    stream_seed(scenario.seed, r as u64, SALT_FIELD),
                )?;
                // Multiplicative residual structure on the load surface.
                let values: Vec<f64> = surface
                    .iter()
                    .zip(noise.values())
                    .map(|(s, e)| 10f64.powf(s.log10() + e))
                    .collect();
                let obs = ObservationSet::new(locations, values, None)?;
                let config = CalibrationConfig {
                    seed: stream_seed(scenario.seed, r as u64, 3),
                    ..config_base.clone()
                };
                let result = calibrate_iterative(&plume, &obs, &config)?;

                let mut records = Vec::new();
                for estimator in &scenario.estimators {
                    let theta = match estimator {
                        EstimatorKind::Unweighted => result.unweighted_theta(),
                        EstimatorKind::Weighted => result.theta(),
                        EstimatorKind::SpatialMl => unreachable!("rejected in validation"),
                    };
                    for (name, value) in names.iter().zip(theta) {
                        records.push(EstimateRecord {
                            replicate: r,
                            estimator: *estimator,
                            parameter: name.clone(),
                            estimate: *value,
                        });
                    }
                }
                let stats = CalibrationStats {
                    replicate: r,
                    converged: result.converged,
                    weight_rounds: result.weight_rounds,
                    max_delta_w: result
                        .iterations
                        .iter()
                        .filter_map(|it| it.max_delta_w)
                        .collect(),
                };
                Ok((records, stats))
            };
            run().map_err(|e| e.with_replicate(r))
        })
        .collect();

    let mut records = Vec::new();
    let mut stats = Vec::new();
    for replicate in per_replicate {
        let (rec, st) = replicate?;
        records.extend(rec);
        stats.push(st);
    }
    stats.sort_by_key(|s| s.replicate);
    let truths: BTreeMap<String, f64> = names
        .iter()
        .cloned()
        .zip(truth.iter().copied())
        .collect();
    Ok(ScenarioOutput {
        summary: summarise_records(scenario, &records, &truths)?,
        records,
        calibration_stats: Some(stats),
    })
}

fn summarise_records(
    scenario: &ExperimentScenario,
    records: &[EstimateRecord],
    truths: &BTreeMap<String, f64>,
) -> Result<ScenarioSummary> {
    let mut estimators = BTreeMap::new();
    for estimator in &scenario.estimators {
        let mut parameters = BTreeMap::new();
        for (parameter, &truth) in truths {
            let estimates: Vec<f64> = records
                .iter()
                .filter(|r| r.estimator == *estimator && &r.parameter == parameter)
                .map(|r| r.estimate)
                .collect();
            let spread = summarize(&estimates, truth)?;
            parameters.insert(
                parameter.clone(),
                ParameterStats {
                    truth,
                    median_bias: spread.median_bias,
                    median_abs_deviation: spread.median_abs_deviation,
                    percentage: spread.percentage,
                    sample_sd: sample_sd(&estimates),
                    estimates,
                },
            );
        }
        estimators.insert(estimator.label().to_string(), parameters);
    }
    Ok(ScenarioSummary {
        name: scenario.name.clone(),
        replicates: scenario.replicates,
        seed: scenario.seed,
        estimators,
    })
}

/// Write per-replicate estimates as `replicate,estimator,parameter,estimate`.
pub fn write_records_csv(records: &[EstimateRecord], path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path.as_ref())?;
    out.write_record(["replicate", "estimator", "parameter", "estimate"])
        .map_err(|e| Error::Csv {
            row: 0,
            message: e.to_string(),
        })?;
    for r in records {
        out.write_record([
            r.replicate.to_string(),
            r.estimator.label().to_string(),
            r.parameter.clone(),
            r.estimate.to_string(),
        ])
        .map_err(|e| Error::Csv {
            row: 0,
            message: e.to_string(),
        })?;
    }
    out.flush()?;
    Ok(())
}
