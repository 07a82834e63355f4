//! Command-line driver: variogram fitting, weight computation, calibration,
//! and the replicated simulation studies, all file-in/file-out.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use geocal::calibrate::{
    calibrate_iterative, CalibrationConfig, ConstantMean, ExternalModel, ExternalParameter,
    ForwardModel, ToyPlume,
};
use geocal::ciweights::compute_weights;
use geocal::experiment::{run_scenario, write_records_csv, ExperimentScenario};
use geocal::gpsim::{
    simulate_batch, spatial_dependence_setting, DependenceLevel, Rect, SamplingScheme,
    SimulationBatch,
};
use geocal::spatial::Location;
use geocal::variogram::{
    empirical_variogram, fit, initial_guess, morans_i, VariogramFamily, VariogramModel,
    MORAN_Z_CRITICAL,
};
use geocal::{Error, ObservationSet};

#[derive(Parser)]
#[command(
    name = "geocal",
    about = "Geostatistical model calibration with conditional-information weights",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a variogram model to the empirical variogram of an observation CSV.
    FitVariogram(FitVariogramArgs),
    /// Compute conditional-information weights for observations under a fitted model.
    Weights(WeightsArgs),
    /// Run (iterative reweighted) calibration of a forward model against observations.
    Calibrate(CalibrateArgs),
    /// Simulate Gaussian-process datasets under a sampling scheme.
    Simulate(SimulateArgs),
    /// Run a replicated estimation experiment and summarise bias and spread.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct FitVariogramArgs {
    /// Observation CSV (x_km,y_km,value[,weight]).
    #[arg(long)]
    obs: PathBuf,
    /// Output path for the fitted model JSON.
    #[arg(long)]
    model_out: PathBuf,
    /// Output path for the empirical variogram CSV.
    #[arg(long)]
    empirical_out: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    /// Largest lag to bin; defaults to half the maximum pairwise distance.
    #[arg(long)]
    max_dist: Option<f64>,
    #[arg(long, default_value = "matern")]
    family: String,
    /// Matérn smoothness (fixed during the fit).
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    obs: PathBuf,
    /// Fitted variogram model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Output CSV: the observation columns plus the weight column.
    #[arg(long)]
    weights_out: PathBuf,
    /// Optional per-point diagnostics JSON (ci, f1, f1_star, w).
    #[arg(long)]
    diagnostics_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Omit the generation timestamp from the diagnostics JSON.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    obs: PathBuf,
    /// Forward-model spec JSON (kind: constant_mean | toy_plume | external).
    #[arg(long)]
    model_spec: PathBuf,
    /// Calibration config JSON; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for replicate CSVs and the manifest JSON.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    summary_out: PathBuf,
    /// Per-replicate estimates CSV (replicate,estimator,parameter,estimate).
    #[arg(long)]
    replicates_out: Option<PathBuf>,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the replicate count in the scenario file.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    no_timestamp: bool,
}

/// Forward-model description for the calibrate subcommand.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelSpec {
    ConstantMean {
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    ToyPlume {
        #[serde(default)]
        source: Option<Location>,
    },
    External {
        name: String,
        command: String,
        parameters: Vec<ExternalParameter>,
    },
}

fn default_lo() -> f64 {
    -100.0
}
fn default_hi() -> f64 {
    100.0
}

impl ModelSpec {
    fn build(self) -> Box<dyn ForwardModel> {
        match self {
            ModelSpec::ConstantMean { lo, hi } => Box::new(ConstantMean { lo, hi }),
            ModelSpec::ToyPlume { source } => Box::new(ToyPlume::new(
                source.unwrap_or_else(|| Rect::square(50.0).centre()),
            )),
            ModelSpec::External {
                name,
                command,
                parameters,
            } => Box::new(ExternalModel {
                name,
                command,
                parameters,
            }),
        }
    }
}

/// Scenario for the simulate subcommand: either an explicit truth model or a
/// named dependence level.
#[derive(Serialize, Deserialize)]
struct SimulateScenario {
    scheme: SamplingScheme,
    #[serde(default)]
    truth: Option<VariogramModel>,
    #[serde(default)]
    dependence: Option<DependenceLevel>,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default)]
    mean: f64,
    #[serde(default)]
    seed: u64,
}

fn default_replicates() -> usize {
    100
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FitVariogram(args) => fit_variogram_cmd(args),
        Command::Weights(args) => weights_cmd(args),
        Command::Calibrate(args) => calibrate_cmd(args),
        Command::Simulate(args) => simulate_cmd(args),
        Command::Experiment(args) => experiment_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = json!({ "error": e.to_string(), "kind": e.kind() });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn timestamp_field(suppress: bool) -> Option<u64> {
    if suppress {
        return None;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

fn write_json(path: &PathBuf, value: &serde_json::Value) -> Result<(), Error> {
    std::fs::write(path, format!("{:#}\n", value))?;
    Ok(())
}

fn fit_variogram_cmd(args: FitVariogramArgs) -> Result<(), Error> {
    let obs = ObservationSet::from_csv(&args.obs)?;
    let family = match args.family.as_str() {
        "matern" => VariogramFamily::Matern,
        "exponential" => VariogramFamily::Exponential,
        other => {
            return Err(Error::invalid(format!(
                "unknown family '{other}' (expected matern or exponential)"
            )))
        }
    };
    let max_dist = match args.max_dist {
        Some(d) => d,
        None => {
            0.5 * geocal::spatial::max_pairwise_distance(obs.locations())
        }
    };
    let empirical = empirical_variogram(&obs, args.bins, max_dist)?;
    let init = initial_guess(&empirical, family, args.kappa)?;
    let fitted = fit(&empirical, family, args.kappa, &init)?;

    std::fs::write(&args.model_out, fitted.model.to_json() + "\n")?;
    if let Some(path) = &args.empirical_out {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["bin_centre_km", "semivariance", "pair_count"])
            .map_err(geocal::Error::from)?;
        for i in 0..empirical.bin_centres.len() {
            out.write_record([
                empirical.bin_centres[i].to_string(),
                empirical.semivariances[i].to_string(),
                empirical.pair_counts[i].to_string(),
            ])
            .map_err(geocal::Error::from)?;
        }
        out.flush().map_err(Error::from)?;
    }
    let moran = morans_i(&obs, 4)?;
    println!(
        "fitted {} model: nugget={:.6} partial_sill={:.6} range={:.4} practical_range={:.3} \
         converged={} moran_z={:.2}{}",
        args.family,
        fitted.model.nugget(),
        fitted.model.partial_sill(),
        fitted.model.range(),
        fitted.model.practical_range(),
        fitted.converged,
        moran.z,
        if moran.z > MORAN_Z_CRITICAL {
            ""
        } else {
            " (no significant spatial dependence)"
        }
    );
    Ok(())
}

fn weights_cmd(args: WeightsArgs) -> Result<(), Error> {
    let obs = ObservationSet::from_csv(&args.obs)?;
    let model = VariogramModel::from_json(&std::fs::read_to_string(&args.model)?)?;
    let wv = compute_weights(&obs, &model)?;
    obs.with_weights(wv.w.clone())?.write_csv(&args.weights_out)?;
    if let Some(path) = &args.diagnostics_out {
        let points: Vec<serde_json::Value> = (0..obs.len())
            .map(|i| {
                json!({
                    "index": i,
                    "ci": wv.ci[i],
                    "f1": wv.f1[i],
                    "f1_star": wv.f1_star[i],
                    "w": wv.w[i],
                })
            })
            .collect();
        let mut payload = json!({
            "model": model,
            "marginal_variance": model.total_sill(),
            "sill_to_nugget_ratio": model.sill_to_nugget_ratio(),
            "no_spatial_dependence": wv.no_spatial_dependence,
            "points": points,
        });
        if let Some(ts) = timestamp_field(args.no_timestamp) {
            payload["generated_at"] = json!(ts);
        }
        write_json(path, &payload)?;
    }
    if wv.no_spatial_dependence {
        eprintln!("warning: model has no spatially correlated variance; all weights set to 1");
    }
    println!("wrote {} weights to {}", obs.len(), args.weights_out.display());
    Ok(())
}

fn calibrate_cmd(args: CalibrateArgs) -> Result<(), Error> {
    let obs = ObservationSet::from_csv(&args.obs)?;
    let spec: ModelSpec = serde_json::from_str(&std::fs::read_to_string(&args.model_spec)?)?;
    let mut config: CalibrationConfig = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => CalibrationConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let model = spec.build();
    let result = calibrate_iterative(model.as_ref(), &obs, &config)?;
    let mut payload = json!({
        "model": model.name(),
        "parameter_names": model.parameter_names(),
        "theta": result.theta(),
        "unweighted_theta": result.unweighted_theta(),
        "converged": result.converged,
        "weight_rounds": result.weight_rounds,
        "iterations": result.iterations,
        "config": config,
    });
    if let Some(ts) = timestamp_field(args.no_timestamp) {
        payload["generated_at"] = json!(ts);
    }
    write_json(&args.out, &payload)?;
    println!(
        "calibrated {}: theta = {:?} (converged = {}, weight rounds = {})",
        model.name(),
        result.theta(),
        result.converged,
        result.weight_rounds
    );
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<(), Error> {
    let mut scenario: SimulateScenario =
        serde_json::from_str(&std::fs::read_to_string(&args.scenario)?)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let truth = match (scenario.truth, scenario.dependence) {
        (Some(model), _) => model,
        (None, Some(level)) => spatial_dependence_setting(level),
        (None, None) => {
            return Err(Error::invalid(
                "scenario needs either a truth model or a dependence level",
            ))
        }
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let batch = SimulationBatch {
        replicates: scenario.replicates,
        truth,
        mean: scenario.mean,
        seed: scenario.seed,
    };
    let datasets = simulate_batch(&scenario.scheme, &batch)?;
    let mut files = Vec::new();
    for (r, obs) in datasets.iter().enumerate() {
        let name = format!("replicate_{r:03}.csv");
        obs.write_csv(args.out_dir.join(&name))?;
        files.push(name);
    }
    let mut manifest = json!({
        "scheme": scenario.scheme,
        "truth": batch.truth,
        "replicates": batch.replicates,
        "mean": batch.mean,
        "seed": batch.seed,
        "files": files,
    });
    if let Some(ts) = timestamp_field(args.no_timestamp) {
        manifest["generated_at"] = json!(ts);
    }
    write_json(&args.out_dir.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} datasets to {}",
        scenario.replicates,
        args.out_dir.display()
    );
    Ok(())
}

fn experiment_cmd(args: ExperimentArgs) -> Result<(), Error> {
    let mut scenario: ExperimentScenario =
        serde_json::from_str(&std::fs::read_to_string(&args.scenario)?)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(replicates) = args.replicates {
        scenario.replicates = replicates;
    }
    let output = run_scenario(&scenario)?;
    let mut payload = serde_json::to_value(&output.summary)?;
    if let Some(stats) = &output.calibration_stats {
        payload["calibration_stats"] = serde_json::to_value(stats)?;
    }
    if let Some(ts) = timestamp_field(args.no_timestamp) {
        payload["generated_at"] = json!(ts);
    }
    write_json(&args.summary_out, &payload)?;
    if let Some(path) = &args.replicates_out {
        write_records_csv(&output.records, path)?;
    }
    println!(
        "ran {} replicates of '{}' with {} estimator(s)",
        scenario.replicates,
        scenario.name.as_deref().unwrap_or("unnamed scenario"),
        scenario.estimators.len()
    );
    Ok(())
}
