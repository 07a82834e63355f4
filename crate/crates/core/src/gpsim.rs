//! Zero-mean Gaussian-process simulation at arbitrary sites, the sampling
//! schemes used by the simulation studies, and the named spatial-dependence
//! settings.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{elbow_k, kmeans, shrink_to_centres, Location, ObservationSet};
use crate::variogram::VariogramModel;

/// Axis-aligned rectangle in the km frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn square(side: f64) -> Self {
        Rect {
            x_min: 0.0,
            x_max: side,
            y_min: 0.0,
            y_max: side,
        }
    }

    pub fn centre(&self) -> Location {
        Location::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn diagonal(&self) -> f64 {
        (self.x_max - self.x_min).hypot(self.y_max - self.y_min)
    }

    pub fn contains(&self, l: &Location) -> bool {
        l.x >= self.x_min && l.x <= self.x_max && l.y >= self.y_min && l.y <= self.y_max
    }

    fn validate(&self) -> Result<()> {
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::invalid("degenerate domain rectangle"));
        }
        Ok(())
    }
}

/// Where a fixed layout comes from: a bundled name (`"kelud_like"`), inline
/// points, or a CSV with `x_km,y_km` columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayoutSource {
    Named(String),
    Points(Vec<Location>),
    Csv { csv: String },
}

impl LayoutSource {
    pub fn resolve(&self) -> Result<Vec<Location>> {
        match self {
            LayoutSource::Named(name) => match name.as_str() {
                "kelud_like" => Ok(kelud_like_layout()),
                other => Err(Error::invalid(format!("unknown layout name '{other}'"))),
            },
            LayoutSource::Points(points) => {
                if points.is_empty() {
                    return Err(Error::invalid("empty layout"));
                }
                Ok(points.clone())
            }
            LayoutSource::Csv { csv } => {
                let text = std::fs::read_to_string(csv)?;
                parse_layout_csv(&text)
            }
        }
    }
}

/// 80 synthetic survey sites over the 50 km x 50 km frame with five visible
/// clusters of uneven size; the stand-in for the case-study layout.
pub fn kelud_like_layout() -> Vec<Location> {
    parse_layout_csv(include_str!("../data/kelud_like_layout.csv"))
        .expect("bundled layout parses")
}

fn parse_layout_csv(text: &str) -> Result<Vec<Location>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(e.to_string()))?
        .clone();
    let ix = headers
        .iter()
        .position(|h| h == "x_km")
        .ok_or_else(|| Error::invalid("layout csv needs an x_km column"))?;
    let iy = headers
        .iter()
        .position(|h| h == "y_km")
        .ok_or_else(|| Error::invalid("layout csv needs a y_km column"))?;
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            row: row + 2,
            message: e.to_string(),
        })?;
        let get = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or(Error::Csv {
                    row: row + 2,
                    message: "non-numeric coordinate".into(),
                })
        };
        points.push(Location::new(get(ix)?, get(iy)?));
    }
    if points.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok(points)
}

/// How sites are placed for a simulation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingScheme {
    /// n i.i.d. uniform draws over the domain.
    RandomN { n: usize, domain: Rect },
    /// The given layout, unchanged.
    FixedLayout { layout: LayoutSource },
    /// The layout after k-means clustering (k from the elbow rule unless
    /// given) and moving each site towards its cluster centre.
    ClusteredLayout {
        layout: LayoutSource,
        #[serde(default)]
        k: Option<usize>,
        shrink_factor: f64,
    },
}

/// Realise a sampling scheme. Deterministic given the seed.
pub fn sample_locations(scheme: &SamplingScheme, seed: u64) -> Result<Vec<Location>> {
    match scheme {
        SamplingScheme::RandomN { n, domain } => {
            domain.validate()?;
            if *n == 0 {
                return Err(Error::invalid("n must be >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..*n)
                .map(|_| {
                    Location::new(
                        rng.random_range(domain.x_min..=domain.x_max),
                        rng.random_range(domain.y_min..=domain.y_max),
                    )
                })
                .collect())
        }
        SamplingScheme::FixedLayout { layout } => layout.resolve(),
        SamplingScheme::ClusteredLayout {
            layout,
            k,
            shrink_factor,
        } => {
            let points = layout.resolve()?;
            let as_obs = ObservationSet::new(points.clone(), vec![0.0; points.len()], None)?;
            let k = match k {
                Some(k) => *k,
                None => elbow_k(&as_obs, 10.min(points.len()), seed)?,
            };
            let assignment = kmeans(&as_obs, k, seed)?;
            let shrunk = shrink_to_centres(&as_obs, &assignment, *shrink_factor)?;
            Ok(shrunk.locations().to_vec())
        }
    }
}

/// Draw one realisation of a zero-mean-plus-constant Gaussian process at the
/// given sites: values = mean + L z with Sigma = L L^T from the variogram's
/// covariance and z standard normal. Deterministic given the seed.
pub fn simulate_gp(
    locations: &[Location],
    truth: &VariogramModel,
    mean: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if locations.is_empty() {
        return Err(Error::NoObservations);
    }
    let sigma = truth.covariance_matrix(locations);
    let chol = factorize(&sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(
        locations.len(),
        (0..locations.len()).map(|_| StandardNormal.sample(&mut rng)),
    );
    let values = chol.l() * z;
    ObservationSet::new(
        locations.to_vec(),
        values.iter().map(|v| v + mean).collect(),
        None,
    )
}

pub(crate) fn factorize(
    sigma: &DMatrix<f64>,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    nalgebra::Cholesky::new(sigma.clone()).ok_or_else(|| {
        let diag = sigma.diagonal();
        Error::Factorization(format!(
            "covariance matrix of order {} is not positive definite \
             (diagonal range [{:.3e}, {:.3e}]); a positive nugget keeps \
             coincident sites nonsingular",
            sigma.nrows(),
            diag.min(),
            diag.max()
        ))
    })
}

/// Named spatial-dependence levels for the simulation studies, all Matérn
/// with smoothness 1. Mid is the base case (nugget 1, partial sill 4,
/// range 2.5); low keeps the total sill at 5 while raising the nugget share
/// to 0.4; high stretches the range to 3.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependenceLevel {
    Low,
    Mid,
    High,
}

pub fn spatial_dependence_setting(level: DependenceLevel) -> VariogramModel {
    let (nugget, partial_sill, range) = match level {
        DependenceLevel::Low => (2.0, 3.0, 2.5),
        DependenceLevel::Mid => (1.0, 4.0, 2.5),
        DependenceLevel::High => (1.0, 4.0, 3.5),
    };
    VariogramModel::matern(nugget, partial_sill, range, 1.0).expect("valid preset")
}

/// A replicated simulation request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationBatch {
    pub replicates: usize,
    pub truth: VariogramModel,
    #[serde(default)]
    pub mean: f64,
    pub seed: u64,
}

/// Independent deterministic RNG stream per (seed, replicate, salt).
pub fn stream_seed(seed: u64, replicate: u64, salt: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed
        .wrapping_add(replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SALT_LOCATIONS: u64 = 1;
pub const SALT_FIELD: u64 = 2;

/// Simulate a batch: sites are redrawn per replicate for `RandomN` schemes
/// and fixed for layout-based schemes; each replicate's field has its own
/// RNG stream derived from (batch seed, replicate).
pub fn simulate_batch(
    scheme: &SamplingScheme,
    batch: &SimulationBatch,
) -> Result<Vec<ObservationSet>> {
    if batch.replicates == 0 {
        return Err(Error::invalid("replicates must be >= 1"));
    }
    let fixed_sites = match scheme {
        SamplingScheme::RandomN { .. } => None,
        _ => Some(sample_locations(scheme, stream_seed(batch.seed, 0, SALT_LOCATIONS))?),
    };
    (0..batch.replicates)
        .map(|r| {
            let sites = match &fixed_sites {
                Some(s) => s.clone(),
                None => sample_locations(scheme, stream_seed(batch.seed, r as u64, SALT_LOCATIONS))?,
            };
            simulate_gp(
                &sites,
                &batch.truth,
                batch.mean,
                stream_seed(batch.seed, r as u64, SALT_FIELD),
            )
            .map_err(|e| e.with_replicate(r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variogram::{empirical_variogram, VariogramModel};
    use approx::assert_abs_diff_eq;

    #[test]
    fn random_scheme_stays_in_domain() {
        let scheme = SamplingScheme::RandomN {
            n: 80,
            domain: Rect::square(50.0),
        };
        let sites = sample_locations(&scheme, 4).unwrap();
        assert_eq!(sites.len(), 80);
        for s in &sites {
            assert!(Rect::square(50.0).contains(s));
        }
    }

    #[test]
    fn fixed_layout_is_identity() {
        let layout = vec![Location::new(1.0, 2.0), Location::new(3.0, 4.0)];
        let scheme = SamplingScheme::FixedLayout {
            layout: LayoutSource::Points(layout.clone()),
        };
        assert_eq!(sample_locations(&scheme, 0).unwrap(), layout);
    }

    #[test]
    fn clustered_layout_halves_centre_distances() {
        let scheme = SamplingScheme::ClusteredLayout {
            layout: LayoutSource::Named("kelud_like".into()),
            k: Some(5),
            shrink_factor: 0.5,
        };
        let original = kelud_like_layout();
        let shrunk = sample_locations(&scheme, 9).unwrap();
        let as_obs =
            ObservationSet::new(original.clone(), vec![0.0; original.len()], None).unwrap();
        let assignment = kmeans(&as_obs, 5, 9).unwrap();
        for i in 0..original.len() {
            let c = assignment.centres[assignment.labels[i]];
            let before = original[i].distance(&c);
            let after = shrunk[i].distance(&c);
            assert_abs_diff_eq!(after, 0.5 * before, epsilon = 1e-9);
        }
    }

    #[test]
    fn bundled_layout_has_five_clusters() {
        let layout = kelud_like_layout();
        assert_eq!(layout.len(), 80);
        let as_obs = ObservationSet::new(layout.clone(), vec![0.0; 80], None).unwrap();
        assert_eq!(elbow_k(&as_obs, 10, 17).unwrap(), 5);
    }

    #[test]
    fn same_seed_bit_identical() {
        let sites = kelud_like_layout();
        let truth = spatial_dependence_setting(DependenceLevel::Mid);
        let a = simulate_gp(&sites, &truth, 0.0, 77).unwrap();
        let b = simulate_gp(&sites, &truth, 0.0, 77).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn pure_nugget_marginal_variance() {
        // sigma^2 ~ 0: sample variance over many draws at one site ~ nugget.
        let truth = VariogramModel::matern(2.0, 1e-12, 2.5, 1.0).unwrap();
        let site = vec![Location::new(25.0, 25.0)];
        let draws: Vec<f64> = (0..10_000)
            .map(|r| {
                simulate_gp(&site, &truth, 0.0, stream_seed(5, r, SALT_FIELD)).unwrap().values()
                    [0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var =
            draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var - 2.0).abs() / 2.0 < 0.05, "sample variance {var}");
    }

    #[test]
    fn generator_mean_is_unbiased() {
        let sites = kelud_like_layout();
        let truth = spatial_dependence_setting(DependenceLevel::Mid);
        let reps = 200;
        let mut means = Vec::with_capacity(reps);
        for r in 0..reps {
            let obs = simulate_gp(&sites, &truth, 7.0, stream_seed(11, r as u64, SALT_FIELD))
                .unwrap();
            means.push(obs.mean_value());
        }
        let grand = means.iter().sum::<f64>() / reps as f64;
        let sd = (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>()
            / (reps as f64 - 1.0))
            .sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!(
            (grand - 7.0).abs() < 3.0 * se,
            "grand mean {grand} vs 7 (se {se})"
        );
    }

    #[test]
    fn coincident_sites_differ_by_nugget_noise() {
        let truth = spatial_dependence_setting(DependenceLevel::Mid);
        let sites = vec![Location::new(10.0, 10.0), Location::new(10.0, 10.0)];
        let reps = 4000;
        let mut half_sq = 0.0;
        for r in 0..reps {
            let obs =
                simulate_gp(&sites, &truth, 0.0, stream_seed(3, r, SALT_FIELD)).unwrap();
            let d = obs.values()[0] - obs.values()[1];
            half_sq += 0.5 * d * d;
        }
        half_sq /= reps as f64;
        // E[(y_a - y_b)^2] / 2 = nugget = 1
        assert!((half_sq - 1.0).abs() < 0.08, "half mean square diff {half_sq}");
    }

    #[test]
    fn monte_carlo_covariance_between_two_sites() {
        let truth = spatial_dependence_setting(DependenceLevel::Mid);
        let sites = vec![Location::new(0.0, 0.0), Location::new(2.0, 0.0)];
        let reps = 6000;
        let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
        let mut vals = Vec::with_capacity(reps);
        for r in 0..reps {
            let obs =
                simulate_gp(&sites, &truth, 0.0, stream_seed(21, r as u64, SALT_FIELD)).unwrap();
            let (a, b) = (obs.values()[0], obs.values()[1]);
            sa += a;
            sb += b;
            vals.push((a, b));
        }
        let (ma, mb) = (sa / reps as f64, sb / reps as f64);
        for (a, b) in vals {
            sab += (a - ma) * (b - mb);
        }
        let cov = sab / (reps as f64 - 1.0);
        let expected = truth.to_covariance(2.0).unwrap();
        assert!(
            ((cov - expected) / expected).abs() < 0.10,
            "MC covariance {cov} vs {expected}"
        );
    }

    #[test]
    fn pooled_empirical_variogram_tracks_model() {
        // 200 replicates at 80 random sites; pooled gamma-hat stays within
        // 10% of the model at mid-range lags.
        let truth = spatial_dependence_setting(DependenceLevel::Mid);
        let scheme = SamplingScheme::RandomN {
            n: 80,
            domain: Rect::square(50.0),
        };
        let n_bins = 24;
        let max_dist = 24.0;
        let width = max_dist / n_bins as f64;
        let mut sums = vec![0.0; n_bins];
        let mut counts = vec![0usize; n_bins];
        for r in 0..200u64 {
            let sites =
                sample_locations(&scheme, stream_seed(31, r, SALT_LOCATIONS)).unwrap();
            let obs = simulate_gp(&sites, &truth, 0.0, stream_seed(31, r, SALT_FIELD)).unwrap();
            let e = empirical_variogram(&obs, n_bins, max_dist).unwrap();
            for b in 0..n_bins {
                sums[b] += e.semivariances[b] * e.pair_counts[b] as f64;
                counts[b] += e.pair_counts[b];
            }
        }
        let phi = truth.range();
        for b in 0..n_bins {
            let h = (b as f64 + 0.5) * width;
            if h < phi || h > 4.0 * phi || counts[b] == 0 {
                continue;
            }
            let pooled = sums[b] / counts[b] as f64;
            let expected = truth.evaluate(h).unwrap();
            assert!(
                ((pooled - expected) / expected).abs() < 0.10,
                "lag {h}: pooled {pooled} vs model {expected}"
            );
        }
    }

    #[test]
    fn dependence_settings_match_contract() {
        let mid = spatial_dependence_setting(DependenceLevel::Mid);
        assert_eq!(
            (mid.nugget(), mid.partial_sill(), mid.range()),
            (1.0, 4.0, 2.5)
        );
        let low = spatial_dependence_setting(DependenceLevel::Low);
        assert_abs_diff_eq!(low.nugget() / low.total_sill(), 0.4);
        assert_eq!(low.total_sill(), 5.0);
        let high = spatial_dependence_setting(DependenceLevel::High);
        assert_eq!(high.range(), 3.5);
    }
}
