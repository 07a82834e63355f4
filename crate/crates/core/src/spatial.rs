//! Locations, observation ingestion, and the clustering machinery used to
//! build sampling layouts.
//!
//! Coordinates live in a flat kilometre frame. CSV ingestion expects a header
//! row with `x_km,y_km,value` and an optional `weight` column.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A site in the flat km frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    /// Easting (km).
    pub x: f64,
    /// Northing (km).
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Column names used when reading an observation CSV.
///
/// `weight: None` auto-detects a column literally named `weight`; setting it
/// explicitly makes the column mandatory.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub x: String,
    pub y: String,
    pub value: String,
    pub weight: Option<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            x: "x_km".into(),
            y: "y_km".into(),
            value: "value".into(),
            weight: None,
        }
    }
}

/// Observed values at sites, with optional calibration weights in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    locations: Vec<Location>,
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl ObservationSet {
    pub fn new(
        locations: Vec<Location>,
        values: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::NoObservations);
        }
        if locations.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} locations but {} values",
                locations.len(),
                values.len()
            )));
        }
        for (i, loc) in locations.iter().enumerate() {
            if !loc.x.is_finite() || !loc.y.is_finite() {
                return Err(Error::invalid(format!("non-finite coordinates at row {i}")));
            }
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite value at row {i}")));
            }
        }
        if let Some(w) = &weights {
            if w.len() != values.len() {
                return Err(Error::invalid(format!(
                    "{} weights but {} observations",
                    w.len(),
                    values.len()
                )));
            }
            for (i, wi) in w.iter().enumerate() {
                if !(0.0..=1.0).contains(wi) {
                    return Err(Error::invalid(format!(
                        "weight {wi} at row {i} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(ObservationSet {
            locations,
            values,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Same sites and values, with the weight column replaced.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        ObservationSet::new(self.locations.clone(), self.values.clone(), Some(weights))
    }

    /// Same sites, different values (weights dropped).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ObservationSet::new(self.locations.clone(), values, None)
    }

    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Sample variance of the values (denominator n - 1; 0 for n = 1).
    pub fn value_variance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean_value();
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }

    /// Diagonal of the bounding box of the sites (km).
    pub fn bounding_diagonal(&self) -> f64 {
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for l in &self.locations {
            x0 = x0.min(l.x);
            x1 = x1.max(l.x);
            y0 = y0.min(l.y);
            y1 = y1.max(l.y);
        }
        (x1 - x0).hypot(y1 - y0)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_with(path, &ColumnSpec::default())
    }

    pub fn from_csv_with(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;

        let headers = reader
            .headers()
            .map_err(|e| csv_error(&e))?
            .iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        if headers.is_empty() {
            return Err(Error::NoObservations);
        }
        let col = |name: &str| -> Result<usize> {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::invalid(format!(
                    "missing column '{name}' (found: {})",
                    headers.join(", ")
                ))
            })
        };
        let ix = col(&spec.x)?;
        let iy = col(&spec.y)?;
        let iv = col(&spec.value)?;
        let iw = match &spec.weight {
            Some(name) => Some(col(name)?),
            None => headers.iter().position(|h| h == "weight"),
        };

        let mut locations = Vec::new();
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(&e))?;
            let row = record
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(locations.len() + 2);
            let field = |i: usize, name: &str| -> Result<f64> {
                let raw = record.get(i).ok_or(Error::Csv {
                    row,
                    message: format!("missing field '{name}'"),
                })?;
                raw.parse::<f64>().map_err(|_| Error::Csv {
                    row,
                    message: format!("non-numeric {name}: '{raw}'"),
                })
            };
            locations.push(Location::new(field(ix, &spec.x)?, field(iy, &spec.y)?));
            values.push(field(iv, &spec.value)?);
            if let Some(iw) = iw {
                weights.push(field(iw, "weight")?);
            }
        }
        if locations.is_empty() {
            return Err(Error::NoObservations);
        }
        let weights = if weights.is_empty() { None } else { Some(weights) };
        ObservationSet::new(locations, values, weights)
    }

    /// Write the observation CSV format (`x_km,y_km,value[,weight]`).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = csv::Writer::from_path(path.as_ref())?;
        if self.weights.is_some() {
            out.write_record(["x_km", "y_km", "value", "weight"])
                .map_err(|e| csv_error(&e))?;
        } else {
            out.write_record(["x_km", "y_km", "value"])
                .map_err(|e| csv_error(&e))?;
        }
        for i in 0..self.len() {
            let mut record = vec![
                self.locations[i].x.to_string(),
                self.locations[i].y.to_string(),
                self.values[i].to_string(),
            ];
            if let Some(w) = &self.weights {
                record.push(w[i].to_string());
            }
            out.write_record(&record).map_err(|e| csv_error(&e))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_error(e: &csv::Error) -> Error {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or_default();
    Error::Csv {
        row,
        message: e.to_string(),
    }
}

/// Symmetric n x n Euclidean distance matrix (km), zero diagonal.
pub fn pairwise_distances(obs: &ObservationSet) -> DMatrix<f64> {
    distance_matrix(obs.locations())
}

pub fn distance_matrix(locations: &[Location]) -> DMatrix<f64> {
    let n = locations.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = locations[i].distance(&locations[j]);
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Largest pairwise distance (0 for a single site).
pub fn max_pairwise_distance(locations: &[Location]) -> f64 {
    let mut max = 0.0_f64;
    for i in 0..locations.len() {
        for j in (i + 1)..locations.len() {
            max = max.max(locations[i].distance(&locations[j]));
        }
    }
    max
}

/// Output of a k-means run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub centres: Vec<Location>,
    pub labels: Vec<usize>,
    /// Total within-cluster sum of squared distances (km^2).
    pub within_ss: f64,
}

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_RESTARTS: u64 = 10;

/// Lloyd's algorithm, seeded initial centres drawn from the data points,
/// best of a fixed number of restarts. Deterministic given the seed.
pub fn kmeans(obs: &ObservationSet, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = obs.len();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds n = {n}")));
    }
    let points = obs.locations();
    let mut best: Option<ClusterAssignment> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart.wrapping_mul(0x9E37_79B9)));
        let init: Vec<Location> = sample(&mut rng, n, k).iter().map(|i| points[i]).collect();
        let run = lloyd(points, init);
        if best.as_ref().map_or(true, |b| run.within_ss < b.within_ss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &[Location], mut centres: Vec<Location>) -> ClusterAssignment {
    let n = points.len();
    let k = centres.len();
    let mut labels = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let nearest = nearest_centre(p, &centres);
            if labels[i] != nearest {
                labels[i] = nearest;
                changed = true;
            }
        }
        // Recompute centres as member means; re-seed empty clusters at the
        // point farthest from its current centre.
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (i, p) in points.iter().enumerate() {
            let s = &mut sums[labels[i]];
            s.0 += p.x;
            s.1 += p.y;
            s.2 += 1;
        }
        for (c, s) in centres.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = Location::new(s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        for cluster in 0..k {
            if sums[cluster].2 == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (j, q)| {
                        let di = p.distance(&centres[labels[*i]]);
                        let dj = q.distance(&centres[labels[*j]]);
                        di.total_cmp(&dj)
                    })
                    .map(|(i, _)| i)
                    .expect("non-empty data");
                if points[far].distance(&centres[labels[far]]) > 0.0 {
                    centres[cluster] = points[far];
                    labels[far] = cluster;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // Final assignment against the settled centres.
    for (i, p) in points.iter().enumerate() {
        labels[i] = nearest_centre(p, &centres);
    }
    let mut sums = vec![(0.0, 0.0, 0usize); k];
    for (i, p) in points.iter().enumerate() {
        let s = &mut sums[labels[i]];
        s.0 += p.x;
        s.1 += p.y;
        s.2 += 1;
    }
    for (c, s) in centres.iter_mut().zip(&sums) {
        if s.2 > 0 {
            *c = Location::new(s.0 / s.2 as f64, s.1 / s.2 as f64);
        }
    }
    let within_ss = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| {
            let d = p.distance(&centres[l]);
            d * d
        })
        .sum();
    ClusterAssignment {
        k,
        centres,
        labels,
        within_ss,
    }
}

fn nearest_centre(p: &Location, centres: &[Location]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centres.iter().enumerate() {
        let d = p.distance(c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Within-cluster SS for k = 1..=k_max with nested initialisation: each k is
/// additionally seeded from the best (k-1) solution augmented by the point
/// farthest from its centre, which makes the curve non-increasing in k.
pub fn within_ss_curve(obs: &ObservationSet, k_max: usize, seed: u64) -> Result<Vec<f64>> {
    let n = obs.len();
    if k_max == 0 || k_max > n {
        return Err(Error::invalid(format!(
            "k_max = {k_max} out of range for n = {n}"
        )));
    }
    let points = obs.locations();
    let mut curve = Vec::with_capacity(k_max);
    let mut prev: Option<ClusterAssignment> = None;
    for k in 1..=k_max {
        let mut best = kmeans(obs, k, seed.wrapping_add(k as u64))?;
        if let Some(p) = &prev {
            let far = points
                .iter()
                .zip(&p.labels)
                .enumerate()
                .max_by(|(_, (a, la)), (_, (b, lb))| {
                    a.distance(&p.centres[**la])
                        .total_cmp(&b.distance(&p.centres[**lb]))
                })
                .map(|(i, _)| i)
                .expect("non-empty data");
            let mut init = p.centres.clone();
            init.push(points[far]);
            let nested = lloyd(points, init);
            if nested.within_ss < best.within_ss {
                best = nested;
            }
        }
        curve.push(best.within_ss);
        prev = Some(best);
    }
    Ok(curve)
}

/// Elbow choice of k: the k in 2..k_max maximising the second difference of
/// the within-cluster SS curve on the log scale, i.e. the sharpest kink in
/// the relative decrease. Ties resolve to the smallest k.
///
/// The raw-scale second difference tracks absolute SS drops and lands on
/// k = 2 or 3 for most blob layouts regardless of the true count; the log
/// scale recovers the visible cluster count.
pub fn elbow_k(obs: &ObservationSet, k_max: usize, seed: u64) -> Result<usize> {
    let n = obs.len();
    if k_max < 2 || k_max > n {
        return Err(Error::invalid(format!(
            "k_max = {k_max} out of range [2, {n}]"
        )));
    }
    let curve = within_ss_curve(obs, k_max, seed)?;
    if k_max == 2 {
        return Ok(2);
    }
    let floor = (curve[0] * 1e-12).max(1e-300);
    let logs: Vec<f64> = curve.iter().map(|w| w.max(floor).ln()).collect();
    let mut best_k = 2;
    let mut best_d2 = f64::NEG_INFINITY;
    for k in 2..k_max {
        let d2 = logs[k - 2] - 2.0 * logs[k - 1] + logs[k];
        if d2 > best_d2 {
            best_d2 = d2;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Move every site towards its cluster centre: centre + factor * (site - centre).
/// Values and weights are unchanged.
pub fn shrink_to_centres(
    obs: &ObservationSet,
    assignment: &ClusterAssignment,
    factor: f64,
) -> Result<ObservationSet> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::invalid(format!("shrink factor {factor} outside [0, 1]")));
    }
    if assignment.labels.len() != obs.len() {
        return Err(Error::invalid(format!(
            "assignment covers {} points but observation set has {}",
            assignment.labels.len(),
            obs.len()
        )));
    }
    if assignment.labels.iter().any(|&l| l >= assignment.k) {
        return Err(Error::invalid("cluster label out of range"));
    }
    let locations = obs
        .locations()
        .iter()
        .zip(&assignment.labels)
        .map(|(p, &l)| {
            let c = assignment.centres[l];
            Location::new(c.x + factor * (p.x - c.x), c.y + factor * (p.y - c.y))
        })
        .collect();
    ObservationSet::new(locations, obs.values().to_vec(), obs.weights().map(<[f64]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn obs(points: &[(f64, f64)]) -> ObservationSet {
        let locations = points.iter().map(|&(x, y)| Location::new(x, y)).collect();
        ObservationSet::new(locations, vec![0.0; points.len()], None).unwrap()
    }

    #[test]
    fn load_three_row_csv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x_km,y_km,value\n0,0,1.5\n3,4,2.5\n1,1,-0.5").unwrap();
        let o = ObservationSet::from_csv(f.path()).unwrap();
        assert_eq!(o.len(), 3);
        assert_eq!(o.values(), &[1.5, 2.5, -0.5]);
        assert_eq!(o.locations()[1], Location::new(3.0, 4.0));
        assert!(o.weights().is_none());
    }

    #[test]
    fn load_csv_with_weight_column() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x_km,y_km,value,weight\n0,0,1,0.5\n1,0,2,1.0\n2,0,3,1.0").unwrap();
        let o = ObservationSet::from_csv(f.path()).unwrap();
        assert_eq!(o.weights().unwrap(), &[0.5, 1.0, 1.0]);
    }

    #[test]
    fn empty_file_is_no_observations() {
        let f = tempfile::NamedTempFile::new().unwrap();
        match ObservationSet::from_csv(f.path()) {
            Err(Error::NoObservations) => {}
            other => panic!("expected NoObservations, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x_km,y_km,value\n0,0,1\n1,oops,2").unwrap();
        match ObservationSet::from_csv(f.path()) {
            Err(Error::Csv { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("y_km"), "{message}");
            }
            other => panic!("expected Csv error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_errors() {
        assert!(ObservationSet::from_csv("/nonexistent/obs.csv").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let o = obs(&[(0.0, 0.0), (3.25, -4.5)])
            .with_weights(vec![0.25, 1.0])
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        o.write_csv(f.path()).unwrap();
        let back = ObservationSet::from_csv(f.path()).unwrap();
        assert_eq!(o, back);
    }

    #[test]
    fn distances_three_four_five() {
        let d = pairwise_distances(&obs(&[(0.0, 0.0), (3.0, 4.0)]));
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 5.0);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn single_point_distance_matrix() {
        let d = pairwise_distances(&obs(&[(2.0, 2.0)]));
        assert_eq!(d.nrows(), 1);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn duplicated_location_zero_distance() {
        let d = pairwise_distances(&obs(&[(1.0, 1.0), (1.0, 1.0)]));
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn kmeans_separable_pairs() {
        let o = obs(&[(0.0, 0.0), (0.0, 2.0), (10.0, 0.0), (10.0, 2.0)]);
        let a = kmeans(&o, 2, 7).unwrap();
        let mut centres = a.centres.clone();
        centres.sort_by(|p, q| p.x.total_cmp(&q.x));
        assert_relative_eq!(centres[0].x, 0.0);
        assert_relative_eq!(centres[0].y, 1.0);
        assert_relative_eq!(centres[1].x, 10.0);
        assert_relative_eq!(centres[1].y, 1.0);
    }

    #[test]
    fn kmeans_k_equals_n_zero_ss() {
        let o = obs(&[(0.0, 0.0), (1.0, 0.0), (5.0, 5.0)]);
        let a = kmeans(&o, 3, 1).unwrap();
        assert_eq!(a.within_ss, 0.0);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let o = obs(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(kmeans(&o, 0, 1).is_err());
        assert!(kmeans(&o, 3, 1).is_err());
    }

    #[test]
    fn elbow_recovers_blob_count() {
        // 3 and 5 tight blobs; elbow should find the truth.
        for (blobs, k_max) in [(3usize, 8usize), (5, 10)] {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let centres: Vec<(f64, f64)> = (0..blobs)
                .map(|i| (10.0 + 15.0 * (i % 3) as f64, 10.0 + 18.0 * (i / 3) as f64))
                .collect();
            let mut pts = Vec::new();
            for &(cx, cy) in &centres {
                for _ in 0..12 {
                    use rand_distr::{Distribution, Normal};
                    let n = Normal::new(0.0, 0.6).unwrap();
                    pts.push((cx + n.sample(&mut rng), cy + n.sample(&mut rng)));
                }
            }
            let o = obs(&pts);
            assert_eq!(elbow_k(&o, k_max, 11).unwrap(), blobs);
        }
    }

    #[test]
    fn kelud_layout_within_ss_drops_from_four_to_five() {
        let layout = crate::gpsim::kelud_like_layout();
        let o = ObservationSet::new(layout, vec![0.0; 80], None).unwrap();
        let four = kmeans(&o, 4, 17).unwrap();
        let five = kmeans(&o, 5, 17).unwrap();
        assert!(
            five.within_ss < four.within_ss,
            "k=5 ss {} vs k=4 ss {}",
            five.within_ss,
            four.within_ss
        );
    }

    #[test]
    fn elbow_deterministic_on_grid() {
        let pts: Vec<(f64, f64)> = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i as f64 * 5.0, j as f64 * 5.0)))
            .collect();
        let o = obs(&pts);
        let a = elbow_k(&o, 9, 123).unwrap();
        let b = elbow_k(&o, 9, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn within_ss_curve_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        use rand::Rng;
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|_| (rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)))
            .collect();
        let o = obs(&pts);
        let curve = within_ss_curve(&o, 12, 99).unwrap();
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "curve not monotone: {curve:?}");
        }
    }

    #[test]
    fn shrink_midpoint() {
        let o = obs(&[(10.0, 10.0)]);
        let a = ClusterAssignment {
            k: 1,
            centres: vec![Location::new(6.0, 6.0)],
            labels: vec![0],
            within_ss: 32.0,
        };
        let s = shrink_to_centres(&o, &a, 0.5).unwrap();
        assert_eq!(s.locations()[0], Location::new(8.0, 8.0));
    }

    #[test]
    fn shrink_identity_and_collapse() {
        let o = obs(&[(1.0, 2.0), (3.0, 4.0)]);
        let a = kmeans(&o, 1, 0).unwrap();
        let id = shrink_to_centres(&o, &a, 1.0).unwrap();
        assert_eq!(id.locations(), o.locations());
        let collapsed = shrink_to_centres(&o, &a, 0.0).unwrap();
        for l in collapsed.locations() {
            assert_eq!(*l, a.centres[0]);
        }
    }

    #[test]
    fn shrink_rejects_bad_factor() {
        let o = obs(&[(1.0, 2.0)]);
        let a = kmeans(&o, 1, 0).unwrap();
        assert!(shrink_to_centres(&o, &a, 1.5).is_err());
        assert!(shrink_to_centres(&o, &a, -0.1).is_err());
    }

    #[test]
    fn shrink_scales_distances_exactly() {
        let o = obs(&[(0.0, 0.0), (4.0, 0.0), (20.0, 20.0), (24.0, 24.0)]);
        let a = kmeans(&o, 2, 3).unwrap();
        let f = 0.25;
        let s = shrink_to_centres(&o, &a, f).unwrap();
        for i in 0..o.len() {
            let before = o.locations()[i].distance(&a.centres[a.labels[i]]);
            let after = s.locations()[i].distance(&a.centres[a.labels[i]]);
            assert_relative_eq!(after, f * before, epsilon = 1e-12);
        }
    }
}
