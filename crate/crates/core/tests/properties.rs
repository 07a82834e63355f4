//! Property tests for the structural invariants: distance geometry,
//! variogram/covariance duality, positive definiteness, weight bounds, and
//! the cost-function identities.

use geocal::ciweights::{compute_weights, compute_weights_with, CovarianceContext};
use geocal::cost::{estimate_mean, gaussian_nll, mse, wmse, MeanMode};
use geocal::gpsim::simulate_gp;
use geocal::spatial::{pairwise_distances, Location, ObservationSet};
use geocal::variogram::{VariogramFamily, VariogramModel};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = VariogramModel> {
    (
        prop_oneof![Just(VariogramFamily::Exponential), Just(VariogramFamily::Matern)],
        0.05f64..3.0,
        0.0f64..6.0,
        0.3f64..8.0,
        prop_oneof![Just(0.5), Just(1.0), Just(1.5), Just(2.0), Just(3.0)],
    )
        .prop_map(|(family, nugget, partial_sill, range, kappa)| {
            VariogramModel::new(family, nugget, partial_sill, range, Some(kappa)).unwrap()
        })
}

fn locations_strategy(max_n: usize) -> impl Strategy<Value = Vec<Location>> {
    prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 2..=max_n)
        .prop_map(|pts| pts.into_iter().map(|(x, y)| Location::new(x, y)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_matrix_symmetric_with_triangle_inequality(
        locations in locations_strategy(12)
    ) {
        let obs = ObservationSet::new(locations.clone(), vec![0.0; locations.len()], None).unwrap();
        let d = pairwise_distances(&obs);
        let n = locations.len();
        for i in 0..n {
            prop_assert_eq!(d[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(d[(i, j)], d[(j, i)]);
                prop_assert!(d[(i, j)] >= 0.0);
                for k in 0..n {
                    prop_assert!(d[(i, j)] <= d[(i, k)] + d[(k, j)] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn semivariance_monotone_and_bounded(
        model in model_strategy(),
        h1 in 0.0f64..40.0,
        h2 in 0.0f64..40.0,
    ) {
        let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        let a = model.evaluate(lo).unwrap();
        let b = model.evaluate(hi).unwrap();
        prop_assert!(a <= b + 1e-12, "gamma({lo}) = {a} > gamma({hi}) = {b}");
        prop_assert!(b <= model.total_sill() + 1e-12);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn covariance_complements_semivariance(
        model in model_strategy(),
        h in 1e-6f64..40.0,
    ) {
        let total = model.evaluate(h).unwrap() + model.to_covariance(h).unwrap();
        prop_assert!((total - model.total_sill()).abs() < 1e-12 * (1.0 + model.total_sill()));
    }

    #[test]
    fn weights_lie_in_unit_interval(
        model in model_strategy(),
        locations in locations_strategy(25),
    ) {
        let obs = ObservationSet::new(
            locations.clone(),
            (0..locations.len()).map(|i| i as f64).collect(),
            None,
        ).unwrap();
        let wv = compute_weights(&obs, &model).unwrap();
        for w in &wv.w {
            prop_assert!((0.0..=1.0).contains(w), "weight {w} outside [0, 1]");
        }
        if wv.no_spatial_dependence {
            prop_assert!(wv.w.iter().all(|w| *w == 1.0));
        }
    }

    #[test]
    fn conditional_information_bounded_by_univariate_entropy(
        model in model_strategy(),
        locations in locations_strategy(10),
    ) {
        prop_assume!(model.partial_sill() > 1e-6);
        let ctx = CovarianceContext::from_model(&locations, &model).unwrap();
        let n = locations.len();
        for target in 0..n {
            let rest: Vec<usize> = (0..n).filter(|&j| j != target).collect();
            let ci = ctx.conditional_information(target, &rest).unwrap();
            prop_assert!(ci <= ctx.univariate_entropy() + 1e-10);
        }
    }

    #[test]
    fn wmse_identities(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        sigma in 0.1f64..4.0,
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y_hat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let n = y.len() as f64;
        let ones = vec![1.0; y.len()];
        prop_assert!((wmse(&y, &y_hat, &ones).unwrap() - mse(&y, &y_hat).unwrap()).abs() < 1e-14);
        let direct = gaussian_nll(&y, &y_hat, sigma).unwrap();
        let via_mse = n * mse(&y, &y_hat).unwrap() / (2.0 * sigma * sigma)
            + n * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        prop_assert!((direct - via_mse).abs() < 1e-10);
    }

    #[test]
    fn weighted_mean_scale_invariant(
        values in prop::collection::vec(-10.0f64..10.0, 2..20),
        raw_weights in prop::collection::vec(0.05f64..1.0, 2..20),
        scale in 0.01f64..1.0,
    ) {
        let n = values.len().min(raw_weights.len());
        let values = &values[..n];
        let w = &raw_weights[..n];
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let locs: Vec<Location> = (0..n).map(|i| Location::new(i as f64, 0.0)).collect();
        let obs = ObservationSet::new(locs, values.to_vec(), None).unwrap();
        let a = estimate_mean(&obs, MeanMode::Weighted, Some(w)).unwrap();
        let b = estimate_mean(&obs, MeanMode::Weighted, Some(&scaled)).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn covariance_matrices_factorize_on_random_configurations(
        model in model_strategy(),
        locations in locations_strategy(100),
    ) {
        // Positive nugget keeps the covariance SPD even with duplicated
        // sites; a successful Cholesky is the check.
        let sigma = model.covariance_matrix(&locations);
        prop_assert!(nalgebra::Cholesky::new(sigma).is_some());
    }

    #[test]
    fn simulation_deterministic_in_seed(
        model in model_strategy(),
        locations in locations_strategy(12),
        seed in any::<u64>(),
    ) {
        let a = simulate_gp(&locations, &model, 1.5, seed).unwrap();
        let b = simulate_gp(&locations, &model, 1.5, seed).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn diagonal_covariance_gives_unit_weights(
        n in 2usize..30,
        variance in 0.1f64..5.0,
        m in 0.1f64..10.0,
    ) {
        let sigma = DMatrix::from_diagonal(&DVector::from_element(n, variance));
        let ctx = CovarianceContext::new(sigma, m).unwrap();
        let wv = compute_weights_with(&ctx).unwrap();
        for w in &wv.w {
            prop_assert!((w - 1.0).abs() < 1e-12);
        }
    }
}
