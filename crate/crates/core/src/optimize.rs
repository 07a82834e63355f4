//! Box-constrained minimisation: differential evolution for global search
//! plus a Nelder-Mead polish. Both are deterministic given the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Differential evolution settings (rand/1/bin).
#[derive(Debug, Clone, Copy)]
pub struct DeConfig {
    pub differential_weight: f64,
    pub crossover_rate: f64,
    /// Population size; 0 means 15 * dim.
    pub population: usize,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            differential_weight: 0.8,
            crossover_rate: 0.9,
            population: 0,
        }
    }
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Optimizer("empty bounds".into()));
    }
    for &(lo, hi) in bounds {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::Optimizer(format!(
                "invalid bound [{lo}, {hi}]: need finite lo < hi"
            )));
        }
    }
    Ok(())
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(lo, hi);
    }
}

/// Global search over the box with rand/1/bin differential evolution.
pub fn differential_evolution<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    bounds: &[(f64, f64)],
    max_evaluations: usize,
    seed: u64,
    cfg: DeConfig,
) -> Result<OptimizeOutcome> {
    check_bounds(bounds)?;
    let dim = bounds.len();
    let pop_size = if cfg.population == 0 {
        (15 * dim).max(8)
    } else {
        cfg.population.max(4)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut population: Vec<Vec<f64>> = (0..pop_size)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect()
        })
        .collect();
    let mut scores: Vec<f64> = population.iter().map(|x| f(x)).collect();
    let mut evaluations = pop_size;

    let mut trial = vec![0.0; dim];
    while evaluations + 1 <= max_evaluations {
        for i in 0..pop_size {
            if evaluations >= max_evaluations {
                break;
            }
            let pick = |rng: &mut ChaCha8Rng, exclude: &[usize]| loop {
                let j = rng.random_range(0..pop_size);
                if !exclude.contains(&j) {
                    return j;
                }
            };
            let a = pick(&mut rng, &[i]);
            let b = pick(&mut rng, &[i, a]);
            let c = pick(&mut rng, &[i, a, b]);
            let forced = rng.random_range(0..dim);
            for d in 0..dim {
                trial[d] = if d == forced || rng.random_range(0.0..1.0) < cfg.crossover_rate {
                    population[a][d]
                        + cfg.differential_weight * (population[b][d] - population[c][d])
                } else {
                    population[i][d]
                };
            }
            clamp_into(&mut trial, bounds);
            let score = f(&trial);
            evaluations += 1;
            if score <= scores[i] {
                population[i].copy_from_slice(&trial);
                scores[i] = score;
            }
        }
    }

    let best = scores
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.total_cmp(b))
        .map(|(i, _)| i)
        .expect("non-empty population");
    Ok(OptimizeOutcome {
        x: population[best].clone(),
        value: scores[best],
        evaluations,
        converged: scores[best].is_finite(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadConfig {
    pub max_evaluations: usize,
    /// Convergence when the simplex value spread falls below
    /// `f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
    /// Initial simplex step as a fraction of each box width.
    pub step_fraction: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_evaluations: 4000,
            f_tol: 1e-14,
            step_fraction: 0.05,
        }
    }
}

/// Nelder-Mead restricted to the box: every candidate vertex is clamped.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    cfg: NelderMeadConfig,
) -> Result<OptimizeOutcome> {
    check_bounds(bounds)?;
    let dim = bounds.len();
    if x0.len() != dim {
        return Err(Error::Optimizer(format!(
            "start point has {} coordinates, bounds have {dim}",
            x0.len()
        )));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut start = x0.to_vec();
    clamp_into(&mut start, bounds);
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for d in 0..dim {
        let mut v = start.clone();
        let (lo, hi) = bounds[d];
        let step = cfg.step_fraction * (hi - lo);
        v[d] = if v[d] + step <= hi { v[d] + step } else { v[d] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evaluations = dim + 1;
    let mut converged = false;

    while evaluations < cfg.max_evaluations {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let spread = values[worst] - values[best];
        if spread.abs() < cfg.f_tol * (1.0 + values[best].abs()) {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for d in 0..dim {
                centroid[d] += v[d] / dim as f64;
            }
        }

        let blend = |from: &[f64], towards: &[f64], t: f64| -> Vec<f64> {
            let mut v: Vec<f64> = from
                .iter()
                .zip(towards)
                .map(|(a, b)| a + t * (b - a))
                .collect();
            clamp_into(&mut v, bounds);
            v
        };

        // Reflection.
        let reflected = blend(&centroid, &simplex[worst], -alpha);
        let f_reflected = f(&reflected);
        evaluations += 1;

        if f_reflected < values[best] {
            // Expansion.
            let expanded = blend(&centroid, &simplex[worst], -gamma);
            let f_expanded = f(&expanded);
            evaluations += 1;
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
        } else if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
        } else {
            // Contraction.
            let contracted = blend(&centroid, &simplex[worst], rho);
            let f_contracted = f(&contracted);
            evaluations += 1;
            if f_contracted < values[worst] {
                simplex[worst] = contracted;
                values[worst] = f_contracted;
            } else {
                // Shrink towards the best vertex.
                let anchor = simplex[best].clone();
                for i in 0..=dim {
                    if i == best {
                        continue;
                    }
                    simplex[i] = blend(&anchor, &simplex[i], sigma);
                    values[i] = f(&simplex[i]);
                    evaluations += 1;
                }
            }
        }
    }

    let best = (0..=dim)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty simplex");
    Ok(OptimizeOutcome {
        x: simplex[best].clone(),
        value: values[best],
        evaluations,
        converged,
    })
}

/// Differential evolution over the box followed by a Nelder-Mead polish from
/// the best point. `budget` caps total objective evaluations.
pub fn minimize_bounded<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    bounds: &[(f64, f64)],
    budget: usize,
    seed: u64,
) -> Result<OptimizeOutcome> {
    check_bounds(bounds)?;
    let budget = budget.max(bounds.len() + 2);
    let de_budget = (budget * 7) / 10;
    let de = differential_evolution(&mut f, bounds, de_budget, seed, DeConfig::default())?;
    let polish_budget = budget.saturating_sub(de.evaluations).max(bounds.len() + 2);
    let nm = nelder_mead(
        &mut f,
        &de.x,
        bounds,
        NelderMeadConfig {
            max_evaluations: polish_budget,
            ..NelderMeadConfig::default()
        },
    )?;
    let evaluations = de.evaluations + nm.evaluations;
    if nm.value <= de.value {
        Ok(OptimizeOutcome {
            evaluations,
            ..nm
        })
    } else {
        Ok(OptimizeOutcome {
            x: de.x,
            value: de.value,
            evaluations,
            converged: nm.converged,
        })
    }
}

/// Nelder-Mead restarted from its own result until the objective stops
/// improving. Deterministic local refinement for smooth fits.
pub fn polish<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    restarts: usize,
    max_evaluations: usize,
) -> Result<OptimizeOutcome> {
    let cfg = NelderMeadConfig {
        max_evaluations,
        ..NelderMeadConfig::default()
    };
    let mut out = nelder_mead(&mut f, x0, bounds, cfg)?;
    let mut evaluations = out.evaluations;
    for _ in 0..restarts {
        let next = nelder_mead(&mut f, &out.x, bounds, cfg)?;
        evaluations += next.evaluations;
        let improved = next.value < out.value - 1e-15 * (1.0 + out.value.abs());
        if next.value <= out.value {
            out = next;
        }
        if !improved {
            break;
        }
    }
    out.evaluations = evaluations;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_minimum_inside_box() {
        let target = [1.2, -0.7, 3.3];
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum()
        };
        let bounds = [(-5.0, 5.0), (-5.0, 5.0), (-5.0, 5.0)];
        let out = minimize_bounded(f, &bounds, 6000, 42).unwrap();
        for (a, b) in out.x.iter().zip(&target) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn boundary_minimum_is_clamped_exactly() {
        let f = |x: &[f64]| (x[0] - 4.0).powi(2);
        let out = minimize_bounded(f, &[(-1.0, 1.0)], 2000, 7).unwrap();
        assert_eq!(out.x[0], 1.0);
    }

    #[test]
    fn rosenbrock_2d() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let out = minimize_bounded(f, &[(-2.0, 2.0), (-2.0, 2.0)], 20_000, 3).unwrap();
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(out.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn deterministic_given_seed() {
        let f = |x: &[f64]| x[0].sin() * x[1].cos() + 0.1 * (x[0] * x[0] + x[1] * x[1]);
        let bounds = [(-4.0, 4.0), (-4.0, 4.0)];
        let a = minimize_bounded(f, &bounds, 3000, 99).unwrap();
        let b = minimize_bounded(f, &bounds, 3000, 99).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn rejects_invalid_bounds() {
        let f = |x: &[f64]| x[0];
        assert!(minimize_bounded(f, &[(1.0, 1.0)], 100, 0).is_err());
        assert!(minimize_bounded(f, &[], 100, 0).is_err());
    }
}
