//! Baseline imputers (chained-equations, same-slice and lagged variants)
//! and the complete-data learner they feed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{McmcConfig, Priors, TimeSeriesDataset};
use crate::sampler::{run_chains, PosteriorTrace};

/// Chained-equations settings. Imputation is deterministic
/// (regression-mean); the ridge term keeps degenerate regressions solvable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiceConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tolerance: 1e-4,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

/// Ridge fit of `y` on `[1 | predictors]`, returning the coefficient
/// vector (intercept first).
fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let p = x.ncols();
    let mut normal = x.transpose() * x;
    for i in 0..p {
        normal[(i, i)] += ridge;
    }
    normal
        .cholesky()
        .map(|ch| ch.solve(&(x.transpose() * y)))
        .ok_or_else(|| Error::Numerical("singular baseline regression despite ridge".into()))
}

/// Chained-equations imputation treating each `(sample, time)` row as an
/// i.i.d. record over the k variables. Each incomplete column is
/// regressed on all other columns, fit on rows where it is observed, and
/// its missing cells overwritten with predictions until the RMS change
/// falls below tolerance.
pub fn mice_impute(d: &TimeSeriesDataset, cfg: &MiceConfig) -> Result<TimeSeriesDataset> {
    let mut out = d.clone();
    let missing = out.missing_cells();
    if missing.is_empty() {
        return Ok(out);
    }
    let k = out.n_vars();
    initialize_with_column_means(&mut out);

    let rows: Vec<(usize, usize)> = (0..out.n_samples())
        .flat_map(|n| (0..out.n_times()).map(move |t| (n, t)))
        .collect();

    for _ in 0..cfg.max_iterations {
        let mut sq_change = 0.0;
        for var in 0..k {
            let var_missing: Vec<&(usize, usize, usize)> =
                missing.iter().filter(|&&(_, i, _)| i == var).collect();
            if var_missing.is_empty() {
                continue;
            }
            let observed_rows: Vec<&(usize, usize)> = rows
                .iter()
                .filter(|&&(n, t)| out.is_observed(n, var, t))
                .collect();
            if observed_rows.is_empty() {
                continue; // column stays at its initialization
            }
            let preds: Vec<((usize, usize, usize), f64)> = {
                let design = |n: usize, t: usize| -> Vec<f64> {
                    let mut row = Vec::with_capacity(k);
                    row.push(1.0);
                    for j in 0..k {
                        if j != var {
                            row.push(out.value(n, j, t));
                        }
                    }
                    row
                };
                let x = DMatrix::from_fn(observed_rows.len(), k, |r, c| {
                    design(observed_rows[r].0, observed_rows[r].1)[c]
                });
                let y = DVector::from_fn(observed_rows.len(), |r, _| {
                    out.value(observed_rows[r].0, var, observed_rows[r].1)
                });
                let coef = ridge_fit(&x, &y, cfg.ridge)?;
                var_missing
                    .iter()
                    .map(|&&(n, i, t)| {
                        let row = DVector::from_vec(design(n, t));
                        ((n, i, t), coef.dot(&row))
                    })
                    .collect()
            };
            for ((n, i, t), pred) in preds {
                let old = out.value(n, i, t);
                sq_change += (pred - old).powi(2);
                out.set_value(n, i, t, pred);
            }
        }
        let rms = (sq_change / missing.len() as f64).sqrt();
        if rms < cfg.tolerance {
            break;
        }
    }
    Ok(out)
}

/// Lagged chained-equations variant: each variable at times `t >= 1` is
/// regressed on all variables at `t - 1`. Missing `t = 0` cells are set
/// to the variable's observed time-0 mean and left there.
pub fn temporal_mice_impute(d: &TimeSeriesDataset, cfg: &MiceConfig) -> Result<TimeSeriesDataset> {
    let mut out = d.clone();
    let missing = out.missing_cells();
    if missing.is_empty() {
        return Ok(out);
    }
    let k = out.n_vars();
    initialize_with_column_means(&mut out);
    for &(n, i, t) in &missing {
        if t == 0 {
            let v = out
                .observed_mean_at(i, 0)
                .or_else(|| out.observed_moments(i).map(|(m, _)| m))
                .unwrap_or(0.0);
            out.set_value(n, i, t, v);
        }
    }

    let lagged_missing: Vec<&(usize, usize, usize)> =
        missing.iter().filter(|&&(_, _, t)| t >= 1).collect();
    if lagged_missing.is_empty() {
        return Ok(out);
    }
    let transitions: Vec<(usize, usize)> = (0..out.n_samples())
        .flat_map(|n| (1..out.n_times()).map(move |t| (n, t)))
        .collect();

    for _ in 0..cfg.max_iterations {
        let mut sq_change = 0.0;
        for var in 0..k {
            let var_missing: Vec<&&(usize, usize, usize)> = lagged_missing
                .iter()
                .filter(|&&&(_, i, _)| i == var)
                .collect();
            if var_missing.is_empty() {
                continue;
            }
            let observed_rows: Vec<&(usize, usize)> = transitions
                .iter()
                .filter(|&&(n, t)| out.is_observed(n, var, t))
                .collect();
            if observed_rows.is_empty() {
                continue;
            }
            let preds: Vec<((usize, usize, usize), f64)> = {
                let design = |n: usize, t: usize| -> Vec<f64> {
                    let mut row = Vec::with_capacity(k + 1);
                    row.push(1.0);
                    for j in 0..k {
                        row.push(out.value(n, j, t - 1));
                    }
                    row
                };
                let x = DMatrix::from_fn(observed_rows.len(), k + 1, |r, c| {
                    design(observed_rows[r].0, observed_rows[r].1)[c]
                });
                let y = DVector::from_fn(observed_rows.len(), |r, _| {
                    out.value(observed_rows[r].0, var, observed_rows[r].1)
                });
                let coef = ridge_fit(&x, &y, cfg.ridge)?;
                var_missing
                    .iter()
                    .map(|&&&(n, i, t)| {
                        let row = DVector::from_vec(design(n, t));
                        ((n, i, t), coef.dot(&row))
                    })
                    .collect()
            };
            for ((n, i, t), pred) in preds {
                let old = out.value(n, i, t);
                sq_change += (pred - old).powi(2);
                out.set_value(n, i, t, pred);
            }
        }
        let rms = (sq_change / lagged_missing.len() as f64).sqrt();
        if rms < cfg.tolerance {
            break;
        }
    }
    Ok(out)
}

fn initialize_with_column_means(d: &mut TimeSeriesDataset) {
    for (n, i, t) in d.missing_cells() {
        let v = d.observed_moments(i).map(|(m, _)| m).unwrap_or(0.0);
        d.set_value(n, i, t, v);
    }
}

/// Runs the structure/parameter sampler with the imputation move
/// disabled. The mask must be all-observed (completed datasets from the
/// imputers qualify after `clear_mask`).
pub fn learn_complete(
    d: &TimeSeriesDataset,
    priors: &Priors,
    config: &McmcConfig,
) -> Result<Vec<PosteriorTrace>> {
    if d.n_missing() > 0 {
        return Err(Error::Precondition(
            "complete-data learner requires an all-observed mask".into(),
        ));
    }
    run_chains(d, priors, config, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn imputers_are_identity_on_complete_data() {
        let mut d = TimeSeriesDataset::with_default_names(2, 2, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for n in 0..2 {
            for i in 0..2 {
                for t in 0..3 {
                    d.set_value(n, i, t, rng.random::<f64>());
                }
            }
        }
        let cfg = MiceConfig::default();
        assert_eq!(mice_impute(&d, &cfg).unwrap(), d);
        assert_eq!(temporal_mice_impute(&d, &cfg).unwrap(), d);
    }

    #[test]
    fn mice_recovers_exact_linear_relation() {
        // y = 2x with one missing y cell.
        let mut d = TimeSeriesDataset::with_default_names(4, 2, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for n in 0..4 {
            for t in 0..3 {
                let x = rng.random::<f64>() * 4.0 - 2.0;
                d.set_value(n, 0, t, x);
                d.set_value(n, 1, t, 2.0 * x);
            }
        }
        d.set_observed(2, 1, 1, false);
        let completed = mice_impute(&d, &MiceConfig::default()).unwrap();
        assert_relative_eq!(
            completed.value(2, 1, 1),
            2.0 * d.value(2, 0, 1),
            epsilon = 1e-6
        );
    }

    #[test]
    fn mice_single_iteration_contract() {
        let mut d = TimeSeriesDataset::with_default_names(3, 2, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for n in 0..3 {
            for i in 0..2 {
                for t in 0..3 {
                    d.set_value(n, i, t, rng.random::<f64>());
                }
            }
        }
        d.set_observed(0, 0, 1, false);
        let one = MiceConfig {
            max_iterations: 1,
            tolerance: 0.0,
            ..Default::default()
        };
        let after_one = mice_impute(&d, &one).unwrap();
        // A second iteration can move the value further; one sweep is
        // exactly the first-iteration state.
        let two = MiceConfig {
            max_iterations: 2,
            tolerance: 0.0,
            ..Default::default()
        };
        let after_two = mice_impute(&d, &two).unwrap();
        // Both are deterministic and the first sweep is shared.
        assert_eq!(after_one, mice_impute(&d, &one).unwrap());
        assert_eq!(after_two, mice_impute(&d, &two).unwrap());
    }

    #[test]
    fn temporal_mice_uses_lagged_predictor() {
        // Chain X1 -> X2 with beta = 0.5 and tiny noise.
        let mut d = TimeSeriesDataset::with_default_names(20, 2, 6).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for n in 0..20 {
            d.set_value(n, 0, 0, rng.random::<f64>() * 2.0 - 1.0);
            d.set_value(n, 1, 0, rng.random::<f64>() * 2.0 - 1.0);
            for t in 1..6 {
                d.set_value(n, 0, t, rng.random::<f64>() * 2.0 - 1.0);
                d.set_value(n, 1, t, 0.5 * d.value(n, 0, t - 1));
            }
        }
        d.set_observed(7, 1, 3, false);
        let cfg = MiceConfig::default();
        let completed = temporal_mice_impute(&d, &cfg).unwrap();
        // Noiseless data: the imputation sits at 0.5 * x1^{t-1} up to the
        // tiny ridge bias.
        assert_relative_eq!(
            completed.value(7, 1, 3),
            0.5 * d.value(7, 0, 2),
            epsilon = 1e-5
        );
        // Independent LU-based ridge oracle on the same design, to 1e-8.
        let rows: Vec<(usize, usize)> = (0..20)
            .flat_map(|n| (1..6).map(move |t| (n, t)))
            .filter(|&(n, t)| !(n == 7 && t == 3))
            .collect();
        let x = DMatrix::from_fn(rows.len(), 3, |r, c| match c {
            0 => 1.0,
            _ => d.value(rows[r].0, c - 1, rows[r].1 - 1),
        });
        let y = DVector::from_fn(rows.len(), |r, _| d.value(rows[r].0, 1, rows[r].1));
        let mut normal = x.transpose() * &x;
        for i in 0..3 {
            normal[(i, i)] += cfg.ridge;
        }
        let coef = normal.lu().solve(&(x.transpose() * &y)).unwrap();
        let pred = coef[0] + coef[1] * d.value(7, 0, 2) + coef[2] * d.value(7, 1, 2);
        assert_relative_eq!(completed.value(7, 1, 3), pred, epsilon = 1e-8);
    }

    #[test]
    fn temporal_mice_time_zero_boundary_rule() {
        let mut d = TimeSeriesDataset::with_default_names(3, 1, 3).unwrap();
        for (n, v) in [(0, 1.0), (1, 3.0)] {
            d.set_value(n, 0, 0, v);
        }
        for n in 0..3 {
            for t in 1..3 {
                d.set_value(n, 0, t, 0.5);
            }
        }
        d.set_observed(2, 0, 0, false);
        let completed = temporal_mice_impute(&d, &MiceConfig::default()).unwrap();
        assert_eq!(completed.value(2, 0, 0), 2.0); // mean of observed t=0 values
    }

    #[test]
    fn temporal_mice_pure_noise_converges_to_column_means() {
        let mut d = TimeSeriesDataset::with_default_names(30, 2, 5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for n in 0..30 {
            for i in 0..2 {
                for t in 0..5 {
                    d.set_value(n, i, t, rng.random::<f64>() - 0.5);
                }
            }
        }
        d.set_observed(0, 0, 2, false);
        let completed = temporal_mice_impute(&d, &MiceConfig::default()).unwrap();
        let (mean, sd2) = d.observed_moments(0).unwrap();
        // With no real signal the prediction stays near the column mean.
        assert!((completed.value(0, 0, 2) - mean).abs() < 3.0 * sd2.sqrt());
    }

    #[test]
    fn imputers_never_touch_observed_cells() {
        let mut d = TimeSeriesDataset::with_default_names(3, 3, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for n in 0..3 {
            for i in 0..3 {
                for t in 0..4 {
                    d.set_value(n, i, t, rng.random::<f64>());
                    if rng.random::<f64>() < 0.3 {
                        d.set_observed(n, i, t, false);
                    }
                }
            }
        }
        for completed in [
            mice_impute(&d, &MiceConfig::default()).unwrap(),
            temporal_mice_impute(&d, &MiceConfig::default()).unwrap(),
        ] {
            for n in 0..3 {
                for i in 0..3 {
                    for t in 0..4 {
                        if d.is_observed(n, i, t) {
                            assert_eq!(completed.value(n, i, t), d.value(n, i, t));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn learn_complete_rejects_missing_mask() {
        let mut d = TimeSeriesDataset::with_default_names(1, 2, 3).unwrap();
        d.set_observed(0, 0, 1, false);
        let priors = Priors::default_for(2);
        let config = McmcConfig {
            epochs: 10,
            burn_in: 2,
            chains: 1,
            ..Default::default()
        };
        assert!(matches!(
            learn_complete(&d, &priors, &config),
            Err(Error::Precondition(_))
        ));
        // A MICE-completed dataset qualifies once the mask is cleared.
        let mut completed = mice_impute(&d, &MiceConfig::default()).unwrap();
        completed.clear_mask();
        assert!(learn_complete(&completed, &priors, &config).is_ok());
    }
}
