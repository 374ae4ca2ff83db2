//! Core domain types: time-series panels, their lagged regression form,
//! network structures, regression parameters, priors and run controls.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate panel of `N` samples over `k` variables observed at
/// `T + 1` equally spaced time points, together with a missingness mask.
///
/// `values` is always fully materialized: masked-out cells hold the
/// current imputation, and `mask` is the single source of truth for
/// which cells were actually observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    values: Vec<f64>,
    mask: Vec<bool>,
    n_samples: usize,
    n_vars: usize,
    n_times: usize, // T + 1
    pub variable_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn new(
        n_samples: usize,
        n_vars: usize,
        n_times: usize,
        variable_names: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if n_samples < 1 || n_vars < 1 || n_times < 2 {
            return Err(Error::Dimension(format!(
                "need N >= 1, k >= 1, T >= 1; got N={n_samples}, k={n_vars}, T+1={n_times}"
            )));
        }
        if variable_names.len() != n_vars || sample_ids.len() != n_samples {
            return Err(Error::Dimension(
                "variable_names / sample_ids length mismatch".into(),
            ));
        }
        let len = n_samples * n_vars * n_times;
        Ok(Self {
            values: vec![0.0; len],
            mask: vec![true; len],
            n_samples,
            n_vars,
            n_times,
            variable_names,
            sample_ids,
        })
    }

    pub fn with_default_names(n_samples: usize, n_vars: usize, n_times: usize) -> Result<Self> {
        let names = (0..n_vars).map(|i| format!("X{}", i + 1)).collect();
        let ids = (0..n_samples).map(|n| format!("s{}", n + 1)).collect();
        Self::new(n_samples, n_vars, n_times, names, ids)
    }

    #[inline]
    fn idx(&self, sample: usize, var: usize, time: usize) -> usize {
        debug_assert!(sample < self.n_samples && var < self.n_vars && time < self.n_times);
        (sample * self.n_vars + var) * self.n_times + time
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Number of time points, `T + 1`.
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// The horizon `T` (number of transitions).
    pub fn horizon(&self) -> usize {
        self.n_times - 1
    }

    #[inline]
    pub fn value(&self, sample: usize, var: usize, time: usize) -> f64 {
        self.values[self.idx(sample, var, time)]
    }

    #[inline]
    pub fn set_value(&mut self, sample: usize, var: usize, time: usize, v: f64) {
        let i = self.idx(sample, var, time);
        self.values[i] = v;
    }

    #[inline]
    pub fn is_observed(&self, sample: usize, var: usize, time: usize) -> bool {
        self.mask[self.idx(sample, var, time)]
    }

    #[inline]
    pub fn set_observed(&mut self, sample: usize, var: usize, time: usize, observed: bool) {
        let i = self.idx(sample, var, time);
        self.mask[i] = observed;
    }

    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Missing cells in the fixed sweep order: sample-major, then time
    /// ascending, then variable ascending within a time point.
    pub fn missing_cells(&self) -> Vec<(usize, usize, usize)> {
        let mut cells = Vec::new();
        for n in 0..self.n_samples {
            for t in 0..self.n_times {
                for i in 0..self.n_vars {
                    if !self.is_observed(n, i, t) {
                        cells.push((n, i, t));
                    }
                }
            }
        }
        cells
    }

    /// Mark every cell observed (used after baseline imputation).
    pub fn clear_mask(&mut self) {
        self.mask.iter_mut().for_each(|m| *m = true);
    }

    /// Checks the finiteness invariant on observed cells.
    pub fn validate(&self) -> Result<()> {
        for (v, m) in self.values.iter().zip(&self.mask) {
            if *m && !v.is_finite() {
                return Err(Error::Dimension("non-finite observed value".into()));
            }
        }
        Ok(())
    }

    /// Mean of observed values of variable `var` at time `time`, if any.
    pub fn observed_mean_at(&self, var: usize, time: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for n in 0..self.n_samples {
            if self.is_observed(n, var, time) {
                sum += self.value(n, var, time);
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    /// Mean and variance of all observed values of variable `var`.
    pub fn observed_moments(&self, var: usize) -> Option<(f64, f64)> {
        let mut vals = Vec::new();
        for n in 0..self.n_samples {
            for t in 0..self.n_times {
                if self.is_observed(n, var, t) {
                    vals.push(self.value(n, var, t));
                }
            }
        }
        if vals.is_empty() {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        } else {
            0.0
        };
        Some((mean, var))
    }
}

/// The `(N·T, 2k)` lagged form of a panel: each row pairs a time-`t`
/// response slice with its time-`t-1` predictor slice. Row order is
/// sample-major, time ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDataset {
    pub responses: DMatrix<f64>,
    pub predictors: DMatrix<f64>,
    pub row_index: Vec<(usize, usize)>,
}

impl LaggedDataset {
    pub fn n_rows(&self) -> usize {
        self.responses.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.responses.ncols()
    }
}

/// Rewrites a completed panel into its lagged regression form.
pub fn lag_dataset(d: &TimeSeriesDataset) -> Result<LaggedDataset> {
    if d.n_times() < 2 {
        return Err(Error::Dimension("need T >= 1 to lag".into()));
    }
    let n = d.n_samples();
    let k = d.n_vars();
    let t_max = d.horizon();
    let rows = n * t_max;
    let mut responses = DMatrix::zeros(rows, k);
    let mut predictors = DMatrix::zeros(rows, k);
    let mut row_index = Vec::with_capacity(rows);
    for sample in 0..n {
        for t in 1..=t_max {
            let r = sample * t_max + (t - 1);
            for i in 0..k {
                responses[(r, i)] = d.value(sample, i, t);
                predictors[(r, i)] = d.value(sample, i, t - 1);
            }
            row_index.push((sample, t));
        }
    }
    Ok(LaggedDataset {
        responses,
        predictors,
        row_index,
    })
}

/// Builds the per-node regression problem: the response vector of `node`
/// and the design matrix `[1 | predictors of parents in ascending order]`.
pub fn design_matrix(
    lagged: &LaggedDataset,
    node: usize,
    parents: &ParentSet,
) -> (DVector<f64>, DMatrix<f64>) {
    let rows = lagged.n_rows();
    let y = DVector::from_fn(rows, |r, _| lagged.responses[(r, node)]);
    let mut x = DMatrix::zeros(rows, parents.len() + 1);
    for r in 0..rows {
        x[(r, 0)] = 1.0;
    }
    for (c, &p) in parents.iter().enumerate() {
        for r in 0..rows {
            x[(r, c + 1)] = lagged.predictors[(r, p)];
        }
    }
    (y, x)
}

/// An ordered set of parent indices (variables at the previous slice).
pub type ParentSet = BTreeSet<usize>;

/// Per-node parent sets over one time lag. Self-parents are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbnStructure {
    pub parent_sets: Vec<ParentSet>,
}

impl DbnStructure {
    pub fn empty(k: usize) -> Self {
        Self {
            parent_sets: vec![ParentSet::new(); k],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.parent_sets.len()
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.parent_sets[to].contains(&from)
    }

    /// Children of `var` under the current structure: nodes whose parent
    /// set contains `var`.
    pub fn children_of(&self, var: usize) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&j| self.parent_sets[j].contains(&var))
            .collect()
    }

    pub fn validate(&self, fan_in_max: usize) -> Result<()> {
        for (i, ps) in self.parent_sets.iter().enumerate() {
            if ps.len() > fan_in_max {
                return Err(Error::Dimension(format!(
                    "node {i} has {} parents, fan-in max is {fan_in_max}",
                    ps.len()
                )));
            }
        }
        Ok(())
    }
}

/// Regression parameters for one node: intercept, coefficients ordered
/// as the node's parent set, noise variance and shrinkage variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub delta2: f64,
}

impl NodeParams {
    pub fn validate(&self, parents: &ParentSet) -> Result<()> {
        if self.sigma2 <= 0.0 || self.delta2 <= 0.0 {
            return Err(Error::Dimension("sigma2 and delta2 must be positive".into()));
        }
        if self.beta.len() != parents.len() {
            return Err(Error::Dimension(format!(
                "coefficient count {} does not match parent count {}",
                self.beta.len(),
                parents.len()
            )));
        }
        Ok(())
    }

    /// Conditional mean of the node at the current slice given parent
    /// values at the previous slice.
    pub fn conditional_mean(&self, parents: &ParentSet, previous: impl Fn(usize) -> f64) -> f64 {
        let mut mu = self.beta0;
        for (b, &p) in self.beta.iter().zip(parents.iter()) {
            mu += b * previous(p);
        }
        mu
    }
}

/// All per-node regression parameters of a DBN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionParams {
    pub nodes: Vec<NodeParams>,
}

impl RegressionParams {
    pub fn initial(k: usize, structure: &DbnStructure) -> Self {
        let nodes = (0..k)
            .map(|i| NodeParams {
                beta0: 0.0,
                beta: vec![0.0; structure.parent_sets[i].len()],
                sigma2: 1.0,
                delta2: 1.0,
            })
            .collect();
        Self { nodes }
    }
}

/// Hyperparameters of the conjugate model: Inverse-Gamma shapes/rates for
/// the noise and shrinkage variances, the Poisson rate on parent-set
/// size, prior coefficient means and the fan-in cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_delta: f64,
    pub b_delta: f64,
    pub lambda: f64,
    /// k x (k+1) prior coefficient means; column 0 is the intercept mean,
    /// column j+1 the mean for candidate parent j.
    pub mu: Vec<Vec<f64>>,
    pub fan_in_max: usize,
}

impl Priors {
    /// Weakly informative defaults with zero prior coefficient means.
    pub fn default_for(k: usize) -> Self {
        Self {
            a_sigma: 0.01,
            b_sigma: 0.01,
            a_delta: 0.01,
            b_delta: 0.01,
            lambda: 1.0,
            mu: vec![vec![0.0; k + 1]; k],
            fan_in_max: 5,
        }
    }

    /// Prior mean vector for `node` under `parents`, ordered as the
    /// design matrix columns (intercept first, then parents ascending).
    pub fn mean_vector(&self, node: usize, parents: &ParentSet) -> DVector<f64> {
        let mut mu = DVector::zeros(parents.len() + 1);
        mu[0] = self.mu[node][0];
        for (c, &p) in parents.iter().enumerate() {
            mu[c + 1] = self.mu[node][p + 1];
        }
        mu
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.a_sigma <= 0.0
            || self.b_sigma <= 0.0
            || self.a_delta <= 0.0
            || self.b_delta <= 0.0
            || self.lambda <= 0.0
        {
            return Err(Error::Config(
                "prior shape/rate parameters and lambda must be strictly positive".into(),
            ));
        }
        if self.mu.len() != k || self.mu.iter().any(|row| row.len() != k + 1) {
            return Err(Error::Config(format!(
                "prior mean matrix must be {k} x {}",
                k + 1
            )));
        }
        Ok(())
    }
}

/// MCMC run controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub epochs: usize,
    pub missing_update_interval: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub seed: u64,
    pub record_missing_trace: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            epochs: 20_000,
            missing_update_interval: 10,
            burn_in: 5_000,
            thinning: 5,
            chains: 5,
            seed: 0,
            record_missing_trace: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.epochs {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than epochs {}",
                self.burn_in, self.epochs
            )));
        }
        if self.missing_update_interval < 1 || self.thinning < 1 || self.chains < 1 {
            return Err(Error::Config(
                "missing_update_interval, thinning and chains must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn toy_dataset() -> TimeSeriesDataset {
        // N=1, k=2, T+1=3: values [[1,2,3],[4,5,6]]
        let mut d = TimeSeriesDataset::with_default_names(1, 2, 3).unwrap();
        for (i, row) in [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]].iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                d.set_value(0, i, t, *v);
            }
        }
        d
    }

    #[test]
    fn lag_small_panel() {
        let lagged = lag_dataset(&toy_dataset()).unwrap();
        assert_eq!(lagged.n_rows(), 2);
        assert_eq!(lagged.responses, DMatrix::from_row_slice(2, 2, &[2.0, 5.0, 3.0, 6.0]));
        assert_eq!(lagged.predictors, DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 2.0, 5.0]));
        assert_eq!(lagged.row_index, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn lag_one_transition_per_sample() {
        let d = TimeSeriesDataset::with_default_names(2, 1, 2).unwrap();
        let lagged = lag_dataset(&d).unwrap();
        assert_eq!(lagged.n_rows(), 2);
        assert_eq!(lagged.row_index, vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn lag_matches_index_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut d = TimeSeriesDataset::with_default_names(3, 4, 6).unwrap();
        for n in 0..3 {
            for i in 0..4 {
                for t in 0..6 {
                    d.set_value(n, i, t, rng.random::<f64>());
                }
            }
        }
        let lagged = lag_dataset(&d).unwrap();
        assert_eq!(lagged.n_rows(), 3 * 5);
        // Independent index walk over the defining identity.
        for (r, &(n, t)) in lagged.row_index.iter().enumerate() {
            for i in 0..4 {
                assert_eq!(lagged.responses[(r, i)], d.value(n, i, t));
                assert_eq!(lagged.predictors[(r, i)], d.value(n, i, t - 1));
            }
        }
    }

    #[test]
    fn time_zero_never_appears_as_response() {
        let lagged = lag_dataset(&toy_dataset()).unwrap();
        assert!(lagged.row_index.iter().all(|&(_, t)| t >= 1));
    }

    #[test]
    fn design_matrix_intercept_only() {
        let lagged = lag_dataset(&toy_dataset()).unwrap();
        let (y, x) = design_matrix(&lagged, 0, &ParentSet::new());
        assert_eq!(x.ncols(), 1);
        assert!(x.iter().all(|&v| v == 1.0));
        assert_eq!(y.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn design_matrix_column_order() {
        let mut d = TimeSeriesDataset::with_default_names(1, 6, 2).unwrap();
        for i in 0..6 {
            d.set_value(0, i, 0, i as f64);
            d.set_value(0, i, 1, 10.0 + i as f64);
        }
        let lagged = lag_dataset(&d).unwrap();
        let parents: ParentSet = [1, 4].into_iter().collect();
        let (_, x) = design_matrix(&lagged, 0, &parents);
        assert_eq!(x.ncols(), 3);
        assert_eq!(x[(0, 0)], 1.0);
        assert_eq!(x[(0, 1)], 1.0); // x_2 at t-1 (0-based index 1)
        assert_eq!(x[(0, 2)], 4.0); // x_5 at t-1 (0-based index 4)
    }

    #[test]
    fn design_matrix_full_parent_set() {
        let lagged = lag_dataset(&toy_dataset()).unwrap();
        let parents: ParentSet = [0, 1].into_iter().collect();
        let (_, x) = design_matrix(&lagged, 1, &parents);
        for r in 0..2 {
            assert_eq!(x[(r, 0)], 1.0);
            for i in 0..2 {
                assert_eq!(x[(r, i + 1)], lagged.predictors[(r, i)]);
            }
        }
    }

    #[test]
    fn cell_update_touches_expected_rows() {
        let mut d = toy_dataset();
        let before = lag_dataset(&d).unwrap();
        d.set_value(0, 0, 1, 99.0); // (n=0, i=0, t=1)
        let after = lag_dataset(&d).unwrap();
        for (r, &(_, t)) in before.row_index.iter().enumerate() {
            for i in 0..2 {
                let resp_changed = after.responses[(r, i)] != before.responses[(r, i)];
                let pred_changed = after.predictors[(r, i)] != before.predictors[(r, i)];
                // Response side changes only at (n, t)=(0,1), predictor side at t=2.
                assert_eq!(resp_changed, t == 1 && i == 0);
                assert_eq!(pred_changed, t == 2 && i == 0);
            }
        }
    }

    #[test]
    fn lag_rejects_single_time_point() {
        assert!(TimeSeriesDataset::with_default_names(1, 2, 1).is_err());
    }

    #[test]
    fn mcmc_config_validation() {
        let mut cfg = McmcConfig {
            epochs: 100,
            burn_in: 100,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.burn_in = 50;
        assert!(cfg.validate().is_ok());
    }
}
