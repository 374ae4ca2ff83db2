//! Convergence monitoring (PSRF and the converged fraction), burn-in and
//! thinning, inclusion-probability aggregation, AUC-PR scoring and
//! imputation RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DbnStructure;
use crate::sampler::{PosteriorTrace, TraceRecord};

/// One monitored quantity (an arc indicator or a missing cell) with one
/// value sequence per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoredSeries {
    pub quantity_id: String,
    pub chains: Vec<Vec<f64>>,
}

/// k x k posterior arc probabilities; entry (i, j) scores the arc
/// `X_i -> X_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionMatrix {
    pub probs: Vec<Vec<f64>>,
}

impl InclusionMatrix {
    pub fn n_vars(&self) -> usize {
        self.probs.len()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Gelman-Rubin potential scale reduction factor over the chains'
/// prefixes of length `upto`. Zero-variance conventions: all chains
/// constant and equal gives exactly 1.0; constant but unequal chains
/// give the +infinity sentinel.
pub fn psrf(chains: &[Vec<f64>], upto: usize) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Diagnostic("PSRF requires at least 2 chains".into()));
    }
    if upto < 2 || chains.iter().any(|c| c.len() < upto) {
        return Err(Error::Diagnostic(format!(
            "PSRF requires at least 2 samples per chain up to epoch {upto}"
        )));
    }
    let n = upto as f64;
    let prefixes: Vec<&[f64]> = chains.iter().map(|c| &c[..upto]).collect();
    let within: Vec<f64> = prefixes.iter().map(|p| sample_variance(p)).collect();
    let means: Vec<f64> = prefixes.iter().map(|p| mean(p)).collect();
    let w = mean(&within);
    let b = n * sample_variance(&means);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok(((n - 1.0) / n + b / (n * w)).sqrt())
}

/// Fraction of monitored quantities whose PSRF at `upto` is below
/// `threshold` (the sentinel counts as unconverged).
pub fn phi_fraction(series: &[MonitoredSeries], upto: usize, threshold: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Diagnostic("no monitored quantities".into()));
    }
    let mut converged = 0usize;
    for s in series {
        if psrf(&s.chains, upto)? < threshold {
            converged += 1;
        }
    }
    Ok(converged as f64 / series.len() as f64)
}

/// Evaluates the converged fraction on growing prefixes at a fixed epoch
/// stride, returning `(epoch, phi)` pairs.
pub fn phi_trajectory(
    series: &[MonitoredSeries],
    stride: usize,
    threshold: f64,
) -> Result<Vec<(usize, f64)>> {
    let len = series
        .first()
        .map(|s| s.chains.iter().map(|c| c.len()).min().unwrap_or(0))
        .unwrap_or(0);
    let mut out = Vec::new();
    let mut e = stride.max(2);
    while e <= len {
        out.push((e, phi_fraction(series, e, threshold)?));
        e += stride;
    }
    Ok(out)
}

/// First epoch from which the converged fraction equals 1 at every later
/// evaluation point, or `None` if it never settles at 1.
pub fn sustained_one_epoch(trajectory: &[(usize, f64)]) -> Option<usize> {
    let mut start = None;
    for &(epoch, phi) in trajectory {
        if phi >= 1.0 {
            start.get_or_insert(epoch);
        } else {
            start = None;
        }
    }
    start
}

/// Indices retained after burn-in `s` and thinning `m`, for 1-based
/// epochs `1..=len`: keep epochs `e > s` with `(e - s) % m == 0`.
pub fn thin_indices(len: usize, s: usize, thinning: usize) -> Result<Vec<usize>> {
    if s >= len {
        return Err(Error::Diagnostic(format!(
            "burn-in {s} leaves no samples out of {len}"
        )));
    }
    Ok((s + 1..=len)
        .filter(|e| (e - s).is_multiple_of(thinning))
        .map(|e| e - 1)
        .collect())
}

/// Retains the post-burn-in, thinned subsequence of a trace.
pub fn burn_in_thin(trace: &PosteriorTrace, s: usize, thinning: usize) -> Result<Vec<&TraceRecord>> {
    let retained: Vec<&TraceRecord> = trace
        .records
        .iter()
        .filter(|r| r.epoch_index > s && (r.epoch_index - s).is_multiple_of(thinning))
        .collect();
    if retained.is_empty() {
        return Err(Error::Diagnostic("burn-in left no retained samples".into()));
    }
    Ok(retained)
}

/// Averages posterior arc indicators over retained samples (pooled
/// across chains).
pub fn inclusion_probabilities(retained: &[&TraceRecord], k: usize) -> Result<InclusionMatrix> {
    if retained.is_empty() {
        return Err(Error::Diagnostic("no retained samples".into()));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for rec in retained {
        for (j, parents) in rec.structure.parent_sets.iter().enumerate() {
            for &i in parents {
                counts[i][j] += 1;
            }
        }
    }
    let total = retained.len() as f64;
    let probs = counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / total).collect())
        .collect();
    Ok(InclusionMatrix { probs })
}

/// Area under the precision-recall curve over all k^2 candidate arcs
/// (self-arcs included), scored by inclusion probability. Tied-score
/// blocks are integrated as single steps.
pub fn auc_pr(scores: &InclusionMatrix, truth: &[Vec<bool>]) -> Result<f64> {
    let k = scores.n_vars();
    if truth.len() != k || truth.iter().any(|row| row.len() != k) {
        return Err(Error::Dimension(format!(
            "truth adjacency must be {k} x {k}"
        )));
    }
    let mut flat: Vec<(f64, bool)> = Vec::with_capacity(k * k);
    for (score_row, truth_row) in scores.probs.iter().zip(truth) {
        for (&s, &t) in score_row.iter().zip(truth_row) {
            flat.push((s, t));
        }
    }
    let total_pos = flat.iter().filter(|(_, t)| *t).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric("no positive arcs in truth".into()));
    }
    flat.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut idx = 0;
    while idx < flat.len() {
        // One tie block.
        let score = flat[idx].0;
        let mut block_tp = 0usize;
        let mut block_n = 0usize;
        while idx < flat.len() && flat[idx].0 == score {
            block_n += 1;
            if flat[idx].1 {
                block_tp += 1;
            }
            idx += 1;
        }
        tp += block_tp;
        seen += block_n;
        if block_tp > 0 {
            let precision = tp as f64 / seen as f64;
            area += block_tp as f64 * precision / total_pos as f64;
        }
    }
    Ok(area)
}

/// Includes arc (i, j) iff its inclusion probability is >= tau.
pub fn threshold_network(probs: &InclusionMatrix, tau: f64) -> Result<DbnStructure> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Precondition(format!("tau {tau} outside [0, 1]")));
    }
    let k = probs.n_vars();
    let mut structure = DbnStructure::empty(k);
    for i in 0..k {
        for j in 0..k {
            if probs.probs[i][j] >= tau {
                structure.parent_sets[j].insert(i);
            }
        }
    }
    Ok(structure)
}

/// Posterior-mean imputations over retained records, one per missing
/// cell, in the trace's cell order.
pub fn posterior_mean_imputations(retained: &[&TraceRecord], n_cells: usize) -> Result<Vec<f64>> {
    if retained.is_empty() || retained.iter().any(|r| r.imputations.len() != n_cells) {
        return Err(Error::Diagnostic(
            "retained records lack missing-value samples".into(),
        ));
    }
    let mut means = vec![0.0; n_cells];
    for rec in retained {
        for (m, v) in means.iter_mut().zip(&rec.imputations) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= retained.len() as f64;
    }
    Ok(means)
}

/// RMSE between posterior-mean imputations and the held-out true values
/// of the masked cells.
pub fn imputation_rmse(posterior_means: &[f64], true_values: &[f64]) -> Result<f64> {
    if posterior_means.is_empty() || posterior_means.len() != true_values.len() {
        return Err(Error::UndefinedMetric(
            "imputation RMSE needs a non-empty, aligned set of masked cells".into(),
        ));
    }
    let sse: f64 = posterior_means
        .iter()
        .zip(true_values)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sse / posterior_means.len() as f64).sqrt())
}

/// Builds the arc-indicator monitored series (k^2 of them) from one trace
/// per chain.
pub fn arc_series(traces: &[PosteriorTrace]) -> Vec<MonitoredSeries> {
    let k = traces
        .first()
        .and_then(|t| t.records.first())
        .map(|r| r.structure.n_vars())
        .unwrap_or(0);
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let chains = traces
                .iter()
                .map(|t| {
                    t.records
                        .iter()
                        .map(|r| if r.structure.has_arc(i, j) { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            out.push(MonitoredSeries {
                quantity_id: format!("arc_{}_{}", i + 1, j + 1),
                chains,
            });
        }
    }
    out
}

/// Builds one monitored series per missing cell from one trace per chain.
pub fn missing_series(traces: &[PosteriorTrace]) -> Vec<MonitoredSeries> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    first
        .missing_cells
        .iter()
        .enumerate()
        .map(|(c, &(n, i, t))| MonitoredSeries {
            quantity_id: format!("cell_{n}_{i}_{t}"),
            chains: traces
                .iter()
                .map(|tr| tr.records.iter().map(|r| r.imputations[c]).collect())
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psrf_constant_equal_chains() {
        let chains = vec![vec![2.0; 6], vec![2.0; 6]];
        assert_eq!(psrf(&chains, 6).unwrap(), 1.0);
    }

    #[test]
    fn psrf_identical_nonconstant_chains() {
        let c = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let chains = vec![c.clone(), c];
        let n = 5.0f64;
        assert_relative_eq!(psrf(&chains, 5).unwrap(), ((n - 1.0) / n).sqrt());
    }

    #[test]
    fn psrf_disjoint_constant_chains_is_sentinel() {
        let chains = vec![vec![0.0; 4], vec![1.0; 4]];
        assert_eq!(psrf(&chains, 4).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psrf_invariant_under_constant_shift() {
        let chains = vec![vec![0.1, 0.9, 0.4, 0.6], vec![0.3, 0.5, 0.8, 0.2]];
        let shifted: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|x| x + 100.0).collect())
            .collect();
        assert_relative_eq!(
            psrf(&chains, 4).unwrap(),
            psrf(&shifted, 4).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn psrf_needs_two_chains() {
        assert!(psrf(&[vec![1.0, 2.0, 3.0, 4.0]], 4).is_err());
    }

    #[test]
    fn phi_counts_converged_quantities() {
        let converged = MonitoredSeries {
            quantity_id: "a".into(),
            chains: vec![vec![1.0; 4], vec![1.0; 4]],
        };
        let sentinel = MonitoredSeries {
            quantity_id: "b".into(),
            chains: vec![vec![0.0; 4], vec![1.0; 4]],
        };
        assert_eq!(
            phi_fraction(std::slice::from_ref(&converged), 4, 1.1).unwrap(),
            1.0
        );
        assert_eq!(phi_fraction(&[converged, sentinel], 4, 1.1).unwrap(), 0.5);
    }

    #[test]
    fn sustained_one_detection() {
        let traj = vec![(50, 0.5), (100, 1.0), (150, 0.9), (200, 1.0), (250, 1.0)];
        assert_eq!(sustained_one_epoch(&traj), Some(200));
        assert_eq!(sustained_one_epoch(&[(50, 0.9)]), None);
    }

    #[test]
    fn thinning_counts() {
        assert_eq!(thin_indices(20, 0, 1).unwrap().len(), 20);
        assert_eq!(thin_indices(20_000, 5_000, 5).unwrap().len(), 3_000);
        assert!(thin_indices(10, 10, 1).is_err());
        // floor((E - S) / m) boundary convention.
        for (len, s, m) in [(17usize, 4usize, 3usize), (100, 7, 9), (23, 22, 5)] {
            assert_eq!(thin_indices(len, s, m).unwrap().len(), (len - s) / m);
        }
    }

    #[test]
    fn auc_pr_toy_case() {
        let scores = InclusionMatrix {
            probs: vec![vec![0.9, 0.8], vec![0.4, 0.1]],
        };
        let truth = vec![vec![true, false], vec![true, false]];
        let auc = auc_pr(&scores, &truth).unwrap();
        // Brute-force PR walk: (1/1 + 2/3) / 2.
        assert_relative_eq!(auc, (1.0 + 2.0 / 3.0) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn auc_pr_perfect_separation() {
        let scores = InclusionMatrix {
            probs: vec![vec![0.9, 0.8], vec![0.2, 0.1]],
        };
        let truth = vec![vec![true, true], vec![false, false]];
        assert_relative_eq!(auc_pr(&scores, &truth).unwrap(), 1.0);
    }

    #[test]
    fn auc_pr_constant_scores_equal_prevalence() {
        let scores = InclusionMatrix {
            probs: vec![vec![0.5; 3]; 3],
        };
        let mut truth = vec![vec![false; 3]; 3];
        truth[0][1] = true;
        truth[2][0] = true;
        assert_relative_eq!(auc_pr(&scores, &truth).unwrap(), 2.0 / 9.0, max_relative = 1e-12);
    }

    #[test]
    fn auc_pr_invariant_under_monotone_transform() {
        let scores = InclusionMatrix {
            probs: vec![vec![0.9, 0.3], vec![0.6, 0.05]],
        };
        let transformed = InclusionMatrix {
            probs: scores
                .probs
                .iter()
                .map(|row| row.iter().map(|p| p.powi(3)).collect())
                .collect(),
        };
        let truth = vec![vec![true, false], vec![true, false]];
        assert_eq!(
            auc_pr(&scores, &truth).unwrap(),
            auc_pr(&transformed, &truth).unwrap()
        );
    }

    #[test]
    fn auc_pr_requires_positives() {
        let scores = InclusionMatrix {
            probs: vec![vec![0.5]],
        };
        assert!(auc_pr(&scores, &[vec![false]]).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let probs = InclusionMatrix {
            probs: vec![vec![0.79, 0.80], vec![0.95, 0.1]],
        };
        let net = threshold_network(&probs, 0.8).unwrap();
        assert!(!net.has_arc(0, 0));
        assert!(net.has_arc(0, 1));
        assert!(net.has_arc(1, 0));
        assert!(!net.has_arc(1, 1));
        assert!(threshold_network(&probs, 1.0 + 1e-9).is_err());
        // tau = 0 gives the complete graph.
        let full = threshold_network(&probs, 0.0).unwrap();
        assert_eq!(full.parent_sets.iter().map(|p| p.len()).sum::<usize>(), 4);
    }

    #[test]
    fn rmse_exact_and_constant_cases() {
        assert_eq!(imputation_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(imputation_rmse(&[], &[]).is_err());
        // Constant imputation at the mean: RMSE equals the population sd.
        let truth = [1.0, 2.0, 3.0, 4.0];
        let m = 2.5;
        let rmse = imputation_rmse(&[m; 4], &truth).unwrap();
        let sd = (truth.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert_relative_eq!(rmse, sd);
    }

    #[test]
    fn inclusion_probabilities_match_recount() {
        use crate::model::{DbnStructure, RegressionParams};
        use crate::sampler::TraceRecord;
        let k = 3;
        let mut records = Vec::new();
        for e in 1..=8usize {
            let mut s = DbnStructure::empty(k);
            if e % 2 == 0 {
                s.parent_sets[1].insert(0);
            }
            if e % 4 == 0 {
                s.parent_sets[2].insert(2);
            }
            records.push(TraceRecord {
                epoch_index: e,
                params: RegressionParams::initial(k, &s),
                structure: s,
                imputations: vec![],
            });
        }
        let refs: Vec<&TraceRecord> = records.iter().collect();
        let probs = inclusion_probabilities(&refs, k).unwrap();
        assert_eq!(probs.probs[0][1], 0.5);
        assert_eq!(probs.probs[2][2], 0.25);
        assert_eq!(probs.probs[0][0], 0.0);
    }
}
