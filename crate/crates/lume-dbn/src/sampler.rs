//! The LUME-DBN MCMC sampler: collapsed-Gibbs parameter updates,
//! Metropolis-Hastings parent-set moves over marginal likelihoods, and
//! Gibbs imputation of missing values from their full conditionals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{
    design_matrix, lag_dataset, DbnStructure, LaggedDataset, McmcConfig, ParentSet, Priors,
    RegressionParams, TimeSeriesDataset,
};
use crate::seeds::derive_seed;

/// Shape/rate parameterization of an Inverse-Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaParams {
    pub fn sample(&self, rng: &mut impl Rng) -> Result<f64> {
        // If G ~ Gamma(shape, scale = 1/rate) then 1/G ~ Inv-Gamma(shape, rate).
        let gamma = Gamma::new(self.shape, 1.0 / self.rate)
            .map_err(|e| Error::Numerical(format!("invalid Inverse-Gamma parameters: {e}")))?;
        let g: f64 = gamma.sample(rng);
        if g <= 0.0 || !g.is_finite() {
            return Err(Error::Numerical("degenerate Inverse-Gamma draw".into()));
        }
        Ok(1.0 / g)
    }
}

/// Univariate Gaussian full conditional of one missing value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFcd {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianFcd {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let normal = Normal::new(self.mean, self.variance.sqrt()).expect("finite FCD");
        normal.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Deletion,
    Addition,
    Exchange,
}

/// A candidate parent-set move together with its Hastings ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct MhProposal {
    pub move_kind: MoveKind,
    pub proposed_parents: ParentSet,
    pub hastings_ratio: f64,
}

/// One retained MCMC state. `imputations` is aligned with the trace's
/// `missing_cells` list (empty when missing-value recording is off).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch_index: usize,
    pub structure: DbnStructure,
    pub params: RegressionParams,
    pub imputations: Vec<f64>,
}

/// Per-epoch posterior samples from one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrace {
    /// Missing cells of the input mask, in the fixed sweep order.
    pub missing_cells: Vec<(usize, usize, usize)>,
    pub records: Vec<TraceRecord>,
}

fn spd_cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let mut sym = (&m + m.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch);
    }
    // One jitter retry, then hard error.
    for i in 0..n {
        sym[(i, i)] += 1e-10;
    }
    sym.cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed after jitter".into()))
}

/// Reduced p x p system shared by the collapsed quadratic form and the
/// marginal likelihood: `A = delta^-2 I + X'X`, with
/// `M'(I + delta^2 XX')^{-1} M = M'M - (X'M)' A^{-1} (X'M)` (Woodbury)
/// and `det(I + delta^2 XX') = delta^{2p} det(A)` (determinant lemma).
fn reduced_quadratic(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    mu: &DVector<f64>,
    delta2: f64,
) -> Result<(f64, f64)> {
    let p = x.ncols();
    let residual = y - x * mu;
    let mut a = x.transpose() * x;
    for i in 0..p {
        a[(i, i)] += 1.0 / delta2;
    }
    let chol = spd_cholesky(a)?;
    let xt_m = x.transpose() * &residual;
    let quad = residual.dot(&residual) - xt_m.dot(&chol.solve(&xt_m));
    let log_det_c = p as f64 * delta2.ln()
        + 2.0 * (0..p).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    if !quad.is_finite() {
        return Err(Error::Numerical("non-finite quadratic form".into()));
    }
    Ok((quad, log_det_c))
}

/// Collapsed-Gibbs posterior of the noise variance, with the regression
/// coefficients integrated out under their conjugate prior.
pub fn sigma2_posterior(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    mu: &DVector<f64>,
    delta2: f64,
    priors: &Priors,
) -> Result<InvGammaParams> {
    let n = y.len();
    if n == 0 {
        return Ok(InvGammaParams {
            shape: priors.a_sigma,
            rate: priors.b_sigma,
        });
    }
    let (quad, _) = reduced_quadratic(y, x, mu, delta2)?;
    Ok(InvGammaParams {
        shape: priors.a_sigma + n as f64 / 2.0,
        rate: priors.b_sigma + 0.5 * quad,
    })
}

/// Full conditional of the coefficient vector (intercept included):
/// mean `(delta^-2 I + X'X)^{-1} (delta^-2 mu + X'Y)`, covariance
/// `sigma^2 (delta^-2 I + X'X)^{-1}`.
pub fn beta_fcd(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma2: f64,
    delta2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let mut precision = x.transpose() * x;
    for i in 0..p {
        precision[(i, i)] += 1.0 / delta2;
    }
    let chol = spd_cholesky(precision)?;
    let rhs = mu / delta2 + x.transpose() * y;
    let mean = chol.solve(&rhs);
    let covariance = chol.inverse() * sigma2;
    Ok((mean, covariance))
}

fn sample_mvn(mean: &DVector<f64>, covariance: &DMatrix<f64>, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let chol = spd_cholesky(covariance.clone())?;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let z = DVector::from_fn(mean.len(), |_, _| std_normal.sample(rng));
    Ok(mean + chol.l() * z)
}

/// Posterior of the shrinkage variance given the full coefficient vector
/// (intercept included, hence the `(|pi|+1)/2` shape increment).
pub fn delta2_posterior(
    beta_full: &DVector<f64>,
    mu: &DVector<f64>,
    sigma2: f64,
    priors: &Priors,
) -> InvGammaParams {
    let dev = beta_full - mu;
    InvGammaParams {
        shape: priors.a_delta + beta_full.len() as f64 / 2.0,
        rate: priors.b_delta + 0.5 / sigma2 * dev.dot(&dev),
    }
}

/// Log marginal likelihood of a node's regression with both the
/// coefficients and the noise variance integrated out:
/// `ln Gamma(A) - ln Gamma(a) - (n/2) ln pi + a ln(2b) - (1/2) ln det C - A ln(2b + M'C^{-1}M)`
/// with `A = n/2 + a`, `C = I + delta^2 XX'`, `M = Y - X mu`, evaluated
/// through the reduced p x p form.
pub fn log_marginal_likelihood(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    mu: &DVector<f64>,
    delta2: f64,
    priors: &Priors,
) -> Result<f64> {
    let n = y.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (quad, log_det_c) = reduced_quadratic(y, x, mu, delta2)?;
    let a_post = n as f64 / 2.0 + priors.a_sigma;
    let tail = 2.0 * priors.b_sigma + quad;
    if tail <= 0.0 || !log_det_c.is_finite() {
        return Err(Error::Numerical(
            "non-positive determinant or tail term in marginal likelihood".into(),
        ));
    }
    Ok(ln_gamma(a_post) - ln_gamma(priors.a_sigma)
        - n as f64 / 2.0 * std::f64::consts::PI.ln()
        + priors.a_sigma * (2.0 * priors.b_sigma).ln()
        - 0.5 * log_det_c
        - a_post * tail.ln())
}

/// Unnormalized log Poisson prior on parent-set size:
/// `|pi| ln lambda - ln(|pi|!)`. The `e^{-lambda}` constant cancels in
/// MH ratios.
pub fn structure_log_prior(parent_count: usize, lambda: f64) -> f64 {
    parent_count as f64 * lambda.ln() - ln_gamma(parent_count as f64 + 1.0)
}

fn legal_moves(current_len: usize, k: usize, fan_in_max: usize) -> Vec<MoveKind> {
    let mut kinds = Vec::with_capacity(3);
    if current_len > 0 {
        kinds.push(MoveKind::Deletion);
    }
    if current_len < fan_in_max && current_len < k {
        kinds.push(MoveKind::Addition);
    }
    if current_len > 0 && current_len < k {
        kinds.push(MoveKind::Exchange);
    }
    kinds
}

/// Draws one of the legal structure moves uniformly and builds the
/// candidate parent set with its Hastings ratio. Candidate parents are
/// all `k` variables (self-arcs included).
pub fn propose_structure_move(
    current: &ParentSet,
    k: usize,
    fan_in_max: usize,
    rng: &mut impl Rng,
) -> Result<MhProposal> {
    let kinds = legal_moves(current.len(), k, fan_in_max);
    if kinds.is_empty() {
        return Err(Error::Proposal(format!(
            "no legal structure move for |pi|={}, k={k}, fan-in max {fan_in_max}",
            current.len()
        )));
    }
    let kind = kinds[rng.random_range(0..kinds.len())];
    let members: Vec<usize> = current.iter().copied().collect();
    let outside: Vec<usize> = (0..k).filter(|v| !current.contains(v)).collect();
    let n = k as f64;
    let mut proposed = current.clone();
    let hastings_ratio = match kind {
        MoveKind::Deletion => {
            let victim = members[rng.random_range(0..members.len())];
            proposed.remove(&victim);
            current.len() as f64 / (n - proposed.len() as f64)
        }
        MoveKind::Addition => {
            let newcomer = outside[rng.random_range(0..outside.len())];
            proposed.insert(newcomer);
            (n - current.len() as f64) / proposed.len() as f64
        }
        MoveKind::Exchange => {
            let victim = members[rng.random_range(0..members.len())];
            let newcomer = outside[rng.random_range(0..outside.len())];
            proposed.remove(&victim);
            proposed.insert(newcomer);
            1.0
        }
    };
    Ok(MhProposal {
        move_kind: kind,
        proposed_parents: proposed,
        hastings_ratio,
    })
}

/// Algorithm "parameter set update": collapsed draw of sigma^2, then the
/// coefficient vector from its FCD, then the shrinkage variance.
pub fn parameter_move(
    node: usize,
    lagged: &LaggedDataset,
    structure: &DbnStructure,
    params: &mut RegressionParams,
    priors: &Priors,
    rng: &mut impl Rng,
) -> Result<()> {
    let parents = &structure.parent_sets[node];
    let (y, x) = design_matrix(lagged, node, parents);
    let mu = priors.mean_vector(node, parents);
    let delta2 = params.nodes[node].delta2;

    let sigma2 = sigma2_posterior(&y, &x, &mu, delta2, priors)?.sample(rng)?;
    let (mean, cov) = beta_fcd(&y, &x, &mu, sigma2, delta2)?;
    let beta_full = sample_mvn(&mean, &cov, rng)?;
    let delta2 = delta2_posterior(&beta_full, &mu, sigma2, priors).sample(rng)?;

    let node_params = &mut params.nodes[node];
    node_params.sigma2 = sigma2;
    node_params.delta2 = delta2;
    node_params.beta0 = beta_full[0];
    node_params.beta = beta_full.as_slice()[1..].to_vec();
    Ok(())
}

/// Metropolis-Hastings parent-set update. On acceptance the coefficient
/// vector is redrawn from its FCD under the new design; on rejection both
/// the parent set and the coefficients are left untouched. When no move
/// is legal (k = 0 or fan-in 0 with an empty set) the state is kept.
pub fn mh_structure_update(
    node: usize,
    lagged: &LaggedDataset,
    structure: &mut DbnStructure,
    params: &mut RegressionParams,
    priors: &Priors,
    rng: &mut impl Rng,
) -> Result<bool> {
    let k = structure.n_vars();
    let current = structure.parent_sets[node].clone();
    let proposal = match propose_structure_move(&current, k, priors.fan_in_max, rng) {
        Ok(p) => p,
        Err(Error::Proposal(_)) => return Ok(false),
        Err(e) => return Err(e),
    };

    let delta2 = params.nodes[node].delta2;
    let mu_cur = priors.mean_vector(node, &current);
    let mu_prop = priors.mean_vector(node, &proposal.proposed_parents);
    let (y, x_cur) = design_matrix(lagged, node, &current);
    let (_, x_prop) = design_matrix(lagged, node, &proposal.proposed_parents);

    let log_ml_cur = log_marginal_likelihood(&y, &x_cur, &mu_cur, delta2, priors)?;
    let log_ml_prop = log_marginal_likelihood(&y, &x_prop, &mu_prop, delta2, priors)?;
    let log_prior_cur = structure_log_prior(current.len(), priors.lambda);
    let log_prior_prop = structure_log_prior(proposal.proposed_parents.len(), priors.lambda);

    let log_accept = (log_ml_prop - log_ml_cur) + (log_prior_prop - log_prior_cur)
        + proposal.hastings_ratio.ln();
    let accept_prob = log_accept.min(0.0).exp();
    if rng.random::<f64>() < accept_prob {
        let sigma2 = params.nodes[node].sigma2;
        let (mean, cov) = beta_fcd(&y, &x_prop, &mu_prop, sigma2, delta2)?;
        let beta_full = sample_mvn(&mean, &cov, rng)?;
        structure.parent_sets[node] = proposal.proposed_parents;
        let node_params = &mut params.nodes[node];
        node_params.beta0 = beta_full[0];
        node_params.beta = beta_full.as_slice()[1..].to_vec();
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Full conditional of the missing cell `(sample, var, time)` given the
/// completed tensor and the current structure/parameters.
///
/// The precision combines the node's own conditional likelihood (absent
/// at `t = 0`) with one term per child at `t + 1` (absent at `t = T`).
/// A `t = 0` cell of a childless node falls back to the variable's
/// empirical marginal.
pub fn missing_fcd(
    cell: (usize, usize, usize),
    data: &TimeSeriesDataset,
    structure: &DbnStructure,
    params: &RegressionParams,
) -> Result<GaussianFcd> {
    let (sample, var, time) = cell;
    let t_max = data.horizon();
    let mut precision = 0.0;
    let mut weighted = 0.0;

    if time >= 1 {
        let node = &params.nodes[var];
        let mu_own = node.conditional_mean(&structure.parent_sets[var], |p| {
            data.value(sample, p, time - 1)
        });
        precision += 1.0 / node.sigma2;
        weighted += mu_own / node.sigma2;
    } else if let Some((m, v)) = data.observed_moments(var) {
        // At t = 0 there is no own conditional likelihood; anchor the FCD
        // with the variable's empirical marginal instead. Without it the
        // children-only product degenerates (variance sigma2/beta^2) when
        // a sampled child coefficient is near zero, and single huge draws
        // dominate the posterior-mean imputation. The childless fallback
        // below is the zero-coefficient limit of this term.
        let v = if v > 0.0 { v } else { 1.0 };
        precision += 1.0 / v;
        weighted += m / v;
    }

    if time < t_max {
        for child in structure.children_of(var) {
            let child_params = &params.nodes[child];
            let parents = &structure.parent_sets[child];
            let pos = parents.iter().position(|&p| p == var).expect("child lists var");
            let beta_i = child_params.beta[pos];
            // Child mean excluding the x_var^t term, intercept included.
            let mut mu_minus = child_params.beta0;
            for (b, &p) in child_params.beta.iter().zip(parents.iter()) {
                if p != var {
                    mu_minus += b * data.value(sample, p, time);
                }
            }
            let x_child = data.value(sample, child, time + 1);
            precision += beta_i * beta_i / child_params.sigma2;
            weighted += beta_i * (x_child - mu_minus) / child_params.sigma2;
        }
    }

    if precision > 0.0 {
        let variance = 1.0 / precision;
        let mean = variance * weighted;
        if !mean.is_finite() || !variance.is_finite() {
            return Err(Error::Numerical("non-finite missing-value FCD".into()));
        }
        return Ok(GaussianFcd { mean, variance });
    }

    // t = 0 cell of a childless node: the uniform prior alone is improper,
    // fall back to the variable's empirical marginal.
    match data.observed_moments(var) {
        Some((mean, var_obs)) if var_obs > 0.0 => Ok(GaussianFcd {
            mean,
            variance: var_obs,
        }),
        Some((mean, _)) => Ok(GaussianFcd { mean, variance: 1.0 }),
        None => Ok(GaussianFcd {
            mean: 0.0,
            variance: 1.0,
        }),
    }
}

/// One systematic-scan Gibbs sweep over the missing cells. Within each
/// sample the order is time ascending, then variable ascending; each
/// sample uses its own rng stream derived from `sweep_seed`, so samples
/// are mutually independent given the sweep seed.
pub fn gibbs_impute_sweep(
    data: &mut TimeSeriesDataset,
    structure: &DbnStructure,
    params: &RegressionParams,
    sweep_seed: u64,
) -> Result<()> {
    for sample in 0..data.n_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(sweep_seed, &[sample as u64]));
        for time in 0..data.n_times() {
            for var in 0..data.n_vars() {
                if data.is_observed(sample, var, time) {
                    continue;
                }
                let fcd = missing_fcd((sample, var, time), data, structure, params)?;
                data.set_value(sample, var, time, fcd.sample(&mut rng));
            }
        }
    }
    Ok(())
}

fn initial_imputation(data: &mut TimeSeriesDataset) {
    let cells = data.missing_cells();
    for (sample, var, time) in cells {
        let v = data
            .observed_mean_at(var, time)
            .or_else(|| data.observed_moments(var).map(|(m, _)| m))
            .unwrap_or(0.0);
        data.set_value(sample, var, time, v);
    }
}

fn random_initial_structure(k: usize, fan_in_max: usize, rng: &mut impl Rng) -> DbnStructure {
    let mut structure = DbnStructure::empty(k);
    for node in 0..k {
        let max_size = fan_in_max.min(k);
        let size = rng.random_range(0..=max_size);
        if size > 0 {
            let picks = index_sample(rng, k, size);
            structure.parent_sets[node] = picks.into_iter().collect();
        }
    }
    structure
}

/// Runs one LUME-DBN chain. `impute` disables the missing-data move for
/// complete-data learning; everything else is identical.
pub fn run_chain(
    dataset: &TimeSeriesDataset,
    priors: &Priors,
    config: &McmcConfig,
    chain_seed: u64,
    impute: bool,
) -> Result<PosteriorTrace> {
    config.validate()?;
    priors.validate(dataset.n_vars())?;
    dataset.validate()?;

    let k = dataset.n_vars();
    let mut data = dataset.clone();
    initial_imputation(&mut data);
    let missing_cells = data.missing_cells();

    let mut rng = ChaCha12Rng::seed_from_u64(chain_seed);
    let mut structure = random_initial_structure(k, priors.fan_in_max, &mut rng);
    let mut params = RegressionParams::initial(k, &structure);
    let mut lagged = lag_dataset(&data)?;

    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let abort = |e: Error| Error::ChainAborted {
            epoch,
            source: Box::new(e),
        };
        for node in 0..k {
            parameter_move(node, &lagged, &structure, &mut params, priors, &mut rng)
                .map_err(abort)?;
            mh_structure_update(node, &lagged, &mut structure, &mut params, priors, &mut rng)
                .map_err(abort)?;
        }
        if impute && !missing_cells.is_empty() && epoch % config.missing_update_interval == 0 {
            let sweep_seed = rng.random::<u64>();
            gibbs_impute_sweep(&mut data, &structure, &params, sweep_seed).map_err(abort)?;
            lagged = lag_dataset(&data)?;
        }
        let imputations = if config.record_missing_trace {
            missing_cells
                .iter()
                .map(|&(n, i, t)| data.value(n, i, t))
                .collect()
        } else {
            Vec::new()
        };
        records.push(TraceRecord {
            epoch_index: epoch,
            structure: structure.clone(),
            params: params.clone(),
            imputations,
        });
    }

    Ok(PosteriorTrace {
        missing_cells,
        records,
    })
}

/// Runs `config.chains` independent chains with rng streams derived from
/// `(seed, chain index)`.
pub fn run_lume_dbn(
    dataset: &TimeSeriesDataset,
    priors: &Priors,
    config: &McmcConfig,
) -> Result<Vec<PosteriorTrace>> {
    run_chains(dataset, priors, config, true)
}

pub(crate) fn run_chains(
    dataset: &TimeSeriesDataset,
    priors: &Priors,
    config: &McmcConfig,
    impute: bool,
) -> Result<Vec<PosteriorTrace>> {
    (0..config.chains)
        .into_par_iter()
        .map(|chain| {
            let chain_seed = derive_seed(config.seed, &[chain as u64]);
            run_chain(dataset, priors, config, chain_seed, impute)
        })
        .collect()
}
