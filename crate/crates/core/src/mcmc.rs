//! Metropolis-Hastings with IWLS proposals, posterior summaries and DIC.
//!
//! Each block is proposed from `Normal(beta + F^{-1} g, F^{-1})`, one Fisher
//! scoring step away from the current state. Because the proposal depends on
//! the current point, the acceptance ratio carries both proposal densities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{linear_predictors, repair_cholesky, score_and_info_from_eta, ScoreInfo};
use crate::mle::{fit_mle, init_coefficients};
use crate::model::{CoefficientBlock, DataBlock, ModelSpec, PreparedModel, PriorSpec};
use crate::special::quantile_sorted;

/// Ridge doublings tried before a block falls back to a random-walk proposal.
pub const SAMPLER_RIDGE_ATTEMPTS: usize = 3;
/// Standard deviation of the random-walk fallback proposal.
pub const RANDOM_WALK_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { iterations: 12_000, burn_in: 2_000, thin: 1, seed: 1 }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::config(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thinning must be at least 1"));
        }
        Ok(())
    }

    pub fn n_stored(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Gaussian proposal built at one point of a block.
#[derive(Debug, Clone)]
pub struct ProposalState {
    pub beta: DVector<f64>,
    pub gradient: DVector<f64>,
    pub info: DMatrix<f64>,
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ProposalState {
    /// `None` when the information cannot be made positive definite.
    pub fn new(beta: DVector<f64>, gradient: DVector<f64>, info: DMatrix<f64>) -> Option<Self> {
        let chol = repair_cholesky(&info, SAMPLER_RIDGE_ATTEMPTS)?;
        let mean = &beta + chol.solve(&gradient);
        if mean.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self { beta, gradient, info, mean, chol })
    }

    /// Proposal covariance `F^{-1}`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.beta.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // F = L L^T, so L^{-T} z has covariance F^{-1}
        let step = self.chol.l().transpose().solve_upper_triangular(&z).expect("triangular factor is invertible");
        &self.mean + step
    }

    /// Log proposal density of `x`, up to the shared `-p/2 log(2 pi)`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let l = self.chol.l();
        let d = x - &self.mean;
        let q = l.transpose() * d;
        l.diagonal().iter().map(|v| v.ln()).sum::<f64>() - 0.5 * q.norm_squared()
    }
}

/// Stored draws of every coefficient block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub parameters: Vec<String>,
    pub names: Vec<Vec<String>>,
    /// `samples[block][draw][coefficient]`.
    pub samples: Vec<Vec<Vec<f64>>>,
    /// Log-likelihood at each stored draw.
    pub loglik: Vec<f64>,
    pub settings: SamplerSettings,
    pub accepted: Vec<usize>,
    /// Updates per block that used the random-walk fallback.
    pub fallbacks: Vec<usize>,
}

impl Chain {
    pub fn n_stored(&self) -> usize {
        self.loglik.len()
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accepted.iter().map(|&a| a as f64 / self.settings.iterations as f64).collect()
    }

    pub fn draw(&self, index: usize) -> Vec<DVector<f64>> {
        self.samples.iter().map(|b| DVector::from_column_slice(&b[index])).collect()
    }

    pub fn posterior_mean(&self) -> Vec<DVector<f64>> {
        let n = self.n_stored().max(1) as f64;
        self.samples
            .iter()
            .zip(&self.names)
            .map(|(draws, names)| {
                let mut m = DVector::zeros(names.len());
                for d in draws {
                    for (mi, v) in m.iter_mut().zip(d) {
                        *mi += v;
                    }
                }
                m / n
            })
            .collect()
    }

    /// Every stored value of one coefficient.
    pub fn trace(&self, block: usize, coefficient: usize) -> Vec<f64> {
        self.samples[block].iter().map(|d| d[coefficient]).collect()
    }
}

/// Sampler position: coefficients plus the cached linear predictors.
struct State {
    blocks: Vec<DVector<f64>>,
    etas: Vec<DVector<f64>>,
    loglik: f64,
}

fn block_score(
    prep: &PreparedModel,
    etas: &[DVector<f64>],
    beta: &DVector<f64>,
    k: usize,
    prior: &PriorSpec,
) -> Option<ScoreInfo> {
    let kind = prep.spec.family.default_info_kind();
    score_and_info_from_eta(&prep.family, &prep.y, &prep.designs, etas, beta, k, prior, kind).ok()
}

fn log_target(prep: &PreparedModel, etas: &[DVector<f64>], blocks: &[DVector<f64>]) -> f64 {
    let ll = crate::families::loglik_from_eta(&prep.family, &prep.y, etas);
    let lp: f64 = prep.spec.parameters.iter().zip(blocks).map(|(p, b)| p.prior.log_density(b)).sum();
    if (ll + lp).is_nan() {
        f64::NEG_INFINITY
    } else {
        ll + lp
    }
}

/// Outcome of one block update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub fallback: bool,
}

/// One Metropolis-Hastings update of block `k`.
fn mh_iwls_update<R: Rng + ?Sized>(prep: &PreparedModel, state: &mut State, k: usize, rng: &mut R) -> StepOutcome {
    let prior = &prep.spec.parameters[k].prior;
    let current = block_score(prep, &state.etas, &state.blocks[k], k, prior)
        .and_then(|s| ProposalState::new(state.blocks[k].clone(), s.gradient, s.info));

    let lp_cur = state.loglik + prior.log_density(&state.blocks[k]);
    let fallback = current.is_none();
    let proposal = match &current {
        Some(ps) => ps.draw(rng),
        None => {
            let p = state.blocks[k].len();
            &state.blocks[k] + DVector::from_fn(p, |_, _| RANDOM_WALK_SD * rng.sample::<f64, _>(StandardNormal))
        }
    };

    let mut etas = state.etas.clone();
    etas[k] = &prep.designs[k] * &proposal;
    // a failed evaluation at the proposal (non-finite likelihood) rejects it
    let Some(at_proposal) = block_score(prep, &etas, &proposal, k, prior) else {
        return StepOutcome { accepted: false, fallback };
    };
    let ll_new = at_proposal.loglik;
    let lp_new = ll_new + at_proposal.log_prior;

    let log_q_ratio = match &current {
        Some(fwd) => match ProposalState::new(proposal.clone(), at_proposal.gradient, at_proposal.info) {
            Some(rev) => rev.log_density(&state.blocks[k]) - fwd.log_density(&proposal),
            None => f64::NEG_INFINITY,
        },
        None => 0.0,
    };

    let log_alpha = lp_new - lp_cur + log_q_ratio;
    let accept = log_alpha.is_finite() && lp_new.is_finite() && {
        let u: f64 = rng.random();
        log_alpha >= 0.0 || u.ln() < log_alpha
    };
    if accept {
        state.blocks[k] = proposal;
        state.etas = etas;
        state.loglik = ll_new;
    }
    StepOutcome { accepted: accept, fallback }
}

/// One Metropolis-Hastings update of block `k` with an IWLS proposal.
///
/// Returns the (possibly unchanged) coefficient blocks and whether the
/// proposal was accepted.
pub fn mh_iwls_step<R: Rng + ?Sized>(
    prep: &PreparedModel,
    blocks: &[DVector<f64>],
    k: usize,
    rng: &mut R,
) -> Result<(Vec<DVector<f64>>, StepOutcome)> {
    let etas = linear_predictors(&prep.designs, blocks);
    let loglik = crate::families::loglik_from_eta(&prep.family, &prep.y, &etas);
    if !loglik.is_finite() {
        return Err(Error::numerical("log-likelihood is not finite at the current state", None));
    }
    let mut state = State { blocks: blocks.to_vec(), etas, loglik };
    let out = mh_iwls_update(prep, &mut state, k, rng);
    Ok((state.blocks, out))
}

/// Starting point: the MLE when it exists, the moment-based start otherwise.
pub fn default_start(model: &ModelSpec, data: &DataBlock) -> Result<Vec<CoefficientBlock>> {
    match fit_mle(model, data, None) {
        Ok(fit) if fit.loglik.is_finite() => Ok(fit.blocks),
        _ => init_coefficients(model, data),
    }
}

/// Runs one chain with cyclic block updates. Reproducible for a given seed.
pub fn run_chain(
    model: &ModelSpec,
    data: &DataBlock,
    settings: &SamplerSettings,
    init: Option<Vec<CoefficientBlock>>,
) -> Result<Chain> {
    settings.validate()?;
    let prep = PreparedModel::new(model, data)?;
    let init = match init {
        Some(b) => b,
        None => default_start(model, data)?,
    };
    let blocks: Vec<DVector<f64>> = init.iter().map(CoefficientBlock::as_vector).collect();
    if blocks.len() != model.n_blocks() || blocks.iter().zip(&prep.designs).any(|(b, d)| b.len() != d.ncols()) {
        return Err(Error::config("initial values do not match the model's blocks"));
    }
    let etas = linear_predictors(&prep.designs, &blocks);
    let loglik = crate::families::loglik_from_eta(&prep.family, &prep.y, &etas);
    if !loglik.is_finite() || !log_target(&prep, &etas, &blocks).is_finite() {
        return Err(Error::numerical("log posterior is not finite at the starting values", None));
    }
    let mut state = State { blocks, etas, loglik };

    let nb = model.n_blocks();
    let n_keep = settings.n_stored();
    let mut samples: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n_keep); nb];
    let mut lls = Vec::with_capacity(n_keep);
    let mut accepted = vec![0; nb];
    let mut fallbacks = vec![0; nb];
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    for it in 0..settings.iterations {
        for k in 0..nb {
            let out = mh_iwls_update(&prep, &mut state, k, &mut rng);
            accepted[k] += usize::from(out.accepted);
            fallbacks[k] += usize::from(out.fallback);
        }
        if it >= settings.burn_in && (it - settings.burn_in + 1).is_multiple_of(settings.thin) {
            for (s, b) in samples.iter_mut().zip(&state.blocks) {
                s.push(b.iter().copied().collect());
            }
            lls.push(state.loglik);
        }
    }

    Ok(Chain {
        parameters: model.parameters.iter().map(|p| p.predictor.parameter.clone()).collect(),
        names: model.parameters.iter().map(|p| p.predictor.coefficient_names()).collect(),
        samples,
        loglik: lls,
        settings: *settings,
        accepted,
        fallbacks,
    })
}

/// Posterior summary of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub parameter: String,
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    /// Posterior mean of `exp(beta)`.
    pub exp_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub level: f64,
    pub coefficients: Vec<CoefficientSummary>,
}

/// Incremental mean; exact for a constant sequence.
fn running_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (i, x) in xs.enumerate() {
        m += (x - m) / (i + 1) as f64;
    }
    m
}

/// Sample mean, sd and equal-tailed interval (type-7 quantiles) of every coefficient.
pub fn summarize(chain: &Chain, level: f64) -> Result<PosteriorSummary> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("credible level must lie in (0, 1), got {level}")));
    }
    if chain.n_stored() == 0 {
        return Err(Error::State("chain has no stored samples".into()));
    }
    let n = chain.n_stored() as f64;
    let mut coefficients = Vec::new();
    for (b, (param, names)) in chain.parameters.iter().zip(&chain.names).enumerate() {
        for (j, name) in names.iter().enumerate() {
            let mut xs = chain.trace(b, j);
            let mean = running_mean(xs.iter().copied());
            let sd = if xs.len() > 1 {
                (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let exp_mean = running_mean(xs.iter().map(|v| v.exp()));
            xs.sort_by(f64::total_cmp);
            coefficients.push(CoefficientSummary {
                parameter: param.clone(),
                name: name.clone(),
                mean,
                sd,
                lower: quantile_sorted(&xs, (1.0 - level) / 2.0),
                upper: quantile_sorted(&xs, (1.0 + level) / 2.0),
                exp_mean,
            });
        }
    }
    Ok(PosteriorSummary { level, coefficients })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

/// Deviance information criterion with the deviance evaluated at the
/// per-coefficient posterior mean.
pub fn dic(chain: &Chain, model: &ModelSpec, data: &DataBlock) -> Result<DicResult> {
    if chain.n_stored() == 0 {
        return Err(Error::State("chain has no stored samples".into()));
    }
    let prep = PreparedModel::new(model, data)?;
    let mean_deviance = -2.0 * chain.loglik.iter().sum::<f64>() / chain.n_stored() as f64;
    let deviance_at_mean = -2.0 * prep.loglik(&chain.posterior_mean());
    let p_d = mean_deviance - deviance_at_mean;
    Ok(DicResult { mean_deviance, deviance_at_mean, p_d, dic: 2.0 * mean_deviance - deviance_at_mean })
}
