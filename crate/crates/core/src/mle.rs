//! Maximum-likelihood fitting by cyclic block-wise Fisher scoring.
//!
//! Each block takes a step `beta + F^{-1} g`, which is the IWLS update with the
//! working weights built from `h'` of the block's response function. A step
//! that lowers the objective is halved until it does not.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{repair_cholesky, score_and_info, Family, InfoKind, MAX_RIDGE_DOUBLINGS};
use crate::model::{CoefficientBlock, DataBlock, ModelSpec, PreparedModel};
use crate::response::{ResponseFunction, Support};

/// Fallback parameter value when a moment estimate is unusable.
pub const FALLBACK_MOMENT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleSettings {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub max_halvings: usize,
}

impl Default for MleSettings {
    fn default() -> Self {
        Self { max_iterations: 200, gradient_tol: 1e-6, max_halvings: 30 }
    }
}

/// Outcome of [`fit_mle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub blocks: Vec<CoefficientBlock>,
    /// Observed information per block at the optimum, row-major.
    pub information: Vec<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest block gradient infinity-norm at the reported optimum.
    pub gradient_norm: f64,
    /// Objective after each outer iteration, starting with the initial value.
    pub trace: Vec<f64>,
}

impl MleResult {
    /// Wraps given coefficients without fitting (for prediction from stored estimates).
    pub fn from_point(blocks: Vec<CoefficientBlock>) -> Self {
        Self {
            blocks,
            information: Vec::new(),
            loglik: f64::NAN,
            converged: true,
            iterations: 0,
            gradient_norm: f64::NAN,
            trace: Vec::new(),
        }
    }

    /// Wald standard errors from the per-block observed information.
    pub fn standard_errors(&self) -> Result<Vec<Vec<f64>>> {
        self.information
            .iter()
            .map(|rows| {
                let p = rows.len();
                let m = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
                let chol = repair_cholesky(&m, MAX_RIDGE_DOUBLINGS)
                    .ok_or_else(|| Error::numerical("information matrix is not invertible", None))?;
                let inv = chol.inverse();
                Ok((0..p).map(|i| inv[(i, i)].sqrt()).collect())
            })
            .collect()
    }
}

fn sample_mean_var(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    if y.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = y.iter().sum::<f64>() / n;
    let v = if y.len() > 1 { y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0) } else { f64::NAN };
    (m, v)
}

/// Moment estimates of every distribution parameter, ignoring covariates.
fn moment_estimates(family: Family, y: &[f64]) -> Vec<f64> {
    let (m, v) = sample_mean_var(y);
    let nb_size = |m: f64, v: f64| if v > m { m * m / (v - m) } else { 100.0 };
    match family {
        Family::Poisson => vec![m],
        Family::Negbin => vec![m, nb_size(m, v)],
        Family::ZaNegbin => {
            let pos: Vec<f64> = y.iter().copied().filter(|&v| v > 0.0).collect();
            let (mp, vp) = sample_mean_var(&pos);
            let zeros = (y.len() - pos.len()) as f64 / y.len() as f64;
            vec![mp, nb_size(mp, vp), zeros]
        }
        Family::NormalLs => vec![m, v.sqrt()],
        Family::Gpd => {
            let ratio = m * m / v;
            let mut gamma = 0.5 * (1.0 - ratio);
            let mut sigma = 0.5 * m * (ratio + 1.0);
            if !(gamma.is_finite() && gamma > 0.05) {
                gamma = 0.1;
                sigma = m * (1.0 - gamma);
            }
            vec![sigma, gamma]
        }
    }
}

fn in_range(h: &ResponseFunction, v: f64) -> bool {
    match h.support() {
        Support::Real => v.is_finite(),
        Support::Positive => v.is_finite() && v > 0.0,
        Support::UnitInterval => v > 0.0 && v < 1.0,
    }
}

/// Starting values: intercepts at `h^{-1}` of a moment estimate, slopes zero.
pub fn init_coefficients(model: &ModelSpec, data: &DataBlock) -> Result<Vec<CoefficientBlock>> {
    model.validate()?;
    let y = data.response();
    let moments = moment_estimates(model.family, &y);
    let vectors = model
        .parameters
        .iter()
        .zip(moments)
        .map(|(p, est)| {
            let mut beta = DVector::zeros(p.predictor.n_coefficients());
            if p.predictor.intercept {
                let target = if in_range(&p.response, est) && est > 0.0 { est } else { FALLBACK_MOMENT };
                let target = if p.response.support() == Support::Real && est.is_finite() { est } else { target };
                beta[0] = p.response.inverse(target)?;
            }
            Ok(beta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(model.blocks_from_vectors(&vectors))
}

fn objective(prep: &PreparedModel, blocks: &[DVector<f64>]) -> f64 {
    let v = prep.log_posterior(blocks);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Fits the model by block-wise Fisher scoring with step-halving.
pub fn fit_mle(model: &ModelSpec, data: &DataBlock, init: Option<Vec<CoefficientBlock>>) -> Result<MleResult> {
    fit_mle_with(model, data, init, &MleSettings::default())
}

pub fn fit_mle_with(
    model: &ModelSpec,
    data: &DataBlock,
    init: Option<Vec<CoefficientBlock>>,
    settings: &MleSettings,
) -> Result<MleResult> {
    let prep = PreparedModel::new(model, data)?;
    let init = match init {
        Some(b) => b,
        None => init_coefficients(model, data)?,
    };
    if init.len() != model.n_blocks() {
        return Err(Error::config("initial values do not match the model's blocks"));
    }
    let mut blocks: Vec<DVector<f64>> = init.iter().map(CoefficientBlock::as_vector).collect();
    for (b, d) in blocks.iter().zip(&prep.designs) {
        if b.len() != d.ncols() {
            return Err(Error::config("initial block length does not match its design"));
        }
    }
    let priors = model.priors();
    let kind = model.family.default_info_kind();

    let mut obj = objective(&prep, &blocks);
    if !obj.is_finite() {
        return Err(Error::numerical("log-likelihood is not finite at the starting values", None));
    }
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=settings.max_iterations {
        iterations = it;
        let mut max_grad: f64 = 0.0;
        let mut moved = false;
        for k in 0..blocks.len() {
            let si = score_and_info(&prep.family, &prep.y, &prep.designs, &blocks, k, &priors[k], kind)?;
            let gnorm = si.gradient.amax();
            max_grad = max_grad.max(gnorm);
            if gnorm < settings.gradient_tol {
                continue;
            }
            let chol = repair_cholesky(&si.info, MAX_RIDGE_DOUBLINGS)
                .ok_or_else(|| Error::numerical(format!("information of block {k} is singular"), None))?;
            let step = chol.solve(&si.gradient);
            let base = blocks[k].clone();
            let mut scale = 1.0;
            for _ in 0..=settings.max_halvings {
                blocks[k] = &base + &step * scale;
                let cand = objective(&prep, &blocks);
                if cand >= obj {
                    moved |= cand > obj || scale == 1.0;
                    obj = cand;
                    break;
                }
                scale *= 0.5;
                blocks[k] = base.clone();
            }
        }
        trace.push(obj);
        if max_grad < settings.gradient_tol {
            converged = true;
            break;
        }
        if !moved {
            break;
        }
    }

    // final gradient and observed information
    let mut information = Vec::with_capacity(blocks.len());
    let mut gradient_norm: f64 = 0.0;
    for (k, prior) in priors.iter().enumerate() {
        let si = score_and_info(&prep.family, &prep.y, &prep.designs, &blocks, k, prior, InfoKind::Observed)?;
        gradient_norm = gradient_norm.max(si.gradient.amax());
        let p = si.info.nrows();
        information.push((0..p).map(|i| (0..p).map(|j| si.info[(i, j)]).collect()).collect());
    }
    if !converged && gradient_norm < settings.gradient_tol {
        converged = true;
    }

    Ok(MleResult {
        blocks: model.blocks_from_vectors(&blocks),
        information,
        loglik: prep.loglik(&blocks),
        converged,
        iterations,
        gradient_norm,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::Family;
    use crate::model::{ParameterSpec, PredictorSpec, PriorSpec};
    use crate::softplus::SoftplusParams;

    fn counts() -> DataBlock {
        DataBlock::new(vec![3.0, 0.0, 5.0, 2.0, 9.0, 4.0, 1.0, 7.0], vec![]).unwrap()
    }

    fn poisson(h: ResponseFunction) -> ModelSpec {
        ModelSpec::single(Family::Poisson, PredictorSpec::intercept_only("lambda"), h).unwrap()
    }

    #[test]
    fn intercept_only_identity_is_sample_mean() {
        let fit = fit_mle(&poisson(ResponseFunction::Identity), &counts(), None).unwrap();
        assert!(fit.converged);
        assert!((fit.blocks[0].values[0] - 31.0 / 8.0).abs() < 1e-8);
    }

    #[test]
    fn intercept_only_softplus_is_inverse_of_mean() {
        for a in [0.5, 1.0, 5.0, 10.0] {
            let fit = fit_mle(&poisson(ResponseFunction::softplus(a).unwrap()), &counts(), None).unwrap();
            let expected = SoftplusParams::new(a).unwrap().inverse(31.0 / 8.0);
            assert!(fit.converged);
            assert!((fit.blocks[0].values[0] - expected).abs() < 1e-7, "a={a}");
        }
    }

    #[test]
    fn reparameterization_invariance() {
        let d = counts();
        let e = fit_mle(&poisson(ResponseFunction::Exponential), &d, None).unwrap();
        let s = fit_mle(&poisson(ResponseFunction::softplus(2.0).unwrap()), &d, None).unwrap();
        let le = e.blocks[0].values[0].exp();
        let ls = SoftplusParams::new(2.0).unwrap().value(s.blocks[0].values[0]);
        assert!((le - ls).abs() < 1e-4);
        assert!((e.loglik - s.loglik).abs() < 1e-8);
    }

    #[test]
    fn init_examples() {
        let d = DataBlock::new(vec![9.0; 10], vec![]).unwrap();
        let m = poisson(ResponseFunction::softplus(10.0).unwrap());
        let b = init_coefficients(&m, &d).unwrap();
        assert!((b[0].values[0] - 9.0).abs() < 1e-12);

        let zeros = DataBlock::new(vec![0.0; 6], vec![]).unwrap();
        let b = init_coefficients(&poisson(ResponseFunction::softplus(1.0).unwrap()), &zeros).unwrap();
        let expect = SoftplusParams::new(1.0).unwrap().inverse(FALLBACK_MOMENT);
        assert_eq!(b[0].values[0], expect);

        let nd = DataBlock::new(vec![1.0, 2.5, -0.5, 4.0], vec![("x".into(), vec![0.0, 1.0, 2.0, 3.0])]).unwrap();
        let spec = ModelSpec::new(
            Family::NormalLs,
            vec![
                ParameterSpec {
                    predictor: PredictorSpec::new("mu", true, &["x"]),
                    response: ResponseFunction::Identity,
                    prior: PriorSpec::Flat,
                },
                ParameterSpec {
                    predictor: PredictorSpec::intercept_only("sigma"),
                    response: ResponseFunction::Exponential,
                    prior: PriorSpec::Flat,
                },
            ],
        )
        .unwrap();
        let b = init_coefficients(&spec, &nd).unwrap();
        assert_eq!(b[0].values, vec![1.75, 0.0]);
        let sd = (((1.0f64 - 1.75).powi(2) + 0.75f64.powi(2) + 2.25f64.powi(2) + 2.25f64.powi(2)) / 3.0).sqrt();
        assert!((b[1].values[0] - sd.ln()).abs() < 1e-12);
    }

    #[test]
    fn trace_is_nondecreasing_and_gradient_small() {
        let y = vec![0.0, 1.0, 1.0, 3.0, 2.0, 6.0, 4.0, 9.0, 7.0, 12.0];
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let d = DataBlock::new(y, vec![("x".into(), x)]).unwrap();
        let m = ModelSpec::single(
            Family::Poisson,
            PredictorSpec::new("lambda", true, &["x"]),
            ResponseFunction::softplus(5.0).unwrap(),
        )
        .unwrap();
        let fit = fit_mle(&m, &d, None).unwrap();
        assert!(fit.converged);
        assert!(fit.gradient_norm < 1e-6);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let se = fit.standard_errors().unwrap();
        assert!(se[0].iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn bad_start_is_a_numerical_error() {
        let m = poisson(ResponseFunction::Identity);
        let init = m.blocks_from_vectors(&[DVector::from_element(1, -1.0)]);
        let err = fit_mle(&m, &counts(), Some(init)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
