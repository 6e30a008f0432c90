//! Response distributions and their derivatives with respect to each
//! distribution parameter, plus the block score / information assembly used
//! by both the Fisher-scoring fitter and the MCMC sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::model::PriorSpec;
use crate::response::{ResponseFunction, Support};
use crate::special::{digamma_shift, ln_gamma, norm_quantile, trigamma_shift};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Supported response distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Poisson with rate `lambda`.
    Poisson,
    /// NB2 negative binomial with mean `mu` and size `theta`, `Var = mu + mu^2/theta`.
    #[serde(alias = "negative_binomial")]
    Negbin,
    /// Hurdle negative binomial: `P(0) = pi`, positives from the zero-truncated NB2.
    #[serde(alias = "za_negative_binomial", alias = "hurdle_negbin")]
    ZaNegbin,
    /// Gaussian with mean `mu` and standard deviation `sigma`.
    #[serde(alias = "normal")]
    NormalLs,
    /// Generalized Pareto for threshold exceedances, scale `sigma`, shape `gamma > 0`.
    Gpd,
}

/// Which curvature to use in the block information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoKind {
    /// Expected Fisher information where the family has it in closed form,
    /// observed information for the remaining parameters.
    Expected,
    Observed,
}

/// Per-observation derivatives of the log-density with respect to one
/// natural parameter.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamDerivs {
    pub d1: f64,
    pub d2: f64,
    pub expected: Option<f64>,
}

impl Family {
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            Family::Poisson => &["lambda"],
            Family::Negbin => &["mu", "theta"],
            Family::ZaNegbin => &["mu", "theta", "pi"],
            Family::NormalLs => &["mu", "sigma"],
            Family::Gpd => &["sigma", "gamma"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.parameter_names().len()
    }

    pub fn supports(&self) -> &'static [Support] {
        use Support::*;
        match self {
            Family::Poisson => &[Positive],
            Family::Negbin => &[Positive, Positive],
            Family::ZaNegbin => &[Positive, Positive, UnitInterval],
            Family::NormalLs => &[Real, Positive],
            Family::Gpd => &[Positive, Positive],
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Family::Poisson | Family::Negbin | Family::ZaNegbin)
    }

    /// Curvature used by default: expected information for Poisson and
    /// Gaussian, observed for the rest.
    pub fn default_info_kind(&self) -> InfoKind {
        match self {
            Family::Poisson | Family::NormalLs => InfoKind::Expected,
            _ => InfoKind::Observed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Negbin => "negbin",
            Family::ZaNegbin => "za_negbin",
            Family::NormalLs => "normal_ls",
            Family::Gpd => "gpd",
        }
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::domain(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.n_params(),
                params.len()
            )));
        }
        for ((&v, s), name) in params.iter().zip(self.supports()).zip(self.parameter_names()) {
            let ok = match s {
                Support::Real => v.is_finite(),
                Support::Positive => v.is_finite() && v > 0.0,
                Support::UnitInterval => v > 0.0 && v < 1.0,
            };
            if !ok {
                return Err(Error::domain(format!("{} parameter {name} = {v} is outside its support", self.name())));
            }
        }
        Ok(())
    }

    pub fn check_observation(&self, y: f64) -> Result<()> {
        let ok = match self {
            Family::Poisson | Family::Negbin | Family::ZaNegbin => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
            Family::NormalLs => y.is_finite(),
            Family::Gpd => y.is_finite() && y > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("observation {y} is outside the sample space of {}", self.name())))
        }
    }

    /// Log-density (log-pmf for count families).
    pub fn log_density(&self, y: f64, params: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        self.check_observation(y)?;
        Ok(self.log_density_unchecked(y, params))
    }

    #[inline]
    pub(crate) fn log_density_unchecked(&self, y: f64, p: &[f64]) -> f64 {
        match self {
            Family::Poisson => {
                let lambda = p[0];
                if lambda.is_nan() || lambda <= 0.0 {
                    return if lambda == 0.0 && y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
                }
                if y == 0.0 {
                    -lambda
                } else {
                    y * lambda.ln() - lambda - ln_gamma(y + 1.0)
                }
            }
            Family::Negbin => nb_log_pmf(y, p[0], p[1]),
            Family::ZaNegbin => {
                let (mu, theta, pi) = (p[0], p[1], p[2]);
                if y == 0.0 {
                    pi.ln()
                } else {
                    (-pi).ln_1p() + nb_log_pmf(y, mu, theta) - log1m_exp(nb_log_p0(mu, theta))
                }
            }
            Family::NormalLs => {
                let (mu, sigma) = (p[0], p[1]);
                let z = (y - mu) / sigma;
                -sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
            }
            Family::Gpd => {
                let (sigma, gamma) = (p[0], p[1]);
                -sigma.ln() - (1.0 / gamma + 1.0) * (gamma * y / sigma).ln_1p()
            }
        }
    }

    pub fn cdf(&self, y: f64, params: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        if y.is_nan() {
            return Err(Error::domain("cdf at NaN"));
        }
        Ok(self.cdf_unchecked(y, params))
    }

    pub(crate) fn cdf_unchecked(&self, y: f64, p: &[f64]) -> f64 {
        match self {
            Family::Poisson => {
                if y < 0.0 {
                    0.0
                } else if y.is_infinite() {
                    1.0
                } else {
                    gamma_ur(y.floor() + 1.0, p[0])
                }
            }
            Family::Negbin => nb_cdf(y, p[0], p[1]),
            Family::ZaNegbin => {
                let (mu, theta, pi) = (p[0], p[1], p[2]);
                if y < 0.0 {
                    0.0
                } else if y < 1.0 {
                    pi
                } else {
                    let p0 = nb_log_p0(mu, theta).exp();
                    let f = nb_cdf(y, mu, theta);
                    (pi + (1.0 - pi) * (f - p0) / (1.0 - p0)).min(1.0)
                }
            }
            Family::NormalLs => crate::special::norm_cdf((y - p[0]) / p[1]),
            Family::Gpd => {
                if y <= 0.0 {
                    0.0
                } else {
                    let (sigma, gamma) = (p[0], p[1]);
                    -(-(gamma * y / sigma).ln_1p() / gamma).exp_m1()
                }
            }
        }
    }

    /// Quantile function. Count families return the smallest `y` with
    /// `cdf(y) >= p`.
    pub fn quantile(&self, prob: f64, params: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::domain(format!("probability must lie in (0, 1), got {prob}")));
        }
        Ok(self.quantile_unchecked(prob, params))
    }

    pub(crate) fn quantile_unchecked(&self, prob: f64, p: &[f64]) -> f64 {
        match self {
            Family::NormalLs => p[0] + p[1] * norm_quantile(prob),
            Family::Gpd => {
                let (sigma, gamma) = (p[0], p[1]);
                sigma / gamma * ((-gamma * (-prob).ln_1p()).exp_m1())
            }
            _ => self.count_quantile(prob, p),
        }
    }

    fn count_quantile(&self, prob: f64, p: &[f64]) -> f64 {
        if self.cdf_unchecked(0.0, p) >= prob {
            return 0.0;
        }
        // invariant: cdf(lo) < prob <= cdf(hi)
        let mut lo = 0.0_f64;
        let mut hi = self.mean(p).max(1.0).ceil();
        while self.cdf_unchecked(hi, p) < prob {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                return f64::INFINITY;
            }
        }
        while hi - lo > 1.0 {
            let mid = ((lo + hi) / 2.0).floor();
            if self.cdf_unchecked(mid, p) >= prob {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Mean of the response.
    pub fn mean(&self, p: &[f64]) -> f64 {
        match self {
            Family::Poisson => p[0],
            Family::Negbin => p[0],
            Family::ZaNegbin => {
                let p0 = nb_log_p0(p[0], p[1]).exp();
                (1.0 - p[2]) * p[0] / (1.0 - p0)
            }
            Family::NormalLs => p[0],
            Family::Gpd => {
                if p[1] < 1.0 {
                    p[0] / (1.0 - p[1])
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Draws one response given the natural parameters.
    pub fn sample<R: Rng + ?Sized>(&self, p: &[f64], rng: &mut R) -> f64 {
        match self {
            Family::Poisson => sample_poisson(p[0], rng),
            Family::Negbin => sample_negbin(p[0], p[1], rng),
            Family::ZaNegbin => {
                if rng.random::<f64>() < p[2] {
                    0.0
                } else {
                    loop {
                        let y = sample_negbin(p[0], p[1], rng);
                        if y > 0.0 {
                            break y;
                        }
                    }
                }
            }
            Family::NormalLs => {
                let z: f64 = StandardNormal.sample(rng);
                p[0] + p[1] * z
            }
            Family::Gpd => {
                let u: f64 = rng.random();
                self.quantile_unchecked(u.max(f64::MIN_POSITIVE), p)
            }
        }
    }

    /// First and second derivative of the log-density with respect to
    /// parameter `k`, and the expected information when it has a closed form.
    #[inline]
    pub(crate) fn param_derivs(&self, y: f64, p: &[f64], k: usize) -> ParamDerivs {
        match (self, k) {
            (Family::Poisson, _) => {
                let l = p[0];
                ParamDerivs { d1: y / l - 1.0, d2: -y / (l * l), expected: Some(1.0 / l) }
            }
            (Family::Negbin, 0) => {
                let (mu, th) = (p[0], p[1]);
                nb_mu_derivs(y, mu, th)
            }
            (Family::Negbin, _) => {
                let (mu, th) = (p[0], p[1]);
                nb_theta_derivs(y, mu, th)
            }
            (Family::ZaNegbin, 2) => {
                let pi = p[2];
                if y == 0.0 {
                    ParamDerivs { d1: 1.0 / pi, d2: -1.0 / (pi * pi), expected: Some(1.0 / (pi * (1.0 - pi))) }
                } else {
                    let q = 1.0 - pi;
                    ParamDerivs { d1: -1.0 / q, d2: -1.0 / (q * q), expected: Some(1.0 / (pi * (1.0 - pi))) }
                }
            }
            (Family::ZaNegbin, k) => {
                if y == 0.0 {
                    return ParamDerivs { d1: 0.0, d2: 0.0, expected: None };
                }
                let (mu, th) = (p[0], p[1]);
                let base = if k == 0 { nb_mu_derivs(y, mu, th) } else { nb_theta_derivs(y, mu, th) };
                // subtract d/dk log(1 - p0) with l0 = log p0 = -theta * log1p(mu/theta)
                let l0 = nb_log_p0(mu, th);
                let s = mu + th;
                let (l0_1, l0_2) = if k == 0 {
                    (-th / s, th / (s * s))
                } else {
                    (-(mu / th).ln_1p() + mu / s, mu * mu / (th * s * s))
                };
                let q = l0.exp();
                let g1 = -1.0 / (-l0).exp_m1();
                let g2 = -q / ((1.0 - q) * (1.0 - q));
                ParamDerivs { d1: base.d1 - g1 * l0_1, d2: base.d2 - (g2 * l0_1 * l0_1 + g1 * l0_2), expected: None }
            }
            (Family::NormalLs, 0) => {
                let (mu, s) = (p[0], p[1]);
                let s2 = s * s;
                ParamDerivs { d1: (y - mu) / s2, d2: -1.0 / s2, expected: Some(1.0 / s2) }
            }
            (Family::NormalLs, _) => {
                let (mu, s) = (p[0], p[1]);
                let r2 = (y - mu) * (y - mu);
                let s2 = s * s;
                ParamDerivs {
                    d1: -1.0 / s + r2 / (s2 * s),
                    d2: 1.0 / s2 - 3.0 * r2 / (s2 * s2),
                    expected: Some(2.0 / s2),
                }
            }
            (Family::Gpd, 0) => {
                let (s, g) = (p[0], p[1]);
                let u = s + g * y;
                ParamDerivs {
                    d1: -1.0 / s + (1.0 + g) * y / (s * u),
                    d2: 1.0 / (s * s) - (1.0 + g) * y * (2.0 * s + g * y) / (s * s * u * u),
                    expected: Some(1.0 / (s * s * (1.0 + 2.0 * g))),
                }
            }
            (Family::Gpd, _) => {
                let (s, g) = (p[0], p[1]);
                let u = s + g * y;
                let t = (g * y / s).ln_1p();
                let f = (1.0 + g) / (g * u);
                let df = f * (1.0 / (1.0 + g) - 1.0 / g - y / u);
                ParamDerivs {
                    d1: t / (g * g) - y * f,
                    d2: y / (g * g * u) - 2.0 * t / (g * g * g) - y * df,
                    expected: Some(2.0 / ((1.0 + g) * (1.0 + 2.0 * g))),
                }
            }
        }
    }
}

#[inline]
fn nb_log_p0(mu: f64, theta: f64) -> f64 {
    -theta * (mu / theta).ln_1p()
}

/// `log(1 - exp(x))` for `x < 0`.
#[inline]
fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

#[inline]
fn nb_log_pmf(y: f64, mu: f64, theta: f64) -> f64 {
    let s = mu + theta;
    let lg = if y == 0.0 { 0.0 } else { ln_gamma(y + theta) - ln_gamma(theta) - ln_gamma(y + 1.0) };
    let tail = if y == 0.0 { 0.0 } else { y * (mu / s).ln() };
    lg + nb_log_p0(mu, theta) + tail
}

fn nb_cdf(y: f64, mu: f64, theta: f64) -> f64 {
    if y < 0.0 {
        0.0
    } else if y.is_infinite() {
        1.0
    } else {
        beta_reg(theta, y.floor() + 1.0, theta / (theta + mu))
    }
}

#[inline]
fn nb_mu_derivs(y: f64, mu: f64, th: f64) -> ParamDerivs {
    let s = mu + th;
    ParamDerivs { d1: y / mu - (y + th) / s, d2: -y / (mu * mu) + (y + th) / (s * s), expected: Some(th / (mu * s)) }
}

#[inline]
fn nb_theta_derivs(y: f64, mu: f64, th: f64) -> ParamDerivs {
    let s = mu + th;
    ParamDerivs {
        d1: digamma_shift(th, y) - (mu / th).ln_1p() + 1.0 - (th + y) / s,
        d2: trigamma_shift(th, y) + 1.0 / th - 1.0 / s - (mu - y) / (s * s),
        expected: None,
    }
}

fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if lambda.is_nan() || lambda <= 0.0 {
        return 0.0;
    }
    match Poisson::new(lambda) {
        Ok(d) => d.sample(rng),
        Err(_) => 0.0,
    }
}

fn sample_negbin<R: Rng + ?Sized>(mu: f64, theta: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(theta, mu / theta).expect("valid gamma parameters");
    sample_poisson(g.sample(rng), rng)
}

/// A family together with the response function assigned to each parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub responses: Vec<ResponseFunction>,
}

impl FamilySpec {
    pub fn new(family: Family, responses: Vec<ResponseFunction>) -> Result<Self> {
        let spec = FamilySpec { family, responses };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fam = self.family;
        if self.responses.len() != fam.n_params() {
            return Err(Error::config(format!(
                "{} needs {} response functions, got {}",
                fam.name(),
                fam.n_params(),
                self.responses.len()
            )));
        }
        for ((h, s), name) in self.responses.iter().zip(fam.supports()).zip(fam.parameter_names()) {
            // identity on a positive parameter is allowed; the likelihood keeps it in range
            let identity_ok = *h == ResponseFunction::Identity && *s == Support::Positive;
            if h.support() != *s && !identity_ok {
                return Err(Error::config(format!(
                    "response {h} does not map onto the support of {}:{name}",
                    fam.name()
                )));
            }
        }
        Ok(())
    }

    /// Natural parameters for one observation from its linear predictors.
    #[inline]
    pub fn params_from_eta(&self, eta: &[f64], out: &mut [f64]) {
        for ((o, &e), h) in out.iter_mut().zip(eta).zip(&self.responses) {
            *o = h.value(e);
        }
    }
}

/// Gradient and information of the log posterior for one coefficient block.
#[derive(Debug, Clone)]
pub struct ScoreInfo {
    pub loglik: f64,
    pub log_prior: f64,
    pub gradient: DVector<f64>,
    /// Negative Hessian (observed) or its expectation; symmetric.
    pub info: DMatrix<f64>,
}

/// Linear predictors for every block, one column per distribution parameter.
pub(crate) fn linear_predictors(designs: &[DMatrix<f64>], blocks: &[DVector<f64>]) -> Vec<DVector<f64>> {
    designs.iter().zip(blocks).map(|(x, b)| x * b).collect()
}

/// Log-likelihood summed over observations; `-inf`/NaN propagate.
pub(crate) fn loglik_from_eta(spec: &FamilySpec, y: &[f64], etas: &[DVector<f64>]) -> f64 {
    let k = etas.len();
    let mut eta = [0.0; 4];
    let mut par = [0.0; 4];
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        for j in 0..k {
            eta[j] = etas[j][i];
        }
        spec.params_from_eta(&eta[..k], &mut par[..k]);
        total += spec.family.log_density_unchecked(yi, &par[..k]);
    }
    total
}

pub fn loglik(spec: &FamilySpec, y: &[f64], designs: &[DMatrix<f64>], blocks: &[DVector<f64>]) -> f64 {
    loglik_from_eta(spec, y, &linear_predictors(designs, blocks))
}

/// Score and information of the log posterior with respect to block `target`,
/// chaining the family derivatives through `h'` and `h''`.
#[allow(clippy::too_many_arguments)]
pub fn score_and_info(
    spec: &FamilySpec,
    y: &[f64],
    designs: &[DMatrix<f64>],
    blocks: &[DVector<f64>],
    target: usize,
    prior: &PriorSpec,
    kind: InfoKind,
) -> Result<ScoreInfo> {
    let etas = linear_predictors(designs, blocks);
    score_and_info_from_eta(spec, y, designs, &etas, &blocks[target], target, prior, kind)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn score_and_info_from_eta(
    spec: &FamilySpec,
    y: &[f64],
    designs: &[DMatrix<f64>],
    etas: &[DVector<f64>],
    beta: &DVector<f64>,
    target: usize,
    prior: &PriorSpec,
    kind: InfoKind,
) -> Result<ScoreInfo> {
    let x = &designs[target];
    let p = x.ncols();
    let k = etas.len();
    let h = &spec.responses[target];
    let mut gradient = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut eta = [0.0; 4];
    let mut par = [0.0; 4];
    let mut total = 0.0;

    for (i, &yi) in y.iter().enumerate() {
        for j in 0..k {
            eta[j] = etas[j][i];
        }
        spec.params_from_eta(&eta[..k], &mut par[..k]);
        let (_, h1, h2) = h.eval3(eta[target]);
        let ll = spec.family.log_density_unchecked(yi, &par[..k]);
        let d = spec.family.param_derivs(yi, &par[..k], target);
        let u = d.d1 * h1;
        let w = match (kind, d.expected) {
            (InfoKind::Expected, Some(e)) => e * h1 * h1,
            _ => -(d.d2 * h1 * h1 + d.d1 * h2),
        };
        if !(ll.is_finite() && u.is_finite() && w.is_finite()) {
            return Err(Error::numerical(
                format!("non-finite likelihood contribution (loglik={ll}, score={u}, weight={w})"),
                Some(i),
            ));
        }
        total += ll;
        for a in 0..p {
            let xa = x[(i, a)];
            gradient[a] += xa * u;
            let wa = w * xa;
            for b in a..p {
                info[(a, b)] += wa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }

    let log_prior = prior.log_density(beta);
    prior.add_score_info(beta, &mut gradient, &mut info);

    Ok(ScoreInfo { loglik: total, log_prior, gradient, info })
}

/// Cholesky factor of `info`, adding a ridge `1e-6 * max|diag|` and doubling it
/// until the factorization succeeds or `max_attempts` ridges have been tried.
pub fn repair_cholesky(info: &DMatrix<f64>, max_attempts: usize) -> Option<Cholesky<f64, Dyn>> {
    if info.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if let Some(c) = Cholesky::new(info.clone()) {
        return Some(c);
    }
    let scale = info.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut ridge = 1e-6 * scale;
    for _ in 0..max_attempts {
        let mut m = info.clone();
        for d in 0..m.nrows() {
            m[(d, d)] += ridge;
        }
        if let Some(c) = Cholesky::new(m) {
            return Some(c);
        }
        ridge *= 2.0;
    }
    None
}

/// Ridge doublings allowed outside the sampler (covers 12 orders of magnitude).
pub const MAX_RIDGE_DOUBLINGS: usize = 60;
