//! Simulation studies: interval coverage, DIC-based response-function
//! selection and a synthetic GPD tail comparison.
//!
//! Replications run in parallel. Each replication draws from its own ChaCha
//! stream (`set_stream(r)` on the study seed), so results do not depend on the
//! thread count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ci_width_ratio, rqr_from_params};
use crate::error::{Error, Result};
use crate::families::Family;
use crate::mcmc::{dic, run_chain, Chain, SamplerSettings};
use crate::model::{parameters_at, DataBlock, FitResult, ModelSpec, ParameterSpec, PredictorSpec, PriorSpec};
use crate::response::ResponseFunction;
use crate::special::{ks_distance_normal, quantile_sorted};

/// Coefficients of the default data-generating linear predictor.
pub const DEFAULT_COEFFICIENTS: [f64; 4] = [1.0, 0.5, 1.0, 2.0];
/// DIC-difference thresholds at which selection rates are reported.
pub const DIC_THRESHOLDS: [f64; 4] = [0.0, 1.0, 10.0, 100.0];
/// Replications with any posterior-mean deviation beyond this are left out of the bias.
pub const BIAS_EXCLUSION: f64 = 5.0;

fn experiment_chain() -> SamplerSettings {
    SamplerSettings { iterations: 6_000, burn_in: 1_000, thin: 1, seed: 0 }
}

fn default_coefficients() -> Vec<f64> {
    DEFAULT_COEFFICIENTS.to_vec()
}

/// Poisson regression scenario with covariates drawn from Uniform(-1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub response: ResponseFunction,
    #[serde(default = "default_coefficients")]
    pub coefficients: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    /// Chain length; the seed field is ignored (each replication derives its own).
    #[serde(default = "experiment_chain")]
    pub chain: SamplerSettings,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(response: ResponseFunction, n: usize, replications: usize, seed: u64) -> Self {
        Self { response, coefficients: default_coefficients(), n, replications, chain: experiment_chain(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() {
            return Err(Error::config("scenario needs at least an intercept"));
        }
        if self.n < self.coefficients.len() {
            return Err(Error::config(format!(
                "sample size {} is below the number of coefficients {}",
                self.n,
                self.coefficients.len()
            )));
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.response.support() != crate::response::Support::Positive {
            return Err(Error::config(format!("response {} cannot generate a Poisson rate", self.response)));
        }
        self.chain.validate()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..self.coefficients.len()).map(|j| format!("x{j}")).collect()
    }

    /// Poisson model with every covariate of the scenario and the given response.
    pub fn model(&self, response: ResponseFunction) -> ModelSpec {
        let names = self.covariate_names();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        ModelSpec::single(Family::Poisson, PredictorSpec::new("lambda", true, &refs), response)
            .expect("poisson model with positive response is valid")
    }

    fn replication_rng(&self, r: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r as u64);
        rng
    }
}

/// Draws one dataset from the scenario.
pub fn simulate_dataset<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<DataBlock> {
    let p = spec.coefficients.len();
    let mut cols = vec![Vec::with_capacity(spec.n); p - 1];
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut eta = spec.coefficients[0];
        for (j, col) in cols.iter_mut().enumerate() {
            let x = rng.random_range(-1.0..1.0);
            eta += spec.coefficients[j + 1] * x;
            col.push(x);
        }
        let lambda = spec.response.value(eta);
        y.push(Family::Poisson.sample(&[lambda], rng));
    }
    DataBlock::new(y, spec.covariate_names().into_iter().zip(cols).collect())
}

fn chain_for(spec: &ScenarioSpec, model: &ModelSpec, data: &DataBlock, seed: u64) -> Result<Chain> {
    let settings = SamplerSettings { seed, ..spec.chain };
    run_chain(model, data, &settings, None)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Half-width of the normal-approximation interval for a rate estimated from `trials`.
pub fn binomial_half_width(rate: f64, trials: usize, z: f64) -> f64 {
    z * (rate * (1.0 - rate) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub replication: usize,
    pub coefficient: String,
    pub truth: f64,
    pub mean: f64,
    pub lower80: f64,
    pub upper80: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl CoverageRecord {
    pub fn covered80(&self) -> bool {
        self.lower80 <= self.truth && self.truth <= self.upper80
    }

    pub fn covered95(&self) -> bool {
        self.lower95 <= self.truth && self.truth <= self.upper95
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCoverage {
    pub coefficient: String,
    pub truth: f64,
    /// Mean posterior-mean deviation over replications kept for the bias.
    pub bias: f64,
    pub coverage80: f64,
    pub coverage95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub scenario: ScenarioSpec,
    pub replications: usize,
    pub completed: usize,
    pub failed: usize,
    /// Completed replications left out of the bias because of a large deviation.
    pub excluded_from_bias: usize,
    pub coefficients: Vec<CoefficientCoverage>,
    pub records: Vec<CoverageRecord>,
}

fn coverage_replication(spec: &ScenarioSpec, r: usize) -> Result<Vec<CoverageRecord>> {
    let mut rng = spec.replication_rng(r);
    let data = simulate_dataset(spec, &mut rng)?;
    let model = spec.model(spec.response);
    let chain = chain_for(spec, &model, &data, rng.random())?;
    let names = &chain.names[0];
    Ok((0..names.len())
        .map(|j| {
            let mut xs = chain.trace(0, j);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.sort_by(f64::total_cmp);
            CoverageRecord {
                replication: r,
                coefficient: names[j].clone(),
                truth: spec.coefficients[j],
                mean,
                lower80: quantile_sorted(&xs, 0.1),
                upper80: quantile_sorted(&xs, 0.9),
                lower95: quantile_sorted(&xs, 0.025),
                upper95: quantile_sorted(&xs, 0.975),
            }
        })
        .collect())
}

/// Well-specified coverage and bias study.
pub fn run_coverage_study(spec: &ScenarioSpec) -> Result<CoverageReport> {
    spec.validate()?;
    let results: Vec<Result<Vec<CoverageRecord>>> =
        (0..spec.replications).into_par_iter().map(|r| coverage_replication(spec, r)).collect();
    let mut records = Vec::new();
    let mut failed = 0;
    let mut groups = Vec::new();
    for res in results {
        match res {
            Ok(recs) => {
                groups.push(recs.clone());
                records.extend(recs);
            }
            Err(_) => failed += 1,
        }
    }
    let completed = groups.len();
    let kept: Vec<&Vec<CoverageRecord>> =
        groups.iter().filter(|g| g.iter().all(|c| (c.mean - c.truth).abs() <= BIAS_EXCLUSION)).collect();
    let p = spec.coefficients.len();
    let names = spec.model(spec.response).parameters[0].predictor.coefficient_names();
    let coefficients = (0..p)
        .map(|j| {
            let rate = |f: fn(&CoverageRecord) -> bool| {
                groups.iter().filter(|g| f(&g[j])).count() as f64 / completed.max(1) as f64
            };
            let bias = kept.iter().map(|g| g[j].mean - g[j].truth).sum::<f64>() / kept.len().max(1) as f64;
            CoefficientCoverage {
                coefficient: names[j].clone(),
                truth: spec.coefficients[j],
                bias,
                coverage80: rate(CoverageRecord::covered80),
                coverage95: rate(CoverageRecord::covered95),
            }
        })
        .collect();
    Ok(CoverageReport {
        scenario: spec.clone(),
        replications: spec.replications,
        completed,
        failed,
        excluded_from_bias: completed - kept.len(),
        coefficients,
        records,
    })
}

/// Data from `scenario.response`; both it and `alternative` are fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicSelectionSpec {
    pub scenario: ScenarioSpec,
    pub alternative: ResponseFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicRecord {
    pub replication: usize,
    pub dic_correct: f64,
    pub dic_alternative: f64,
}

impl DicRecord {
    /// Positive when the data-generating response wins.
    pub fn difference(&self) -> f64 {
        self.dic_alternative - self.dic_correct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRate {
    pub threshold: f64,
    pub rate: f64,
    pub lower95: f64,
    pub upper95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicSelectionReport {
    pub spec: DicSelectionSpec,
    pub replications: usize,
    pub completed: usize,
    pub failed: usize,
    pub rates: Vec<SelectionRate>,
    pub records: Vec<DicRecord>,
}

/// Correct-selection rates at each threshold: a replication counts when
/// `DIC(alternative) - DIC(correct) > t`.
pub fn selection_rates(records: &[DicRecord], thresholds: &[f64]) -> Vec<SelectionRate> {
    thresholds
        .iter()
        .map(|&t| {
            let hits = records.iter().filter(|r| r.difference() > t).count();
            let (lower95, upper95) = wilson_interval(hits, records.len(), 1.96);
            SelectionRate { threshold: t, rate: hits as f64 / records.len().max(1) as f64, lower95, upper95 }
        })
        .collect()
}

fn dic_replication(spec: &DicSelectionSpec, r: usize) -> Result<DicRecord> {
    let s = &spec.scenario;
    let mut rng = s.replication_rng(r);
    let data = simulate_dataset(s, &mut rng)?;
    let correct = s.model(s.response);
    let alt = s.model(spec.alternative);
    let ca = chain_for(s, &correct, &data, rng.random())?;
    let cb = chain_for(s, &alt, &data, rng.random())?;
    Ok(DicRecord {
        replication: r,
        dic_correct: dic(&ca, &correct, &data)?.dic,
        dic_alternative: dic(&cb, &alt, &data)?.dic,
    })
}

pub fn run_dic_selection_study(spec: &DicSelectionSpec) -> Result<DicSelectionReport> {
    spec.scenario.validate()?;
    if spec.alternative.support() != crate::response::Support::Positive {
        return Err(Error::config(format!("response {} cannot model a Poisson rate", spec.alternative)));
    }
    let results: Vec<Result<DicRecord>> =
        (0..spec.scenario.replications).into_par_iter().map(|r| dic_replication(spec, r)).collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    let records: Vec<DicRecord> = results.into_iter().filter_map(|r| r.ok()).collect();
    Ok(DicSelectionReport {
        spec: spec.clone(),
        replications: spec.scenario.replications,
        completed: records.len(),
        failed,
        rates: selection_rates(&records, &DIC_THRESHOLDS),
        records,
    })
}

/// Synthetic exceedance data: `sigma = exp(eta_sigma)`, `gamma = softplus_1(eta_gamma)`,
/// both linear in two Uniform(-1, 1) covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdTailSpec {
    #[serde(default = "default_gpd_scale")]
    pub scale_coefficients: Vec<f64>,
    /// Keeps the shape within (0.11, 0.83) over the covariate square.
    #[serde(default = "default_gpd_shape")]
    pub shape_coefficients: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    #[serde(default = "experiment_chain")]
    pub chain: SamplerSettings,
    #[serde(default = "default_tail_prob")]
    pub quantile: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_gpd_scale() -> Vec<f64> {
    vec![0.0, 0.3, 0.3]
}

fn default_gpd_shape() -> Vec<f64> {
    vec![-0.95, 0.6, 0.6]
}

fn default_tail_prob() -> f64 {
    0.999
}

impl GpdTailSpec {
    pub fn new(n: usize, replications: usize, seed: u64) -> Self {
        Self {
            scale_coefficients: default_gpd_scale(),
            shape_coefficients: default_gpd_shape(),
            n,
            replications,
            chain: experiment_chain(),
            quantile: default_tail_prob(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_coefficients.len() != 3 || self.shape_coefficients.len() != 3 {
            return Err(Error::config("GPD tail study uses an intercept and two covariates per parameter"));
        }
        if self.n < 3 || self.replications == 0 {
            return Err(Error::config("GPD tail study needs n >= 3 and at least one replication"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::config("tail probability must lie in (0, 1)"));
        }
        self.chain.validate()
    }

    /// GPD model with covariates on both parameters and the given shape response.
    pub fn model(&self, shape_response: ResponseFunction) -> ModelSpec {
        gpd_model(&["x1", "x2"], shape_response)
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DataBlock> {
        let shape_h = ResponseFunction::softplus(1.0)?;
        let (b, g) = (&self.scale_coefficients, &self.shape_coefficients);
        let mut x1 = Vec::with_capacity(self.n);
        let mut x2 = Vec::with_capacity(self.n);
        let mut y = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let u1: f64 = rng.random_range(-1.0..1.0);
            let u2: f64 = rng.random_range(-1.0..1.0);
            let sigma = (b[0] + b[1] * u1 + b[2] * u2).exp();
            let gamma = shape_h.value(g[0] + g[1] * u1 + g[2] * u2);
            y.push(Family::Gpd.sample(&[sigma, gamma], rng));
            x1.push(u1);
            x2.push(u2);
        }
        DataBlock::new(y, vec![("x1".into(), x1), ("x2".into(), x2)])
    }
}

/// GPD model with `exp` on the scale and the given response on the shape.
pub fn gpd_model(covariates: &[&str], shape_response: ResponseFunction) -> ModelSpec {
    ModelSpec::new(
        Family::Gpd,
        vec![
            ParameterSpec {
                predictor: PredictorSpec::new("sigma", true, covariates),
                response: ResponseFunction::Exponential,
                prior: PriorSpec::Flat,
            },
            ParameterSpec {
                predictor: PredictorSpec::new("gamma", true, covariates),
                response: shape_response,
                prior: PriorSpec::Flat,
            },
        ],
    )
    .expect("gpd model with positive responses is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdTailRecord {
    pub replication: usize,
    /// Largest plug-in tail quantile over the observations, softplus shape.
    pub max_quantile_softplus: f64,
    pub max_quantile_exp: f64,
    /// Median width ratio (softplus / exp) over the top decile of exp-fit quantiles.
    pub median_ratio_top_decile: f64,
    pub dic_softplus: f64,
    pub dic_exp: f64,
    pub ks_softplus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdTailReport {
    pub spec: GpdTailSpec,
    pub replications: usize,
    pub completed: usize,
    pub failed: usize,
    /// Share of replications where the softplus fit has the smaller maximum quantile.
    pub smaller_max_share: f64,
    /// Median of the pooled top-decile width ratios.
    pub pooled_median_ratio: f64,
    pub records: Vec<GpdTailRecord>,
    #[serde(skip)]
    pub pooled_ratios: Vec<f64>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    quantile_sorted(xs, 0.5)
}

fn plug_in_quantiles(fit: &FitResult, data: &DataBlock, prob: f64) -> Result<Vec<f64>> {
    let params = parameters_at(fit.model(), data, &fit.point_estimate())?;
    Ok(params.iter().map(|p| fit.model().family.quantile_unchecked(prob, p)).collect())
}

fn gpd_replication(spec: &GpdTailSpec, r: usize) -> Result<(GpdTailRecord, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(r as u64);
    let data = spec.simulate(&mut rng)?;
    let sp_model = spec.model(ResponseFunction::softplus(1.0)?);
    let ex_model = spec.model(ResponseFunction::Exponential);
    let sp_chain = run_chain(&sp_model, &data, &SamplerSettings { seed: rng.random(), ..spec.chain }, None)?;
    let ex_chain = run_chain(&ex_model, &data, &SamplerSettings { seed: rng.random(), ..spec.chain }, None)?;
    let dic_softplus = dic(&sp_chain, &sp_model, &data)?.dic;
    let dic_exp = dic(&ex_chain, &ex_model, &data)?.dic;
    let sp = FitResult::Posterior { model: sp_model, chain: sp_chain };
    let ex = FitResult::Posterior { model: ex_model, chain: ex_chain };

    let q_sp = plug_in_quantiles(&sp, &data, spec.quantile)?;
    let q_ex = plug_in_quantiles(&ex, &data, spec.quantile)?;
    let ratios = ci_width_ratio(&sp, &ex, &data, spec.quantile)?;

    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| q_ex[b].total_cmp(&q_ex[a]));
    let top = (data.n() / 10).max(1);
    let mut top_ratios: Vec<f64> = order[..top].iter().map(|&i| ratios[i].ratio).collect();

    let params = parameters_at(sp.model(), &data, &sp.point_estimate())?;
    let resid = rqr_from_params(Family::Gpd, &data.response(), &params, &mut rng);

    let record = GpdTailRecord {
        replication: r,
        max_quantile_softplus: q_sp.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_quantile_exp: q_ex.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        median_ratio_top_decile: median(&mut top_ratios.clone()),
        dic_softplus,
        dic_exp,
        ks_softplus: ks_distance_normal(&resid),
    };
    top_ratios.sort_by(f64::total_cmp);
    Ok((record, top_ratios))
}

pub fn run_gpd_tail_study(spec: &GpdTailSpec) -> Result<GpdTailReport> {
    spec.validate()?;
    let results: Vec<Result<(GpdTailRecord, Vec<f64>)>> =
        (0..spec.replications).into_par_iter().map(|r| gpd_replication(spec, r)).collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    let mut records = Vec::new();
    let mut pooled = Vec::new();
    for (rec, ratios) in results.into_iter().flatten() {
        records.push(rec);
        pooled.extend(ratios);
    }
    let smaller = records.iter().filter(|r| r.max_quantile_softplus < r.max_quantile_exp).count();
    let pooled_median_ratio = if pooled.is_empty() { f64::NAN } else { median(&mut pooled) };
    Ok(GpdTailReport {
        spec: spec.clone(),
        replications: spec.replications,
        completed: records.len(),
        failed,
        smaller_max_share: smaller as f64 / records.len().max(1) as f64,
        pooled_median_ratio,
        records,
        pooled_ratios: pooled,
    })
}

/// Any study's report, tagged by study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum ExperimentReport {
    Coverage(CoverageReport),
    DicSelection(DicSelectionReport),
    GpdTail(GpdTailReport),
}

impl ExperimentReport {
    /// Flat per-replication table for plotting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match self {
            ExperimentReport::Coverage(r) => {
                w.write_record([
                    "replication",
                    "coefficient",
                    "truth",
                    "mean",
                    "lower80",
                    "upper80",
                    "lower95",
                    "upper95",
                    "covered80",
                    "covered95",
                ])?;
                for c in &r.records {
                    w.write_record([
                        c.replication.to_string(),
                        c.coefficient.clone(),
                        c.truth.to_string(),
                        c.mean.to_string(),
                        c.lower80.to_string(),
                        c.upper80.to_string(),
                        c.lower95.to_string(),
                        c.upper95.to_string(),
                        u8::from(c.covered80()).to_string(),
                        u8::from(c.covered95()).to_string(),
                    ])?;
                }
            }
            ExperimentReport::DicSelection(r) => {
                let mut header = vec!["replication".to_string(), "dic_correct".into(), "dic_alternative".into()];
                header.extend(DIC_THRESHOLDS.iter().map(|t| format!("selected_t{t}")));
                w.write_record(&header)?;
                for d in &r.records {
                    let mut row =
                        vec![d.replication.to_string(), d.dic_correct.to_string(), d.dic_alternative.to_string()];
                    row.extend(DIC_THRESHOLDS.iter().map(|&t| u8::from(d.difference() > t).to_string()));
                    w.write_record(&row)?;
                }
            }
            ExperimentReport::GpdTail(r) => {
                w.write_record([
                    "replication",
                    "max_quantile_softplus",
                    "max_quantile_exp",
                    "median_ratio_top_decile",
                    "dic_softplus",
                    "dic_exp",
                    "ks_softplus",
                ])?;
                for g in &r.records {
                    w.write_record([
                        g.replication.to_string(),
                        g.max_quantile_softplus.to_string(),
                        g.max_quantile_exp.to_string(),
                        g.median_ratio_top_decile.to_string(),
                        g.dic_softplus.to_string(),
                        g.dic_exp.to_string(),
                        g.ks_softplus.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softplus::SoftplusParams;

    #[test]
    fn flat_softplus_scenario() {
        let mut spec = ScenarioSpec::new(ResponseFunction::softplus(10.0).unwrap(), 2000, 1, 4);
        spec.coefficients = vec![1.0, 0.0, 0.0, 0.0];
        let mut rng = spec.replication_rng(0);
        let d = simulate_dataset(&spec, &mut rng).unwrap();
        let lambda = SoftplusParams::new(10.0).unwrap().value(1.0);
        assert!((lambda - 1.0).abs() < 5e-5);
        let m = d.response().iter().sum::<f64>() / 2000.0;
        assert!((m - lambda).abs() < 3.0 * (lambda / 2000.0).sqrt());
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = ScenarioSpec::new(ResponseFunction::Exponential, 50, 3, 17);
        let a = simulate_dataset(&spec, &mut spec.replication_rng(2)).unwrap();
        let b = simulate_dataset(&spec, &mut spec.replication_rng(2)).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&spec, &mut spec.replication_rng(1)).unwrap();
        assert_ne!(a, c);
        assert!(d_covariates_in_range(&a));
    }

    fn d_covariates_in_range(d: &DataBlock) -> bool {
        d.column_names().iter().all(|n| d.column(n).unwrap().iter().all(|&x| (-1.0..1.0).contains(&x)))
    }

    #[test]
    fn clt_mean_of_large_sample() {
        let spec = ScenarioSpec::new(ResponseFunction::softplus(1.0).unwrap(), 100_000, 1, 8);
        let mut rng = spec.replication_rng(0);
        let d = simulate_dataset(&spec, &mut rng).unwrap();
        let h = spec.response;
        let x: Vec<&[f64]> = ["x1", "x2", "x3"].iter().map(|n| d.column(n).unwrap()).collect();
        let lam: Vec<f64> = (0..d.n()).map(|i| h.value(1.0 + 0.5 * x[0][i] + x[1][i] + 2.0 * x[2][i])).collect();
        let lbar = lam.iter().sum::<f64>() / d.n() as f64;
        let ybar = d.response().iter().sum::<f64>() / d.n() as f64;
        assert!((ybar - lbar).abs() < 3.0 * (lbar / d.n() as f64).sqrt());
    }

    #[test]
    fn coverage_smoke_single_replication() {
        let mut spec = ScenarioSpec::new(ResponseFunction::softplus(1.0).unwrap(), 200, 1, 2);
        spec.chain = SamplerSettings { iterations: 600, burn_in: 100, thin: 1, seed: 0 };
        let rep = run_coverage_study(&spec).unwrap();
        assert_eq!(rep.completed, 1);
        assert_eq!(rep.records.len(), 4);
        for c in &rep.coefficients {
            assert!(c.coverage80 == 0.0 || c.coverage80 == 1.0);
            assert!(c.coverage95 == 0.0 || c.coverage95 == 1.0);
        }
        let again = run_coverage_study(&spec).unwrap();
        assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn selection_rates_are_monotone() {
        let recs: Vec<DicRecord> = [-3.0, 0.5, 2.0, 15.0, 150.0, -0.2]
            .iter()
            .enumerate()
            .map(|(i, &d)| DicRecord { replication: i, dic_correct: 100.0, dic_alternative: 100.0 + d })
            .collect();
        let rates = selection_rates(&recs, &DIC_THRESHOLDS);
        assert_eq!(rates[0].rate, 4.0 / 6.0);
        assert_eq!(rates.iter().map(|r| r.rate).collect::<Vec<_>>(), vec![4.0 / 6.0, 3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0]);
        assert!(rates.windows(2).all(|w| w[1].rate <= w[0].rate));
    }

    #[test]
    fn planning_half_width() {
        assert!(binomial_half_width(0.8, 6150, 1.96) <= 0.01);
        assert!(binomial_half_width(0.8, 6000, 1.96) > 0.01);
        let (lo, hi) = wilson_interval(100, 100, 1.96);
        assert!(lo > 0.96 && (hi - 1.0).abs() < 1e-12, "{lo} {hi}");
    }

    #[test]
    fn invalid_scenarios() {
        let mut s = ScenarioSpec::new(ResponseFunction::Exponential, 3, 1, 0);
        assert!(s.validate().is_err());
        s.n = 10;
        s.replications = 0;
        assert!(s.validate().is_err());
        let s = ScenarioSpec::new(ResponseFunction::Identity, 10, 1, 0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn gpd_shape_stays_in_range() {
        let spec = GpdTailSpec::new(10, 1, 0);
        let h = ResponseFunction::softplus(1.0).unwrap();
        let g = &spec.shape_coefficients;
        for (a, b) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            let v = h.value(g[0] + g[1] * a + g[2] * b);
            assert!(v > 0.1 && v < 0.9, "{v}");
        }
    }
}
