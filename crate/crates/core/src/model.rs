//! Data, predictor structure, priors and prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{Family, FamilySpec};
use crate::mcmc::Chain;
use crate::mle::MleResult;
use crate::response::ResponseFunction;

/// Response vector plus named covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBlock {
    n: usize,
    y: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    threshold: Option<f64>,
}

impl DataBlock {
    pub fn new(y: Vec<f64>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = y.len();
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("response has a missing or non-finite value at row {}", i + 1)));
        }
        Self::build(n, y, columns)
    }

    /// Covariates only, for prediction.
    pub fn covariates(n: usize, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        Self::build(n, Vec::new(), columns)
    }

    fn build(n: usize, y: Vec<f64>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut names = Vec::with_capacity(columns.len());
        let mut values = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::config(format!("column '{name}' has {} rows, expected {n}", col.len())));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::config(format!(
                    "column '{name}' has a missing or non-finite value at row {}",
                    i + 1
                )));
            }
            if names.contains(&name) {
                return Err(Error::config(format!("duplicate column '{name}'")));
            }
            names.push(name);
            values.push(col);
        }
        Ok(Self { n, y, names, columns: values, threshold: None })
    }

    /// Treats the response as exceedances over `tau`; every value must exceed it.
    pub fn with_threshold(mut self, tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::config("threshold must be finite"));
        }
        if let Some(i) = self.y.iter().position(|&v| v - tau <= 0.0) {
            return Err(Error::config(format!("response at row {} does not exceed the threshold {tau}", i + 1)));
        }
        self.threshold = Some(tau);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_response(&self) -> bool {
        !self.y.is_empty() || self.n == 0
    }

    /// Raw response values as supplied.
    pub fn raw_response(&self) -> &[f64] {
        &self.y
    }

    /// Response on the modelling scale (exceedances when a threshold is set).
    pub fn response(&self) -> Vec<f64> {
        match self.threshold {
            Some(t) => self.y.iter().map(|v| v - t).collect(),
            None => self.y.clone(),
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|c| c == name).map(|i| self.columns[i].as_slice())
    }
}

/// Linear predictor for one distribution parameter: optional intercept plus
/// named covariate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub parameter: String,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub covariates: Vec<String>,
}

fn default_true() -> bool {
    true
}

impl PredictorSpec {
    pub fn new(parameter: &str, intercept: bool, covariates: &[&str]) -> Self {
        Self {
            parameter: parameter.to_string(),
            intercept,
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn intercept_only(parameter: &str) -> Self {
        Self::new(parameter, true, &[])
    }

    pub fn n_coefficients(&self) -> usize {
        self.covariates.len() + usize::from(self.intercept)
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_coefficients());
        if self.intercept {
            out.push("(Intercept)".to_string());
        }
        out.extend(self.covariates.iter().cloned());
        out
    }
}

/// Regression coefficients for one distribution parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBlock {
    pub parameter: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl CoefficientBlock {
    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

/// Prior on one coefficient block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// Improper flat prior.
    #[default]
    Flat,
    /// Independent `Normal(0, sd^2)` on every coefficient.
    Normal { sd: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::Flat => Ok(()),
            PriorSpec::Normal { sd } if sd.is_finite() && *sd > 0.0 => Ok(()),
            PriorSpec::Normal { sd } => Err(Error::config(format!("normal prior sd must be > 0, got {sd}"))),
        }
    }

    /// Log prior density up to a constant.
    pub fn log_density(&self, beta: &DVector<f64>) -> f64 {
        match self {
            PriorSpec::Flat => 0.0,
            PriorSpec::Normal { sd } => -0.5 * beta.norm_squared() / (sd * sd),
        }
    }

    pub(crate) fn add_score_info(&self, beta: &DVector<f64>, gradient: &mut DVector<f64>, info: &mut DMatrix<f64>) {
        if let PriorSpec::Normal { sd } = self {
            let prec = 1.0 / (sd * sd);
            for i in 0..beta.len() {
                gradient[i] -= beta[i] * prec;
                info[(i, i)] += prec;
            }
        }
    }
}

/// Predictor, response function and prior for one distribution parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    #[serde(flatten)]
    pub predictor: PredictorSpec,
    pub response: ResponseFunction,
    #[serde(default)]
    pub prior: PriorSpec,
}

/// Response family plus one [`ParameterSpec`] per distribution parameter, in
/// the family's parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub parameters: Vec<ParameterSpec>,
}

impl ModelSpec {
    pub fn new(family: Family, parameters: Vec<ParameterSpec>) -> Result<Self> {
        let spec = Self { family, parameters };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-parameter model with the given predictor and flat prior.
    pub fn single(family: Family, predictor: PredictorSpec, response: ResponseFunction) -> Result<Self> {
        Self::new(family, vec![ParameterSpec { predictor, response, prior: PriorSpec::Flat }])
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.family.parameter_names();
        if self.parameters.len() != names.len() {
            return Err(Error::config(format!(
                "{} has parameters {:?}; {} predictors given",
                self.family.name(),
                names,
                self.parameters.len()
            )));
        }
        for (p, name) in self.parameters.iter().zip(names) {
            if p.predictor.parameter != *name {
                return Err(Error::config(format!(
                    "expected predictor for '{name}', found '{}'",
                    p.predictor.parameter
                )));
            }
            if p.predictor.n_coefficients() == 0 {
                return Err(Error::config(format!("predictor for '{name}' has no coefficients")));
            }
            p.prior.validate()?;
        }
        self.family_spec().validate()
    }

    pub fn family_spec(&self) -> FamilySpec {
        FamilySpec { family: self.family, responses: self.parameters.iter().map(|p| p.response).collect() }
    }

    pub fn priors(&self) -> Vec<PriorSpec> {
        self.parameters.iter().map(|p| p.prior).collect()
    }

    pub fn n_blocks(&self) -> usize {
        self.parameters.len()
    }

    /// Same model with the response function of parameter `index` replaced.
    pub fn with_response(&self, index: usize, response: ResponseFunction) -> Result<Self> {
        let mut out = self.clone();
        out.parameters[index].response = response;
        out.validate()?;
        Ok(out)
    }

    pub fn blocks_from_vectors(&self, vectors: &[DVector<f64>]) -> Vec<CoefficientBlock> {
        self.parameters
            .iter()
            .zip(vectors)
            .map(|(p, v)| CoefficientBlock {
                parameter: p.predictor.parameter.clone(),
                names: p.predictor.coefficient_names(),
                values: v.iter().copied().collect(),
            })
            .collect()
    }
}

/// Design matrix for one predictor: a column of ones (if requested) followed
/// by the covariates in the order listed.
pub fn build_design(data: &DataBlock, spec: &PredictorSpec) -> Result<DMatrix<f64>> {
    let n = data.n();
    let p = spec.n_coefficients();
    let mut x = DMatrix::zeros(n, p);
    let mut j = 0;
    if spec.intercept {
        x.column_mut(0).fill(1.0);
        j = 1;
    }
    for name in &spec.covariates {
        let col = data.column(name).ok_or_else(|| {
            Error::config(format!("predictor for '{}' references unknown column '{name}'", spec.parameter))
        })?;
        x.column_mut(j).copy_from_slice(col);
        j += 1;
    }
    Ok(x)
}

pub fn linear_predictor(design: &DMatrix<f64>, block: &CoefficientBlock) -> Result<DVector<f64>> {
    if design.ncols() != block.values.len() {
        return Err(Error::config(format!(
            "block '{}' has {} coefficients but the design has {} columns",
            block.parameter,
            block.values.len(),
            design.ncols()
        )));
    }
    Ok(design * block.as_vector())
}

/// Model bound to data: validated response plus one design matrix per block.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub spec: ModelSpec,
    pub family: FamilySpec,
    pub y: Vec<f64>,
    pub designs: Vec<DMatrix<f64>>,
}

impl PreparedModel {
    pub fn new(spec: &ModelSpec, data: &DataBlock) -> Result<Self> {
        spec.validate()?;
        if data.raw_response().len() != data.n() {
            return Err(Error::config("data block has no response column"));
        }
        let y = data.response();
        for (i, &v) in y.iter().enumerate() {
            spec.family.check_observation(v).map_err(|e| Error::config(format!("row {}: {e}", i + 1)))?;
        }
        let designs = spec.parameters.iter().map(|p| build_design(data, &p.predictor)).collect::<Result<Vec<_>>>()?;
        for (d, p) in designs.iter().zip(&spec.parameters) {
            if d.nrows() < d.ncols() {
                return Err(Error::config(format!(
                    "{} observations are too few for the {} coefficients of '{}'",
                    d.nrows(),
                    d.ncols(),
                    p.predictor.parameter
                )));
            }
        }
        Ok(Self { spec: spec.clone(), family: spec.family_spec(), y, designs })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn loglik(&self, blocks: &[DVector<f64>]) -> f64 {
        crate::families::loglik(&self.family, &self.y, &self.designs, blocks)
    }

    /// Log-likelihood plus the log prior of every block.
    pub fn log_posterior(&self, blocks: &[DVector<f64>]) -> f64 {
        self.loglik(blocks) + self.spec.parameters.iter().zip(blocks).map(|(p, b)| p.prior.log_density(b)).sum::<f64>()
    }
}

/// A fitted model: either a maximum-likelihood point estimate or a posterior sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FitResult {
    Mle { model: ModelSpec, result: MleResult },
    Posterior { model: ModelSpec, chain: Chain },
}

impl FitResult {
    pub fn model(&self) -> &ModelSpec {
        match self {
            FitResult::Mle { model, .. } | FitResult::Posterior { model, .. } => model,
        }
    }

    /// MLE, or posterior mean of every coefficient.
    pub fn point_estimate(&self) -> Vec<CoefficientBlock> {
        match self {
            FitResult::Mle { result, .. } => result.blocks.clone(),
            FitResult::Posterior { model, chain } => model.blocks_from_vectors(&chain.posterior_mean()),
        }
    }

    pub fn chain(&self) -> Option<&Chain> {
        match self {
            FitResult::Posterior { chain, .. } => Some(chain),
            FitResult::Mle { .. } => None,
        }
    }
}

/// What [`predict`] returns per observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    /// Every distribution parameter.
    Parameters,
    /// Quantile of the response at the given probability.
    Quantile(f64),
    /// Mean of the response.
    Mean,
}

/// Prediction table: named columns, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Per-observation distribution parameters under the given coefficients.
pub fn parameters_at(spec: &ModelSpec, data: &DataBlock, blocks: &[CoefficientBlock]) -> Result<Vec<Vec<f64>>> {
    let k = spec.n_blocks();
    if blocks.len() != k {
        return Err(Error::config(format!("expected {k} coefficient blocks, got {}", blocks.len())));
    }
    let etas = spec
        .parameters
        .iter()
        .zip(blocks)
        .map(|(p, b)| linear_predictor(&build_design(data, &p.predictor)?, b))
        .collect::<Result<Vec<_>>>()?;
    let family = spec.family_spec();
    let mut eta = vec![0.0; k];
    Ok((0..data.n())
        .map(|i| {
            for j in 0..k {
                eta[j] = etas[j][i];
            }
            let mut par = vec![0.0; k];
            family.params_from_eta(&eta, &mut par);
            par
        })
        .collect())
}

/// Plug-in prediction at the fit's point estimate.
pub fn predict(fit: &FitResult, newdata: &DataBlock, what: Prediction) -> Result<PredictionTable> {
    let spec = fit.model();
    let params = parameters_at(spec, newdata, &fit.point_estimate())?;
    let family = spec.family;
    match what {
        Prediction::Parameters => Ok(PredictionTable {
            columns: family.parameter_names().iter().map(|s| s.to_string()).collect(),
            rows: params,
        }),
        Prediction::Mean => Ok(PredictionTable {
            columns: vec!["mean".to_string()],
            rows: params.iter().map(|p| vec![family.mean(p)]).collect(),
        }),
        Prediction::Quantile(prob) => {
            let rows = params.iter().map(|p| family.quantile(prob, p).map(|q| vec![q])).collect::<Result<Vec<_>>>()?;
            Ok(PredictionTable { columns: vec![format!("q{prob}")], rows })
        }
    }
}
