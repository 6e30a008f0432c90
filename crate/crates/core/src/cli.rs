//! Command implementations behind the `softreg` binary: run configurations,
//! result bundles and provenance.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    ad_statistic, ci_width_ratio, qq_export, rqr_seeded, write_qq_csv, write_width_csv, AdStatistic,
};
use crate::error::{Error, Result};
use crate::experiments::{
    run_coverage_study, run_dic_selection_study, run_gpd_tail_study, DicSelectionSpec, ExperimentReport, GpdTailSpec,
    ScenarioSpec,
};
use crate::io::read_csv;
use crate::mcmc::{dic, run_chain, summarize, DicResult, SamplerSettings};
use crate::mle::fit_mle;
use crate::model::{predict, DataBlock, FitResult, ModelSpec, Prediction};
use crate::special::norm_quantile;

#[derive(Debug, Parser)]
#[command(name = "softreg", version, about = "Distributional regression with softplus response functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model by maximum likelihood or MCMC.
    Fit(CommonArgs),
    /// Run a simulation study.
    Simulate(CommonArgs),
    /// Residual diagnostics and interval-width comparison for fitted bundles.
    Diagnose(CommonArgs),
    /// Predict parameters, means or quantiles for new data.
    Predict(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: `out` in the configuration, else `softreg-out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel replications.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Mcmc,
    Mle,
}

fn default_level() -> f64 {
    0.95
}

/// Configuration of `softreg fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    pub response: String,
    #[serde(default)]
    pub threshold: Option<f64>,
    pub model: ModelSpec,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub write_chain: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Configuration of `softreg simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum SimulateConfig {
    Coverage(ScenarioSpec),
    DicSelection(DicSelectionSpec),
    GpdTail(GpdTailSpec),
}

/// Configuration of `softreg diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// One fit bundle, or two for the interval-width ratio (first / second).
    pub fits: Vec<PathBuf>,
    #[serde(default)]
    pub ratio: bool,
    /// Data for residuals and ratios; defaults to the first bundle's data.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_tail_prob")]
    pub quantile: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_tail_prob() -> f64 {
    0.999
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictWhat {
    Parameters,
    Mean,
    Quantile(f64),
}

/// Configuration of `softreg predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub fit: PathBuf,
    pub data: PathBuf,
    pub what: PredictWhat,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Version, seed and configuration hash attached to every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new<T: Serialize>(config: &T, seed: u64) -> Result<Self> {
        let digest = Sha256::digest(serde_json::to_vec(config)?);
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }

    pub fn comment(&self) -> String {
        format!("# softreg {} seed={} config_sha256={}\n", self.version, self.seed, self.config_sha256)
    }
}

/// Fitted model plus what is needed to reload its data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitBundle {
    pub provenance: Provenance,
    pub data: PathBuf,
    pub response: String,
    pub threshold: Option<f64>,
    pub fit: FitResult,
}

impl FitBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read fit bundle '{}': {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn load_data(&self, path: Option<&Path>) -> Result<DataBlock> {
        let data = read_csv(path.unwrap_or(&self.data), Some(&self.response))?;
        match self.threshold {
            Some(t) => data.with_threshold(t),
            None => Ok(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub coefficient: String,
    /// Posterior mean or maximum-likelihood estimate.
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub exp_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub provenance: Provenance,
    pub family: String,
    pub method: Method,
    pub n: usize,
    pub level: f64,
    pub loglik: f64,
    pub coefficients: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dic: Option<DicResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read config '{}': {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn out_dir(args: &CommonArgs, configured: Option<&PathBuf>, base: &Path) -> Result<PathBuf> {
    let dir = match (&args.out, configured) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => resolve(base, c),
        (None, None) => PathBuf::from("softreg-out"),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::config(format!("cannot create '{}': {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        // a second global init in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    Ok(())
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

pub fn cmd_fit(args: &CommonArgs) -> Result<()> {
    configure_threads(args.threads)?;
    let base = config_dir(&args.config);
    let mut cfg: FitConfig = read_config(&args.config)?;
    cfg.seed = args.seed.or(cfg.seed).or(Some(cfg.sampler.seed));
    let seed = cfg.seed.unwrap_or_default();
    cfg.sampler.seed = seed;
    cfg.model.validate()?;
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::config(format!("level must lie in (0, 1), got {}", cfg.level)));
    }
    let provenance = Provenance::new(&cfg, seed)?;
    let data_path = resolve(&base, &cfg.data);
    let data_path = data_path.canonicalize().unwrap_or(data_path);
    let mut data = read_csv(&data_path, Some(&cfg.response))?;
    if let Some(t) = cfg.threshold {
        data = data.with_threshold(t)?;
    }
    let out = out_dir(args, cfg.out.as_ref(), &base)?;

    let summary;
    let fit = match cfg.method {
        Method::Mle => {
            let res = fit_mle(&cfg.model, &data, None)?;
            let se = res.standard_errors()?;
            let z = norm_quantile((1.0 + cfg.level) / 2.0);
            let coefficients = res
                .blocks
                .iter()
                .zip(&se)
                .flat_map(|(b, s)| {
                    b.names.iter().zip(&b.values).zip(s).map(move |((name, &v), &sd)| SummaryRow {
                        parameter: b.parameter.clone(),
                        coefficient: name.clone(),
                        estimate: v,
                        sd,
                        lower: v - z * sd,
                        upper: v + z * sd,
                        exp_mean: v.exp(),
                    })
                })
                .collect();
            summary = FitSummary {
                provenance: provenance.clone(),
                family: cfg.model.family.name().to_string(),
                method: Method::Mle,
                n: data.n(),
                level: cfg.level,
                loglik: res.loglik,
                coefficients,
                dic: None,
                acceptance: None,
                converged: Some(res.converged),
            };
            FitResult::Mle { model: cfg.model.clone(), result: res }
        }
        Method::Mcmc => {
            let chain = run_chain(&cfg.model, &data, &cfg.sampler, None)?;
            let post = summarize(&chain, cfg.level)?;
            let d = dic(&chain, &cfg.model, &data)?;
            let coefficients = post
                .coefficients
                .iter()
                .map(|c| SummaryRow {
                    parameter: c.parameter.clone(),
                    coefficient: c.name.clone(),
                    estimate: c.mean,
                    sd: c.sd,
                    lower: c.lower,
                    upper: c.upper,
                    exp_mean: c.exp_mean,
                })
                .collect();
            if cfg.write_chain {
                write_chain_csv(&out.join("chain.csv"), &chain, &provenance)?;
            }
            summary = FitSummary {
                provenance: provenance.clone(),
                family: cfg.model.family.name().to_string(),
                method: Method::Mcmc,
                n: data.n(),
                level: cfg.level,
                loglik: -0.5 * d.deviance_at_mean,
                coefficients,
                dic: Some(d),
                acceptance: Some(chain.acceptance_rates()),
                converged: None,
            };
            FitResult::Posterior { model: cfg.model.clone(), chain }
        }
    };

    if summary.converged == Some(false) {
        eprintln!("softreg: warning: Fisher scoring did not converge; estimates may be unreliable");
    }
    print!("{}", summary_table(&summary));
    write_json(&out.join("summary.json"), &summary)?;
    write_json(
        &out.join("fit.json"),
        &FitBundle { provenance, data: data_path, response: cfg.response.clone(), threshold: cfg.threshold, fit },
    )?;
    Ok(())
}

/// Six significant digits, switching to scientific notation outside `[1e-4, 1e6)`.
pub fn sig6(x: f64) -> String {
    let ax = x.abs();
    if x == 0.0 || !x.is_finite() {
        format!("{x}")
    } else if (1e-4..1e6).contains(&ax) {
        let decimals = (5 - ax.log10().floor() as i32).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Human-readable coefficient table.
pub fn summary_table(s: &FitSummary) -> String {
    let mut out = format!("{} fit ({:?}), n = {}, loglik {}\n", s.family, s.method, s.n, sig6(s.loglik));
    out.push_str(&format!(
        "{:<10} {:<14} {:>13} {:>13} {:>13} {:>13}\n",
        "parameter", "coefficient", "estimate", "sd", "lower", "upper"
    ));
    for c in &s.coefficients {
        out.push_str(&format!(
            "{:<10} {:<14} {:>13} {:>13} {:>13} {:>13}\n",
            c.parameter,
            c.coefficient,
            sig6(c.estimate),
            sig6(c.sd),
            sig6(c.lower),
            sig6(c.upper)
        ));
    }
    if let Some(d) = &s.dic {
        out.push_str(&format!("DIC {}  pD {}\n", sig6(d.dic), sig6(d.p_d)));
    }
    out
}

fn write_chain_csv(path: &Path, chain: &crate::mcmc::Chain, prov: &Provenance) -> Result<()> {
    let mut buf = prov.comment().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["draw".to_string(), "loglik".to_string()];
        for (p, names) in chain.parameters.iter().zip(&chain.names) {
            header.extend(names.iter().map(|n| format!("{p}:{n}")));
        }
        w.write_record(&header)?;
        for d in 0..chain.n_stored() {
            let mut row = vec![(d + 1).to_string(), chain.loglik[d].to_string()];
            for b in &chain.samples {
                row.extend(b[d].iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RuntimeSidecar {
    seconds: f64,
    threads: usize,
}

pub fn cmd_simulate(args: &CommonArgs) -> Result<()> {
    configure_threads(args.threads)?;
    let base = config_dir(&args.config);
    let mut cfg: SimulateConfig = read_config(&args.config)?;
    let seed = match &mut cfg {
        SimulateConfig::Coverage(s) => {
            s.seed = args.seed.unwrap_or(s.seed);
            s.seed
        }
        SimulateConfig::DicSelection(s) => {
            s.scenario.seed = args.seed.unwrap_or(s.scenario.seed);
            s.scenario.seed
        }
        SimulateConfig::GpdTail(s) => {
            s.seed = args.seed.unwrap_or(s.seed);
            s.seed
        }
    };
    let provenance = Provenance::new(&cfg, seed)?;
    let out = out_dir(args, None, &base)?;
    let start = Instant::now();
    let report = match &cfg {
        SimulateConfig::Coverage(s) => ExperimentReport::Coverage(run_coverage_study(s)?),
        SimulateConfig::DicSelection(s) => ExperimentReport::DicSelection(run_dic_selection_study(s)?),
        SimulateConfig::GpdTail(s) => ExperimentReport::GpdTail(run_gpd_tail_study(s)?),
    };
    let seconds = start.elapsed().as_secs_f64();

    #[derive(Serialize)]
    struct Wrapped<'a> {
        provenance: &'a Provenance,
        report: &'a ExperimentReport,
    }
    write_json(&out.join("report.json"), &Wrapped { provenance: &provenance, report: &report })?;
    let mut csv_buf = provenance.comment().into_bytes();
    report.write_csv(&mut csv_buf)?;
    fs::write(out.join("report.csv"), csv_buf)?;
    write_json(&out.join("runtime.json"), &RuntimeSidecar { seconds, threads: rayon::current_num_threads() })?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DiagnoseOutput {
    provenance: Provenance,
    anderson_darling: Vec<AdStatistic>,
    rqr_clip: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    median_width_ratio: Option<f64>,
}

pub fn cmd_diagnose(args: &CommonArgs) -> Result<()> {
    configure_threads(args.threads)?;
    let base = config_dir(&args.config);
    let mut cfg: DiagnoseConfig = read_config(&args.config)?;
    cfg.seed = args.seed.or(cfg.seed).or(Some(0));
    let seed = cfg.seed.unwrap_or_default();
    if cfg.fits.is_empty() || cfg.fits.len() > 2 {
        return Err(Error::config(format!("diagnose takes one or two fit bundles, got {}", cfg.fits.len())));
    }
    if cfg.ratio && cfg.fits.len() != 2 {
        return Err(Error::config("interval-width ratios need exactly two fit bundles"));
    }
    let provenance = Provenance::new(&cfg, seed)?;
    let out = out_dir(args, cfg.out.as_ref(), &base)?;
    let bundles = cfg.fits.iter().map(|p| FitBundle::load(&resolve(&base, p))).collect::<Result<Vec<_>>>()?;
    let data_override = cfg.data.as_ref().map(|p| resolve(&base, p));
    let data = bundles[0].load_data(data_override.as_deref())?;

    let mut ads = Vec::new();
    for (i, b) in bundles.iter().enumerate() {
        let r = rqr_seeded(&b.fit, &data, seed)?;
        ads.push(ad_statistic(&r.residuals)?);
        let name = if i == 0 { "qq.csv".to_string() } else { format!("qq_{}.csv", i + 1) };
        let mut buf = provenance.comment().into_bytes();
        write_qq_csv(&mut buf, &qq_export(&r.residuals))?;
        fs::write(out.join(name), buf)?;
    }
    let mut median_width_ratio = None;
    if cfg.ratio {
        let rows = ci_width_ratio(&bundles[0].fit, &bundles[1].fit, &data, cfg.quantile)?;
        let mut rs: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        rs.sort_by(f64::total_cmp);
        median_width_ratio = Some(crate::special::quantile_sorted(&rs, 0.5));
        let mut buf = provenance.comment().into_bytes();
        write_width_csv(&mut buf, &rows)?;
        fs::write(out.join("widths.csv"), buf)?;
    }
    write_json(
        &out.join("diagnostics.json"),
        &DiagnoseOutput {
            provenance,
            anderson_darling: ads,
            rqr_clip: crate::diagnostics::RQR_CLIP,
            median_width_ratio,
        },
    )
}

pub fn cmd_predict(args: &CommonArgs) -> Result<()> {
    configure_threads(args.threads)?;
    let base = config_dir(&args.config);
    let cfg: PredictConfig = read_config(&args.config)?;
    let bundle = FitBundle::load(&resolve(&base, &cfg.fit))?;
    let provenance = Provenance::new(&cfg, args.seed.unwrap_or(bundle.provenance.seed))?;
    let out = out_dir(args, cfg.out.as_ref(), &base)?;
    let newdata = crate::io::read_table(&resolve(&base, &cfg.data))?;
    let response = bundle.response.as_str();
    let newdata = if newdata.column(response).is_some() {
        newdata.into_data(Some(response))?
    } else {
        newdata.into_data(None)?
    };
    let what = match cfg.what {
        PredictWhat::Parameters => Prediction::Parameters,
        PredictWhat::Mean => Prediction::Mean,
        PredictWhat::Quantile(p) => Prediction::Quantile(p),
    };
    let table = predict(&bundle.fit, &newdata, what)?;
    let mut buf = provenance.comment().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["obs_id".to_string()];
        header.extend(table.columns.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in table.rows.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    fs::write(out.join("predictions.csv"), buf)?;
    Ok(())
}
