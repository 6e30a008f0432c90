//! Randomized quantile residuals, Anderson-Darling statistic, QQ tables and
//! interval-width comparisons between two posterior fits.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::Family;
use crate::model::{build_design, parameters_at, DataBlock, FitResult};
use crate::special::{norm_log_cdf, norm_quantile, quantile_sorted};

/// Probabilities are clipped to `[RQR_CLIP, 1 - RQR_CLIP]` before the normal quantile.
pub const RQR_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqrSet {
    pub residuals: Vec<f64>,
    /// Seed of the randomization stream, when one was used.
    pub seed: Option<u64>,
    pub clip: f64,
}

impl RqrSet {
    pub fn new(residuals: Vec<f64>) -> Self {
        Self { residuals, seed: None, clip: RQR_CLIP }
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }
}

/// Residual of one observation given its distribution parameters.
pub fn rqr_one<R: Rng + ?Sized>(family: Family, y: f64, params: &[f64], rng: &mut R) -> f64 {
    let u = if family.is_discrete() {
        let hi = family.cdf_unchecked(y, params);
        let lo = if y >= 1.0 { family.cdf_unchecked(y - 1.0, params) } else { 0.0 };
        let v: f64 = rng.random();
        // (lo, hi]
        hi - v * (hi - lo)
    } else {
        family.cdf_unchecked(y, params)
    };
    norm_quantile(u.clamp(RQR_CLIP, 1.0 - RQR_CLIP))
}

/// Residuals for a whole sample with per-observation parameters.
pub fn rqr_from_params<R: Rng + ?Sized>(family: Family, y: &[f64], params: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
    y.iter().zip(params).map(|(&yi, p)| rqr_one(family, yi, p, rng)).collect()
}

/// Randomized quantile residuals at the fit's point estimate.
pub fn rqr<R: Rng + ?Sized>(fit: &FitResult, data: &DataBlock, rng: &mut R) -> Result<RqrSet> {
    let spec = fit.model();
    let y = data.response();
    if y.len() != data.n() {
        return Err(Error::config("residuals need a response column"));
    }
    for (i, &v) in y.iter().enumerate() {
        spec.family.check_observation(v).map_err(|e| Error::config(format!("row {}: {e}", i + 1)))?;
    }
    let params = parameters_at(spec, data, &fit.point_estimate())?;
    for (i, p) in params.iter().enumerate() {
        spec.family.check_params(p).map_err(|e| Error::numerical(e.to_string(), Some(i)))?;
    }
    Ok(RqrSet::new(rqr_from_params(spec.family, &y, &params, rng)))
}

/// [`rqr`] with its own randomization stream, recorded in the result.
pub fn rqr_seeded(fit: &FitResult, data: &DataBlock, seed: u64) -> Result<RqrSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = rqr(fit, data, &mut rng)?;
    out.seed = Some(seed);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdStatistic {
    pub a2: f64,
    pub n: usize,
}

/// Anderson-Darling statistic against the standard normal.
pub fn ad_statistic(residuals: &[f64]) -> Result<AdStatistic> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::config(format!("Anderson-Darling needs at least 2 residuals, got {n}")));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("residuals must be finite"));
    }
    let mut z = residuals.to_vec();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let s: f64 = (0..n)
        .map(|i| {
            let w = (2 * i + 1) as f64;
            w * (norm_log_cdf(z[i]) + norm_log_cdf(-z[n - 1 - i]))
        })
        .sum();
    Ok(AdStatistic { a2: (-nf - s / nf).max(0.0), n })
}

/// `(theoretical, observed)` pairs: `Phi^{-1}((i - 0.5)/n)` against sorted residuals.
pub fn qq_export(residuals: &[f64]) -> Vec<(f64, f64)> {
    let n = residuals.len() as f64;
    let mut z = residuals.to_vec();
    z.sort_by(f64::total_cmp);
    z.into_iter().enumerate().map(|(i, v)| (norm_quantile((i as f64 + 0.5) / n), v)).collect()
}

pub fn write_qq_csv<W: Write>(out: W, pairs: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theoretical", "observed"])?;
    for (t, o) in pairs {
        w.write_record([t.to_string(), o.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_qq_csv<R: std::io::Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::config(format!("row {}: column {} is not numeric", i + 1, j + 1)))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Per-draw `prob`-quantile of the response for every observation,
/// indexed `[observation][draw]`.
pub fn quantile_draws(fit: &FitResult, newdata: &DataBlock, prob: f64) -> Result<Vec<Vec<f64>>> {
    let chain = fit.chain().ok_or_else(|| Error::State("interval widths need a posterior fit".into()))?;
    if chain.n_stored() == 0 {
        return Err(Error::State("chain has no stored samples".into()));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::config(format!("probability must lie in (0, 1), got {prob}")));
    }
    let spec = fit.model();
    let family = spec.family_spec();
    let designs = spec.parameters.iter().map(|p| build_design(newdata, &p.predictor)).collect::<Result<Vec<_>>>()?;
    let n = newdata.n();
    let k = spec.n_blocks();
    let mut out = vec![Vec::with_capacity(chain.n_stored()); n];
    let mut eta = vec![0.0; k];
    let mut par = vec![0.0; k];
    for d in 0..chain.n_stored() {
        let blocks = chain.draw(d);
        let etas: Vec<DVector<f64>> = designs.iter().zip(&blocks).map(|(x, b)| x * b).collect();
        for (i, row) in out.iter_mut().enumerate() {
            for j in 0..k {
                eta[j] = etas[j][i];
            }
            family.params_from_eta(&eta, &mut par);
            row.push(spec.family.quantile_unchecked(prob, &par));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRatio {
    pub obs_id: usize,
    pub width_a: f64,
    pub width_b: f64,
    pub ratio: f64,
    /// Set when both widths are zero and the ratio is 1 by convention.
    pub degenerate: bool,
}

/// Equal-tailed interval width of each row of `draws`.
pub fn interval_widths(draws: &[Vec<f64>], level: f64) -> Vec<f64> {
    draws
        .iter()
        .map(|row| {
            let mut s = row.clone();
            s.sort_by(f64::total_cmp);
            quantile_sorted(&s, (1.0 + level) / 2.0) - quantile_sorted(&s, (1.0 - level) / 2.0)
        })
        .collect()
}

/// Ratio of the 95% interval widths of the `prob`-quantile under two posterior fits.
pub fn ci_width_ratio(fit_a: &FitResult, fit_b: &FitResult, newdata: &DataBlock, prob: f64) -> Result<Vec<WidthRatio>> {
    let wa = interval_widths(&quantile_draws(fit_a, newdata, prob)?, 0.95);
    let wb = interval_widths(&quantile_draws(fit_b, newdata, prob)?, 0.95);
    Ok(wa
        .into_iter()
        .zip(wb)
        .enumerate()
        .map(|(i, (a, b))| {
            let degenerate = a == 0.0 && b == 0.0;
            let ratio = if degenerate { 1.0 } else { a / b };
            WidthRatio { obs_id: i + 1, width_a: a, width_b: b, ratio, degenerate }
        })
        .collect())
}

pub fn write_width_csv<W: Write>(out: W, rows: &[WidthRatio]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["obs_id", "ratio", "width_a", "width_b", "degenerate"])?;
    for r in rows {
        w.write_record([
            r.obs_id.to_string(),
            r.ratio.to_string(),
            r.width_a.to_string(),
            r.width_b.to_string(),
            r.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{Chain, SamplerSettings};
    use crate::mle::MleResult;
    use crate::model::{ModelSpec, ParameterSpec, PredictorSpec, PriorSpec};
    use crate::response::ResponseFunction;
    use crate::special::{ks_distance_normal, norm_cdf};

    fn perfect(n: usize) -> Vec<f64> {
        (1..=n).map(|i| norm_quantile((i as f64 - 0.5) / n as f64)).collect()
    }

    #[test]
    fn ad_oracles() {
        let a = ad_statistic(&perfect(100)).unwrap();
        assert!((a.a2 - 0.011_495_132_744).abs() < 1e-9, "{}", a.a2);
        let shifted: Vec<f64> = perfect(100).iter().map(|z| z + 2.0).collect();
        assert!(ad_statistic(&shifted).unwrap().a2 > 50.0);
        let half: Vec<f64> = perfect(100).iter().map(|z| z + 0.5).collect();
        assert!(ad_statistic(&half).unwrap().a2 > a.a2);

        // n = 2, z = {-1, 1}: -2 - (1/2)[ln P(-1) + ln(1-P(1)) + 3 (ln P(1) + ln(1-P(-1)))]
        let p = norm_cdf(1.0);
        let q = norm_cdf(-1.0);
        let expected = -2.0 - 0.5 * (q.ln() + q.ln() + 3.0 * (p.ln() + p.ln()));
        assert!((ad_statistic(&[1.0, -1.0]).unwrap().a2 - expected).abs() < 1e-12);
        assert!(ad_statistic(&[0.3]).is_err());
    }

    #[test]
    fn qq_table() {
        assert_eq!(qq_export(&[1.7]), vec![(0.0, 1.7)]);
        let r = vec![0.4, -1.2, 2.2, 0.0, -0.3];
        let t = qq_export(&r);
        assert!(t.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        let mut perm = r.clone();
        perm.reverse();
        assert_eq!(qq_export(&perm), t);

        let mut buf = Vec::new();
        write_qq_csv(&mut buf, &t).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("theoretical,observed\n"));
        let back = read_qq_csv(buf.as_slice()).unwrap();
        for (a, b) in back.iter().zip(&t) {
            assert!((a.0 - b.0).abs() <= 1e-12 && (a.1 - b.1).abs() <= 1e-12);
        }
    }

    fn normal_model() -> ModelSpec {
        ModelSpec::new(
            Family::NormalLs,
            vec![
                ParameterSpec {
                    predictor: PredictorSpec::intercept_only("mu"),
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
        .unwrap()
    }

    #[test]
    fn median_observation_has_zero_residual() {
        let m = normal_model();
        let fit = FitResult::Mle {
            result: MleResult::from_point(
                m.blocks_from_vectors(&[DVector::from_element(1, 2.5), DVector::from_element(1, 0.0)]),
            ),
            model: m,
        };
        let d = DataBlock::new(vec![2.5], vec![]).unwrap();
        assert_eq!(rqr_seeded(&fit, &d, 1).unwrap().residuals, vec![0.0]);
    }

    #[test]
    fn discrete_randomization_is_uniform() {
        // y = 0 under a small rate: u ~ Uniform(0, F(0)]
        let lambda = 0.2;
        let f0 = f64::exp(-lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> =
            (0..4000).map(|_| norm_cdf(rqr_one(Family::Poisson, 0.0, &[lambda], &mut rng)) / f0).collect();
        assert!(u.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
        assert!(crate::special::ks_distance_uniform(&u) < 1.36 / (4000f64).sqrt() * 1.5);
    }

    #[test]
    fn correctly_specified_residuals_are_normal() {
        use crate::families::FamilySpec;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [500usize, 2000] {
            let spec = FamilySpec::new(Family::Poisson, vec![ResponseFunction::softplus(1.0).unwrap()]).unwrap();
            let params: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut p = vec![0.0];
                    spec.params_from_eta(&[(i % 13) as f64 * 0.4 - 1.0], &mut p);
                    p
                })
                .collect();
            let y: Vec<f64> = params.iter().map(|p| Family::Poisson.sample(p, &mut rng)).collect();
            let r = rqr_from_params(Family::Poisson, &y, &params, &mut rng);
            assert!(ks_distance_normal(&r) < 1.36 / (n as f64).sqrt() * 1.5, "n={n}");
        }
    }

    fn posterior(model: &ModelSpec, draws: Vec<Vec<f64>>) -> FitResult {
        let n = draws.len();
        FitResult::Posterior {
            model: model.clone(),
            chain: Chain {
                parameters: vec!["mu".into(), "sigma".into()],
                names: vec![vec!["(Intercept)".into()], vec!["(Intercept)".into()]],
                samples: vec![draws.iter().map(|d| vec![d[0]]).collect(), draws.iter().map(|d| vec![d[1]]).collect()],
                loglik: vec![0.0; n],
                settings: SamplerSettings { iterations: n, burn_in: 0, thin: 1, seed: 0 },
                accepted: vec![n, n],
                fallbacks: vec![0, 0],
            },
        }
    }

    #[test]
    fn width_ratios() {
        let m = normal_model();
        let a = posterior(&m, (0..50).map(|i| vec![i as f64 * 0.01, (i as f64 * 0.003).sin()]).collect());
        let nd = DataBlock::covariates(3, vec![]).unwrap();
        let r = ci_width_ratio(&a, &a, &nd, 0.9).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|w| w.ratio == 1.0 && !w.degenerate));

        let one = posterior(&m, vec![vec![0.2, 0.1]]);
        let r = ci_width_ratio(&one, &one, &nd, 0.9).unwrap();
        assert!(r.iter().all(|w| w.ratio == 1.0 && w.degenerate && w.width_a == 0.0));

        let mle = FitResult::Mle {
            model: m.clone(),
            result: MleResult::from_point(m.blocks_from_vectors(&[DVector::zeros(1), DVector::zeros(1)])),
        };
        assert!(ci_width_ratio(&mle, &a, &nd, 0.9).is_err());

        let mut buf = Vec::new();
        write_width_csv(&mut buf, &r).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("obs_id,ratio,"));
    }
}
