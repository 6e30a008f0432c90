//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- c05 c06`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softreg::diagnostics::rqr_seeded;
use softreg::experiments::{
    run_coverage_study, run_dic_selection_study, run_gpd_tail_study, wilson_interval, DicSelectionSpec, GpdTailSpec,
    ScenarioSpec,
};
use softreg::families::{loglik, score_and_info, Family, FamilySpec, InfoKind};
use softreg::io::read_csv;
use softreg::mcmc::{dic, run_chain, Chain, SamplerSettings};
use softreg::model::{build_design, DataBlock, FitResult, ModelSpec, ParameterSpec, PredictorSpec, PriorSpec};
use softreg::response::{ResponseFunction, Support};
use softreg::softplus::{linear_threshold, LinearityQuery, SoftplusParams};
use softreg::special::ks_distance_normal;

struct Check {
    pass: bool,
    detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    /// Hard wall-clock limit; `None` when the budget is only a target.
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn sp(a: f64) -> SoftplusParams {
    SoftplusParams::new(a).unwrap()
}

fn c01_stability() -> Check {
    let p = sp(10.0);
    let v = p.value(9.0);
    let delta = p.rect_gap(9.0);
    let mut ok = v == 9.0 + delta && delta > 0.0 && delta < 1e-39;
    let mut detail = format!("softplus_10(9) = {v:e}, gap = {delta:e}");
    for a in [0.1, 1.0, 10.0, 100.0] {
        let p = sp(a);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=200_000 {
            let x = -1e6 + i as f64 * 10.0;
            let y = p.value(x);
            if !y.is_finite() || y < prev || y < 0.0 {
                ok = false;
                detail.push_str(&format!("; a={a} fails at x={x}"));
                break;
            }
            prev = y;
        }
        for x in [-1e6, -745.2, -1e-300, 0.0, 1e-300, 709.8, 1e6] {
            ok &= p.value(x).is_finite();
        }
    }
    Check::new(ok, detail)
}

fn c02_rectifier_gap() -> Check {
    let mut ok = true;
    let mut detail = String::new();
    for a in [0.1, 1.0, 5.0, 10.0, 100.0] {
        let p = sp(a);
        let bound = std::f64::consts::LN_2 / a;
        let (mut best, mut arg) = (f64::NEG_INFINITY, f64::NAN);
        for i in -50_000i64..=50_000 {
            let x = i as f64 * 1e-3;
            let gap = p.value(x) - x.max(0.0);
            if gap > best {
                best = gap;
                arg = x;
            }
        }
        let good = arg == 0.0 && (best - bound).abs() <= 1e-12 && best <= bound;
        ok &= good;
        detail.push_str(&format!("a={a}: max {best:.15} at {arg} (ln2/a {bound:.15}); "));
    }
    Check::new(ok, detail)
}

fn c03_linear_thresholds() -> Check {
    let t1 = linear_threshold(&LinearityQuery::new(sp(5.0), 0.53, 0.05).unwrap());
    let t2 = linear_threshold(&LinearityQuery::new(sp(5.0), -0.54, 0.05).unwrap());
    Check::new((t1 - 0.37).abs() <= 0.01 && (t2 - 0.91).abs() <= 0.01, format!("T(0.53) = {t1:.4}, T(-0.54) = {t2:.4}"))
}

fn responses_for(s: Support) -> Vec<ResponseFunction> {
    match s {
        Support::Real => vec![ResponseFunction::Identity],
        Support::Positive => vec![
            ResponseFunction::Exponential,
            ResponseFunction::softplus(1.0).unwrap(),
            ResponseFunction::softplus(5.0).unwrap(),
        ],
        Support::UnitInterval => vec![ResponseFunction::Logistic],
    }
}

fn combos(family: Family) -> Vec<Vec<ResponseFunction>> {
    let mut out: Vec<Vec<ResponseFunction>> = vec![vec![]];
    for s in family.supports() {
        let mut next = Vec::new();
        for prefix in &out {
            for h in responses_for(*s) {
                let mut v = prefix.clone();
                v.push(h);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Typical parameter value per family parameter, used to centre the intercepts.
fn centre(family: Family, k: usize) -> f64 {
    match (family, k) {
        (Family::Poisson, _) => 4.0,
        (Family::Negbin | Family::ZaNegbin, 0) => 3.0,
        (Family::Negbin, _) | (Family::ZaNegbin, 1) => 2.0,
        (Family::ZaNegbin, _) => 0.3,
        (Family::NormalLs, 0) => 1.0,
        (Family::NormalLs, _) => 1.5,
        (Family::Gpd, 0) => 1.0,
        (Family::Gpd, _) => 0.3,
    }
}

fn c04_gradients() -> Check {
    let families = [Family::Poisson, Family::Negbin, Family::ZaNegbin, Family::NormalLs, Family::Gpd];
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut cases = 0;
    for family in families {
        for responses in combos(family) {
            let spec = FamilySpec::new(family, responses.clone()).unwrap();
            for seed in 0..5u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let n = 20;
                let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let data = DataBlock::new(vec![0.0; n], vec![("x1".into(), x1), ("x2".into(), x2)]).unwrap();
                let pred = PredictorSpec::new("p", true, &["x1", "x2"]);
                let x = build_design(&data, &pred).unwrap();
                let designs: Vec<DMatrix<f64>> = vec![x.clone(); family.n_params()];
                let blocks: Vec<DVector<f64>> = responses
                    .iter()
                    .enumerate()
                    .map(|(k, h)| {
                        let b0 = h.inverse(centre(family, k)).unwrap();
                        DVector::from_vec(vec![b0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)])
                    })
                    .collect();
                let etas: Vec<DVector<f64>> = designs.iter().zip(&blocks).map(|(d, b)| d * b).collect();
                let y: Vec<f64> = (0..n)
                    .map(|i| {
                        let eta: Vec<f64> = etas.iter().map(|e| e[i]).collect();
                        let mut par = vec![0.0; eta.len()];
                        spec.params_from_eta(&eta, &mut par);
                        family.sample(&par, &mut rng)
                    })
                    .collect();
                for k in 0..family.n_params() {
                    let si =
                        score_and_info(&spec, &y, &designs, &blocks, k, &PriorSpec::Flat, InfoKind::Observed).unwrap();
                    for j in 0..blocks[k].len() {
                        let h = 1e-6 * blocks[k][j].abs().max(1.0);
                        let mut up = blocks.clone();
                        up[k][j] += h;
                        let mut dn = blocks.clone();
                        dn[k][j] -= h;
                        let fd = (loglik(&spec, &y, &designs, &up) - loglik(&spec, &y, &designs, &dn)) / (2.0 * h);
                        let rel = (si.gradient[j] - fd).abs() / fd.abs().max(1.0);
                        cases += 1;
                        if rel > worst {
                            worst = rel;
                            worst_at = format!(
                                "{} [{}] seed {seed} block {k} coef {j}",
                                family.name(),
                                responses.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
                            );
                        }
                    }
                }
            }
        }
    }
    Check::new(worst < 1e-4, format!("{cases} partial derivatives, worst relative error {worst:.2e} at {worst_at}"))
}

fn c05_coverage() -> Check {
    let spec = ScenarioSpec::new(ResponseFunction::softplus(1.0).unwrap(), 1000, 200, 20_240_501);
    let rep = run_coverage_study(&spec).unwrap();
    let mut ok = rep.completed == 200;
    let mut detail = format!("{} of {} replications; ", rep.completed, rep.replications);
    for c in &rep.coefficients {
        let good =
            (0.92..=0.98).contains(&c.coverage95) && (0.74..=0.86).contains(&c.coverage80) && c.bias.abs() < 0.05;
        ok &= good;
        detail.push_str(&format!(
            "{}: cov95 {:.3} cov80 {:.3} bias {:+.4}; ",
            c.coefficient, c.coverage95, c.coverage80, c.bias
        ));
    }
    Check::new(ok, detail)
}

fn c06_dic_selection() -> Check {
    let run = |n: usize| {
        let spec = DicSelectionSpec {
            scenario: ScenarioSpec::new(ResponseFunction::Exponential, n, 100, 777 + n as u64),
            alternative: ResponseFunction::softplus(5.0).unwrap(),
        };
        run_dic_selection_study(&spec).unwrap()
    };
    let small = run(200);
    let large = run(5000);
    let hits = |r: &softreg::experiments::DicSelectionReport| r.records.iter().filter(|d| d.difference() > 0.0).count();
    let (lo, hi) = wilson_interval(hits(&large), large.completed, 1.96);
    let r_small = small.rates[0].rate;
    let r_large = large.rates[0].rate;
    Check::new(
        r_large > r_small && lo > 0.8 && small.completed == 100 && large.completed == 100,
        format!(
            "rate(t=0) n=200: {r_small:.2}, n=5000: {r_large:.2} (95% CI {lo:.3}-{hi:.3}); rates by threshold n=200 {:?}, n=5000 {:?}",
            small.rates.iter().map(|r| r.rate).collect::<Vec<_>>(),
            large.rates.iter().map(|r| r.rate).collect::<Vec<_>>()
        ),
    )
}

fn crab_path() -> PathBuf {
    std::env::var_os("SOFTREG_CRABS_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/horseshoe_crabs.csv"))
}

fn crab_model(h: ResponseFunction) -> ModelSpec {
    ModelSpec::new(
        Family::Negbin,
        vec![
            ParameterSpec {
                predictor: PredictorSpec::new("mu", true, &["width", "color"]),
                response: h,
                prior: PriorSpec::Flat,
            },
            ParameterSpec {
                predictor: PredictorSpec::intercept_only("theta"),
                response: ResponseFunction::Exponential,
                prior: PriorSpec::Flat,
            },
        ],
    )
    .unwrap()
}

fn c07_crabs() -> Check {
    let path = crab_path();
    let data = match read_csv(&path, Some("satellites")) {
        Ok(d) => d,
        Err(e) => return Check::new(false, format!("dataset unavailable ({e}); set SOFTREG_CRABS_CSV")),
    };
    let settings = SamplerSettings { iterations: 12_000, burn_in: 2_000, thin: 1, seed: 41 };
    let m_sp = crab_model(ResponseFunction::softplus(5.0).unwrap());
    let m_ex = crab_model(ResponseFunction::Exponential);
    let c_sp = run_chain(&m_sp, &data, &settings, None).unwrap();
    let c_ex = run_chain(&m_ex, &data, &SamplerSettings { seed: 42, ..settings }, None).unwrap();
    let d_sp = dic(&c_sp, &m_sp, &data).unwrap().dic;
    let d_ex = dic(&c_ex, &m_ex, &data).unwrap().dic;
    let mean = c_sp.posterior_mean();
    let (width, color) = (mean[0][1], mean[0][2]);
    let x = build_design(&data, &m_sp.parameters[0].predictor).unwrap();
    let eta = &x * &mean[0];
    let share = eta.iter().filter(|&&e| e > 0.37).count() as f64 / eta.len() as f64;
    Check::new(
        d_sp < d_ex && (width - 0.53).abs() <= 0.10 && (color + 0.54).abs() <= 0.20 && share > 0.98,
        format!(
            "n={} DIC softplus {d_sp:.1} vs exp {d_ex:.1}; width {width:.3}, color {color:.3}; share eta > 0.37: {share:.3}",
            data.n()
        ),
    )
}

fn c08_dic_identity() -> Check {
    let y = vec![3.0, 0.0, 5.0, 2.0, 9.0, 4.0, 1.0, 7.0];
    let data = DataBlock::new(y, vec![]).unwrap();
    let m = ModelSpec::single(
        Family::Poisson,
        PredictorSpec::intercept_only("lambda"),
        ResponseFunction::softplus(2.0).unwrap(),
    )
    .unwrap();
    let chain =
        run_chain(&m, &data, &SamplerSettings { iterations: 2_000, burn_in: 200, thin: 1, seed: 8 }, None).unwrap();
    let r = dic(&chain, &m, &data).unwrap();
    let identity = r.dic - (2.0 * r.mean_deviance - r.deviance_at_mean);
    let one: Chain =
        run_chain(&m, &data, &SamplerSettings { iterations: 30, burn_in: 29, thin: 1, seed: 8 }, None).unwrap();
    let r1 = dic(&one, &m, &data).unwrap();
    Check::new(
        identity == 0.0 && one.n_stored() == 1 && r1.p_d == 0.0 && r1.dic == r1.deviance_at_mean,
        format!("DIC - (2 Dbar - D(theta bar)) = {identity:e}; one-sample pD = {:e}", r1.p_d),
    )
}

fn c09_rqr() -> Check {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let settings = SamplerSettings { iterations: 4_000, burn_in: 1_000, thin: 1, seed: 91 };

    let y_norm: Vec<f64> =
        x.iter().map(|&v| Family::NormalLs.sample(&[1.0 + 2.0 * v, (0.2 + 0.5 * v).exp()], &mut rng)).collect();
    let d_norm = DataBlock::new(y_norm, vec![("x".into(), x.clone())]).unwrap();
    let m_norm = ModelSpec::new(
        Family::NormalLs,
        vec![
            ParameterSpec {
                predictor: PredictorSpec::new("mu", true, &["x"]),
                response: ResponseFunction::Identity,
                prior: PriorSpec::Flat,
            },
            ParameterSpec {
                predictor: PredictorSpec::new("sigma", true, &["x"]),
                response: ResponseFunction::Exponential,
                prior: PriorSpec::Flat,
            },
        ],
    )
    .unwrap();

    let h = ResponseFunction::softplus(1.0).unwrap();
    let y_pois: Vec<f64> = x.iter().map(|&v| Family::Poisson.sample(&[h.value(1.0 + 1.5 * v)], &mut rng)).collect();
    let d_pois = DataBlock::new(y_pois, vec![("x".into(), x)]).unwrap();
    let m_pois = ModelSpec::single(Family::Poisson, PredictorSpec::new("lambda", true, &["x"]), h).unwrap();

    let mut ok = true;
    let mut detail = String::new();
    for (name, m, d, seed) in [("normal_ls", &m_norm, &d_norm, 5u64), ("poisson", &m_pois, &d_pois, 6)] {
        let chain = run_chain(m, d, &settings, None).unwrap();
        let fit = FitResult::Posterior { model: m.clone(), chain };
        let r = rqr_seeded(&fit, d, seed).unwrap();
        let ks = ks_distance_normal(&r.residuals);
        ok &= ks < 0.05;
        detail.push_str(&format!("{name} KS {ks:.4}; "));
    }
    Check::new(ok, detail)
}

fn c10_gpd_tail() -> Check {
    let spec = GpdTailSpec::new(2000, 20, 31_337);
    let rep = run_gpd_tail_study(&spec).unwrap();
    Check::new(
        rep.completed == 20 && rep.smaller_max_share >= 0.7 && rep.pooled_median_ratio < 1.0,
        format!(
            "{} of 20 replications; softplus max quantile smaller in {:.0}%; pooled top-decile median width ratio {:.3}",
            rep.completed,
            100.0 * rep.smaller_max_share,
            rep.pooled_median_ratio
        ),
    )
}

fn main() {
    let criteria = [
        Criterion { id: "c01", name: "softplus stability", limit: Some(Duration::from_secs(1)), run: c01_stability },
        Criterion {
            id: "c02",
            name: "rectifier gap bound",
            limit: Some(Duration::from_secs(1)),
            run: c02_rectifier_gap,
        },
        Criterion {
            id: "c03",
            name: "linearity thresholds",
            limit: Some(Duration::from_secs(1)),
            run: c03_linear_thresholds,
        },
        Criterion {
            id: "c04",
            name: "score vs finite differences",
            limit: Some(Duration::from_secs(10)),
            run: c04_gradients,
        },
        Criterion { id: "c05", name: "coverage study", limit: None, run: c05_coverage },
        Criterion { id: "c06", name: "DIC selection study", limit: None, run: c06_dic_selection },
        Criterion {
            id: "c07",
            name: "horseshoe crab golden test",
            limit: Some(Duration::from_secs(300)),
            run: c07_crabs,
        },
        Criterion { id: "c08", name: "DIC identity", limit: Some(Duration::from_secs(1)), run: c08_dic_identity },
        Criterion { id: "c09", name: "RQR calibration", limit: Some(Duration::from_secs(60)), run: c09_rqr },
        Criterion { id: "c10", name: "GPD tail study", limit: Some(Duration::from_secs(1200)), run: c10_gpd_tail },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.id.contains(f.as_str()))) {
        let start = Instant::now();
        let check = match std::panic::catch_unwind(c.run) {
            Ok(check) => check,
            Err(_) => Check::new(false, "panicked"),
        };
        let secs = start.elapsed();
        let in_time = c.limit.is_none_or(|l| secs <= l);
        let pass = check.pass && in_time;
        failed += usize::from(!pass);
        let budget = match c.limit {
            Some(l) => format!("limit {:.0}s", l.as_secs_f64()),
            None => "no hard limit".to_string(),
        };
        println!(
            "{} {} {}: {} [{:.2}s, {budget}]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            check.detail,
            secs.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
