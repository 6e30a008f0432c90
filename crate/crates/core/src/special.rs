//! Special functions not covered by `statrs`, plus standard-normal helpers.

use std::f64::consts::SQRT_2;

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function `psi'(x)` for `x > 0`.
///
/// Shifts the argument above 10 with the recurrence `psi'(x) = psi'(x+1) + 1/x^2`
/// and finishes with the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9) + 5/(66x^11) - 691/(2730x^13)
    let series = 1.0 / x
        + z / 2.0
        + z / x
            * (1.0 / 6.0
                + z * (-1.0 / 30.0 + z * (1.0 / 42.0 + z * (-1.0 / 30.0 + z * (5.0 / 66.0 - z * 691.0 / 2730.0)))));
    acc + series
}

/// `psi(y + theta) - psi(theta)` for a non-negative integer `y`.
pub fn digamma_shift(theta: f64, y: f64) -> f64 {
    if y < 64.0 {
        let k = y as u64;
        (0..k).map(|j| 1.0 / (theta + j as f64)).sum()
    } else {
        digamma(y + theta) - digamma(theta)
    }
}

/// `psi'(y + theta) - psi'(theta)` for a non-negative integer `y`.
pub fn trigamma_shift(theta: f64, y: f64) -> f64 {
    if y < 64.0 {
        let k = y as u64;
        -(0..k).map(|j| 1.0 / ((theta + j as f64).powi(2))).sum::<f64>()
    } else {
        trigamma(y + theta) - trigamma(theta)
    }
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / SQRT_2)
}

/// `ln Phi(z)`, accurate in the lower tail.
pub fn norm_log_cdf(z: f64) -> f64 {
    if z > -30.0 {
        norm_cdf(z).ln()
    } else {
        // Mills-ratio expansion for the far tail
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Standard normal quantile.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Kolmogorov-Smirnov distance between a sample and the standard normal.
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let mut z: Vec<f64> = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = norm_cdf(v);
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (f - lo).abs().max((hi - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1).
pub fn ks_distance_uniform(sample: &[f64]) -> f64 {
    let mut u: Vec<f64> = sample.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (v - lo).abs().max((hi - v).abs())
        })
        .fold(0.0, f64::max)
}

/// Type-7 empirical quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigamma_reference_values() {
        // psi'(1) = pi^2/6, psi'(1/2) = pi^2/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-13);
        // recurrence
        for x in [0.3, 2.2, 7.5, 40.0] {
            let lhs = trigamma(x);
            let rhs = trigamma(x + 1.0) + 1.0 / (x * x);
            assert!((lhs - rhs).abs() < 1e-13 * lhs.max(1.0));
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for x in [0.7, 1.9, 5.0, 33.0, 250.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(((fd - trigamma(x)) / trigamma(x)).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn shifted_sums_agree_with_direct_form() {
        for &theta in &[0.4, 3.0, 17.0] {
            for &y in &[0.0, 1.0, 5.0, 63.0] {
                let a = digamma_shift(theta, y);
                let b = digamma(y + theta) - digamma(theta);
                assert!((a - b).abs() < 1e-11, "theta={theta} y={y}");
                let a = trigamma_shift(theta, y);
                let b = trigamma(y + theta) - trigamma(theta);
                assert!((a - b).abs() < 1e-11, "theta={theta} y={y}");
            }
        }
    }

    #[test]
    fn normal_helpers() {
        assert_eq!(norm_quantile(0.5), 0.0);
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        for z in [-8.0, -2.0, 0.0, 1.5, 4.0] {
            assert!((norm_quantile(norm_cdf(z)) - z).abs() < 1e-9);
        }
        assert!((norm_log_cdf(-1.0) - norm_cdf(-1.0).ln()).abs() < 1e-14);
        // continuity across the tail switch
        let a = norm_cdf(-29.999).ln();
        let b = norm_log_cdf(-30.001);
        assert!((a - b).abs() < 0.1);
    }

    #[test]
    fn type7_quantile() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_sorted(&xs, 0.025) - 3.475).abs() < 1e-12);
        assert!((quantile_sorted(&xs, 0.975) - 97.525).abs() < 1e-12);
        assert_eq!(quantile_sorted(&[4.0], 0.3), 4.0);
    }
}
