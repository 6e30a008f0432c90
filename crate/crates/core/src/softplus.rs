//! Generalized softplus `log(1 + exp(a x)) / a` and friends.
//!
//! Every kernel here evaluates `exp` only on non-positive arguments, so the
//! functions stay finite for any finite 64-bit input. In 32-bit arithmetic the
//! naive form already overflows at `a x > 89`; the split forms below avoid
//! that as well, but only the 64-bit path is tested.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sharpness parameter of the generalized softplus function.
///
/// Larger values follow the rectifier `max(0, x)` more closely; the largest
/// gap, at `x = 0`, is `ln(2) / a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SoftplusParams {
    a: f64,
}

impl SoftplusParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::domain(format!("softplus parameter must be finite and > 0, got {a}")));
        }
        Ok(Self { a })
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    /// `max(0, x) + log1p(exp(-|a x|)) / a`. NaN propagates.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        x.max(0.0) + (-(self.a * x).abs()).exp().ln_1p() / self.a
    }

    /// Inverse on `(0, inf)`; branches on `a y` against `ln 2`.
    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        let ay = self.a * y;
        if ay > LN_2 {
            y + (-(-ay).exp()).ln_1p() / self.a
        } else {
            ay.exp_m1().ln() / self.a
        }
    }

    /// First derivative, the logistic function of `a x`.
    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        sigmoid(self.a * x)
    }

    /// Second derivative `a s (1 - s)` with `s = sigmoid(a x)`.
    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        let ax = self.a * x;
        self.a * sigmoid(ax) * sigmoid(-ax)
    }

    /// `softplus(x) - max(0, x)`, in `(0, ln(2)/a]`.
    #[inline]
    pub fn rect_gap(&self, x: f64) -> f64 {
        (-(self.a * x).abs()).exp().ln_1p() / self.a
    }
}

impl TryFrom<f64> for SoftplusParams {
    type Error = Error;

    fn try_from(a: f64) -> Result<Self> {
        SoftplusParams::new(a)
    }
}

impl From<SoftplusParams> for f64 {
    fn from(p: SoftplusParams) -> f64 {
        p.a
    }
}

/// Stable logistic function `1 / (1 + exp(-x))`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be finite, got {x}")))
    }
}

pub fn softplus(p: &SoftplusParams, x: f64) -> Result<f64> {
    check_finite(x, "softplus argument")?;
    Ok(p.value(x))
}

pub fn softplus_inv(p: &SoftplusParams, y: f64) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::domain(format!("softplus inverse needs a finite positive argument, got {y}")));
    }
    Ok(p.inverse(y))
}

pub fn softplus_d1(p: &SoftplusParams, x: f64) -> Result<f64> {
    check_finite(x, "softplus argument")?;
    Ok(p.d1(x))
}

pub fn softplus_d2(p: &SoftplusParams, x: f64) -> Result<f64> {
    check_finite(x, "softplus argument")?;
    Ok(p.d2(x))
}

pub fn rect_gap(p: &SoftplusParams, x: f64) -> Result<f64> {
    check_finite(x, "softplus argument")?;
    Ok(p.rect_gap(x))
}

/// Relative error of reading a predictor change `x1 -> x2` one-to-one on the
/// softplus scale: `1 - (softplus(x2) - softplus(x1)) / (x2 - x1)`.
pub fn rerr(p: &SoftplusParams, x1: f64, x2: f64) -> Result<f64> {
    check_finite(x1, "x1")?;
    check_finite(x2, "x2")?;
    if x1 == x2 {
        return Err(Error::domain("relative error is undefined for coincident points"));
    }
    Ok(1.0 - (p.value(x2) - p.value(x1)) / (x2 - x1))
}

/// Limit of [`rerr`] as `x2 -> x1`.
pub fn point_rerr(p: &SoftplusParams, x: f64) -> Result<f64> {
    check_finite(x, "x")?;
    Ok(sigmoid(-p.a() * x))
}

/// Default acceptable relative error for the linear-part rule.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Input to [`linear_threshold`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearityQuery {
    pub params: SoftplusParams,
    /// Size of the predictor change (a coefficient or contrast).
    pub gamma: f64,
    /// Acceptable relative error.
    pub alpha: f64,
}

impl LinearityQuery {
    pub fn new(params: SoftplusParams, gamma: f64, alpha: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma != 0.0) {
            return Err(Error::domain(format!("gamma must be finite and nonzero, got {gamma}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { params, gamma, alpha })
    }
}

const THRESHOLD_TOL: f64 = 1e-8;

/// Smallest `T` with `rerr(T, T + gamma) <= alpha`.
///
/// `rerr(T, T + gamma)` decreases in `T` from 1 to 0, so bisection on a bracket
/// that straddles `alpha` finds the unique crossing.
pub fn linear_threshold(q: &LinearityQuery) -> f64 {
    let p = &q.params;
    let g = q.gamma;
    let f = |t: f64| 1.0 - (p.value(t + g) - p.value(t)) / g;

    let mut lo = -10.0 / p.a() - g.abs();
    let mut hi = 50.0 / p.a() + g.abs();
    let mut width = hi - lo;
    while f(hi) > q.alpha {
        hi += width;
        width *= 2.0;
    }
    width = hi - lo;
    while f(lo) <= q.alpha {
        lo -= width;
        width *= 2.0;
    }

    while hi - lo >= THRESHOLD_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= q.alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Two-argument log-sum-exp, `log(e^x + e^y)`, without overflow.
pub fn lse2(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    x.max(y) + (-(x - y).abs()).exp().ln_1p()
}
