//! Response functions `h` mapping a linear predictor onto a parameter's support.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softplus::{sigmoid, SoftplusParams};

/// Parameter support a response function maps onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Real,
    Positive,
    UnitInterval,
}

/// A strictly increasing bijection from the real line onto a parameter support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseFunction {
    Identity,
    #[serde(alias = "exp")]
    Exponential,
    Softplus {
        a: SoftplusParams,
    },
    /// Logistic response for probabilities (hurdle zero part).
    Logistic,
}

impl ResponseFunction {
    pub fn softplus(a: f64) -> Result<Self> {
        Ok(ResponseFunction::Softplus { a: SoftplusParams::new(a)? })
    }

    pub fn support(&self) -> Support {
        match self {
            ResponseFunction::Identity => Support::Real,
            ResponseFunction::Exponential | ResponseFunction::Softplus { .. } => Support::Positive,
            ResponseFunction::Logistic => Support::UnitInterval,
        }
    }

    #[inline]
    pub fn value(&self, eta: f64) -> f64 {
        match self {
            ResponseFunction::Identity => eta,
            ResponseFunction::Exponential => eta.exp(),
            ResponseFunction::Softplus { a } => a.value(eta),
            ResponseFunction::Logistic => sigmoid(eta),
        }
    }

    /// `h'(eta)`.
    #[inline]
    pub fn d1(&self, eta: f64) -> f64 {
        match self {
            ResponseFunction::Identity => 1.0,
            ResponseFunction::Exponential => eta.exp(),
            ResponseFunction::Softplus { a } => a.d1(eta),
            ResponseFunction::Logistic => sigmoid(eta) * sigmoid(-eta),
        }
    }

    /// `h''(eta)`.
    #[inline]
    pub fn d2(&self, eta: f64) -> f64 {
        match self {
            ResponseFunction::Identity => 0.0,
            ResponseFunction::Exponential => eta.exp(),
            ResponseFunction::Softplus { a } => a.d2(eta),
            ResponseFunction::Logistic => {
                let s = sigmoid(eta);
                let t = sigmoid(-eta);
                s * t * (t - s)
            }
        }
    }

    /// `(h, h', h'')` in one evaluation.
    #[inline]
    pub fn eval3(&self, eta: f64) -> (f64, f64, f64) {
        match self {
            ResponseFunction::Identity => (eta, 1.0, 0.0),
            ResponseFunction::Exponential => {
                let e = eta.exp();
                (e, e, e)
            }
            ResponseFunction::Softplus { a } => {
                let ax = a.a() * eta;
                let e = (-ax.abs()).exp();
                let value = eta.max(0.0) + e.ln_1p() / a.a();
                let r = 1.0 / (1.0 + e);
                let (s, t) = if ax >= 0.0 { (r, e * r) } else { (e * r, r) };
                (value, s, a.a() * s * t)
            }
            ResponseFunction::Logistic => {
                let s = sigmoid(eta);
                let t = sigmoid(-eta);
                (s, s * t, s * t * (t - s))
            }
        }
    }

    /// Link function `h^{-1}(theta)`.
    pub fn inverse(&self, theta: f64) -> Result<f64> {
        let ok = match self.support() {
            Support::Real => theta.is_finite(),
            Support::Positive => theta.is_finite() && theta > 0.0,
            Support::UnitInterval => theta > 0.0 && theta < 1.0,
        };
        if !ok {
            return Err(Error::domain(format!("{theta} is outside the range of the {self} response")));
        }
        Ok(match self {
            ResponseFunction::Identity => theta,
            ResponseFunction::Exponential => theta.ln(),
            ResponseFunction::Softplus { a } => a.inverse(theta),
            ResponseFunction::Logistic => (theta / (1.0 - theta)).ln(),
        })
    }
}

impl fmt::Display for ResponseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseFunction::Identity => write!(f, "identity"),
            ResponseFunction::Exponential => write!(f, "exp"),
            ResponseFunction::Softplus { a } => write!(f, "softplus({})", a.a()),
            ResponseFunction::Logistic => write!(f, "logistic"),
        }
    }
}
