//! Distributional regression with softplus response functions.
//!
//! Models assign each distribution parameter its own linear predictor and a
//! response function (identity, exponential, softplus or logistic). Fitting is
//! by block-wise Fisher scoring ([`fit_mle`]) or Metropolis-Hastings with IWLS
//! proposals ([`run_chain`]).

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod families;
pub mod io;
pub mod mcmc;
pub mod mle;
pub mod model;
pub mod response;
pub mod softplus;
pub mod special;

pub use error::{Error, Result};
pub use families::{Family, FamilySpec, InfoKind};
pub use mcmc::{dic, run_chain, summarize, Chain, DicResult, PosteriorSummary, SamplerSettings};
pub use mle::{fit_mle, init_coefficients, MleResult};
pub use model::{
    build_design, linear_predictor, predict, CoefficientBlock, DataBlock, FitResult, ModelSpec, ParameterSpec,
    Prediction, PredictorSpec, PriorSpec,
};
pub use response::ResponseFunction;
pub use softplus::SoftplusParams;
