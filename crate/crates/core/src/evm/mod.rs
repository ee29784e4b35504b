//! Extreme value machine with distance multipliers, greedy set-cover
//! reduction and incremental class addition against a negative bank.

mod model;
mod weibull;

pub use model::{
    compute_margins, greedy_cover, psi_inclusion, reduce_model, EvmClass, EvmConfig, EvmModel, ExtremeVector,
    FeatureBank, LcEvmLearner,
};
pub use weibull::{fit_weibull, weibull_log_likelihood, WeibullParams, DEFAULT_KAPPA_MAX, MARGIN_FLOOR};
