//! Extensions that leave the span of the initial ensemble: variance
//! inflation, localization and randomized search.

pub mod diffusion;
pub mod inflation;
pub mod localization;
pub mod pcn;

pub use diffusion::{
    diffusion_limit_run, diffusion_limit_step, diffusion_limit_until, implicit_operator,
};
pub use inflation::{inflated_drift, InflatedDrift, InflationConfig};
pub use localization::{localization_kernel, localized_cov, LocalizationConfig, LocalizedDrift};
pub use pcn::{pcn_step, randomized_search_run, randomized_search_until, PcnConfig, PcnOutcome};
