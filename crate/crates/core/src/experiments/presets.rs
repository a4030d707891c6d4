//! Named experiment configurations shipped with the crate.

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        /// `(name, TOML text)` pairs.
        pub const PRESETS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../../presets/", $name, ".toml"))),)*
        ];
    };
}

presets!(
    "linear1d_adaptive_j5",
    "linear1d_adaptive_misfit_j5",
    "linear1d_flow_j10",
    "linear1d_flow_j5",
    "linear1d_flow_j50",
    "linear1d_inflation_j5",
    "linear1d_inflation_j50",
    "linear1d_localization_j5",
    "linear1d_localization_j50",
    "linear1d_noisy_bayesian_j5",
    "linear1d_noisy_discrepancy_j5",
    "linear1d_noisy_j5",
    "linear1d_perturbed_obs_j5",
    "linear1d_randomized_search_j5",
    "linear1d_small_noise_j5",
    "nonlinear2d_j5",
    "nonlinear2d_j50",
);

pub fn list_presets() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
