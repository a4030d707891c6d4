//! Declarative experiment descriptions, read from TOML.

use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::flow::Scheme;
use crate::model::SigmaMode;

/// One experiment: forward problem, data noise, initial ensemble, algorithm,
/// time stepping and stopping rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Overrides the ensemble and algorithm seeds; truth and data noise keep
    /// their own seeds so the inverse problem stays fixed.
    #[serde(default)]
    pub seed: Option<u64>,
    pub problem: ProblemConfig,
    /// Absent means noise-free data with `Gamma = I`.
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    pub ensemble: EnsembleConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub stopping: StoppingConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `-p'' + p = u` on `(0, pi)`, 15 point observations, prior `beta (-d^2/dx^2)^-1`.
    Linear1d {
        #[serde(default = "default_cells_1d")]
        n_cells: usize,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_truth_seed")]
        truth_seed: u64,
    },
    /// `-div(exp(u) grad p) = f` on `(-1, 1)^2`, 49 observations, prior `(-Laplacian)^-2`.
    Nonlinear2d {
        #[serde(default = "default_cells_2d")]
        n_cells: usize,
        #[serde(default = "default_source")]
        source: f64,
        #[serde(default = "default_truth_seed")]
        truth_seed: u64,
    },
}

impl ProblemConfig {
    pub fn is_linear(&self) -> bool {
        matches!(self, ProblemConfig::Linear1d { .. })
    }

    pub fn truth_seed(&self) -> u64 {
        match self {
            ProblemConfig::Linear1d { truth_seed, .. }
            | ProblemConfig::Nonlinear2d { truth_seed, .. } => *truth_seed,
        }
    }
}

/// Data `y = G(u_dagger) + eta`, `eta ~ N(0, gamma_std^2 I)`; `Gamma = gamma_std^2 I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub gamma_std: f64,
    #[serde(default = "default_noise_seed")]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Member `j` is the scaled `j`-th prior mode.
    Kl,
    /// KL ensemble with member 1 replaced so its residual to the truth lies in
    /// the span of the deviations.
    AdaptiveResidual,
    /// As `AdaptiveResidual` with the minimum-norm data preimage as target.
    AdaptiveMisfit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub size: usize,
    #[serde(default = "default_init")]
    pub init: InitKind,
    #[serde(default = "default_ensemble_seed")]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// pCN move on every member followed by an EnKF step.
    Discrete,
    /// Small-step limit: Ornstein-Uhlenbeck half step then an implicit flow step.
    DiffusionLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Discrete {},
    Flow {},
    Inflation {
        alpha: f64,
    },
    Localization {
        #[serde(default = "default_r_exponent")]
        r_exponent: u32,
    },
    RandomizedSearch {
        #[serde(default = "default_search_mode")]
        mode: SearchMode,
        /// pCN step parameter, used by the discrete mode.
        #[serde(default = "default_pcn_beta")]
        pcn_beta: f64,
    },
}

impl AlgorithmConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmConfig::Discrete {} => "discrete",
            AlgorithmConfig::Flow {} => "flow",
            AlgorithmConfig::Inflation { .. } => "inflation",
            AlgorithmConfig::Localization { .. } => "localization",
            AlgorithmConfig::RandomizedSearch { .. } => "randomized_search",
        }
    }
}

/// Time stepping. `dt` is the flow step, the EnKF step size `h`, or the
/// diffusion-limit step, depending on the algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// `equal_gamma` adds the stochastic forcing (flow) or perturbs the data (discrete).
    #[serde(default = "default_sigma")]
    pub sigma: SigmaMode,
    /// Defaults to a stride giving about 1000 recorded times.
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            scheme: default_scheme(),
            sigma: default_sigma(),
            record_every: None,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingConfig {
    Fixed {
        t_end: f64,
    },
    /// Stop at `t = 1`.
    Bayesian {},
    /// Stop once `|G(mean u) - y|_Gamma <= tau`. Without an explicit `tau` the
    /// threshold is `tau_factor sqrt(K)`, the same as `tau_factor sqrt(K) gamma`
    /// in the unweighted norm.
    Discrepancy {
        #[serde(default)]
        tau: Option<f64>,
        #[serde(default = "default_tau_factor")]
        tau_factor: f64,
        /// Safety horizon; reaching it is reported.
        #[serde(default = "default_cap")]
        cap: f64,
    },
}

impl StoppingConfig {
    /// Final time of the run if no rule fires earlier.
    pub fn horizon(&self) -> f64 {
        match self {
            StoppingConfig::Fixed { t_end } => *t_end,
            StoppingConfig::Bayesian {} => 1.0,
            StoppingConfig::Discrepancy { cap, .. } => *cap,
        }
    }
}

fn default_cells_1d() -> usize {
    256
}
fn default_beta() -> f64 {
    10.0
}
fn default_cells_2d() -> usize {
    32
}
fn default_source() -> f64 {
    100.0
}
fn default_truth_seed() -> u64 {
    1
}
fn default_ensemble_seed() -> u64 {
    2
}
fn default_noise_seed() -> u64 {
    3
}
fn default_init() -> InitKind {
    InitKind::Kl
}
fn default_r_exponent() -> u32 {
    2
}
fn default_search_mode() -> SearchMode {
    SearchMode::DiffusionLimit
}
fn default_pcn_beta() -> f64 {
    0.1
}
fn default_dt() -> f64 {
    0.01
}
fn default_scheme() -> Scheme {
    Scheme::EulerMaruyama
}
fn default_sigma() -> SigmaMode {
    SigmaMode::Zero
}
fn default_tau_factor() -> f64 {
    1.0
}
fn default_cap() -> f64 {
    1000.0
}

fn invalid(msg: impl Into<String>) -> EkiError {
    EkiError::InvalidConfig(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("cannot serialize config: {e}")))
    }

    /// Seeds after applying the top-level override.
    pub fn ensemble_seed(&self) -> u64 {
        self.seed.unwrap_or(self.ensemble.seed)
    }

    pub fn algorithm_seed(&self) -> u64 {
        self.seed.unwrap_or(self.integrator.rng_seed)
    }

    /// Rejects inconsistent combinations before any work is done.
    pub fn validate(&self) -> Result<()> {
        match &self.problem {
            ProblemConfig::Linear1d { n_cells, beta, .. } => {
                if *n_cells < 32 || !n_cells.is_power_of_two() {
                    return Err(invalid(format!(
                        "linear1d n_cells must be a power of two >= 32, got {n_cells}"
                    )));
                }
                positive("beta", *beta)?;
            }
            ProblemConfig::Nonlinear2d {
                n_cells, source, ..
            } => {
                if *n_cells < 8 || n_cells % 8 != 0 {
                    return Err(invalid(format!(
                        "nonlinear2d n_cells must be a multiple of 8, got {n_cells}"
                    )));
                }
                if !source.is_finite() {
                    return Err(invalid("source must be finite"));
                }
            }
        }
        if let Some(noise) = &self.noise {
            positive("gamma_std", noise.gamma_std)?;
        }
        let j = self.ensemble.size;
        if j == 0 {
            return Err(invalid("ensemble size must be at least 1"));
        }
        if self.ensemble.init != InitKind::Kl && j < 2 {
            return Err(invalid("adaptive initialization needs at least 2 members"));
        }
        if self.ensemble.init == InitKind::AdaptiveMisfit && !self.problem.is_linear() {
            return Err(invalid("adaptive_misfit needs a linear problem"));
        }
        match &self.algorithm {
            AlgorithmConfig::Inflation { alpha } => {
                if !(*alpha >= 0.0 && alpha.is_finite()) {
                    return Err(invalid(format!(
                        "inflation alpha must be >= 0, got {alpha}"
                    )));
                }
            }
            AlgorithmConfig::Localization { r_exponent } => {
                if *r_exponent == 0 {
                    return Err(invalid("localization r_exponent must be >= 1"));
                }
            }
            AlgorithmConfig::RandomizedSearch { mode, pcn_beta } => {
                if !(0.0..=1.0).contains(pcn_beta) {
                    return Err(invalid(format!(
                        "pcn_beta must lie in [0, 1], got {pcn_beta}"
                    )));
                }
                if *mode == SearchMode::DiffusionLimit {
                    if !self.problem.is_linear() {
                        return Err(invalid("the diffusion-limit search needs a linear problem"));
                    }
                    if !(self.integrator.dt > 0.0 && self.integrator.dt < 0.5) {
                        return Err(invalid(format!(
                            "diffusion-limit step must lie in (0, 1/2), got {}",
                            self.integrator.dt
                        )));
                    }
                    if self.integrator.sigma != SigmaMode::Zero {
                        return Err(invalid(
                            "the diffusion-limit search supports sigma = zero only",
                        ));
                    }
                }
            }
            AlgorithmConfig::Discrete {} | AlgorithmConfig::Flow {} => {}
        }
        let uses_flow = matches!(
            self.algorithm,
            AlgorithmConfig::Flow {}
                | AlgorithmConfig::Inflation { .. }
                | AlgorithmConfig::Localization { .. }
        );
        if !uses_flow && self.integrator.scheme != Scheme::EulerMaruyama {
            return Err(invalid(format!(
                "scheme applies to flow algorithms only, not {}",
                self.algorithm.name()
            )));
        }
        if self.integrator.scheme == Scheme::Heun && self.integrator.sigma != SigmaMode::Zero {
            return Err(invalid("Heun is deterministic and needs sigma = zero"));
        }
        positive("dt", self.integrator.dt)?;
        if self.integrator.record_every == Some(0) {
            return Err(invalid("record_every must be at least 1"));
        }
        match &self.stopping {
            StoppingConfig::Fixed { t_end } => positive("t_end", *t_end)?,
            StoppingConfig::Bayesian {} => {}
            StoppingConfig::Discrepancy {
                tau,
                tau_factor,
                cap,
            } => {
                if self.noise.is_none() {
                    return Err(invalid("the discrepancy rule needs noisy data"));
                }
                if let Some(tau) = tau {
                    positive("tau", *tau)?;
                }
                positive("tau_factor", *tau_factor)?;
                positive("cap", *cap)?;
            }
        }
        let horizon = self.stopping.horizon();
        let n = (horizon / self.integrator.dt).round();
        if n < 1.0 || (n * self.integrator.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(invalid(format!(
                "horizon {horizon} is not a positive multiple of dt = {}",
                self.integrator.dt
            )));
        }
        Ok(())
    }

    /// Number of steps to the horizon.
    pub fn n_steps(&self) -> usize {
        (self.stopping.horizon() / self.integrator.dt).round() as usize
    }

    pub fn record_every(&self) -> usize {
        self.integrator
            .record_every
            .unwrap_or_else(|| (self.n_steps() / 1000).max(1))
    }
}
