//! Config-driven experiment runner: builds the inverse problem and initial
//! ensemble, runs the chosen algorithm under a stopping rule and writes the
//! diagnostics table, the config snapshot and SVG plots.

mod config;
mod output;
pub mod plot;
mod presets;

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

pub use config::{
    AlgorithmConfig, EnsembleConfig, ExperimentConfig, InitKind, IntegratorConfig, NoiseConfig,
    ProblemConfig, SearchMode, StoppingConfig,
};
pub use output::{emit_outputs, DiagnosticsTable, CSV_FILE, PLOT_FILES, SNAPSHOT_FILE};
pub use presets::{list_presets, preset, PRESETS};

use crate::discrete::{run_discrete_until, DiscreteConfig};
use crate::error::{EkiError, Result, StageExt};
use crate::flow::{integrate_until, Drift, FlowConfig, GeneralDrift};
use crate::model::{
    ensemble_mean, Ensemble, ForwardMap, InverseProblem, NoiseModel, ObsVector, SigmaMode,
};
use crate::models::{
    adaptive_ensemble, assemble_fem_1d, default_adaptive_alphas, kl_initial_ensemble,
    min_norm_preimage, Fem2DNonlinear, Mesh1D, PriorSpec,
};
use crate::rng::{standard_normal_vector, substream, Domain};
use crate::trajectory::Trajectory;
use crate::variants::{
    diffusion_limit_until, randomized_search_until, InflatedDrift, InflationConfig,
    LocalizationConfig, LocalizedDrift, PcnConfig,
};

/// `t >= 1`: the tempering schedule has reached the posterior.
pub fn stop_bayesian(t: f64) -> bool {
    t >= 1.0
}

/// `|G(mean u) - y|_Gamma <= tau`.
pub fn stop_discrepancy(ens: &Ensemble, prob: &InverseProblem, tau: f64) -> Result<bool> {
    let g = prob.forward.evaluate(&ensemble_mean(ens))?;
    Ok(prob.noise.norm_sq(&(g - &prob.data)).sqrt() <= tau)
}

/// Everything a run needs besides the algorithm settings.
#[derive(Clone)]
pub struct ExperimentSetup {
    pub problem: InverseProblem,
    pub prior: Arc<PriorSpec>,
    pub initial: Ensemble,
    /// Physical coordinates of the state entries.
    pub coords: Vec<[f64; 2]>,
    /// The noise added to the exact data, if any.
    pub noise_realization: Option<ObsVector>,
}

/// Builds the forward map, prior, truth (a prior draw), data and initial ensemble.
pub fn build_setup(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let (forward, prior, coords): (Arc<dyn ForwardMap>, PriorSpec, Vec<[f64; 2]>) =
        match &cfg.problem {
            ProblemConfig::Linear1d { n_cells, beta, .. } => {
                let mesh = Mesh1D::new(*n_cells)?;
                let fem = assemble_fem_1d(mesh)?;
                let prior = PriorSpec::inverse_laplacian_1d(&mesh, *beta)?;
                let coords = mesh.nodes().into_iter().map(|x| [x, 0.0]).collect();
                (Arc::new(fem), prior, coords)
            }
            ProblemConfig::Nonlinear2d {
                n_cells, source, ..
            } => {
                let fem = Fem2DNonlinear::new(*n_cells, *source)?;
                let prior = PriorSpec::bilaplacian_2d(&fem)?;
                let coords = fem.node_coords();
                (Arc::new(fem), prior, coords)
            }
        };
    let mut rng = substream(cfg.problem.truth_seed(), Domain::PriorDraw, 0, 0);
    let truth = prior.sample(&mut rng);
    let exact = forward.evaluate(&truth)?;
    let k = exact.len();
    let sigma = cfg.integrator.sigma;
    let (data, noise, realization) = match &cfg.noise {
        Some(nc) => {
            let mut rng = substream(nc.seed, Domain::ObservationNoise, 0, 0);
            let eta = standard_normal_vector(&mut rng, k) * nc.gamma_std;
            let noise = NoiseModel::isotropic(k, nc.gamma_std * nc.gamma_std, sigma)?;
            (&exact + &eta, noise, Some(eta))
        }
        None => (exact, NoiseModel::isotropic(k, 1.0, sigma)?, None),
    };
    let problem = InverseProblem::new(forward, data, noise, Some(truth))?;
    let kl = kl_initial_ensemble(&prior, cfg.ensemble.size, cfg.ensemble_seed())?;
    let alphas = default_adaptive_alphas(cfg.ensemble.size);
    let initial = match cfg.ensemble.init {
        InitKind::Kl => kl,
        InitKind::AdaptiveResidual => adaptive_ensemble(&kl, problem.truth()?, &alphas)?,
        InitKind::AdaptiveMisfit => {
            let target = min_norm_preimage(problem.linear_matrix()?, &problem.data)?;
            adaptive_ensemble(&kl, &target, &alphas)?
        }
    };
    Ok(ExperimentSetup {
        problem,
        prior: Arc::new(prior),
        initial,
        coords,
        noise_realization: realization,
    })
}

/// Seeds that determine a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub truth: u64,
    pub noise: Option<u64>,
    pub ensemble: u64,
    pub algorithm: u64,
}

/// Outcome of one experiment.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    /// Config text exactly as supplied.
    pub snapshot: String,
    pub seeds: Seeds,
    pub trajectory: Trajectory,
    pub has_truth: bool,
    /// Last time reached.
    pub stop_time: f64,
    /// Set when a discrepancy run reached its safety horizon without stopping.
    pub cap_hit: bool,
    pub wall_clock: Duration,
}

impl RunRecord {
    pub fn table(&self) -> DiagnosticsTable {
        DiagnosticsTable::from_trajectory(&self.trajectory, self.has_truth)
    }
}

/// Parses `text`, runs it and keeps `text` as the snapshot.
pub fn run_experiment_text(text: &str) -> Result<RunRecord> {
    let cfg = ExperimentConfig::from_toml_str(text)?;
    let mut rec = run_experiment(&cfg)?;
    rec.snapshot = text.to_string();
    Ok(rec)
}

/// Returns `text` with the top-level `seed` set; the text is kept verbatim
/// unless it already sets a seed.
pub fn with_seed_override(text: &str, seed: u64) -> Result<String> {
    let mut table: toml::Table = toml::from_str(text)?;
    if table.contains_key("seed") {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
        toml::to_string(&table)
            .map_err(|e| EkiError::InvalidConfig(format!("cannot serialize config: {e}")))
    } else {
        Ok(format!("seed = {seed}\n{text}"))
    }
}

/// Runs the experiment. The snapshot is the re-serialized config; use
/// [`run_experiment_text`] to keep the original text.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate().stage("validating config")?;
    let start = Instant::now();
    let setup = build_setup(cfg).stage("building problem")?;
    log::info!(
        "running {} ({}, J = {}, horizon {})",
        cfg.name.as_deref().unwrap_or("experiment"),
        cfg.algorithm.name(),
        cfg.ensemble.size,
        cfg.stopping.horizon()
    );
    let trajectory = run_algorithm(cfg, &setup).stage("running algorithm")?;
    let stop_time = trajectory.last_time().unwrap_or(0.0);
    let cap_hit = matches!(cfg.stopping, StoppingConfig::Discrepancy { .. })
        && trajectory.stopped_at.is_none();
    if cap_hit {
        log::warn!("discrepancy rule did not fire before the cap t = {stop_time}");
    }
    let wall_clock = start.elapsed();
    log::info!("finished at t = {stop_time} in {:.2?}", wall_clock);
    Ok(RunRecord {
        snapshot: cfg.to_toml_string()?,
        seeds: Seeds {
            truth: cfg.problem.truth_seed(),
            noise: cfg.noise.as_ref().map(|n| n.seed),
            ensemble: cfg.ensemble_seed(),
            algorithm: cfg.algorithm_seed(),
        },
        config: cfg.clone(),
        trajectory,
        has_truth: setup.problem.truth.is_some(),
        stop_time,
        cap_hit,
        wall_clock,
    })
}

/// Runs the configured algorithm from the setup's initial ensemble.
pub fn run_algorithm(cfg: &ExperimentConfig, setup: &ExperimentSetup) -> Result<Trajectory> {
    let prob = &setup.problem;
    let ens0 = &setup.initial;
    let dt = cfg.integrator.dt;
    let n_steps = cfg.n_steps();
    let record_every = cfg.record_every();
    let seed = cfg.algorithm_seed();

    let tau = match &cfg.stopping {
        StoppingConfig::Discrepancy {
            tau, tau_factor, ..
        } => Some(tau.unwrap_or(tau_factor * (prob.data.len() as f64).sqrt())),
        _ => None,
    };
    let bayesian = matches!(cfg.stopping, StoppingConfig::Bayesian {});
    let mut failure: Option<EkiError> = None;
    let mut stop = |t: f64, ens: &Ensemble, _images: &DMatrix<f64>| -> bool {
        if bayesian && stop_bayesian(t) {
            return true;
        }
        match tau {
            Some(tau) => match stop_discrepancy(ens, prob, tau) {
                Ok(hit) => hit,
                Err(e) => {
                    failure.get_or_insert(e);
                    true
                }
            },
            None => false,
        }
    };

    let discrete = DiscreteConfig {
        n_steps,
        step_size: dt,
        perturb_obs: cfg.integrator.sigma == SigmaMode::EqualGamma,
        rng_seed: seed,
        record_every,
    };
    let flow = FlowConfig {
        t_end: cfg.stopping.horizon(),
        dt,
        scheme: cfg.integrator.scheme,
        record_every,
        rng_seed: seed,
    };
    let run_flow =
        |drift: &dyn Drift, stop: &mut dyn FnMut(f64, &Ensemble, &DMatrix<f64>) -> bool| {
            integrate_until(prob, ens0, &flow, drift, stop)
        };
    let traj = match &cfg.algorithm {
        AlgorithmConfig::Discrete {} => run_discrete_until(prob, ens0, &discrete, &mut stop),
        AlgorithmConfig::Flow {} => run_flow(&GeneralDrift, &mut stop),
        AlgorithmConfig::Inflation { alpha } => {
            let drift = InflatedDrift {
                cfg: InflationConfig::new(*alpha, setup.prior.clone())?,
            };
            run_flow(&drift, &mut stop)
        }
        AlgorithmConfig::Localization { r_exponent } => {
            let drift =
                LocalizedDrift::new(&LocalizationConfig::new(*r_exponent, setup.coords.clone())?);
            run_flow(&drift, &mut stop)
        }
        AlgorithmConfig::RandomizedSearch { mode, pcn_beta } => match mode {
            SearchMode::Discrete => {
                let pcn = PcnConfig::new(*pcn_beta, setup.prior.clone())?;
                randomized_search_until(prob, ens0, &discrete, &pcn, &mut stop)
            }
            SearchMode::DiffusionLimit => diffusion_limit_until(
                prob,
                ens0,
                dt,
                cfg.stopping.horizon(),
                &setup.prior,
                seed,
                record_every,
                &mut stop,
            ),
        },
    }?;
    match failure {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Misfit norm `|G(mean u) - y|_Gamma` of the data, for reporting.
pub fn mean_misfit_norm(ens: &Ensemble, prob: &InverseProblem) -> Result<f64> {
    let g: DVector<f64> = prob.forward.evaluate(&ensemble_mean(ens))?;
    Ok(prob.noise.norm_sq(&(g - &prob.data)).sqrt())
}
