//! The discrete EnKF iteration for inverse problems.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::linalg::column_basis;
use crate::model::{centered, evaluate_ensemble, Ensemble, InverseProblem, StateVector};
use crate::rng::{standard_normal_vector, substream, Domain};
use crate::trajectory::{Recorder, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteConfig {
    pub n_steps: usize,
    pub step_size: f64,
    /// Perturb the data with `xi ~ N(0, h^-1 Gamma)` (that is, `Sigma = Gamma`).
    #[serde(default)]
    pub perturb_obs: bool,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl DiscreteConfig {
    /// `N` steps of size `h = 1/N`, the schedule ending at artificial time 1.
    pub fn smc(n_steps: usize) -> Self {
        Self {
            n_steps,
            step_size: 1.0 / n_steps as f64,
            perturb_obs: false,
            rng_seed: 0,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(EkiError::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.record_every == 0 {
            return Err(EkiError::InvalidConfig(
                "record_every must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.n_steps as f64 * self.step_size
    }
}

/// One EnKF step given the forward images of the current ensemble.
///
/// `u_j + C^up (C^pp + h^-1 Gamma)^-1 (y + xi_j - G(u_j))`.
pub fn enkf_update_with_images(
    ens: &Ensemble,
    images: &DMatrix<f64>,
    prob: &InverseProblem,
    cfg: &DiscreteConfig,
    step: u64,
) -> Result<Ensemble> {
    let j = ens.size();
    let h = cfg.step_size;
    let k = prob.data.len();
    let du = ens.deviations();
    let dg = centered(images);
    let jf = j as f64;

    let mut gain_mat = (&dg * dg.transpose()) / jf;
    gain_mat += prob.noise.gamma() / h;
    let chol = Cholesky::new(gain_mat).ok_or(EkiError::NotPositiveDefinite("C^pp + h^-1 Gamma"))?;

    let mut innov = DMatrix::zeros(k, j);
    let l = if cfg.perturb_obs {
        Some(prob.noise.cholesky_l() / h.sqrt())
    } else {
        None
    };
    for m in 0..j {
        let mut col = &prob.data - images.column(m);
        if let Some(l) = &l {
            let mut rng = substream(
                cfg.rng_seed,
                Domain::ObservationPerturbation,
                step,
                m as u64,
            );
            col += l * standard_normal_vector(&mut rng, k);
        }
        innov.set_column(m, &col);
    }
    let w = chol.solve(&innov);
    // C^up W = (1/J) du (dg^T W)
    let update = &du * (dg.tr_mul(&w) / jf);
    Ensemble::from_matrix(ens.matrix() + update)
}

/// One EnKF step; `step` keys the observation-perturbation stream.
pub fn enkf_update(
    ens: &Ensemble,
    prob: &InverseProblem,
    cfg: &DiscreteConfig,
    step: u64,
) -> Result<Ensemble> {
    let images = evaluate_ensemble(prob.forward.as_ref(), ens)?;
    enkf_update_with_images(ens, &images, prob, cfg, step)
}

/// Runs `n_steps` EnKF steps, recording every `record_every` steps and the last.
pub fn run_discrete(
    prob: &InverseProblem,
    ens0: &Ensemble,
    cfg: &DiscreteConfig,
) -> Result<Trajectory> {
    run_discrete_until(prob, ens0, cfg, &mut |_, _, _| false)
}

/// As [`run_discrete`], halting early once `stop(t, ens, images)` is true.
pub fn run_discrete_until(
    prob: &InverseProblem,
    ens0: &Ensemble,
    cfg: &DiscreteConfig,
    stop: &mut dyn FnMut(f64, &Ensemble, &DMatrix<f64>) -> bool,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rec = Recorder::new(prob)?;
    let mut ens = ens0.clone();
    let mut stopped = None;
    for n in 0..=cfg.n_steps {
        let t = n as f64 * cfg.step_size;
        let images = evaluate_ensemble(prob.forward.as_ref(), &ens)?;
        let halt = stop(t, &ens, &images);
        if n % cfg.record_every == 0 || n == cfg.n_steps || halt {
            rec.record(t, &ens, &images)?;
        }
        if halt {
            stopped = Some(t);
            break;
        }
        if n == cfg.n_steps {
            break;
        }
        ens = enkf_update_with_images(&ens, &images, prob, cfg, n as u64)?;
    }
    Ok(rec.finish(stopped))
}

/// Largest relative distance of a member from `span(basis0)`.
pub fn subspace_distance(ens: &Ensemble, basis0: &[StateVector]) -> Result<f64> {
    if basis0.is_empty() {
        return Err(EkiError::InvalidConfig(
            "subspace basis must be nonempty".into(),
        ));
    }
    let q = column_basis(&DMatrix::from_columns(basis0), 1e-12);
    Ok(subspace_distance_orthonormal(ens, &q))
}

/// As [`subspace_distance`] with a precomputed orthonormal basis.
pub fn subspace_distance_orthonormal(ens: &Ensemble, q: &DMatrix<f64>) -> f64 {
    ens.members()
        .map(|u| {
            let n = u.norm();
            if n == 0.0 {
                0.0
            } else {
                crate::linalg::orthogonal_residual_norm(q, &u) / n
            }
        })
        .fold(0.0, f64::max)
}
