//! Preconditioned Crank-Nicolson moves and the randomized search that mixes
//! them into the EnKF iteration.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::discrete::{enkf_update_with_images, DiscreteConfig};
use crate::error::{EkiError, Result};
use crate::model::{evaluate_ensemble, misfit_phi, Ensemble, InverseProblem, StateVector};
use crate::models::prior::PriorSpec;
use crate::rng::{substream, Domain};
use crate::trajectory::{Recorder, Trajectory};

#[derive(Clone, Debug)]
pub struct PcnConfig {
    /// Proposal step size in `[0, 1]`.
    pub beta: f64,
    pub prior: Arc<PriorSpec>,
}

impl PcnConfig {
    pub fn new(beta: f64, prior: Arc<PriorSpec>) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(EkiError::InvalidConfig(format!(
                "pCN beta must lie in [0, 1], got {beta}"
            )));
        }
        Ok(Self { beta, prior })
    }
}

/// Result of one pCN move, with the numbers that decided it.
#[derive(Clone, Debug, PartialEq)]
pub struct PcnOutcome {
    pub state: StateVector,
    pub accepted: bool,
    pub accept_prob: f64,
    pub uniform: f64,
}

/// `v = sqrt(1 - beta^2) u + beta iota`, `iota ~ N(0, C0)`, accepted with
/// probability `min(1, exp(n h Phi(u) - n h Phi(v)))`.
pub fn pcn_step<R: Rng + ?Sized>(
    u: &StateVector,
    phi: &dyn Fn(&StateVector) -> Result<f64>,
    n: u64,
    h: f64,
    cfg: &PcnConfig,
    rng: &mut R,
) -> Result<PcnOutcome> {
    let iota = cfg.prior.sample(rng);
    let uniform: f64 = rng.random();
    let v = u * (1.0 - cfg.beta * cfg.beta).sqrt() + iota * cfg.beta;
    let temper = n as f64 * h;
    let accept_prob = if temper == 0.0 {
        1.0
    } else {
        let log_a = temper * (phi(u)? - phi(&v)?);
        if log_a >= 0.0 {
            1.0
        } else {
            log_a.exp()
        }
    };
    let accepted = uniform < accept_prob;
    Ok(PcnOutcome {
        state: if accepted { v } else { u.clone() },
        accepted,
        accept_prob,
        uniform,
    })
}

/// Each step moves every member by one pCN step targeting the tempered
/// measure at `t = n h`, then applies the EnKF update.
pub fn randomized_search_run(
    prob: &InverseProblem,
    ens0: &Ensemble,
    cfg: &DiscreteConfig,
    pcn: &PcnConfig,
) -> Result<Trajectory> {
    randomized_search_until(prob, ens0, cfg, pcn, &mut |_, _, _| false)
}

pub fn randomized_search_until(
    prob: &InverseProblem,
    ens0: &Ensemble,
    cfg: &DiscreteConfig,
    pcn: &PcnConfig,
    stop: &mut dyn FnMut(f64, &Ensemble, &DMatrix<f64>) -> bool,
) -> Result<Trajectory> {
    cfg.validate()?;
    if pcn.prior.dim() != ens0.dim() {
        return Err(EkiError::DimensionMismatch {
            what: "pCN prior",
            expected: ens0.dim(),
            found: pcn.prior.dim(),
        });
    }
    let phi = |u: &StateVector| misfit_phi(u, prob);
    let mut rec = Recorder::new(prob)?;
    let mut ens = ens0.clone();
    let mut stopped = None;
    let mut accepted = 0usize;
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
        let moved = (0..ens.size())
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(cfg.rng_seed, Domain::PcnProposal, n as u64, j as u64);
                pcn_step(&ens.member(j), &phi, n as u64, cfg.step_size, pcn, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        accepted += moved.iter().filter(|o| o.accepted).count();
        let states: Vec<StateVector> = moved.into_iter().map(|o| o.state).collect();
        let tilde = Ensemble::from_members(&states)?;
        let tilde_images = evaluate_ensemble(prob.forward.as_ref(), &tilde)?;
        ens = enkf_update_with_images(&tilde, &tilde_images, prob, cfg, n as u64)?;
    }
    log::debug!(
        "randomized search accepted {accepted} of {} proposals",
        cfg.n_steps * ens0.size()
    );
    Ok(rec.finish(stopped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::prior::PriorKind;
    use approx::assert_relative_eq;
    use nalgebra::{dvector, DMatrix};

    fn prior() -> Arc<PriorSpec> {
        Arc::new(
            PriorSpec::new(
                PriorKind::Explicit,
                dvector![1.0, 0.5],
                DMatrix::identity(2, 2),
                1.0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn zero_beta_keeps_the_state() {
        let cfg = PcnConfig::new(0.0, prior()).unwrap();
        let u = dvector![0.3, -1.2];
        let mut rng = substream(1, Domain::PcnProposal, 0, 0);
        let out = pcn_step(
            &u,
            &|x: &StateVector| Ok(x.norm_squared()),
            5,
            0.1,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.state, u);
        assert_eq!(out.accept_prob, 1.0);
        assert!(out.accepted);
    }

    #[test]
    fn downhill_moves_are_always_accepted() {
        let cfg = PcnConfig::new(0.5, prior()).unwrap();
        let u = dvector![0.3, -1.2];
        let mut rng = substream(1, Domain::PcnProposal, 0, 0);
        // Phi is smaller at every proposal than at u
        let phi = |x: &StateVector| Ok(if x == &u { 10.0 } else { 0.0 });
        let out = pcn_step(&u, &phi, 3, 0.5, &cfg, &mut rng).unwrap();
        assert_eq!(out.accept_prob, 1.0);
        assert!(out.accepted);
    }

    #[test]
    fn acceptance_probability_is_exact() {
        let cfg = PcnConfig::new(0.8, prior()).unwrap();
        let u = dvector![0.0, 0.0];
        let phi = |x: &StateVector| Ok(x.norm_squared());
        for seed in 0..50 {
            let mut rng = substream(seed, Domain::PcnProposal, 0, 0);
            let (n, h) = (4u64, 0.25);
            let out = pcn_step(&u, &phi, n, h, &cfg, &mut rng).unwrap();
            // replay the same stream to recover the proposal
            let mut replay = substream(seed, Domain::PcnProposal, 0, 0);
            let iota = cfg.prior.sample(&mut replay);
            let uniform: f64 = replay.random();
            let v = &u * (1.0 - 0.64f64).sqrt() + iota * 0.8;
            let expect = (n as f64 * h * (0.0 - v.norm_squared())).exp().min(1.0);
            assert_relative_eq!(out.accept_prob, expect, epsilon = 1e-15);
            assert_eq!(out.uniform, uniform);
            assert_eq!(out.accepted, uniform < expect);
            assert_eq!(out.state, if out.accepted { v } else { u.clone() });
        }
    }

    #[test]
    fn beta_out_of_range_is_rejected() {
        assert!(PcnConfig::new(1.5, prior()).is_err());
        assert!(PcnConfig::new(-0.1, prior()).is_err());
    }
}
