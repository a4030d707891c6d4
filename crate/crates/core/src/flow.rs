//! Continuous-time limits: the coupled SDE for general forward maps and the
//! preconditioned gradient flow for linear ones, integrated on a uniform grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::linalg::sym_sqrt;
use crate::model::{centered, evaluate_ensemble, Ensemble, InverseProblem, SigmaMode, StateVector};
use crate::rng::{standard_normal_vector, substream, Domain};
use crate::trajectory::{Recorder, Trajectory};

/// Members whose norm exceeds this abort the integration.
pub const BLOW_UP_NORM: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    Heun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_scheme() -> Scheme {
    Scheme::EulerMaruyama
}

fn one() -> usize {
    1
}

impl FlowConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            scheme: Scheme::EulerMaruyama,
            record_every: 1,
            rng_seed: 0,
        }
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    /// Number of uniform steps; `t_end` must be a whole multiple of `dt`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EkiError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(EkiError::InvalidConfig(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return Err(EkiError::InvalidConfig(format!(
                "dt = {} exceeds t_end = {}",
                self.dt, self.t_end
            )));
        }
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return Err(EkiError::InvalidConfig(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self, sigma: SigmaMode) -> Result<()> {
        self.n_steps()?;
        if self.record_every == 0 {
            return Err(EkiError::InvalidConfig(
                "record_every must be at least 1".into(),
            ));
        }
        if self.scheme == Scheme::Heun && sigma != SigmaMode::Zero {
            return Err(EkiError::InvalidConfig(
                "Heun is deterministic and needs Sigma = 0".into(),
            ));
        }
        Ok(())
    }
}

/// The deterministic vector field, one velocity column per member.
pub trait Drift: Send + Sync {
    /// `images` are the forward images of `ens`, computed once by the caller.
    fn velocity(
        &self,
        ens: &Ensemble,
        images: &DMatrix<f64>,
        prob: &InverseProblem,
    ) -> Result<DMatrix<f64>>;
}

/// `v_j = C^up Gamma^-1 (y - G(u_j))`, valid for any forward map.
#[derive(Clone, Copy, Debug, Default)]
pub struct GeneralDrift;

impl Drift for GeneralDrift {
    fn velocity(
        &self,
        ens: &Ensemble,
        images: &DMatrix<f64>,
        prob: &InverseProblem,
    ) -> Result<DMatrix<f64>> {
        let j = ens.size() as f64;
        let mut misfit = -images.clone();
        for mut c in misfit.column_iter_mut() {
            c += &prob.data;
        }
        let w = prob.noise.solve_matrix(&misfit);
        let dg = centered(images);
        // entry (k, j) = <G(u_k) - mean G, y - G(u_j)>_Gamma
        let inner = dg.tr_mul(&w);
        Ok(ens.deviations() * inner / j)
    }
}

/// `v_j = -C(u) A^T Gamma^-1 (A u_j - y)`, needs a linear forward map.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearGradientFlow;

impl Drift for LinearGradientFlow {
    fn velocity(
        &self,
        ens: &Ensemble,
        _images: &DMatrix<f64>,
        prob: &InverseProblem,
    ) -> Result<DMatrix<f64>> {
        let grads = linear_gradients(ens, prob)?;
        Ok(-apply_empirical_cov(ens, &grads))
    }
}

/// Columns `A^T Gamma^-1 (A u_j - y)`.
pub(crate) fn linear_gradients(ens: &Ensemble, prob: &InverseProblem) -> Result<DMatrix<f64>> {
    let a = prob.linear_matrix()?;
    let mut res = a * ens.matrix();
    for mut c in res.column_iter_mut() {
        c -= &prob.data;
    }
    Ok(a.tr_mul(&prob.noise.solve_matrix(&res)))
}

/// Gradients of the misfit for every member, through the adjoint when the
/// forward map has one.
pub(crate) fn misfit_gradients(
    ens: &Ensemble,
    images: &DMatrix<f64>,
    prob: &InverseProblem,
) -> Result<DMatrix<f64>> {
    if prob.forward.linear_matrix().is_some() {
        return linear_gradients(ens, prob);
    }
    let mut res = images.clone();
    for mut c in res.column_iter_mut() {
        c -= &prob.data;
    }
    let w = prob.noise.solve_matrix(&res);
    let cols = (0..ens.size())
        .map(|j| {
            prob.forward
                .adjoint_apply(&w.column(j).into_owned())
                .ok_or(EkiError::MissingAdjoint)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// `C(u) X` without forming the `d x d` covariance.
pub(crate) fn apply_empirical_cov(ens: &Ensemble, x: &DMatrix<f64>) -> DMatrix<f64> {
    let du = ens.deviations();
    &du * du.tr_mul(x) / ens.size() as f64
}

fn columns(m: DMatrix<f64>) -> Vec<StateVector> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

/// Per-member velocities of the general drift.
pub fn drift_general(ens: &Ensemble, prob: &InverseProblem) -> Result<Vec<StateVector>> {
    let images = evaluate_ensemble(prob.forward.as_ref(), ens)?;
    GeneralDrift.velocity(ens, &images, prob).map(columns)
}

/// Per-member velocities of the linear gradient flow.
pub fn drift_linear_gradflow(ens: &Ensemble, prob: &InverseProblem) -> Result<Vec<StateVector>> {
    let images = DMatrix::zeros(0, ens.size());
    LinearGradientFlow.velocity(ens, &images, prob).map(columns)
}

pub(crate) fn check_blow_up(m: &DMatrix<f64>, time: f64) -> Result<()> {
    for (j, c) in m.column_iter().enumerate() {
        let norm = c.norm();
        if !(norm <= BLOW_UP_NORM) {
            return Err(EkiError::BlowUp {
                time,
                member: j,
                norm,
            });
        }
    }
    Ok(())
}

/// Integrates from `ens0` to `cfg.t_end`.
pub fn integrate(
    prob: &InverseProblem,
    ens0: &Ensemble,
    cfg: &FlowConfig,
    drift: &dyn Drift,
) -> Result<Trajectory> {
    integrate_until(prob, ens0, cfg, drift, &mut |_, _, _| false)
}

/// As [`integrate`], halting once `stop(t, ens, images)` is true.
///
/// With `Sigma = Gamma` the Euler-Maruyama step adds
/// `C^up Gamma^-1 sqrt(Sigma) dW_j`, `dW_j ~ N(0, dt I_K)`.
pub fn integrate_until(
    prob: &InverseProblem,
    ens0: &Ensemble,
    cfg: &FlowConfig,
    drift: &dyn Drift,
    stop: &mut dyn FnMut(f64, &Ensemble, &DMatrix<f64>) -> bool,
) -> Result<Trajectory> {
    let sigma = prob.noise.sigma_mode();
    cfg.validate(sigma)?;
    let n_steps = cfg.n_steps()?;
    let dt = cfg.dt;
    let sqrt_sigma = match sigma {
        SigmaMode::Zero => None,
        SigmaMode::EqualGamma => Some(sym_sqrt(prob.noise.gamma())),
    };
    let k = prob.data.len();
    let mut rec = Recorder::new(prob)?;
    let mut ens = ens0.clone();
    let mut stopped = None;
    for n in 0..=n_steps {
        let t = n as f64 * dt;
        let images = evaluate_ensemble(prob.forward.as_ref(), &ens)?;
        let halt = stop(t, &ens, &images);
        if n % cfg.record_every == 0 || n == n_steps || halt {
            rec.record(t, &ens, &images)?;
        }
        if halt {
            stopped = Some(t);
            break;
        }
        if n == n_steps {
            break;
        }
        let v = drift.velocity(&ens, &images, prob)?;
        let mut next = match cfg.scheme {
            Scheme::EulerMaruyama => ens.matrix() + &v * dt,
            Scheme::Heun => {
                let pred = ens.matrix() + &v * dt;
                check_blow_up(&pred, t + dt)?;
                let pred = Ensemble::from_matrix(pred)?;
                let pred_images = evaluate_ensemble(prob.forward.as_ref(), &pred)?;
                let v2 = drift.velocity(&pred, &pred_images, prob)?;
                ens.matrix() + (v + v2) * (0.5 * dt)
            }
        };
        if let Some(root) = &sqrt_sigma {
            let j = ens.size();
            let mut dw = DMatrix::zeros(k, j);
            for m in 0..j {
                let mut rng = substream(cfg.rng_seed, Domain::FlowNoise, n as u64, m as u64);
                dw.set_column(m, &(standard_normal_vector(&mut rng, k) * dt.sqrt()));
            }
            let kick = prob.noise.solve_matrix(&(root * dw));
            let dg = centered(&images);
            next += ens.deviations() * dg.tr_mul(&kick) / j as f64;
        }
        check_blow_up(&next, t + dt)?;
        ens = Ensemble::from_matrix(next)?;
    }
    Ok(rec.finish(stopped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearMap, NoiseModel};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use std::sync::Arc;

    fn scalar(y: f64) -> InverseProblem {
        InverseProblem::new(
            Arc::new(LinearMap::new(DMatrix::identity(1, 1))),
            dvector![y],
            NoiseModel::isotropic(1, 1.0, SigmaMode::Zero).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn scalar_pair_velocities() {
        // C(u) = 1, D Phi = u - 1, so v = (+1, -1)
        let prob = scalar(1.0);
        let ens = Ensemble::from_members(&[dvector![0.0], dvector![2.0]]).unwrap();
        let v = drift_linear_gradflow(&ens, &prob).unwrap();
        assert_relative_eq!(v[0][0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(v[1][0], -1.0, epsilon = 1e-15);
        let g = drift_general(&ens, &prob).unwrap();
        assert_relative_eq!(g[0][0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[1][0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn trivial_velocities_vanish() {
        let prob = scalar(1.0);
        let same = Ensemble::from_members(&[dvector![0.4], dvector![0.4]]).unwrap();
        assert!(drift_general(&same, &prob)
            .unwrap()
            .iter()
            .all(|v| v[0] == 0.0));
        let single = Ensemble::from_members(&[dvector![3.0]]).unwrap();
        assert_eq!(drift_linear_gradflow(&single, &prob).unwrap()[0][0], 0.0);

        let two = InverseProblem::new(
            Arc::new(LinearMap::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))),
            dvector![1.0],
            NoiseModel::isotropic(1, 1.0, SigmaMode::Zero).unwrap(),
            None,
        )
        .unwrap();
        let fitted = Ensemble::from_members(&[dvector![1.0, 0.0], dvector![1.0, 5.0]]).unwrap();
        assert!(drift_general(&fitted, &two)
            .unwrap()
            .iter()
            .all(|v| v.norm() == 0.0));
        assert!(drift_linear_gradflow(&fitted, &two)
            .unwrap()
            .iter()
            .all(|v| v.norm() == 0.0));
    }

    #[test]
    fn zero_horizon_returns_initial_ensemble() {
        let prob = scalar(1.0);
        let ens = Ensemble::from_members(&[dvector![0.0], dvector![2.0]]).unwrap();
        let traj = integrate(&prob, &ens, &FlowConfig::new(0.0, 0.1), &GeneralDrift).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.ensembles[0], ens);
    }

    #[test]
    fn heun_with_noise_is_rejected() {
        let prob = scalar(1.0);
        let prob = prob
            .with_noise(prob.noise.with_sigma_mode(SigmaMode::EqualGamma))
            .unwrap();
        let ens = Ensemble::from_members(&[dvector![0.0], dvector![2.0]]).unwrap();
        let mut cfg = FlowConfig::new(1.0, 0.1);
        cfg.scheme = Scheme::Heun;
        assert!(matches!(
            integrate(&prob, &ens, &cfg, &GeneralDrift),
            Err(EkiError::InvalidConfig(_))
        ));
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        assert!(FlowConfig::new(1.0, 0.3).n_steps().is_err());
        assert_eq!(FlowConfig::new(1.0, 1e-3).n_steps().unwrap(), 1000);
        assert!(FlowConfig::new(1.0, 2.0).n_steps().is_err());
    }

    #[test]
    fn blow_up_guard_trips() {
        // an anti-damped drift: v = +u
        struct Grow;
        impl Drift for Grow {
            fn velocity(
                &self,
                ens: &Ensemble,
                _: &DMatrix<f64>,
                _: &InverseProblem,
            ) -> Result<DMatrix<f64>> {
                Ok(ens.matrix() * 50.0)
            }
        }
        let prob = scalar(1.0);
        let ens = Ensemble::from_members(&[dvector![1.0], dvector![2.0]]).unwrap();
        match integrate(&prob, &ens, &FlowConfig::new(10.0, 0.5), &Grow) {
            Err(EkiError::BlowUp { member, time, .. }) => {
                assert_eq!(member, 0);
                assert!(time > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_collapse_matches_closed_form() {
        // e' = -(1/J) E e with E = e^2 sum: for u = {-a, a}, y = 0: a' = -a^3 so a(t) = (1/a0^2 + 2t)^{-1/2}
        let prob = scalar(0.0);
        let a0 = 1.0;
        let ens = Ensemble::from_members(&[dvector![-a0], dvector![a0]]).unwrap();
        let cfg = FlowConfig {
            scheme: Scheme::Heun,
            ..FlowConfig::new(1.0, 1e-3)
        };
        let traj = integrate(&prob, &ens, &cfg, &LinearGradientFlow).unwrap();
        let a = traj.last_ensemble().unwrap().member(1)[0];
        assert_relative_eq!(a, (1.0 / (a0 * a0) + 2.0f64).powf(-0.5), epsilon = 1e-6);
    }
}
