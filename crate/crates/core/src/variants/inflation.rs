//! `du_j/dt = -(alpha C0 + C(u)) D Phi(u_j)`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{EkiError, Result};
use crate::flow::{apply_empirical_cov, misfit_gradients, Drift};
use crate::model::{evaluate_ensemble, misfit_phi, Ensemble, InverseProblem, StateVector};
use crate::models::prior::PriorSpec;

#[derive(Clone, Debug)]
pub struct InflationConfig {
    pub alpha: f64,
    pub prior: Arc<PriorSpec>,
}

impl InflationConfig {
    pub fn new(alpha: f64, prior: Arc<PriorSpec>) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(EkiError::InvalidConfig(format!(
                "inflation alpha must be >= 0, got {alpha}"
            )));
        }
        Ok(Self { alpha, prior })
    }
}

/// Misfit gradients through the adjoint, or by central differences when the
/// forward map has none.
pub(crate) fn gradients(
    ens: &Ensemble,
    images: &DMatrix<f64>,
    prob: &InverseProblem,
) -> Result<DMatrix<f64>> {
    match misfit_gradients(ens, images, prob) {
        Err(EkiError::MissingAdjoint) => {
            let cols = ens
                .members()
                .map(|u| fd_gradient(&u, prob, 1e-6))
                .collect::<Result<Vec<_>>>()?;
            Ok(DMatrix::from_columns(&cols))
        }
        other => other,
    }
}

/// Central-difference gradient of the misfit, one coordinate at a time.
pub fn fd_gradient(u: &StateVector, prob: &InverseProblem, eps: f64) -> Result<StateVector> {
    let mut g = StateVector::zeros(u.len());
    let mut probe = u.clone();
    for i in 0..u.len() {
        let x = probe[i];
        probe[i] = x + eps;
        let plus = misfit_phi(&probe, prob)?;
        probe[i] = x - eps;
        let minus = misfit_phi(&probe, prob)?;
        probe[i] = x;
        g[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct InflatedDrift {
    pub cfg: InflationConfig,
}

impl Drift for InflatedDrift {
    fn velocity(
        &self,
        ens: &Ensemble,
        images: &DMatrix<f64>,
        prob: &InverseProblem,
    ) -> Result<DMatrix<f64>> {
        if self.cfg.prior.dim() != ens.dim() {
            return Err(EkiError::DimensionMismatch {
                what: "inflation prior",
                expected: ens.dim(),
                found: self.cfg.prior.dim(),
            });
        }
        let g = gradients(ens, images, prob)?;
        let mut v = apply_empirical_cov(ens, &g);
        if self.cfg.alpha != 0.0 {
            v += self.cfg.prior.apply_matrix(&g) * self.cfg.alpha;
        }
        Ok(-v)
    }
}

pub fn inflated_drift(
    ens: &Ensemble,
    prob: &InverseProblem,
    cfg: &InflationConfig,
) -> Result<Vec<StateVector>> {
    let images = evaluate_ensemble(prob.forward.as_ref(), ens)?;
    let v = InflatedDrift { cfg: cfg.clone() }.velocity(ens, &images, prob)?;
    Ok(v.column_iter().map(|c| c.into_owned()).collect())
}
