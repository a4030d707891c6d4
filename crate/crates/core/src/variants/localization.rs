//! Entrywise damping of the empirical covariance by `exp(-|x - y|^r)`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{EkiError, Result};
use crate::flow::Drift;
use crate::model::{empirical_cov, Ensemble, InverseProblem};
use crate::variants::inflation::gradients;

#[derive(Clone, Debug)]
pub struct LocalizationConfig {
    pub r_exponent: u32,
    /// Physical coordinates of the state entries.
    pub coords: Arc<Vec<[f64; 2]>>,
}

impl LocalizationConfig {
    pub fn new(r_exponent: u32, coords: Vec<[f64; 2]>) -> Result<Self> {
        if r_exponent == 0 {
            return Err(EkiError::InvalidConfig(
                "localization exponent must be >= 1".into(),
            ));
        }
        Ok(Self {
            r_exponent,
            coords: Arc::new(coords),
        })
    }

    /// Coordinates `(x, 0)` for points on a line.
    pub fn on_line(r_exponent: u32, xs: &[f64]) -> Result<Self> {
        Self::new(r_exponent, xs.iter().map(|&x| [x, 0.0]).collect())
    }
}

/// `rho_ij = exp(-|x_i - x_j|^r)` with the Euclidean distance.
pub fn localization_kernel(cfg: &LocalizationConfig) -> DMatrix<f64> {
    let c = &cfg.coords;
    let r = cfg.r_exponent as i32;
    DMatrix::from_fn(c.len(), c.len(), |i, j| {
        let dx = c[i][0] - c[j][0];
        let dy = c[i][1] - c[j][1];
        let dist = (dx * dx + dy * dy).sqrt();
        (-dist.powi(r)).exp()
    })
}

/// Hadamard product of `cov` with the localization kernel.
pub fn localized_cov(cov: &DMatrix<f64>, cfg: &LocalizationConfig) -> Result<DMatrix<f64>> {
    if cov.nrows() != cfg.coords.len() || cov.ncols() != cfg.coords.len() {
        return Err(EkiError::DimensionMismatch {
            what: "covariance vs localization coordinates",
            expected: cfg.coords.len(),
            found: cov.nrows(),
        });
    }
    Ok(cov.component_mul(&localization_kernel(cfg)))
}

/// `du_j/dt = -(rho o C(u)) D Phi(u_j)`.
#[derive(Clone, Debug)]
pub struct LocalizedDrift {
    rho: DMatrix<f64>,
}

impl LocalizedDrift {
    pub fn new(cfg: &LocalizationConfig) -> Self {
        Self {
            rho: localization_kernel(cfg),
        }
    }
}

impl Drift for LocalizedDrift {
    fn velocity(
        &self,
        ens: &Ensemble,
        images: &DMatrix<f64>,
        prob: &InverseProblem,
    ) -> Result<DMatrix<f64>> {
        if self.rho.nrows() != ens.dim() {
            return Err(EkiError::DimensionMismatch {
                what: "localization kernel",
                expected: ens.dim(),
                found: self.rho.nrows(),
            });
        }
        let g = gradients(ens, images, prob)?;
        let c = empirical_cov(ens).component_mul(&self.rho);
        Ok(-(c * g))
    }
}
