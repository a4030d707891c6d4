//! Gaussian priors described by their eigenpairs.
//!
//! Modes are stored as nodal vectors orthonormal in the discrete `L^2`
//! product `quad_weight * a.b`. The Euclidean matrix of the covariance is
//! `sum_j lambda_j z_j z_j^T`, which is also the covariance of the samples
//! `sum_j sqrt(lambda_j) zeta_j z_j`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::models::fem1d::Mesh1D;
use crate::rng::standard_normal_vector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// `beta (-d^2/dx^2)^-1` with Dirichlet conditions.
    InverseShiftedLaplacian { beta: f64 },
    /// `(-Laplacian)^-2` with Dirichlet conditions.
    Bilaplacian,
    /// Eigenpairs supplied directly.
    Explicit,
}

#[derive(Clone, Debug)]
pub struct PriorSpec {
    pub kind: PriorKind,
    eigenvalues: DVector<f64>,
    modes: DMatrix<f64>,
    quad_weight: f64,
}

impl PriorSpec {
    pub fn new(
        kind: PriorKind,
        eigenvalues: DVector<f64>,
        modes: DMatrix<f64>,
        quad_weight: f64,
    ) -> Result<Self> {
        if eigenvalues.len() != modes.ncols() {
            return Err(EkiError::DimensionMismatch {
                what: "prior eigenpairs",
                expected: modes.ncols(),
                found: eigenvalues.len(),
            });
        }
        if eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(EkiError::InvalidConfig(
                "prior eigenvalues must be positive".into(),
            ));
        }
        if eigenvalues.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(EkiError::InvalidConfig(
                "prior eigenvalues must be non-increasing".into(),
            ));
        }
        Ok(Self {
            kind,
            eigenvalues,
            modes,
            quad_weight,
        })
    }

    /// `beta (-Laplacian)^-1` on the interior nodes of `mesh`:
    /// `lambda_j = beta / j^2`, `z_j = sqrt(2/pi) sin(j x)`.
    pub fn inverse_laplacian_1d(mesh: &Mesh1D, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(EkiError::InvalidConfig(format!(
                "prior scale must be positive, got {beta}"
            )));
        }
        let x = mesh.nodes();
        let d = x.len();
        let norm = (2.0 / PI).sqrt();
        let modes = DMatrix::from_fn(d, d, |i, j| norm * ((j + 1) as f64 * x[i]).sin());
        let eigenvalues = DVector::from_fn(d, |j, _| beta / ((j + 1) * (j + 1)) as f64);
        Self::new(
            PriorKind::InverseShiftedLaplacian { beta },
            eigenvalues,
            modes,
            mesh.width(),
        )
    }

    pub fn dim(&self) -> usize {
        self.modes.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn mode(&self, j: usize) -> DVector<f64> {
        self.modes.column(j).into_owned()
    }

    pub fn quad_weight(&self) -> f64 {
        self.quad_weight
    }

    pub fn l2_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.quad_weight * a.dot(b)
    }

    /// `sum_j sqrt(lambda_j) zeta_j z_j` from the given coefficients.
    pub fn synthesize(&self, zeta: &DVector<f64>) -> DVector<f64> {
        let scaled = zeta.component_mul(&self.eigenvalues.map(f64::sqrt));
        &self.modes * scaled
    }

    /// A draw from `N(0, C0)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let zeta = standard_normal_vector(rng, self.n_modes());
        self.synthesize(&zeta)
    }

    /// `C0 v` using the Euclidean matrix form.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let c = self.modes.tr_mul(v).component_mul(&self.eigenvalues);
        &self.modes * c
    }

    pub fn apply_matrix(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = self.modes.tr_mul(v);
        for (i, mut row) in c.row_iter_mut().enumerate() {
            row *= self.eigenvalues[i];
        }
        &self.modes * c
    }

    /// Dense `sum_j lambda_j z_j z_j^T`.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let mut scaled = self.modes.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.eigenvalues[j];
        }
        scaled * self.modes.transpose()
    }

    /// `C0^{1/2}`-weighted squared norm `sum_j lambda_j (z_j . v)^2`.
    pub fn half_norm_sq(&self, v: &DVector<f64>) -> f64 {
        self.modes
            .tr_mul(v)
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(c, l)| l * c * c)
            .sum()
    }

    /// Keeps only the leading `m` modes.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.n_modes() {
            return Err(EkiError::TooManyModes {
                requested: m,
                available: self.n_modes(),
            });
        }
        Self::new(
            self.kind.clone(),
            self.eigenvalues.rows(0, m).into_owned(),
            self.modes.columns(0, m).into_owned(),
            self.quad_weight,
        )
    }
}
