//! Ensembles, inverse problems and the elementary statistics shared by every
//! algorithm: means, empirical covariances and misfit functionals.
//!
//! Empirical covariances divide by `J`, not `J - 1`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{EkiError, Result};

pub type StateVector = DVector<f64>;
pub type ObsVector = DVector<f64>;

/// `J` particles in state space, stored as the columns of a `d x J` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn from_matrix(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() == 0 {
            return Err(EkiError::EmptyEnsemble);
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(EkiError::NonFinite("ensemble"));
        }
        Ok(Self { members })
    }

    pub fn from_members(members: &[StateVector]) -> Result<Self> {
        let first = members.first().ok_or(EkiError::EmptyEnsemble)?;
        let d = first.len();
        if let Some(bad) = members.iter().find(|m| m.len() != d) {
            return Err(EkiError::DimensionMismatch {
                what: "ensemble member",
                expected: d,
                found: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_columns(members))
    }

    /// Ensemble size `J`.
    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn member(&self, j: usize) -> StateVector {
        self.members.column(j).into_owned()
    }

    pub fn members(&self) -> impl Iterator<Item = StateVector> + '_ {
        self.members.column_iter().map(|c| c.into_owned())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.members
    }

    /// Columns `u^(j) - mean`.
    pub fn deviations(&self) -> DMatrix<f64> {
        centered(&self.members)
    }
}

pub(crate) fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let j = m.ncols() as f64;
    m.column_sum() / j
}

pub(crate) fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(m);
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

/// Arithmetic mean of the members.
pub fn ensemble_mean(ens: &Ensemble) -> StateVector {
    column_mean(ens.matrix())
}

pub(crate) fn stack_images(images: &[ObsVector], expected_cols: usize) -> Result<DMatrix<f64>> {
    if images.len() != expected_cols {
        return Err(EkiError::DimensionMismatch {
            what: "forward evaluations per member",
            expected: expected_cols,
            found: images.len(),
        });
    }
    let k = images[0].len();
    if let Some(bad) = images.iter().find(|g| g.len() != k) {
        return Err(EkiError::DimensionMismatch {
            what: "forward evaluation",
            expected: k,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_columns(images))
}

/// `C^pp`: empirical covariance of the forward images (`K x K`).
pub fn cov_pp(ens: &Ensemble, g_evals: &[ObsVector]) -> Result<DMatrix<f64>> {
    let g = stack_images(g_evals, ens.size())?;
    Ok(cov_pp_from_images(&g))
}

/// `C^up`: cross covariance between members and their images (`d x K`).
pub fn cov_up(ens: &Ensemble, g_evals: &[ObsVector]) -> Result<DMatrix<f64>> {
    let g = stack_images(g_evals, ens.size())?;
    Ok(cov_up_from_images(ens, &g))
}

pub(crate) fn cov_pp_from_images(images: &DMatrix<f64>) -> DMatrix<f64> {
    let dg = centered(images);
    (&dg * dg.transpose()) / images.ncols() as f64
}

pub(crate) fn cov_up_from_images(ens: &Ensemble, images: &DMatrix<f64>) -> DMatrix<f64> {
    let du = ens.deviations();
    let dg = centered(images);
    (&du * dg.transpose()) / ens.size() as f64
}

/// `C(u)`: empirical covariance of the members (`d x d`).
pub fn empirical_cov(ens: &Ensemble) -> DMatrix<f64> {
    let du = ens.deviations();
    (&du * du.transpose()) / ens.size() as f64
}

/// Which artificial observation noise `Sigma` accompanies `Gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Zero,
    EqualGamma,
}

/// Observation noise covariance `Gamma`, factored once.
#[derive(Clone)]
pub struct NoiseModel {
    gamma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    sigma_mode: SigmaMode,
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseModel")
            .field("gamma", &self.gamma)
            .field("sigma_mode", &self.sigma_mode)
            .finish()
    }
}

impl NoiseModel {
    pub fn new(gamma: DMatrix<f64>, sigma_mode: SigmaMode) -> Result<Self> {
        if !gamma.is_square() {
            return Err(EkiError::DimensionMismatch {
                what: "gamma (square)",
                expected: gamma.nrows(),
                found: gamma.ncols(),
            });
        }
        let scale = gamma.amax().max(f64::MIN_POSITIVE);
        if (&gamma - gamma.transpose()).amax() > 1e-12 * scale {
            return Err(EkiError::NotPositiveDefinite("gamma"));
        }
        let chol = Cholesky::new(gamma.clone()).ok_or(EkiError::NotPositiveDefinite("gamma"))?;
        if chol.l_dirty().diagonal().iter().any(|v| *v <= 0.0) {
            return Err(EkiError::NotPositiveDefinite("gamma"));
        }
        Ok(Self {
            gamma,
            chol,
            sigma_mode,
        })
    }

    /// `Gamma = variance * I_K`.
    pub fn isotropic(k: usize, variance: f64, sigma_mode: SigmaMode) -> Result<Self> {
        Self::new(DMatrix::identity(k, k) * variance, sigma_mode)
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    pub fn with_sigma_mode(&self, sigma_mode: SigmaMode) -> Self {
        Self {
            sigma_mode,
            ..self.clone()
        }
    }

    /// Lower Cholesky factor `L` with `Gamma = L L^T`.
    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `Gamma^{-1} v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }

    /// `L^{-1} v`, so that `<a, b>_Gamma = whiten(a) . whiten(b)`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn whiten_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l();
        l.solve_lower_triangular(m)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `<a, b>_Gamma = a^T Gamma^{-1} b`.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&self.solve(b))
    }

    pub fn norm_sq(&self, a: &DVector<f64>) -> f64 {
        self.whiten(a).norm_squared()
    }
}

/// A forward map `G: R^d -> R^K`.
pub trait ForwardMap: Send + Sync {
    fn state_dim(&self) -> usize;

    fn obs_dim(&self) -> usize;

    fn evaluate(&self, u: &StateVector) -> Result<ObsVector>;

    /// The `K x d` matrix `A` when `G(u) = A u`.
    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }

    /// `A^* v`; defaults to the transpose of the linear matrix.
    fn adjoint_apply(&self, v: &ObsVector) -> Option<StateVector> {
        self.linear_matrix().map(|a| a.tr_mul(v))
    }
}

/// `G(u) = A u` for an explicit matrix.
#[derive(Clone, Debug)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }
}

impl ForwardMap for LinearMap {
    fn state_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn obs_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn evaluate(&self, u: &StateVector) -> Result<ObsVector> {
        if u.len() != self.matrix.ncols() {
            return Err(EkiError::DimensionMismatch {
                what: "state vector",
                expected: self.matrix.ncols(),
                found: u.len(),
            });
        }
        Ok(&self.matrix * u)
    }

    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

/// `y = G(u) + eta` together with the noise model and, for synthetic
/// studies, the truth `u_dagger`.
#[derive(Clone)]
pub struct InverseProblem {
    pub forward: Arc<dyn ForwardMap>,
    pub data: ObsVector,
    pub noise: NoiseModel,
    pub truth: Option<StateVector>,
}

impl fmt::Debug for InverseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InverseProblem")
            .field("state_dim", &self.forward.state_dim())
            .field("obs_dim", &self.forward.obs_dim())
            .field("data", &self.data)
            .field("noise", &self.noise)
            .field("has_truth", &self.truth.is_some())
            .finish()
    }
}

impl InverseProblem {
    pub fn new(
        forward: Arc<dyn ForwardMap>,
        data: ObsVector,
        noise: NoiseModel,
        truth: Option<StateVector>,
    ) -> Result<Self> {
        let k = forward.obs_dim();
        if data.len() != k {
            return Err(EkiError::DimensionMismatch {
                what: "data vector",
                expected: k,
                found: data.len(),
            });
        }
        if noise.dim() != k {
            return Err(EkiError::DimensionMismatch {
                what: "gamma",
                expected: k,
                found: noise.dim(),
            });
        }
        if let Some(t) = &truth {
            if t.len() != forward.state_dim() {
                return Err(EkiError::DimensionMismatch {
                    what: "truth",
                    expected: forward.state_dim(),
                    found: t.len(),
                });
            }
        }
        Ok(Self {
            forward,
            data,
            noise,
            truth,
        })
    }

    pub fn linear_matrix(&self) -> Result<&DMatrix<f64>> {
        self.forward.linear_matrix().ok_or(EkiError::NotLinear)
    }

    pub fn truth(&self) -> Result<&StateVector> {
        self.truth.as_ref().ok_or(EkiError::MissingTruth)
    }

    pub fn with_data(&self, data: ObsVector) -> Result<Self> {
        Self::new(
            self.forward.clone(),
            data,
            self.noise.clone(),
            self.truth.clone(),
        )
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        Self::new(
            self.forward.clone(),
            self.data.clone(),
            noise,
            self.truth.clone(),
        )
    }
}

/// Forward images of every member as the columns of a `K x J` matrix.
///
/// Members are evaluated in parallel; each member is evaluated exactly once.
pub fn evaluate_ensemble(forward: &dyn ForwardMap, ens: &Ensemble) -> Result<DMatrix<f64>> {
    let k = forward.obs_dim();
    let cols: Vec<Result<ObsVector>> = (0..ens.size())
        .into_par_iter()
        .map(|j| {
            let g = forward.evaluate(&ens.member(j))?;
            if g.len() != k {
                return Err(EkiError::DimensionMismatch {
                    what: "forward output",
                    expected: k,
                    found: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(EkiError::NonFiniteForward { member: j });
            }
            Ok(g)
        })
        .collect();
    let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// `Phi(u; y) = 1/2 |Gamma^{-1/2} (y - G(u))|^2`.
pub fn misfit_phi(u: &StateVector, prob: &InverseProblem) -> Result<f64> {
    let g = prob.forward.evaluate(u)?;
    Ok(0.5 * prob.noise.norm_sq(&(&prob.data - g)))
}

/// `theta = G(u) - y_dagger`.
pub fn misfit_theta(
    u: &StateVector,
    y_dagger: &ObsVector,
    forward: &dyn ForwardMap,
) -> Result<ObsVector> {
    let g = forward.evaluate(u)?;
    if g.len() != y_dagger.len() {
        return Err(EkiError::DimensionMismatch {
            what: "observation",
            expected: g.len(),
            found: y_dagger.len(),
        });
    }
    Ok(g - y_dagger)
}

/// `D_u Phi(u) = A^* Gamma^{-1} (G(u) - y)`; needs an adjoint.
pub fn misfit_gradient(u: &StateVector, prob: &InverseProblem) -> Result<StateVector> {
    let g = prob.forward.evaluate(u)?;
    let w = prob.noise.solve(&(g - &prob.data));
    prob.forward
        .adjoint_apply(&w)
        .ok_or(EkiError::MissingAdjoint)
}
