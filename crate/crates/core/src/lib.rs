//! Ensemble Kalman inversion.
//!
//! The crate provides the discrete EnKF iteration for inverse problems, its
//! continuous-time gradient-flow limit, closed-form results for the linear
//! noise-free case, variants that leave the initial ensemble subspace, and
//! the elliptic forward models and experiment runner used to study them.
//!
//! ```
//! use std::sync::Arc;
//! use eki::{Ensemble, FlowConfig, InverseProblem, LinearGradientFlow, LinearMap, NoiseModel, SigmaMode};
//! use nalgebra::{dmatrix, dvector};
//!
//! let a = dmatrix![1.0, 0.0; 0.0, 2.0];
//! let truth = dvector![0.5, -0.25];
//! let prob = InverseProblem::new(
//!     Arc::new(LinearMap::new(a.clone())),
//!     &a * &truth,
//!     NoiseModel::isotropic(2, 1.0, SigmaMode::Zero).unwrap(),
//!     Some(truth),
//! )
//! .unwrap();
//! let ens = Ensemble::from_members(&[dvector![1.0, 0.0], dvector![0.0, 1.0], dvector![-1.0, -1.0]]).unwrap();
//! let traj = eki::integrate(&prob, &ens, &FlowConfig::new(1.0, 1e-3), &LinearGradientFlow).unwrap();
//! let phi = traj.mean_series(eki::Quantity::Phi).unwrap();
//! assert!(phi.last().unwrap() < &phi[0]);
//! ```

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod discrete;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod linalg;
pub mod model;
pub mod models;
pub mod rng;
pub mod trajectory;
pub mod variants;

pub use analysis::{
    analytic_E, analytic_L, collapse_rate_fit, deviation_matrices, matrix_ode_rhs, residual_split,
    DeviationMatrices, ResidualSplit, SpectralE,
};
pub use discrete::{enkf_update, run_discrete, subspace_distance, DiscreteConfig};
pub use error::{EkiError, Result};
pub use flow::{
    drift_general, drift_linear_gradflow, integrate, integrate_until, Drift, FlowConfig,
    GeneralDrift, LinearGradientFlow, Scheme,
};
pub use model::{
    cov_pp, cov_up, empirical_cov, ensemble_mean, evaluate_ensemble, misfit_gradient, misfit_phi,
    misfit_theta, Ensemble, ForwardMap, InverseProblem, LinearMap, NoiseModel, ObsVector,
    SigmaMode, StateVector,
};
pub use models::{Fem1DLinear, Fem2DNonlinear, Mesh1D, PriorKind, PriorSpec};
pub use trajectory::{Diagnostics, MemberDiagnostics, Quantity, Trajectory};
