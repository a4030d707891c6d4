//! The forward models, priors and initial-ensemble constructions.

pub mod fem1d;
pub mod fem2d;
pub mod init;
pub mod persist;
pub mod prior;

pub use fem1d::{assemble_fem_1d, linear_forward, Fem1DLinear, Mesh1D};
pub use fem2d::{nonlinear_forward_2d, Fem2DNonlinear};
pub use init::{
    adaptive_ensemble, adaptive_first_member, default_adaptive_alphas, kl_initial_ensemble,
    min_norm_preimage,
};
pub use prior::{PriorKind, PriorSpec};
