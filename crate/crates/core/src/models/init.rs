//! Initial ensembles: one Karhunen-Loeve mode per member, and the adaptive
//! replacement of the first member.

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::model::{Ensemble, StateVector};
use crate::models::prior::PriorSpec;
use crate::rng::{standard_normal_vector, substream, Domain};

/// Member `j` is `sqrt(lambda_j) zeta_j z_j` with `zeta_j ~ N(0, 1)`.
///
/// The coefficients are drawn in mode order from one stream, so a smaller
/// ensemble with the same seed uses a prefix of a larger one's modes.
pub fn kl_initial_ensemble(prior: &PriorSpec, j: usize, seed: u64) -> Result<Ensemble> {
    if j == 0 {
        return Err(EkiError::EmptyEnsemble);
    }
    if j > prior.n_modes() {
        return Err(EkiError::TooManyModes {
            requested: j,
            available: prior.n_modes(),
        });
    }
    let mut rng = substream(seed, Domain::KlCoefficients, 0, 0);
    let zeta = standard_normal_vector(&mut rng, j);
    let lambda = prior.eigenvalues();
    let members: Vec<StateVector> = (0..j)
        .map(|k| prior.mode(k) * (lambda[k].sqrt() * zeta[k]))
        .collect();
    Ensemble::from_members(&members)
}

/// Coefficients `(0, 1/(J-1), ..., 1/(J-1))`.
///
/// Any choice with all `alpha_k` equal makes the first member the truth
/// itself, so the first coefficient is set apart.
pub fn default_adaptive_alphas(j: usize) -> Vec<f64> {
    if j < 2 {
        return vec![0.0; j];
    }
    let w = 1.0 / (j - 1) as f64;
    std::iter::once(0.0)
        .chain(std::iter::repeat_n(w, j - 1))
        .collect()
}

/// First member with `r_1 = sum_k alpha_k e_k`, hence `Ar_1` inside
/// `span{Ae_k}` for every linear map.
///
/// `u_1 = (1 - a_1 + sum a / J)^-1 (u_target + sum_{k>=2} a_k u_k - (sum a / J) sum_{k>=2} u_k)`.
pub fn adaptive_first_member(
    target: &StateVector,
    others: &[StateVector],
    alphas: &[f64],
) -> Result<StateVector> {
    let j = others.len() + 1;
    if alphas.len() != j {
        return Err(EkiError::DimensionMismatch {
            what: "adaptive coefficients",
            expected: j,
            found: alphas.len(),
        });
    }
    let jf = j as f64;
    let sum_a: f64 = alphas.iter().sum();
    let denom = 1.0 - alphas[0] + sum_a / jf;
    if denom.abs() < 1e-12 {
        return Err(EkiError::DegenerateCoefficients(denom));
    }
    let mut acc = target.clone();
    let mut tail_sum = DVector::zeros(target.len());
    for (k, u) in others.iter().enumerate() {
        if u.len() != target.len() {
            return Err(EkiError::DimensionMismatch {
                what: "ensemble member",
                expected: target.len(),
                found: u.len(),
            });
        }
        acc += u * alphas[k + 1];
        tail_sum += u;
    }
    acc -= tail_sum * (sum_a / jf);
    Ok(acc / denom)
}

/// Replaces member 0 of `ens` by [`adaptive_first_member`].
pub fn adaptive_ensemble(ens: &Ensemble, target: &StateVector, alphas: &[f64]) -> Result<Ensemble> {
    let others: Vec<StateVector> = ens.members().skip(1).collect();
    let first = adaptive_first_member(target, &others, alphas)?;
    let mut members = vec![first];
    members.extend(others);
    Ensemble::from_members(&members)
}

/// Minimum-norm `u` with `A u = y` (least squares when no exact solution exists).
pub fn min_norm_preimage(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<StateVector> {
    let svd = crate::linalg::checked_svd(a);
    let smax = svd.singular_values.max();
    svd.solve(y, 1e-14 * smax)
        .map_err(|_| EkiError::SolveFailed("minimum-norm preimage"))
}
