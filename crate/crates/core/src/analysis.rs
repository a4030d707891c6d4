//! Linear-case analysis: the Gram matrices `E`, `F`, `R`, their matrix ODEs
//! and closed-form solutions, and the `Gamma`-orthogonal residual split.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EkiError, Result};
use crate::linalg::sym_pinv;
use crate::model::{Ensemble, InverseProblem, NoiseModel, ObsVector, StateVector};
use crate::trajectory::Trajectory;

/// Eigenvalues of `E(0)` below this fraction of the largest are zero.
pub const SPECTRAL_CUTOFF: f64 = 1e-12;

/// `E_lj = <Ae_l, Ae_j>`, `F_lj = <Ar_l, Ae_j>`, `R_lj = <Ar_l, Ar_j>` in the `Gamma` inner product.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationMatrices {
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Columns `Ae_j` and `Ar_j` of an ensemble for a linear problem.
pub fn mapped_deviations(
    ens: &Ensemble,
    truth: &StateVector,
    prob: &InverseProblem,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = prob.linear_matrix()?;
    let ae = a * ens.deviations();
    let mut r = ens.matrix().clone();
    for mut c in r.column_iter_mut() {
        c -= truth;
    }
    Ok((ae, a * r))
}

pub fn deviation_matrices(
    ens: &Ensemble,
    truth: &StateVector,
    prob: &InverseProblem,
) -> Result<DeviationMatrices> {
    let (ae, ar) = mapped_deviations(ens, truth, prob)?;
    Ok(DeviationMatrices::from_mapped(&ae, &ar, &prob.noise))
}

impl DeviationMatrices {
    pub fn from_mapped(ae: &DMatrix<f64>, ar: &DMatrix<f64>, noise: &NoiseModel) -> Self {
        let we = noise.whiten_matrix(ae);
        let wr = noise.whiten_matrix(ar);
        Self {
            e: we.tr_mul(&we),
            f: wr.tr_mul(&we),
            r: wr.tr_mul(&wr),
        }
    }

    pub fn size(&self) -> usize {
        self.e.nrows()
    }
}

/// Right-hand sides `(-(2/J) E^2, -(2/J) F E, -(2/J) F F^T)`.
pub fn matrix_ode_rhs(
    dm: &DeviationMatrices,
    j: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let c = -2.0 / j as f64;
    (
        &dm.e * &dm.e * c,
        &dm.f * &dm.e * c,
        &dm.f * dm.f.transpose() * c,
    )
}

/// `E(0) = X diag(lambda0) X^T` with `lambda0` sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralE {
    pub x: DMatrix<f64>,
    pub lambda0: DVector<f64>,
}

impl SpectralE {
    pub fn from_e(e0: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(e0.clone());
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v));
        let lambda0 = DVector::from_iterator(
            n,
            order.iter().map(|&i| {
                let v = eig.eigenvalues[i];
                if v > SPECTRAL_CUTOFF * top {
                    v
                } else {
                    0.0
                }
            }),
        );
        let x = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { x, lambda0 }
    }

    fn reconstruct(&self, vals: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.lambda0.map(vals);
        &self.x * DMatrix::from_diagonal(&d) * self.x.transpose()
    }
}

/// `lambda(t) = (2t/J + 1/lambda0)^-1`, zero for zero modes.
pub fn analytic_eigenvalue(lambda0: f64, t: f64, j: usize) -> f64 {
    if lambda0 > 0.0 {
        1.0 / (2.0 * t / j as f64 + 1.0 / lambda0)
    } else {
        0.0
    }
}

/// `omega(t) = (2 lambda0 t / J + 1)^-1/2`, one for zero modes.
pub fn analytic_omega(lambda0: f64, t: f64, j: usize) -> f64 {
    (2.0 * lambda0 * t / j as f64 + 1.0).powf(-0.5)
}

/// Closed-form `E(t)` of the linear noise-free flow.
#[allow(non_snake_case)]
pub fn analytic_E(spectral: &SpectralE, t: f64, j: usize) -> DMatrix<f64> {
    spectral.reconstruct(|l| analytic_eigenvalue(l, t, j))
}

/// `L(t)` with `Ae_j(t) = sum_k L_kj(t) Ae_k(0)`.
#[allow(non_snake_case)]
pub fn analytic_L(spectral: &SpectralE, t: f64, j: usize) -> DMatrix<f64> {
    spectral.reconstruct(|l| analytic_omega(l, t, j))
}

/// Split of a mapped residual into its part in `span{Ae_j(0)}` and the
/// `Gamma`-orthogonal remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSplit {
    pub parallel: ObsVector,
    pub perp: ObsVector,
}

/// `Gamma`-orthogonal projector onto the span of fixed observation-space vectors.
#[derive(Clone, Debug)]
pub struct GammaProjector {
    basis: DMatrix<f64>,
    gram_pinv: DMatrix<f64>,
    noise: NoiseModel,
    rank: usize,
}

impl GammaProjector {
    pub fn new(basis0: &[ObsVector], noise: &NoiseModel) -> Result<Self> {
        let k = noise.dim();
        if let Some(bad) = basis0.iter().find(|b| b.len() != k) {
            return Err(EkiError::DimensionMismatch {
                what: "projection basis vector",
                expected: k,
                found: bad.len(),
            });
        }
        let basis = if basis0.is_empty() {
            DMatrix::zeros(k, 0)
        } else {
            DMatrix::from_columns(basis0)
        };
        let wb = noise.whiten_matrix(&basis);
        let gram = wb.tr_mul(&wb);
        let gram_pinv = sym_pinv(&gram, SPECTRAL_CUTOFF);
        let rank = numerical_rank(&gram, SPECTRAL_CUTOFF);
        Ok(Self {
            basis,
            gram_pinv,
            noise: noise.clone(),
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn split(&self, v: &ObsVector) -> ResidualSplit {
        if self.basis.ncols() == 0 {
            return ResidualSplit {
                parallel: ObsVector::zeros(v.len()),
                perp: v.clone(),
            };
        }
        let rhs = self.basis.tr_mul(&self.noise.solve(v));
        let coeffs = &self.gram_pinv * rhs;
        let parallel = &self.basis * coeffs;
        let perp = v - &parallel;
        ResidualSplit { parallel, perp }
    }
}

fn numerical_rank(sym: &DMatrix<f64>, rel: f64) -> usize {
    if sym.nrows() == 0 {
        return 0;
    }
    let eig = SymmetricEigen::new(sym.clone());
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    eig.eigenvalues
        .iter()
        .filter(|v| top > 0.0 && v.abs() > rel * top)
        .count()
}

/// Splits every `Ar_j` against `basis0 = {Ae_j(0)}`.
pub fn residual_split(
    ens: &Ensemble,
    truth: &StateVector,
    basis0: &[ObsVector],
    prob: &InverseProblem,
) -> Result<Vec<ResidualSplit>> {
    let projector = GammaProjector::new(basis0, &prob.noise)?;
    let (_, ar) = mapped_deviations(ens, truth, prob)?;
    Ok(ar
        .column_iter()
        .map(|c| projector.split(&c.into_owned()))
        .collect())
}

/// Splits every misfit `theta_j = A u_j - y` against `basis0`.
pub fn misfit_split(
    ens: &Ensemble,
    basis0: &[ObsVector],
    prob: &InverseProblem,
) -> Result<Vec<ResidualSplit>> {
    let projector = GammaProjector::new(basis0, &prob.noise)?;
    let a = prob.linear_matrix()?;
    Ok(ens
        .members()
        .map(|u| projector.split(&(a * u - &prob.data)))
        .collect())
}

/// The mapped deviations `Ae_j` of an ensemble, as a list.
pub fn mapped_basis(ens: &Ensemble, prob: &InverseProblem) -> Result<Vec<ObsVector>> {
    let a = prob.linear_matrix()?;
    Ok((a * ens.deviations())
        .column_iter()
        .map(|c| c.into_owned())
        .collect())
}

/// Whether `span{Ae_j(0)}` has the largest dimension it can, `min(J - 1, K)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanReport {
    pub rank: usize,
    pub maximal: usize,
}

impl SpanReport {
    pub fn is_maximal(&self) -> bool {
        self.rank == self.maximal
    }
}

pub fn span_report(ens: &Ensemble, prob: &InverseProblem) -> Result<SpanReport> {
    let basis = mapped_basis(ens, prob)?;
    let projector = GammaProjector::new(&basis, &prob.noise)?;
    let maximal = (ens.size().saturating_sub(1)).min(prob.data.len());
    Ok(SpanReport {
        rank: projector.rank(),
        maximal,
    })
}

/// Least-squares slope of `log v` against `log t`.
pub fn loglog_slope(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() {
        return Err(EkiError::DimensionMismatch {
            what: "slope fit series",
            expected: times.len(),
            found: values.len(),
        });
    }
    if times.len() < 2 {
        return Err(EkiError::InvalidConfig(
            "slope fit needs at least two points".into(),
        ));
    }
    for (&t, &v) in times.iter().zip(values) {
        if !(t > 0.0) {
            return Err(EkiError::NonPositive { time: t, value: t });
        }
        if !(v > 0.0) {
            return Err(EkiError::NonPositive { time: t, value: v });
        }
    }
    let xs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(EkiError::InvalidConfig(
            "slope fit needs distinct times".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Slope of `log ||E(t)||_F` against `log t` over the recorded times in `[t0, t1]`.
pub fn collapse_rate_fit(traj: &Trajectory, window: (f64, f64)) -> Result<f64> {
    let norms = traj.e_fro_series().ok_or(EkiError::MissingTruth)?;
    let (t0, t1) = window;
    let eps = 1e-9 * t1.abs().max(1.0);
    let (ts, vs): (Vec<f64>, Vec<f64>) = traj
        .times
        .iter()
        .zip(&norms)
        .filter(|(t, _)| **t >= t0 - eps && **t <= t1 + eps)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if ts.is_empty() {
        return Err(EkiError::InvalidConfig(format!(
            "window [{t0}, {t1}] contains no recorded times"
        )));
    }
    loglog_slope(&ts, &vs)
}
