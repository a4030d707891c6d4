//! Piecewise-linear finite elements for `-p'' + p = u` on `(0, pi)` with
//! `p = 0` at both ends, observed at equispaced interior points.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::linalg::solve_tridiagonal;
use crate::model::{ForwardMap, ObsVector, StateVector};

/// Uniform mesh of `(0, pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mesh1D {
    pub n_cells: usize,
}

impl Mesh1D {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 4 || !n_cells.is_power_of_two() {
            return Err(EkiError::InvalidConfig(format!(
                "1-D mesh needs a power-of-two cell count >= 4, got {n_cells}"
            )));
        }
        Ok(Self { n_cells })
    }

    pub fn width(&self) -> f64 {
        PI / self.n_cells as f64
    }

    /// Number of interior nodes, the state dimension.
    pub fn n_interior(&self) -> usize {
        self.n_cells - 1
    }

    /// Interior node coordinates `x_i = i h`, `i = 1..n_cells-1`.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.width();
        (1..self.n_cells).map(|i| i as f64 * h).collect()
    }
}

/// Assembled 1-D system with its observation operator and the cached
/// parameter-to-observation matrix `A = O (S + M)^-1 M`.
#[derive(Clone, Debug)]
pub struct Fem1DLinear {
    pub mesh: Mesh1D,
    /// Diagonal and off-diagonal of `S + M`.
    system_diag: Vec<f64>,
    system_off: Vec<f64>,
    mass_diag: Vec<f64>,
    mass_off: Vec<f64>,
    pub observation: DMatrix<f64>,
    pub obs_points: Vec<f64>,
    matrix: DMatrix<f64>,
}

/// Observation points `k pi / n_intervals`, `k = 1..n_intervals-1`.
pub fn equispaced_points(n_intervals: usize) -> Vec<f64> {
    (1..n_intervals)
        .map(|k| k as f64 * PI / n_intervals as f64)
        .collect()
}

/// Rows of linear-interpolation weights on the interior nodes; the boundary
/// nodes carry the value zero and are omitted.
pub fn interpolation_matrix(mesh: &Mesh1D, points: &[f64]) -> Result<DMatrix<f64>> {
    let h = mesh.width();
    let d = mesh.n_interior();
    let mut o = DMatrix::zeros(points.len(), d);
    for (row, &x) in points.iter().enumerate() {
        if !(x > 0.0 && x < PI) {
            return Err(EkiError::InvalidConfig(format!(
                "observation point {x} outside (0, pi)"
            )));
        }
        let s = x / h;
        let mut left = s.floor() as usize;
        let mut frac = s - left as f64;
        if frac > 1.0 - 1e-12 {
            left += 1;
            frac = 0.0;
        } else if frac < 1e-12 {
            frac = 0.0;
        }
        // node index `left` (0 = boundary) gets 1 - frac, `left + 1` gets frac
        if left >= 1 && left <= d {
            o[(row, left - 1)] += 1.0 - frac;
        }
        if frac > 0.0 && left < d {
            o[(row, left)] += frac;
        }
    }
    Ok(o)
}

/// Assembles the system on `mesh` with observations at `kpi/16`.
pub fn assemble_fem_1d(mesh: Mesh1D) -> Result<Fem1DLinear> {
    Fem1DLinear::with_points(mesh, equispaced_points(16))
}

impl Fem1DLinear {
    pub fn with_points(mesh: Mesh1D, obs_points: Vec<f64>) -> Result<Self> {
        let h = mesh.width();
        let d = mesh.n_interior();
        let system_diag = vec![2.0 / h + 4.0 * h / 6.0; d];
        let system_off = vec![-1.0 / h + h / 6.0; d - 1];
        let mass_diag = vec![4.0 * h / 6.0; d];
        let mass_off = vec![h / 6.0; d - 1];
        let observation = interpolation_matrix(&mesh, &obs_points)?;
        let mut fem = Self {
            mesh,
            system_diag,
            system_off,
            mass_diag,
            mass_off,
            observation,
            obs_points,
            matrix: DMatrix::zeros(0, 0),
        };
        // A^T = M (S + M)^-1 O^T by symmetry: one solve per observation
        let k = fem.obs_points.len();
        let mut at = DMatrix::zeros(d, k);
        for row in 0..k {
            let o: Vec<f64> = fem.observation.row(row).iter().copied().collect();
            let w = solve_tridiagonal(&fem.system_diag, &fem.system_off, &o)?;
            at.set_column(row, &fem.mass_apply(&DVector::from_vec(w)));
        }
        fem.matrix = at.transpose();
        Ok(fem)
    }

    pub fn mass_apply(&self, u: &DVector<f64>) -> DVector<f64> {
        tridiag_apply(&self.mass_diag, &self.mass_off, u)
    }

    pub fn system_apply(&self, p: &DVector<f64>) -> DVector<f64> {
        tridiag_apply(&self.system_diag, &self.system_off, p)
    }

    /// Dense `S + M`.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let d = self.mesh.n_interior();
        DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                self.system_diag[i]
            } else if i.abs_diff(j) == 1 {
                self.system_off[i.min(j)]
            } else {
                0.0
            }
        })
    }

    /// Nodal FEM solution `p` for source `u`.
    pub fn solve(&self, u: &StateVector) -> Result<DVector<f64>> {
        let d = self.mesh.n_interior();
        if u.len() != d {
            return Err(EkiError::DimensionMismatch {
                what: "1-D source",
                expected: d,
                found: u.len(),
            });
        }
        let rhs = self.mass_apply(u);
        let p = solve_tridiagonal(&self.system_diag, &self.system_off, rhs.as_slice())?;
        Ok(DVector::from_vec(p))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

fn tridiag_apply(diag: &[f64], off: &[f64], u: &DVector<f64>) -> DVector<f64> {
    let n = diag.len();
    DVector::from_fn(n, |i, _| {
        let mut s = diag[i] * u[i];
        if i > 0 {
            s += off[i - 1] * u[i - 1];
        }
        if i + 1 < n {
            s += off[i] * u[i + 1];
        }
        s
    })
}

/// Solve-then-observe path of the forward map.
pub fn linear_forward(fem: &Fem1DLinear, u: &StateVector) -> Result<ObsVector> {
    let p = fem.solve(u)?;
    Ok(&fem.observation * p)
}

impl ForwardMap for Fem1DLinear {
    fn state_dim(&self) -> usize {
        self.mesh.n_interior()
    }

    fn obs_dim(&self) -> usize {
        self.obs_points.len()
    }

    fn evaluate(&self, u: &StateVector) -> Result<ObsVector> {
        if u.len() != self.state_dim() {
            return Err(EkiError::DimensionMismatch {
                what: "1-D state",
                expected: self.state_dim(),
                found: u.len(),
            });
        }
        Ok(&self.matrix * u)
    }

    fn linear_matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nodal_error(n: usize) -> f64 {
        let fem = assemble_fem_1d(Mesh1D::new(n).unwrap()).unwrap();
        let x = fem.mesh.nodes();
        let u = DVector::from_iterator(x.len(), x.iter().map(|x| x.sin()));
        let p = fem.solve(&u).unwrap();
        x.iter()
            .zip(p.iter())
            .map(|(x, p)| (p - x.sin() / 2.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_sine() {
        assert!(nodal_error(256) <= 1e-4);
    }

    #[test]
    fn second_order_under_refinement() {
        let e1 = nodal_error(64);
        let e2 = nodal_error(128);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn zero_source_zero_data() {
        let fem = assemble_fem_1d(Mesh1D::new(256).unwrap()).unwrap();
        let zero = DVector::zeros(255);
        assert_eq!(linear_forward(&fem, &zero).unwrap(), DVector::zeros(15));
    }

    #[test]
    fn observations_of_sine() {
        let fem = assemble_fem_1d(Mesh1D::new(256).unwrap()).unwrap();
        let x = fem.mesh.nodes();
        let u = DVector::from_iterator(x.len(), x.iter().map(|x| x.sin()));
        let obs = linear_forward(&fem, &u).unwrap();
        for (k, &xk) in fem.obs_points.iter().enumerate() {
            assert!((obs[k] - xk.sin() / 2.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn cached_matrix_agrees_with_solve() {
        let fem = assemble_fem_1d(Mesh1D::new(256).unwrap()).unwrap();
        let u = DVector::from_fn(255, |i, _| ((i * 7919) % 97) as f64 / 97.0 - 0.5);
        let a = linear_forward(&fem, &u).unwrap();
        let b = fem.evaluate(&u).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
    }

    #[test]
    fn observation_rows_sum_to_one() {
        let fem = assemble_fem_1d(Mesh1D::new(256).unwrap()).unwrap();
        for r in 0..15 {
            assert_relative_eq!(fem.observation.row(r).sum(), 1.0, epsilon = 1e-14);
        }
        // the points are nodes 16 k
        for k in 1..16 {
            assert_eq!(fem.observation[(k - 1, 16 * k - 1)], 1.0);
        }
    }

    #[test]
    fn coarse_mesh_interpolates() {
        let mesh = Mesh1D::new(8).unwrap();
        let o = interpolation_matrix(&mesh, &[PI / 16.0]).unwrap();
        // halfway between the boundary and node 1: only half the weight is interior
        assert_relative_eq!(o[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(o.row(0).sum(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn system_is_spd() {
        let fem = assemble_fem_1d(Mesh1D::new(32).unwrap()).unwrap();
        let eig = fem.system_matrix().symmetric_eigenvalues();
        assert!(eig.min() > 0.0);
    }

    #[test]
    fn mesh_validation() {
        assert!(Mesh1D::new(2).is_err());
        assert!(Mesh1D::new(100).is_err());
    }
}
