//! `-div(exp(u) grad p) = f` on `(-1, 1)^2`, `p = 0` on the boundary, with
//! piecewise-linear elements on a uniform right-triangle mesh and a
//! piecewise-constant coefficient per element.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::linalg::BandCholesky;
use crate::model::{ForwardMap, ObsVector, StateVector};
use crate::models::prior::{PriorKind, PriorSpec};

/// Nonlinear 2-D forward map. The state holds `u` at every mesh node,
/// boundary included.
#[derive(Clone, Debug)]
pub struct Fem2DNonlinear {
    /// Cells per side.
    pub n: usize,
    pub source: f64,
    obs_nodes: Vec<usize>,
}

impl Fem2DNonlinear {
    /// `n` cells per side; `n` must be a multiple of 8 so the 7 x 7
    /// observation grid `-1 + k/4` falls on nodes.
    pub fn new(n: usize, source: f64) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(8) {
            return Err(EkiError::InvalidConfig(format!(
                "2-D mesh needs a multiple of 8 cells per side, got {n}"
            )));
        }
        let step = n / 8;
        let side = n + 1;
        let mut obs_nodes = Vec::with_capacity(49);
        for ky in 1..=7 {
            for kx in 1..=7 {
                obs_nodes.push(ky * step * side + kx * step);
            }
        }
        Ok(Self {
            n,
            source,
            obs_nodes,
        })
    }

    /// Mesh width `2^-4` and source 100.
    pub fn standard() -> Self {
        Self::new(32, 100.0).expect("valid standard mesh")
    }

    pub fn width(&self) -> f64 {
        2.0 / self.n as f64
    }

    pub fn n_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    fn n_interior(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    pub fn node_index(&self, i: usize, k: usize) -> usize {
        k * (self.n + 1) + i
    }

    pub fn node_coords(&self) -> Vec<[f64; 2]> {
        let h = self.width();
        let side = self.n + 1;
        (0..self.n_nodes())
            .map(|g| [-1.0 + (g % side) as f64 * h, -1.0 + (g / side) as f64 * h])
            .collect()
    }

    pub fn obs_nodes(&self) -> &[usize] {
        &self.obs_nodes
    }

    fn interior_index(&self, i: usize, k: usize) -> Option<usize> {
        if i == 0 || k == 0 || i == self.n || k == self.n {
            None
        } else {
            Some((k - 1) * (self.n - 1) + (i - 1))
        }
    }

    /// Vertex triples `(i, k)` of the two triangles of cell `(ci, ck)`.
    fn cell_triangles(ci: usize, ck: usize) -> [[(usize, usize); 3]; 2] {
        [
            [(ci, ck), (ci + 1, ck), (ci + 1, ck + 1)],
            [(ci, ck), (ci + 1, ck + 1), (ci, ck + 1)],
        ]
    }

    /// Visits every triangle with its interior indices, local stiffness
    /// (unit coefficient) and the element coefficient.
    fn for_each_element(
        &self,
        u: &StateVector,
        mut visit: impl FnMut([Option<usize>; 3], &[[f64; 3]; 3], f64),
    ) {
        let h = self.width();
        for ck in 0..self.n {
            for ci in 0..self.n {
                for tri in Self::cell_triangles(ci, ck) {
                    let pts = tri.map(|(i, k)| [i as f64 * h, k as f64 * h]);
                    let local = p1_stiffness(&pts);
                    let mean_u = tri
                        .iter()
                        .map(|&(i, k)| u[self.node_index(i, k)])
                        .sum::<f64>()
                        / 3.0;
                    let dofs = tri.map(|(i, k)| self.interior_index(i, k));
                    visit(dofs, &local, mean_u.exp());
                }
            }
        }
    }

    fn check_state(&self, u: &StateVector) -> Result<()> {
        if u.len() != self.n_nodes() {
            return Err(EkiError::DimensionMismatch {
                what: "2-D state",
                expected: self.n_nodes(),
                found: u.len(),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(EkiError::NonFinite("2-D log-permeability"));
        }
        Ok(())
    }

    fn load(&self) -> Vec<f64> {
        // each interior node touches six triangles of area h^2 / 2
        let h = self.width();
        vec![self.source * h * h; self.n_interior()]
    }

    /// Nodal solution on all mesh nodes (boundary values zero).
    pub fn solve(&self, u: &StateVector) -> Result<DVector<f64>> {
        self.check_state(u)?;
        let n_int = self.n_interior();
        let bw = self.n;
        let w = bw + 1;
        let mut band = vec![0.0; n_int * w];
        self.for_each_element(u, |dofs, local, kappa| {
            for a in 0..3 {
                let Some(p) = dofs[a] else { continue };
                for b in 0..3 {
                    let Some(q) = dofs[b] else { continue };
                    if q <= p {
                        band[p * w + (q + bw - p)] += kappa * local[a][b];
                    }
                }
            }
        });
        let chol = BandCholesky::factor(n_int, bw, band)?;
        let mut p = self.load();
        chol.solve_in_place(&mut p);
        let mut full = DVector::zeros(self.n_nodes());
        for k in 1..self.n {
            for i in 1..self.n {
                full[self.node_index(i, k)] = p[self.interior_index(i, k).unwrap_or_default()];
            }
        }
        Ok(full)
    }

    /// Dense interior stiffness matrix for the coefficient `exp(u)`.
    pub fn stiffness_dense(&self, u: &StateVector) -> Result<DMatrix<f64>> {
        self.check_state(u)?;
        let n_int = self.n_interior();
        let mut m = DMatrix::zeros(n_int, n_int);
        self.for_each_element(u, |dofs, local, kappa| {
            for a in 0..3 {
                for b in 0..3 {
                    if let (Some(p), Some(q)) = (dofs[a], dofs[b]) {
                        m[(p, q)] += kappa * local[a][b];
                    }
                }
            }
        });
        Ok(m)
    }
}

/// Local stiffness of a linear triangle with unit coefficient.
fn p1_stiffness(p: &[[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    // grad phi_a = (y_b - y_c, x_c - x_b) / det for (a, b, c) cyclic
    let grads: [[f64; 2]; 3] = std::array::from_fn(|a| {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        [(p[b][1] - p[c][1]) / det, (p[c][0] - p[b][0]) / det]
    });
    std::array::from_fn(|a| {
        std::array::from_fn(|b| area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]))
    })
}

/// Observations of the solution at the 49 grid nodes.
pub fn nonlinear_forward_2d(fem: &Fem2DNonlinear, u: &StateVector) -> Result<ObsVector> {
    let p = fem.solve(u)?;
    Ok(DVector::from_iterator(
        fem.obs_nodes.len(),
        fem.obs_nodes.iter().map(|&g| p[g]),
    ))
}

impl ForwardMap for Fem2DNonlinear {
    fn state_dim(&self) -> usize {
        self.n_nodes()
    }

    fn obs_dim(&self) -> usize {
        self.obs_nodes.len()
    }

    fn evaluate(&self, u: &StateVector) -> Result<ObsVector> {
        nonlinear_forward_2d(self, u)
    }
}

impl PriorSpec {
    /// `(-Laplacian)^-2` on the nodes of `fem`, from the eigenpairs of the
    /// lumped-mass Dirichlet Laplacian:
    /// `z_mn = sin(m pi i / N) sin(n pi k / N)`,
    /// `mu_mn = (4 / h^2) (sin^2(m pi / 2N) + sin^2(n pi / 2N))`, `lambda = mu^-2`.
    pub fn bilaplacian_2d(fem: &Fem2DNonlinear) -> Result<Self> {
        let n = fem.n;
        let h = fem.width();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity((n - 1) * (n - 1));
        for m in 1..n {
            for q in 1..n {
                let s1 = (m as f64 * PI / (2.0 * n as f64)).sin();
                let s2 = (q as f64 * PI / (2.0 * n as f64)).sin();
                let mu = 4.0 / (h * h) * (s1 * s1 + s2 * s2);
                pairs.push((1.0 / (mu * mu), m, q));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        // discrete L^2 normalization with weight h^2: sum sin^2 sin^2 = (N/2)^2
        let scale = 2.0 / (h * n as f64);
        let side = n + 1;
        let modes = DMatrix::from_fn(fem.n_nodes(), pairs.len(), |g, c| {
            let (_, m, q) = pairs[c];
            let (i, k) = (g % side, g / side);
            scale
                * (m as f64 * PI * i as f64 / n as f64).sin()
                * (q as f64 * PI * k as f64 / n as f64).sin()
        });
        let eigenvalues = DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.0));
        PriorSpec::new(PriorKind::Bilaplacian, eigenvalues, modes, h * h)
    }
}
