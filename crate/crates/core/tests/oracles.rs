//! Library results against independent dense or closed-form computations.

use std::sync::Arc;

use eki::models::{nonlinear_forward_2d, Fem2DNonlinear};
use eki::{
    cov_pp, cov_up, enkf_update, evaluate_ensemble, integrate, DiscreteConfig, Ensemble,
    FlowConfig, GeneralDrift, InverseProblem, LinearMap, NoiseModel, SigmaMode,
};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

fn linear_problem() -> InverseProblem {
    let a = dmatrix![1.0, 0.5, 0.0; 0.0, 1.0, -1.0];
    let gamma = dmatrix![0.5, 0.1; 0.1, 0.3];
    InverseProblem::new(
        Arc::new(LinearMap::new(a)),
        dvector![1.0, -0.5],
        NoiseModel::new(gamma, SigmaMode::Zero).unwrap(),
        None,
    )
    .unwrap()
}

fn ensemble() -> Ensemble {
    Ensemble::from_members(&[
        dvector![0.2, 1.0, -0.3],
        dvector![1.5, -0.4, 0.0],
        dvector![-0.7, 0.3, 0.9],
        dvector![0.1, 0.1, 0.4],
    ])
    .unwrap()
}

/// Covariances by explicit sums over members.
fn covariances(ens: &Ensemble, a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let j = ens.size();
    let members: Vec<DVector<f64>> = ens.members().collect();
    let images: Vec<DVector<f64>> = members.iter().map(|u| a * u).collect();
    let ubar = members.iter().fold(DVector::zeros(3), |s, u| s + u) / j as f64;
    let gbar = images.iter().fold(DVector::zeros(2), |s, g| s + g) / j as f64;
    let mut cup = DMatrix::zeros(3, 2);
    let mut cpp = DMatrix::zeros(2, 2);
    for (u, g) in members.iter().zip(&images) {
        cup += (u - &ubar) * (g - &gbar).transpose();
        cpp += (g - &gbar) * (g - &gbar).transpose();
    }
    (cup / j as f64, cpp / j as f64)
}

#[test]
fn covariances_match_explicit_sums() {
    let prob = linear_problem();
    let ens = ensemble();
    let a = prob.linear_matrix().unwrap().clone();
    let images: Vec<DVector<f64>> = ens.members().map(|u| &a * u).collect();
    let (cup, cpp) = covariances(&ens, &a);
    approx::assert_relative_eq!(cov_up(&ens, &images).unwrap(), cup, epsilon = 1e-14);
    approx::assert_relative_eq!(cov_pp(&ens, &images).unwrap(), cpp, epsilon = 1e-14);
}

#[test]
fn update_matches_dense_kalman_gain() {
    let prob = linear_problem();
    let ens = ensemble();
    let a = prob.linear_matrix().unwrap().clone();
    let h = 0.3;
    let (cup, cpp) = covariances(&ens, &a);
    let gain = &cup * (cpp + prob.noise.gamma() / h).try_inverse().unwrap();
    let cfg = DiscreteConfig {
        n_steps: 1,
        step_size: h,
        perturb_obs: false,
        rng_seed: 0,
        record_every: 1,
    };
    let next = enkf_update(&ens, &prob, &cfg, 0).unwrap();
    for (j, u) in ens.members().enumerate() {
        let expected = &u + &gain * (&prob.data - &a * &u);
        approx::assert_relative_eq!(next.member(j), expected, epsilon = 1e-13);
    }
}

#[test]
fn euler_step_matches_explicit_drift() {
    let prob = linear_problem();
    let ens = ensemble();
    let a = prob.linear_matrix().unwrap().clone();
    let dt = 1e-3;
    let (cup, _) = covariances(&ens, &a);
    let gamma_inv = prob.noise.gamma().clone().try_inverse().unwrap();
    let traj = integrate(&prob, &ens, &FlowConfig::new(dt, dt), &GeneralDrift).unwrap();
    let next = traj.last_ensemble().unwrap();
    for (j, u) in ens.members().enumerate() {
        let expected = &u + &cup * &gamma_inv * (&prob.data - &a * &u) * dt;
        approx::assert_relative_eq!(next.member(j), expected, epsilon = 1e-14);
    }
}

/// P1 stiffness from the inverse of the barycentric coordinate matrix.
fn element_stiffness(p: [[f64; 2]; 3]) -> DMatrix<f64> {
    let m = DMatrix::from_fn(3, 3, |r, c| if c == 0 { 1.0 } else { p[r][c - 1] });
    let area = 0.5 * m.determinant().abs();
    // columns of m^-1 hold (c0, cx, cy) of each basis function
    let inv = m.try_inverse().unwrap();
    let grads = inv.rows(1, 2).into_owned();
    grads.transpose() * grads * area
}

/// Dense reference solve of `-div(exp(u) grad p) = f` on the same mesh.
fn reference_observations(n: usize, f: f64, u: &DVector<f64>) -> DVector<f64> {
    let h = 2.0 / n as f64;
    let side = n + 1;
    let nodes = side * side;
    let id = |i: usize, k: usize| k * side + i;
    let mut kmat = DMatrix::zeros(nodes, nodes);
    let mut load = DVector::zeros(nodes);
    for ck in 0..n {
        for ci in 0..n {
            let tris = [
                [(ci, ck), (ci + 1, ck), (ci + 1, ck + 1)],
                [(ci, ck), (ci + 1, ck + 1), (ci, ck + 1)],
            ];
            for tri in tris {
                let p = tri.map(|(i, k)| [-1.0 + i as f64 * h, -1.0 + k as f64 * h]);
                let g = tri.map(|(i, k)| id(i, k));
                let coef = (g.iter().map(|&n| u[n]).sum::<f64>() / 3.0).exp();
                let ke = element_stiffness(p) * coef;
                for a in 0..3 {
                    load[g[a]] += f * h * h / 2.0 / 3.0;
                    for b in 0..3 {
                        kmat[(g[a], g[b])] += ke[(a, b)];
                    }
                }
            }
        }
    }
    let interior: Vec<usize> = (0..nodes)
        .filter(|&g| {
            let (i, k) = (g % side, g / side);
            i > 0 && k > 0 && i < n && k < n
        })
        .collect();
    let ki = DMatrix::from_fn(interior.len(), interior.len(), |r, c| {
        kmat[(interior[r], interior[c])]
    });
    let li = DVector::from_fn(interior.len(), |r, _| load[interior[r]]);
    let pi = ki.lu().solve(&li).unwrap();
    let mut p = DVector::zeros(nodes);
    for (r, &g) in interior.iter().enumerate() {
        p[g] = pi[r];
    }
    let mut obs = Vec::new();
    for ky in 1..=7 {
        for kx in 1..=7 {
            let x = -1.0 + 0.25 * kx as f64;
            let y = -1.0 + 0.25 * ky as f64;
            let i = ((x + 1.0) / h).round() as usize;
            let k = ((y + 1.0) / h).round() as usize;
            obs.push(p[id(i, k)]);
        }
    }
    DVector::from_vec(obs)
}

#[test]
fn nonlinear_forward_matches_independent_assembly() {
    let n = 16;
    let fem = Fem2DNonlinear::new(n, 100.0).unwrap();
    let u = DVector::from_iterator(
        fem.n_nodes(),
        fem.node_coords()
            .iter()
            .map(|[x, y]| 0.8 * (1.3 * x).sin() * (0.7 * y).cos() + 0.2 * x),
    );
    let ours = nonlinear_forward_2d(&fem, &u).unwrap();
    let reference = reference_observations(n, 100.0, &u);
    let scale = reference.amax();
    assert!((ours - reference).amax() <= 1e-10 * scale);
}

#[test]
fn forward_images_are_member_columns() {
    let prob = linear_problem();
    let ens = ensemble();
    let images = evaluate_ensemble(prob.forward.as_ref(), &ens).unwrap();
    for j in 0..ens.size() {
        assert_eq!(
            images.column(j).into_owned(),
            prob.forward.evaluate(&ens.member(j)).unwrap()
        );
    }
}
