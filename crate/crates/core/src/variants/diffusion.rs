//! Splitting scheme for the diffusion limit of randomized search:
//! an exact Ornstein-Uhlenbeck half step followed by a linearly implicit
//! Euler step of the tempered, prior-preconditioned gradient flow.

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::flow::check_blow_up;
use crate::model::{Ensemble, InverseProblem};
use crate::models::prior::PriorSpec;
use crate::rng::{substream, Domain};
use crate::trajectory::{Recorder, Trajectory};

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 0.5) {
        return Err(EkiError::InvalidConfig(format!(
            "diffusion-limit step must lie in (0, 1/2), got {h}"
        )));
    }
    Ok(())
}

/// `P A^T` with `P = C(u) + t C0`, where `c0_at = C0 A^T`.
fn preconditioned_at(
    ens: &Ensemble,
    a: &DMatrix<f64>,
    c0_at: &DMatrix<f64>,
    t: f64,
) -> DMatrix<f64> {
    let du = ens.deviations();
    let adu = a * &du;
    let mut pat = &du * adu.transpose() / ens.size() as f64;
    if t != 0.0 {
        pat += c0_at * t;
    }
    pat
}

/// Dense `K = I + h (C(u) + t C0) A^T Gamma^-1 A`.
pub fn implicit_operator(
    ens: &Ensemble,
    prob: &InverseProblem,
    t: f64,
    h: f64,
    prior: &PriorSpec,
) -> Result<DMatrix<f64>> {
    let a = prob.linear_matrix()?;
    let c0_at = prior.apply_matrix(&a.transpose());
    let pat = preconditioned_at(ens, a, &c0_at, t);
    let d = ens.dim();
    Ok(DMatrix::identity(d, d) + pat * prob.noise.solve_matrix(a) * h)
}

/// Solves `K u+ = u~ + h P A^T Gamma^-1 y` for every member through the
/// Woodbury identity on the `K x K` system.
pub(crate) fn implicit_solve(
    tilde: &Ensemble,
    prob: &InverseProblem,
    t: f64,
    h: f64,
    c0_at: &DMatrix<f64>,
) -> Result<Ensemble> {
    let a = prob.linear_matrix()?;
    let k = a.nrows();
    let u_mat = preconditioned_at(tilde, a, c0_at, t) * h;
    let v_mat = prob.noise.solve_matrix(a);
    let w = prob.noise.solve(&prob.data);
    let mut rhs = tilde.matrix().clone();
    let shift = &u_mat * w;
    for mut c in rhs.column_iter_mut() {
        c += &shift;
    }
    let small = DMatrix::identity(k, k) + &v_mat * &u_mat;
    let lu = small.lu();
    let z = lu
        .solve(&(&v_mat * &rhs))
        .ok_or(EkiError::SolveFailed("I + V U in the implicit step"))?;
    Ensemble::from_matrix(rhs - u_mat * z)
}

/// One step from artificial time `t`: `u~ = sqrt(1 - 2h) u + sqrt(2h) xi`,
/// `xi ~ N(0, C0)`, then the implicit solve. `step` keys the noise stream.
pub fn diffusion_limit_step(
    ens: &Ensemble,
    prob: &InverseProblem,
    t: f64,
    h: f64,
    prior: &PriorSpec,
    seed: u64,
    step: u64,
) -> Result<Ensemble> {
    check_step(h)?;
    let a = prob.linear_matrix()?;
    let c0_at = prior.apply_matrix(&a.transpose());
    let tilde = ou_half_step(ens, h, prior, seed, step)?;
    implicit_solve(&tilde, prob, t, h, &c0_at)
}

fn ou_half_step(
    ens: &Ensemble,
    h: f64,
    prior: &PriorSpec,
    seed: u64,
    step: u64,
) -> Result<Ensemble> {
    if prior.dim() != ens.dim() {
        return Err(EkiError::DimensionMismatch {
            what: "diffusion prior",
            expected: ens.dim(),
            found: prior.dim(),
        });
    }
    let j = ens.size();
    let m = prior.n_modes();
    let mut zeta = DMatrix::zeros(m, j);
    for c in 0..j {
        let mut rng = substream(seed, Domain::DiffusionNoise, step, c as u64);
        zeta.set_column(c, &crate::rng::standard_normal_vector(&mut rng, m));
    }
    let sqrt_l: DVector<f64> = prior.eigenvalues().map(f64::sqrt);
    for (i, mut row) in zeta.row_iter_mut().enumerate() {
        row *= sqrt_l[i];
    }
    let noise = prior.modes() * zeta;
    Ensemble::from_matrix(ens.matrix() * (1.0 - 2.0 * h).sqrt() + noise * (2.0 * h).sqrt())
}

/// Integrates to `t_end` with fixed step `h`, recording every `record_every` steps.
pub fn diffusion_limit_run(
    prob: &InverseProblem,
    ens0: &Ensemble,
    h: f64,
    t_end: f64,
    prior: &PriorSpec,
    seed: u64,
    record_every: usize,
) -> Result<Trajectory> {
    diffusion_limit_until(
        prob,
        ens0,
        h,
        t_end,
        prior,
        seed,
        record_every,
        &mut |_, _, _| false,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn diffusion_limit_until(
    prob: &InverseProblem,
    ens0: &Ensemble,
    h: f64,
    t_end: f64,
    prior: &PriorSpec,
    seed: u64,
    record_every: usize,
    stop: &mut dyn FnMut(f64, &Ensemble, &DMatrix<f64>) -> bool,
) -> Result<Trajectory> {
    check_step(h)?;
    if record_every == 0 {
        return Err(EkiError::InvalidConfig(
            "record_every must be at least 1".into(),
        ));
    }
    let n_steps = (t_end / h).round() as usize;
    if (n_steps as f64 * h - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(EkiError::InvalidConfig(format!(
            "t_end = {t_end} is not a multiple of h = {h}"
        )));
    }
    let a = prob.linear_matrix()?;
    let c0_at = prior.apply_matrix(&a.transpose());
    let mut rec = Recorder::new(prob)?;
    let mut ens = ens0.clone();
    let mut stopped = None;
    for n in 0..=n_steps {
        let t = n as f64 * h;
        let images = a * ens.matrix();
        let halt = stop(t, &ens, &images);
        if n % record_every == 0 || n == n_steps || halt {
            rec.record(t, &ens, &images)?;
        }
        if halt {
            stopped = Some(t);
            break;
        }
        if n == n_steps {
            break;
        }
        let tilde = ou_half_step(&ens, h, prior, seed, n as u64)?;
        let next = implicit_solve(&tilde, prob, t, h, &c0_at)?;
        check_blow_up(next.matrix(), t + h)?;
        ens = next;
    }
    Ok(rec.finish(stopped))
}
