//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use eki::analysis::{mapped_basis, span_report};
use eki::experiments::{build_setup, preset, run_algorithm, ExperimentConfig, ExperimentSetup};
use eki::models::fem1d::{assemble_fem_1d, Mesh1D};
use eki::models::Fem2DNonlinear;
use eki::variants::{
    diffusion_limit_run, pcn_step, randomized_search_run, InflatedDrift, InflationConfig,
    LocalizationConfig, LocalizedDrift, PcnConfig,
};
use eki::{
    analytic_E, collapse_rate_fit, deviation_matrices, drift_general, drift_linear_gradflow,
    integrate, residual_split, run_discrete, subspace_distance, DiscreteConfig, Ensemble,
    FlowConfig, GeneralDrift, InverseProblem, LinearMap, NoiseModel, PriorKind, PriorSpec,
    Quantity, SigmaMode, SpectralE, StateVector, Trajectory,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = std::result::Result<String, String>;
type Criterion = fn() -> Check;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).expect("valid config")
}

/// Noise-free 1-D problem with a `j`-member ensemble.
fn linear_config(j: usize, init: &str) -> ExperimentConfig {
    config(&format!(
        r#"
[problem]
kind = "linear1d"
[ensemble]
size = {j}
init = "{init}"
[algorithm]
kind = "flow"
[stopping]
rule = "fixed"
t_end = 100.0
"#
    ))
}

fn linear_setup(j: usize, init: &str) -> ExperimentSetup {
    build_setup(&linear_config(j, init)).expect("setup")
}

fn truth(setup: &ExperimentSetup) -> StateVector {
    setup.problem.truth.clone().expect("truth")
}

fn flow(setup: &ExperimentSetup, t_end: f64, dt: f64, every: usize) -> Trajectory {
    integrate(
        &setup.problem,
        &setup.initial,
        &FlowConfig::new(t_end, dt).with_record_every(every),
        &GeneralDrift,
    )
    .expect("flow run")
}

fn e_oracle_error(setup: &ExperimentSetup, dt: f64, every: usize) -> f64 {
    let j = setup.initial.size();
    let u = truth(setup);
    let e0 = deviation_matrices(&setup.initial, &u, &setup.problem)
        .unwrap()
        .e;
    let spectral = SpectralE::from_e(&e0);
    let traj = flow(setup, 1.0, dt, every);
    traj.times
        .iter()
        .zip(&traj.ensembles)
        .map(|(&t, ens)| {
            let e = deviation_matrices(ens, &u, &setup.problem).unwrap().e;
            (e - analytic_E(&spectral, t, j)).norm() / e0.norm()
        })
        .fold(0.0, f64::max)
}

fn analytic_e_oracle() -> Check {
    let setup = linear_setup(5, "kl");
    let coarse = e_oracle_error(&setup, 1e-3, 1);
    let fine = e_oracle_error(&setup, 1e-4, 10);
    verdict(
        coarse <= 1e-2 && fine <= 1e-3,
        format!("max relative error {coarse:.3e} (dt 1e-3, bound 1e-2), {fine:.3e} (dt 1e-4, bound 1e-3)"),
    )
}

fn collapse_rate() -> Check {
    let mut slopes = Vec::new();
    let mut at50 = Vec::new();
    for j in [5, 50] {
        let traj = flow(&linear_setup(j, "kl"), 100.0, 1e-2, 10);
        slopes.push(collapse_rate_fit(&traj, (10.0, 100.0)).map_err(|e| e.to_string())?);
        let i = traj.index_near(50.0).unwrap();
        at50.push(traj.e_fro_series().unwrap()[i]);
    }
    let ratio = at50[1] / at50[0];
    let slopes_ok = slopes.iter().all(|s| (-1.1..=-0.9).contains(s));
    verdict(
        slopes_ok && (5.0..=20.0).contains(&ratio),
        format!(
            "slope J=5 {:.4}, J=50 {:.4} (need [-1.1, -0.9]); |E|_50/|E|_5 at t=50 = {ratio:.3} (need [5, 20])",
            slopes[0], slopes[1]
        ),
    )
}

fn residual_decomposition() -> Check {
    let setup = linear_setup(5, "kl");
    let prob = &setup.problem;
    let u = truth(&setup);
    let span = span_report(&setup.initial, prob).unwrap();
    let basis0 = mapped_basis(&setup.initial, prob).unwrap();
    let traj = flow(&setup, 100.0, 1e-2, 10);
    let split0 = residual_split(&setup.initial, &u, &basis0, prob).unwrap();
    let norm = |v: &DVector<f64>| prob.noise.norm_sq(v).sqrt();
    let mut perp_drift: f64 = 0.0;
    for ens in &traj.ensembles {
        let split = residual_split(ens, &u, &basis0, prob).unwrap();
        for (s, s0) in split.iter().zip(&split0) {
            perp_drift = perp_drift.max(norm(&(&s.perp - &s0.perp)));
        }
    }
    let split_end = residual_split(traj.last_ensemble().unwrap(), &u, &basis0, prob).unwrap();
    let worst_parallel = split_end
        .iter()
        .zip(&split0)
        .map(|(s, s0)| norm(&s.parallel) / norm(&s0.parallel))
        .fold(0.0, f64::max);

    let adaptive = linear_setup(5, "adaptive_residual");
    let basis_a = mapped_basis(&adaptive.initial, prob).unwrap();
    let split_a = residual_split(&adaptive.initial, &u, &basis_a, &adaptive.problem).unwrap();
    let adaptive_perp = norm(&split_a[0].perp);
    verdict(
        span.is_maximal() && perp_drift <= 1e-8 && worst_parallel <= 0.05 && adaptive_perp <= 1e-10,
        format!(
            "span rank {}/{}; max |Ar_perp(t) - Ar_perp(0)| = {perp_drift:.3e} (bound 1e-8); \
             max |Ar_par(100)|/|Ar_par(0)| = {worst_parallel:.4} (bound 0.05); adaptive |Ar_perp^(1)(0)| = {adaptive_perp:.3e} (bound 1e-10)",
            span.rank, span.maximal
        ),
    )
}

fn max_distance(traj: &Trajectory, basis0: &[StateVector]) -> f64 {
    traj.ensembles
        .iter()
        .map(|e| subspace_distance(e, basis0).unwrap())
        .fold(0.0, f64::max)
}

fn subspace_property() -> Check {
    let setup = linear_setup(5, "kl");
    let basis0: Vec<StateVector> = setup.initial.members().collect();
    let mut plain = Vec::new();
    for sigma in [SigmaMode::Zero, SigmaMode::EqualGamma] {
        let prob = setup
            .problem
            .with_noise(setup.problem.noise.with_sigma_mode(sigma))
            .unwrap();
        let cfg = DiscreteConfig {
            n_steps: 200,
            step_size: 0.01,
            perturb_obs: sigma == SigmaMode::EqualGamma,
            rng_seed: 7,
            record_every: 1,
        };
        let traj = run_discrete(&prob, &setup.initial, &cfg).unwrap();
        plain.push(max_distance(&traj, &basis0));
    }

    let prob = &setup.problem;
    let flow10 = FlowConfig::new(0.1, 0.01);
    let inflation = InflatedDrift {
        cfg: InflationConfig::new(0.01, setup.prior.clone()).unwrap(),
    };
    let localization =
        LocalizedDrift::new(&LocalizationConfig::new(2, setup.coords.clone()).unwrap());
    let pcn = PcnConfig::new(0.1, setup.prior.clone()).unwrap();
    let search_cfg = DiscreteConfig {
        n_steps: 10,
        step_size: 0.01,
        perturb_obs: false,
        rng_seed: 7,
        record_every: 1,
    };
    let h = 2f64.powi(-8);
    let variants = [
        (
            "inflation",
            integrate(prob, &setup.initial, &flow10, &inflation).unwrap(),
        ),
        (
            "localization",
            integrate(prob, &setup.initial, &flow10, &localization).unwrap(),
        ),
        (
            "randomized search",
            randomized_search_run(prob, &setup.initial, &search_cfg, &pcn).unwrap(),
        ),
        (
            "diffusion limit",
            diffusion_limit_run(prob, &setup.initial, h, 10.0 * h, &setup.prior, 7, 1).unwrap(),
        ),
    ];
    let leaves: Vec<(&str, f64)> = variants
        .iter()
        .map(|(n, t)| (*n, max_distance(t, &basis0)))
        .collect();
    let ok = plain.iter().all(|d| *d <= 1e-10) && leaves.iter().all(|(_, d)| *d > 1e-6);
    let detail = leaves
        .iter()
        .map(|(n, d)| format!("{n} {d:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        ok,
        format!(
            "plain EnKF distance {:.3e} (Sigma=0), {:.3e} (Sigma=Gamma) (bound 1e-10); variants after 10 steps: {detail} (need > 1e-6)",
            plain[0], plain[1]
        ),
    )
}

fn monotonicity() -> Check {
    let setup = linear_setup(5, "kl");
    let prob = &setup.problem;
    let u = truth(&setup);
    let traj = flow(&setup, 100.0, 1e-2, 1);
    let mut phi_violation: f64 = 0.0;
    let mut trace_violation: f64 = 0.0;
    let mut null_residual: f64 = 0.0;
    let mut prev_phi: Option<Vec<f64>> = None;
    let mut prev_trace = f64::INFINITY;
    let ones = DVector::from_element(setup.initial.size(), 1.0);
    for (d, ens) in traj.diagnostics.iter().zip(&traj.ensembles) {
        let phi = d.values(Quantity::Phi).unwrap();
        if let Some(prev) = &prev_phi {
            for (a, b) in phi.iter().zip(prev) {
                phi_violation = phi_violation.max(a - b);
            }
        }
        prev_phi = Some(phi);
        let dm = deviation_matrices(ens, &u, prob).unwrap();
        let tr = dm.r.trace();
        trace_violation = trace_violation.max(tr - prev_trace);
        prev_trace = tr;
        let e1 = (&dm.e * &ones).norm() / dm.e.norm().max(f64::MIN_POSITIVE);
        let f1 = (&dm.f * &ones).norm() / dm.f.norm().max(f64::MIN_POSITIVE);
        null_residual = null_residual.max(e1).max(f1);
    }
    verdict(
        phi_violation <= 1e-10 && trace_violation <= 1e-10 && null_residual <= 1e-12,
        format!(
            "largest per-step increase: Phi {phi_violation:.3e}, Tr R {trace_violation:.3e} (bound 1e-10); \
             max |E1|/|E|, |F1|/|F| = {null_residual:.3e} (bound 1e-12); {} steps",
            traj.len() - 1
        ),
    )
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn drift_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = 3 + (rand::Rng::random::<u32>(&mut rng) % 28) as usize;
        let k = 2 + (rand::Rng::random::<u32>(&mut rng) % 19) as usize;
        let j = 2 + (rand::Rng::random::<u32>(&mut rng) % 9) as usize;
        let a = normal_matrix(&mut rng, k, d);
        let b = normal_matrix(&mut rng, k, k);
        let gamma = &b * b.transpose() + DMatrix::identity(k, k);
        let y = normal_matrix(&mut rng, k, 1).column(0).into_owned();
        let prob = InverseProblem::new(
            Arc::new(LinearMap::new(a)),
            y,
            NoiseModel::new(gamma, SigmaMode::Zero).unwrap(),
            None,
        )
        .unwrap();
        let ens = Ensemble::from_matrix(normal_matrix(&mut rng, d, j)).unwrap();
        let g = drift_general(&ens, &prob).unwrap();
        let l = drift_linear_gradflow(&ens, &prob).unwrap();
        let scale = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let diff = g
            .iter()
            .zip(&l)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        worst = worst.max(diff / scale);
    }
    verdict(
        worst <= 1e-12,
        format!("max relative difference {worst:.3e} over 100 problems (bound 1e-12)"),
    )
}

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

fn center_value(n: usize) -> f64 {
    let fem = Fem2DNonlinear::new(n, 100.0).unwrap();
    let p = fem.solve(&DVector::zeros(fem.n_nodes())).unwrap();
    p[fem.node_index(n / 2, n / 2)]
}

fn fem_correctness() -> Check {
    let errs: Vec<f64> = [64, 128, 256].iter().map(|&n| nodal_error(n)).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let coarse = center_value(32);
    let fine = center_value(256);
    let rel = (coarse - fine).abs() / fine.abs();
    verdict(
        errs[2] <= 1e-4 && orders.iter().all(|o| (o - 2.0).abs() <= 0.1) && rel <= 0.01,
        format!(
            "1-D nodal error {:.3e} at n=256 (bound 1e-4), observed orders {:.3}, {:.3}; \
             2-D centre value {coarse:.5} vs {fine:.5} on the 2^-7 mesh, relative gap {rel:.3e} (bound 1e-2)",
            errs[2], orders[0], orders[1]
        ),
    )
}

fn overfitting() -> Check {
    let run = |name: &str| {
        let cfg = config(preset(name).unwrap());
        let setup = build_setup(&cfg).unwrap();
        run_algorithm(&cfg, &setup).unwrap()
    };
    let free = run("linear1d_noisy_j5");
    let r2 = free.mean_series(Quantity::R2).unwrap();
    let theta = free.mean_series(Quantity::Theta2).unwrap();
    let (imin, rmin) =
        r2.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc },
        );
    let interior = imin > 0 && imin + 1 < r2.len();
    let settled = free.index_near(1.0).unwrap();
    let theta_increase = theta[settled..]
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let stopped = run("linear1d_noisy_bayesian_j5");
    let r_end = *stopped.mean_series(Quantity::R2).unwrap().last().unwrap();
    let ratio = r_end / rmin;
    verdict(
        interior && theta_increase <= 1e-12 && ratio <= 2.0,
        format!(
            "argmin |r|^2 at t = {} of [0, {}] ({}); largest relative step change of |theta|^2 for t >= 1: {theta_increase:.3e}; \
             |r(1)|^2 / min |r|^2 = {ratio:.4} (bound 2)",
            free.times[imin],
            free.last_time().unwrap(),
            if interior { "interior" } else { "not interior" }
        ),
    )
}

fn pcn_equilibrium() -> Check {
    let eig = DVector::from_vec(vec![1.0, 0.5, 0.25]);
    let prior = Arc::new(
        PriorSpec::new(
            PriorKind::Explicit,
            eig.clone(),
            DMatrix::identity(3, 3),
            1.0,
        )
        .unwrap(),
    );
    let cfg = PcnConfig::new(0.5, prior.clone()).unwrap();
    let zero = |_: &StateVector| Ok(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let batches = 100;
    let per = n / batches;
    let mut u = DVector::zeros(3);
    let mut batch_means = vec![DVector::<f64>::zeros(3); batches];
    for step in 0..n {
        u = pcn_step(&u, &zero, step as u64, 0.01, &cfg, &mut rng)
            .unwrap()
            .state;
        batch_means[step / per] += u.component_mul(&u) / per as f64;
    }
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for i in 0..3 {
        let vals: Vec<f64> = batch_means.iter().map(|b| b[i]).collect();
        let mean = vals.iter().sum::<f64>() / batches as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        let se = (var / batches as f64).sqrt();
        let z = (mean - eig[i]).abs() / se;
        worst = worst.max(z);
        parts.push(format!("{mean:.4} vs {:.4} ({z:.2} SE)", eig[i]));
    }
    verdict(worst <= 3.0, format!("diagonal {}", parts.join(", ")))
}

fn randomized_search() -> Check {
    let end_ar2 = |name: &str| {
        let cfg = config(preset(name).unwrap());
        let setup = build_setup(&cfg).unwrap();
        let traj = run_algorithm(&cfg, &setup).unwrap();
        (
            traj.last_time().unwrap(),
            *traj.mean_series(Quantity::Ar2).unwrap().last().unwrap(),
        )
    };
    let (t_plain, plain) = end_ar2("linear1d_flow_j5");
    let (t_search, search) = end_ar2("linear1d_randomized_search_j5");
    verdict(
        search < plain && t_plain == 100.0 && t_search == 100.0,
        format!("|Ar|^2_Gamma at T=100: randomized search {search:.4e}, plain EnKF {plain:.4e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 10] = [
        ("analytic E oracle", analytic_e_oracle),
        ("collapse rate", collapse_rate),
        ("residual decomposition", residual_decomposition),
        ("subspace property", subspace_property),
        ("monotonicity", monotonicity),
        ("drift equivalence", drift_equivalence),
        ("FEM correctness", fem_correctness),
        ("overfitting", overfitting),
        ("pCN equilibrium", pcn_equilibrium),
        ("randomized search", randomized_search),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} [{secs:.1}s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} [{secs:.1}s]: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
