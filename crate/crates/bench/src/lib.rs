//! Fixtures shared by the kernel benchmarks.

use eki::experiments::{build_setup, ExperimentConfig, ExperimentSetup};
use eki::Fem2DNonlinear;
use nalgebra::DVector;

/// Noise-free 1-D problem with a KL ensemble of `j` members.
pub fn linear_setup(j: usize) -> ExperimentSetup {
    let text = format!(
        "[problem]\nkind = \"linear1d\"\n[ensemble]\nsize = {j}\n[algorithm]\nkind = \"flow\"\n\
         [stopping]\nrule = \"fixed\"\nt_end = 1.0\n"
    );
    build_setup(&ExperimentConfig::from_toml_str(&text).expect("valid config")).expect("setup")
}

/// The standard 2-D forward model and a smooth coefficient field on its nodes.
pub fn nonlinear_fixture() -> (Fem2DNonlinear, DVector<f64>) {
    let fem = Fem2DNonlinear::standard();
    let u = DVector::from_iterator(
        fem.n_nodes(),
        fem.node_coords().iter().map(|[x, y]| 0.5 * (x * y).sin()),
    );
    (fem, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(linear_setup(5).initial.size(), 5);
        let (fem, u) = nonlinear_fixture();
        assert_eq!(u.len(), fem.n_nodes());
    }
}
