use std::path::Path;

use gendich::scenario::{prepare, run_scenario, ScenarioConfig};

fn run(name: &str) -> (bool, Vec<String>) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let path = dir.join(name);
    let config = ScenarioConfig::load(&path).unwrap();
    let prep = prepare(config, &dir).unwrap();
    let out = tempfile::tempdir().unwrap();
    let outcome = run_scenario(&prep, out.path()).unwrap();
    let failed = outcome.assertions.iter().filter(|a| !a.pass).map(|a| a.name.clone()).collect();
    (outcome.passed(), failed)
}

macro_rules! scenario_tests {
    ($($test:ident => $file:expr,)*) => {$(
        #[test]
        fn $test() {
            let (passed, failed) = run($file);
            assert!(passed, "failed expectations: {failed:?}");
        }
    )*};
}

scenario_tests! {
    adapted_nonuniform => "adapted_nonuniform.toml",
    certificate_diag2d => "certificate_diag2d.toml",
    certificate_scalar_exp => "certificate_scalar_exp.toml",
    certificate_scalar_poly => "certificate_scalar_poly.toml",
    cocycle_fixtures => "cocycle_fixtures.toml",
    cocycle_rotation_ode => "cocycle_rotation_ode.toml",
    counterexample_example1 => "counterexample_example1.toml",
    counterexample_example2 => "counterexample_example2.toml",
    green_diag2d => "green_diag2d.toml",
    robustness_diag2d => "robustness_diag2d.toml",
    robustness_scalar => "robustness_scalar.toml",
}

#[test]
fn every_bundled_scenario_is_covered() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let count = std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "toml"))
        .count();
    assert_eq!(count, 11);
}
