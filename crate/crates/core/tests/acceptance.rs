//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the verdicts are printed on every `cargo test`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gendich::dichotomy::{detect, grid_pairs, probe_vectors, verify_dichotomy, CertificateDiagnostics, DichotomyCertificate};
use gendich::family::{builtin_generator, cocycle_residual, BaseNorm, EvolutionFamily};
use gendich::fixtures::{builtin_fixture, bundled_suite, FIXTURE_NAMES};
use gendich::funcspaces::SampledFunction;
use gendich::green::{admissibility_probe, green_y1, green_yinf, mild_residual, Pair, ProbeConfig, ProjectionPath};
use gendich::adapted::{adapted_equivalence_check, adapted_uniformity_check, AdaptedNorms};
use gendich::linalg::{max_principal_angle, orthonormal_basis, unit, Matrix, Vector};
use gendich::rates::{uniform_grid, RateFunction};
use gendich::robust::{
    delta_sweep, perturbation_operator_bounds, perturbed_family, robustness_experiment, solve_perturbed,
    solve_perturbed_matrix, PerturbationFamily, PicardSettings,
};
use gendich::scenario::{prepare, run_scenario, ScenarioConfig};
use gendich::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn random_triples(n: usize, t_max: f64, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut x = [0.0; 3].map(|_| rng.random::<f64>() * t_max);
            x.sort_by(|a, b| b.total_cmp(a));
            (x[0], x[1], x[2])
        })
        .collect()
}

fn cocycle() -> Result<Verdict> {
    let triples = random_triples(100, 20.0, 7);
    let mut worst_closed = 0.0_f64;
    for name in FIXTURE_NAMES {
        worst_closed = worst_closed.max(cocycle_residual(&builtin_fixture(name)?.family, &triples)?);
    }
    let rot = EvolutionFamily::ode("rotation", builtin_generator("rotation", None)?, 1e-10);
    let ode = cocycle_residual(&rot, &random_triples(100, 5.0, 8))?;
    verdict(worst_closed <= 1e-12 && ode <= 1e-5, format!("closed-form max {worst_closed:.2e} (<= 1e-12), rotation ODE {ode:.2e} (<= 1e-5)"))
}

fn range_kernel_angle(p: &Matrix, expected: &Matrix) -> f64 {
    let n = p.nrows();
    let id = Matrix::identity(n, n);
    let b = |m: &Matrix| orthonormal_basis(m, 1e-8).0;
    max_principal_angle(&b(p), &b(expected)).max(max_principal_angle(&b(&(&id - p)), &b(&(&id - expected))))
}

fn certificates() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["scalar_exp", "scalar_poly", "diag2d"] {
        let start = Instant::now();
        let fx = builtin_fixture(name)?;
        let det = detect(&fx.family, &fx.rate, fx.norms.as_ref(), fx.z.clone(), &fx.detect)?;
        let c = &det.certificate;
        let want = fx.annotations.lambda.as_ref().expect("annotated").value;
        let mut ok = (c.lambda - want).abs() <= 0.05 * want;
        let mut extra = String::new();
        if name == "diag2d" {
            let p = fx.annotations.projection.as_ref().expect("annotated");
            let e = gendich::linalg::from_rows(&p.value, 2);
            let angle = range_kernel_angle(c.proj.at(0.0), &e);
            ok &= angle <= 1e-3;
            extra = format!(", angle {angle:.1e}");
        } else {
            ok &= c.d <= 1.1;
        }
        let secs = start.elapsed().as_secs_f64();
        ok &= secs < 10.0;
        pass &= ok;
        parts.push(format!("{name}: lambda {:.4} (want {want}), D {:.4}{extra}, {secs:.1}s", c.lambda, c.d));
    }
    verdict(pass, parts.join("; "))
}

fn green() -> Result<Verdict> {
    let fx = builtin_fixture("diag2d")?;
    let det = detect(&fx.family, &fx.rate, &BaseNorm, fx.z.clone(), &fx.detect)?;
    let c = &det.certificate;
    let fam = &fx.family;
    let y1 = SampledFunction::indicator(0.0, 1.0, unit(2, 0), 20.0, 0.001)?;
    let v1 = green_y1(fam, &c.proj, &BaseNorm, &y1, None)?.x.eval(2.0)[0];
    let y2 = SampledFunction::indicator(0.0, 1.0, unit(2, 1), 20.0, 0.001)?;
    let v2 = green_y1(fam, &c.proj, &BaseNorm, &y2, None)?.x.eval(0.0)[1];
    let values_ok = (v1 - 0.2325442).abs() <= 1e-5 && (v2 + 0.6321206).abs() <= 1e-5;

    let y = SampledFunction::from_fn(uniform_grid(5.0, 0.002), |t| Vector::from_vec(vec![t.sin(), (-t).exp()]))?;
    let x = green_y1(fam, &c.proj, &BaseNorm, &y, None)?.x;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(f64, f64)> = (0..20)
        .map(|_| {
            let (a, b) = (rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0);
            (a.min(b), a.max(b))
        })
        .collect();
    let residual = mild_residual(fam, &x, &y, None, &pairs)?;

    let mut worst = 0.0_f64;
    let mut bounds_ok = true;
    for pair in [Pair::Y1, Pair::YinfPrime] {
        for y in bundled_suite(2, pair, fx.probe_grid.0, fx.probe_grid.1)? {
            let sol = match pair {
                Pair::Y1 => green_y1(fam, &c.proj, &BaseNorm, &y, Some(c.constants()))?,
                Pair::YinfPrime => green_yinf(fam, &c.proj, &BaseNorm, &fx.rate, &y, Some(c.constants()))?,
            };
            let b = sol.bound.expect("constants given");
            bounds_ok &= b.holds;
            worst = worst.max(b.ratio);
        }
    }
    verdict(
        values_ok && residual <= 1e-5 && bounds_ok,
        format!("values {v1:.7}, {v2:.7}; mild residual {residual:.1e}; worst bound ratio {worst:.4} (<= 1.05)"),
    )
}

fn adapted() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["diag2d", "nonuniform_scalar"] {
        let fx = builtin_fixture(name)?;
        let det = detect(&fx.family, &fx.rate, fx.norms.as_ref(), fx.z.clone(), &fx.detect)?;
        let c = &det.certificate;
        let norms = AdaptedNorms::from_certificate(fx.family.clone(), fx.rate.clone(), c, None, 20.0)?;
        let grid = uniform_grid(8.0, 0.5);
        let pairs = grid_pairs(&grid, 300);
        let uni = adapted_uniformity_check(&norms, &pairs, &det.probes)?;
        let eq = adapted_equivalence_check(&norms, c.d, &grid, &pairs, &det.probes)?;
        let ratio = uni.forward_ratio.max(uni.backward_ratio);
        let ok = uni.passed && ratio <= 1.05 && eq.bounds.c <= 2.0 * c.d + 0.05;
        pass &= ok;
        parts.push(format!("{name}: ratio {ratio:.4}, C {:.4} vs 2D+0.05 = {:.4}", eq.bounds.c, 2.0 * c.d + 0.05));
    }
    verdict(pass, parts.join("; "))
}

fn counterexamples() -> Result<Verdict> {
    let cfg = ProbeConfig::default();
    let ex1 = builtin_fixture("example1")?;
    let z1 = ex1.z.clone().expect("Z given");
    let (t_max, h) = ex1.probe_grid;
    let y1 = admissibility_probe(&ex1.family, &z1, &BaseNorm, &ex1.rate, &bundled_suite(1, Pair::Y1, t_max, h)?, Pair::Y1, &cfg)?;
    let yinf = admissibility_probe(
        &ex1.family,
        &z1,
        &BaseNorm,
        &ex1.rate,
        &bundled_suite(1, Pair::YinfPrime, t_max, h)?,
        Pair::YinfPrime,
        &cfg,
    )?;
    let budget = ex1.rate.eval(t_max);
    let witness = yinf.witnesses.first().map(|&i| &yinf.members[i]);
    let witness_ok = witness.is_some_and(|m| {
        m.growth_slope >= 10.0 * cfg.growth_tol * m.input_norm && m.sup >= 0.99 * budget * m.input_norm
    });
    let ex1_ok = y1.solvable && !yinf.solvable && witness_ok;

    let ex2 = builtin_fixture("example2")?;
    let (t2, h2) = ex2.probe_grid;
    let p2 = admissibility_probe(
        &ex2.family,
        ex2.z.as_ref().expect("Z given"),
        &BaseNorm,
        &ex2.rate,
        &bundled_suite(1, Pair::YinfPrime, t2, h2)?,
        Pair::YinfPrime,
        &cfg,
    )?;
    let grid = uniform_grid(1100.0, 0.5);
    let pairs = grid_pairs(&grid, 300);
    let probes = probe_vectors(1, 0, 1);
    let base = DichotomyCertificate {
        d: 1.0,
        lambda: 1.0,
        epsilon: 0.0,
        m: 1.0,
        rate: ex2.rate.name(),
        proj: ProjectionPath::constant(vec![0.0], Matrix::identity(1, 1))?,
        diagnostics: CertificateDiagnostics { d1: None, d2: None, commutation: 0.0, idempotency: 0.0, max_condition: 1.0 },
    };
    let mut all_fail = true;
    let mut first_at_1024 = true;
    for d in [1.0, 10.0, 100.0, 1000.0] {
        for lambda in [0.01, 0.1, 1.0, 3.0] {
            let v = verify_dichotomy(&ex2.family, &base.with_constants(d, lambda), &BaseNorm, &ex2.rate, &pairs, &probes, 1e-6)?;
            all_fail &= !v.passed;
            if d == 1000.0 {
                first_at_1024 &= v.d1.first_violation.is_some_and(|(s, _)| (1024.0..1025.0).contains(&s));
            }
        }
    }
    let ex2_ok = p2.solvable && all_fail && first_at_1024;
    verdict(
        ex1_ok && ex2_ok,
        format!(
            "example1: Y1 solvable {}, Y'inf solvable {}, witness slope {:.3} sup {:.2} (budget {budget}); example2: Y'inf solvable {}, all certificates fail {all_fail}, D=1e3 first violation in [1024,1025) {first_at_1024}",
            y1.solvable,
            yinf.solvable,
            witness.map_or(f64::NAN, |m| m.growth_slope),
            witness.map_or(f64::NAN, |m| m.sup),
            p2.solvable
        ),
    )
}

fn exp1() -> EvolutionFamily {
    EvolutionFamily::closed_form("exp1", 1, |t, s| Matrix::from_element(1, 1, (-(t - s)).exp()))
}

fn robustness() -> Result<Verdict> {
    let id = RateFunction::identity();
    let fam = exp1();
    let env = |delta: f64| PerturbationFamily::envelope(&id, Matrix::identity(1, 1), delta, 1.0, 0.0);
    let picard = PicardSettings { tol: 1e-8, ..Default::default() };
    let sol = solve_perturbed_matrix(&fam, &env(0.05), &id, 0.0, &[10.0], &Matrix::identity(1, 1), &picard)?;
    let z = Some(gendich::funcspaces::SubspaceZ::trivial(1));
    let cfg = gendich::dichotomy::DetectConfig::default();
    let rep = robustness_experiment(&fam, &env(0.05), z.clone(), &BaseNorm, &id, &cfg, picard)?;
    let after = rep.after.as_ref().filter(|a| a.verified).map(|a| a.lambda);
    let sweep = delta_sweep(&fam, env, &[0.01, 0.02, 0.05], z, &BaseNorm, &id, &cfg, picard)?;
    let zero = perturbed_family(&fam, &PerturbationFamily::zero(1), &id, picard);
    let mut gap = 0.0_f64;
    for (t, s) in [(1.0, 0.0), (7.5, 2.25), (10.0, 9.875), (4.0, 4.0)] {
        gap = gap.max((zero.propagator(t, s)? - fam.propagator(t, s)?).abs().max());
    }
    let constant = PerturbationFamily::new("const", 1, |_| Matrix::from_element(1, 1, 0.1), 0.1, 1.0, 0.0);
    let (u, _) = solve_perturbed(&fam, &constant, &id, 1.0, 0.0, &unit(1, 0), &picard)?;
    let volterra = (u[0] - (-0.9f64).exp()).abs();
    let lambdas: Vec<String> = sweep
        .points
        .iter()
        .map(|p| p.report.after.as_ref().map_or("none".into(), |a| format!("{:.4}", a.lambda)))
        .collect();
    verdict(
        sol.iterations <= 30 && after.is_some_and(|l| l >= 0.8) && sweep.monotone && gap <= 1e-12 && volterra <= 1e-6,
        format!(
            "Picard {} iterations; lambda' {}; sweep [{}] monotone {}; zero gap {gap:.1e}; Volterra error {volterra:.1e}",
            sol.iterations,
            after.map_or("none".into(), |l| format!("{l:.4}")),
            lambdas.join(", "),
            sweep.monotone
        ),
    )
}

fn operator_bounds() -> Result<Verdict> {
    let id = RateFunction::identity();
    let b = PerturbationFamily::envelope(&id, Matrix::identity(1, 1), 0.05, 1.0, 0.0);
    let grid = uniform_grid(30.0, 1e-3);
    let ones = SampledFunction::from_fn(grid.clone(), |_| unit(1, 0))?;
    let tight = perturbation_operator_bounds(&b, &BaseNorm, 1.0, &id, &[ones])?;
    let p = &tight.probes[0];
    let tight_ok = (p.d_value - 0.05).abs() <= 1e-6 && (p.d_prime_value - 0.05).abs() <= 1e-6;
    let others = [
        SampledFunction::from_fn(grid.clone(), |t| unit(1, 0) * t.cos())?,
        SampledFunction::from_fn(grid.clone(), |t| unit(1, 0) * (-t).exp())?,
        SampledFunction::from_fn(grid, |t| unit(1, 0) * (t / (1.0 + t)))?,
    ];
    let rest = perturbation_operator_bounds(&b, &BaseNorm, 1.0, &id, &others)?;
    verdict(
        tight_ok && tight.passed && rest.passed,
        format!(
            "tight: ||Dx||_1 = {:.8}, sup = {:.8} (delta C/a = delta C = 0.05); other probes max ratios {:.4}, {:.4}",
            p.d_value, p.d_prime_value, rest.d_ratio, rest.d_prime_ratio
        ),
    )
}

fn determinism() -> Result<Verdict> {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut compared = 0;
    let mut same = true;
    for name in ["certificate_diag2d.toml", "counterexample_example1.toml"] {
        let path = scenarios.join(name);
        let tmp = tempfile::tempdir()?;
        let mut listings = Vec::new();
        for run in ["a", "b"] {
            let prep = prepare(ScenarioConfig::load(&path)?, &scenarios)?;
            let out = run_scenario(&prep, &tmp.path().join(run))?;
            let mut files: Vec<(String, Vec<u8>)> = out
                .files
                .iter()
                .map(|f| Ok((f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(f)?)))
                .collect::<Result<_>>()?;
            files.sort();
            listings.push(files);
        }
        same &= listings[0] == listings[1];
        compared += listings[0].len();
    }
    verdict(same && compared > 0, format!("{compared} report files compared bytewise across two runs"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Verdict>, Duration); 8] = [
        ("1 cocycle", cocycle, Duration::from_secs(5)),
        ("2 certificate recovery", certificates, Duration::from_secs(30)),
        ("3 green operators", green, Duration::from_secs(60)),
        ("4 adapted norms", adapted, Duration::from_secs(20)),
        ("5 counterexample separation", counterexamples, Duration::from_secs(30)),
        ("6 robustness", robustness, Duration::from_secs(30)),
        ("7 operator bounds", operator_bounds, Duration::from_secs(60)),
        ("8 determinism", determinism, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed();
        let (pass, detail) = match result {
            Ok(v) => (v.pass && secs < limit, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {name}: {} ({:.2}s) | {detail}", if pass { "PASS" } else { "FAIL" }, secs.as_secs_f64());
    }
    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria fail");
        ExitCode::FAILURE
    }
}
