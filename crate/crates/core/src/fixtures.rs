//! Built-in fixtures: small systems with known answers, including the two
//! counterexamples showing that neither admissibility hypothesis alone gives
//! a dichotomy.

use std::sync::Arc;

use serde::Serialize;

use crate::dichotomy::DetectConfig;
use crate::error::{Error, Result};
use crate::family::{BaseNorm, EvolutionFamily, NormFamily};
use crate::funcspaces::{Extension, SampledFunction, SubspaceZ};
use crate::green::Pair;
use crate::linalg::{Matrix, Vector};
use crate::rates::{RateFunction, TimeGrid};
use crate::robust::PerturbationFamily;

pub const FIXTURE_NAMES: [&str; 6] = ["example1", "example2", "diag2d", "scalar_exp", "scalar_poly", "nonuniform_scalar"];

/// Why an annotated value is believed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Read off the closed-form propagator.
    ClosedForm,
    /// Follows from a short computation on the closed form.
    Derived,
    /// Established counterexample property.
    Counterexample,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Known<T> {
    pub value: T,
    pub basis: Basis,
}

fn known<T>(value: T, basis: Basis) -> Option<Known<T>> {
    Some(Known { value, basis })
}

/// Ground truth used by the acceptance tests.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Annotations {
    pub lambda: Option<Known<f64>>,
    pub d: Option<Known<f64>>,
    /// Constant projection `P`, row-major.
    pub projection: Option<Known<Vec<Vec<f64>>>>,
    pub has_dichotomy: Option<Known<bool>>,
    pub y1_admissible: Option<Known<bool>>,
    pub yinf_admissible: Option<Known<bool>>,
}

#[derive(Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub description: &'static str,
    pub family: EvolutionFamily,
    pub rate: RateFunction,
    pub norms: Arc<dyn NormFamily>,
    /// `None` means the complement of the stable space at 0.
    pub z: Option<SubspaceZ>,
    pub detect: DetectConfig,
    /// `(T_max, step)` for admissibility suites.
    pub probe_grid: (f64, f64),
    pub annotations: Annotations,
}

fn scalar(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, name: &str) -> EvolutionFamily {
    EvolutionFamily::closed_form(name, 1, move |t, s| Matrix::from_element(1, 1, f(t, s)))
}

/// Factor of the counterexample sequence: `n` at powers of two, 0 otherwise.
fn example2_factor(n: u64) -> f64 {
    if n > 0 && n.is_power_of_two() {
        n as f64
    } else {
        0.0
    }
}

/// `A_{⌊t⌋−1} ⋯ A_{⌊s⌋}`, or 1 within one unit cell.
pub fn example2_propagator(t: f64, s: f64) -> f64 {
    let (a, b) = (s.floor() as u64, t.floor() as u64);
    let mut p = 1.0;
    for n in a..b {
        p *= example2_factor(n);
        if p == 0.0 {
            break;
        }
    }
    p
}

fn row_major(m: &Matrix) -> Vec<Vec<f64>> {
    crate::linalg::to_rows(m)
}

pub fn builtin_fixture(name: &str) -> Result<Fixture> {
    let base: Arc<dyn NormFamily> = Arc::new(BaseNorm);
    let default = DetectConfig::default();
    let fx = match name {
        "example1" => Fixture {
            name: "example1",
            description: "T(t,s) = Id on R, Z = {0}: Y1-admissible, no dichotomy",
            family: scalar(|_, _| 1.0, "example1"),
            rate: RateFunction::identity(),
            norms: base,
            z: Some(SubspaceZ::trivial(1)),
            detect: default,
            probe_grid: (20.0, 0.01),
            annotations: Annotations {
                has_dichotomy: known(false, Basis::Counterexample),
                y1_admissible: known(true, Basis::Counterexample),
                yinf_admissible: known(false, Basis::Counterexample),
                ..Default::default()
            },
        },
        "example2" => Fixture {
            name: "example2",
            description: "piecewise-constant products of A_n = n at powers of two (else 0), rate ln(1+t), Z = {0}",
            family: scalar(example2_propagator, "example2").flagged_discontinuous(),
            rate: RateFunction::log1p(),
            norms: base,
            z: Some(SubspaceZ::trivial(1)),
            detect: default,
            probe_grid: (1100.0, 0.25),
            annotations: Annotations {
                has_dichotomy: known(false, Basis::Counterexample),
                yinf_admissible: known(true, Basis::Counterexample),
                ..Default::default()
            },
        },
        "diag2d" => Fixture {
            name: "diag2d",
            description: "diag(e^{-(t-s)}, e^{t-s}), rate t",
            family: EvolutionFamily::closed_form("diag2d", 2, |t, s| {
                Matrix::from_diagonal(&Vector::from_vec(vec![(-(t - s)).exp(), (t - s).exp()]))
            }),
            rate: RateFunction::identity(),
            norms: base,
            z: Some(SubspaceZ::span(&Matrix::from_column_slice(2, 1, &[0.0, 1.0]))),
            detect: default,
            probe_grid: (20.0, 0.01),
            annotations: Annotations {
                lambda: known(1.0, Basis::ClosedForm),
                d: known(1.0, Basis::ClosedForm),
                projection: known(row_major(&Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]))), Basis::ClosedForm),
                has_dichotomy: known(true, Basis::ClosedForm),
                y1_admissible: known(true, Basis::Derived),
                yinf_admissible: known(true, Basis::Derived),
            },
        },
        "scalar_exp" => Fixture {
            name: "scalar_exp",
            description: "e^{-2(t-s)}, rate t",
            family: scalar(|t, s| (-2.0 * (t - s)).exp(), "scalar_exp"),
            rate: RateFunction::identity(),
            norms: base,
            z: Some(SubspaceZ::trivial(1)),
            detect: default,
            probe_grid: (20.0, 0.01),
            annotations: Annotations {
                lambda: known(2.0, Basis::ClosedForm),
                d: known(1.0, Basis::ClosedForm),
                projection: known(vec![vec![1.0]], Basis::ClosedForm),
                has_dichotomy: known(true, Basis::ClosedForm),
                ..Default::default()
            },
        },
        "scalar_poly" => Fixture {
            name: "scalar_poly",
            description: "((1+s)/(1+t))^3, rate ln(1+t)",
            family: scalar(|t, s| ((1.0 + s) / (1.0 + t)).powi(3), "scalar_poly"),
            rate: RateFunction::log1p(),
            norms: base,
            z: Some(SubspaceZ::trivial(1)),
            detect: DetectConfig {
                fit_grid: TimeGrid::RhoUniform { rho_max: 5.0, step: 0.125 },
                verify_grid: TimeGrid::RhoUniform { rho_max: 5.0, step: 0.0625 },
                ..default
            },
            probe_grid: (20.0, 0.01),
            annotations: Annotations {
                lambda: known(3.0, Basis::ClosedForm),
                d: known(1.0, Basis::ClosedForm),
                projection: known(vec![vec![1.0]], Basis::ClosedForm),
                has_dichotomy: known(true, Basis::ClosedForm),
                ..Default::default()
            },
        },
        "nonuniform_scalar" => Fixture {
            name: "nonuniform_scalar",
            description: "exp(-(t-s) + (t cos t - s cos s)/4), rate t: decay 3/4 with growth e^{s/2} in the initial time",
            family: scalar(|t, s| (-(t - s) + (t * t.cos() - s * s.cos()) / 4.0).exp(), "nonuniform_scalar"),
            rate: RateFunction::identity(),
            norms: base,
            z: Some(SubspaceZ::trivial(1)),
            detect: DetectConfig { nonuniform: true, ..default },
            probe_grid: (20.0, 0.01),
            annotations: Annotations {
                lambda: known(0.75, Basis::Derived),
                d: known(1.0, Basis::Derived),
                projection: known(vec![vec![1.0]], Basis::ClosedForm),
                has_dichotomy: known(true, Basis::Derived),
                ..Default::default()
            },
        },
        other => {
            return Err(Error::UnknownFixture { name: other.to_string(), available: FIXTURE_NAMES.join(", ") });
        }
    };
    Ok(fx)
}

/// Bundled admissibility inputs on one shared grid over `[0, t_max]`.
///
/// For `Y1`: an indicator of `[1, 2)` along each axis, `e^{−t}` and
/// `sin(3t)e^{−t/2}`. For `Y'∞`: constants along each axis (continued
/// past `t_max`), `cos t`, and an indicator of `[0, t_max/2)`.
pub fn bundled_suite(dim: usize, pair: Pair, t_max: f64, h: f64) -> Result<Vec<SampledFunction>> {
    let one = Vector::from_element(1, 1.0);
    let diag = Vector::from_element(dim, 1.0 / (dim as f64).sqrt());
    let axes: Vec<Vector> = (0..dim).map(|i| crate::linalg::unit(dim, i)).collect();
    let mut out = Vec::new();
    match pair {
        Pair::Y1 => {
            let ind = SampledFunction::indicator(1.0, 2.0_f64.min(t_max), one, t_max, h)?;
            let grid = ind.grid().to_vec();
            for e in &axes {
                out.push(ind.map(|_, s| e * s[0]));
            }
            let d = diag.clone();
            out.push(SampledFunction::from_fn(grid.clone(), move |t| &d * (-t).exp())?.with_decay(1.0));
            let e = axes[0].clone();
            out.push(SampledFunction::from_fn(grid, move |t| &e * ((3.0 * t).sin() * (-t / 2.0).exp()))?.with_decay(0.5));
        }
        Pair::YinfPrime => {
            let ind = SampledFunction::indicator(0.0, t_max / 2.0, one, t_max, h)?;
            let grid = ind.grid().to_vec();
            for e in &axes {
                let e = e.clone();
                out.push(SampledFunction::from_fn(grid.clone(), move |_| e.clone())?.with_extension(Extension::Constant));
            }
            let d = diag.clone();
            out.push(SampledFunction::from_fn(grid, move |t| &d * t.cos())?);
            out.push(ind.map(|_, s| &diag * s[0]));
        }
    }
    Ok(out)
}

/// Matrix pattern of a built-in perturbation.
pub fn perturbation_pattern(name: &str, dim: usize) -> Result<Matrix> {
    match name {
        "identity" => Ok(Matrix::identity(dim, dim)),
        "upper" if dim >= 2 => {
            let mut m = Matrix::zeros(dim, dim);
            m[(0, 1)] = 1.0;
            Ok(m)
        }
        _ => Err(Error::Config(format!("unknown perturbation pattern `{name}` for dimension {dim} (identity, upper)"))),
    }
}

/// Built-in perturbations: `envelope` is `δe^{−(ε+a)ρ}ρ'` times the pattern,
/// `constant` is `δ` times the pattern, `zero` is `B ≡ 0`.
pub fn builtin_perturbation(
    kind: &str,
    pattern: &str,
    dim: usize,
    rate: &RateFunction,
    delta: f64,
    a: f64,
    epsilon: f64,
) -> Result<PerturbationFamily> {
    match kind {
        "zero" => Ok(PerturbationFamily::zero(dim)),
        "envelope" => Ok(PerturbationFamily::envelope(rate, perturbation_pattern(pattern, dim)?, delta, a, epsilon)),
        "constant" => {
            let m = perturbation_pattern(pattern, dim)? * delta;
            Ok(PerturbationFamily::new(format!("constant(delta={delta})"), dim, move |_| m.clone(), delta, a, epsilon))
        }
        _ => Err(Error::Config(format!("unknown perturbation `{kind}` (zero, envelope, constant, csv)"))),
    }
}

impl std::fmt::Debug for Fixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fixture").field("name", &self.name).field("annotations", &self.annotations).finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::cocycle_residual;

    #[test]
    fn registry() {
        for name in FIXTURE_NAMES {
            let f = builtin_fixture(name).unwrap();
            assert_eq!(f.name, name);
        }
        let err = builtin_fixture("nope").unwrap_err().to_string();
        assert!(err.contains("example2") && err.contains("diag2d"));
        let ex2 = builtin_fixture("example2").unwrap();
        assert!(ex2.family.is_discontinuous() && ex2.rate.name().contains("log"));
        assert_eq!(builtin_fixture("scalar_poly").unwrap().annotations.lambda.unwrap().value, 3.0);
    }

    #[test]
    fn example2_values() {
        assert_eq!(example2_propagator(1025.5, 1024.2), 1024.0);
        assert_eq!(example2_propagator(3.0, 1.0), 2.0);
        assert_eq!(example2_propagator(4.0, 1.0), 0.0);
        assert_eq!(example2_propagator(7.9, 7.1), 1.0);
        assert_eq!(example2_propagator(7.0, 6.9), 0.0);
        assert_eq!(example2_propagator(1.0, 0.5), 0.0);
        let f = builtin_fixture("example2").unwrap().family;
        assert!(cocycle_residual(&f, &[(5.5, 4.5, 3.5), (3.0, 2.5, 1.0), (9.0, 8.0, 2.0)]).unwrap() == 0.0);
    }

    #[test]
    fn suites_share_a_grid() {
        for pair in [Pair::Y1, Pair::YinfPrime] {
            let s = bundled_suite(2, pair, 10.0, 0.25).unwrap();
            assert!(s.len() >= 4);
            assert!(s.iter().all(|f| f.grid() == s[0].grid() && f.dim() == 2));
        }
    }

    #[test]
    fn perturbations() {
        let id = RateFunction::identity();
        let b = builtin_perturbation("envelope", "upper", 2, &id, 0.02, 1.0, 0.0).unwrap();
        assert!((b.at(0.0)[(0, 1)] - 0.02).abs() < 1e-15 && b.at(0.0)[(1, 0)] == 0.0);
        assert!(builtin_perturbation("envelope", "upper", 1, &id, 0.02, 1.0, 0.0).is_err());
    }
}
