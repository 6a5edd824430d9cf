//! Perturbations `B(t)` of an evolution family: the bound on `‖B(t)‖`, the
//! perturbed family `U` from the Volterra equation
//! `U(t,s) = T(t,s) + ∫ₛᵗ T(t,τ)B(τ)U(τ,s)dτ`, operator bounds, and
//! before/after experiments.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dichotomy::{detect, stable_subspace, DetectConfig, Detection};
use crate::error::{Error, Result};
use crate::family::{CachePolicy, EvolutionFamily, NormFamily, PropagatorSource};
use crate::funcspaces::{y1_norm, yinf_norm, SampledFunction, SubspaceZ};
use crate::green::mild_defects;
use crate::linalg::{max_principal_angle, op_norm, Matrix, Vector};
use crate::rates::RateFunction;

/// `t ↦ B(t)` with declared parameters of `‖B(t)‖ ≤ δ e^{−(ε+a)ρ(t)} ρ'(t)`.
#[derive(Clone)]
pub struct PerturbationFamily {
    name: String,
    dim: usize,
    b: Arc<dyn Fn(f64) -> Matrix + Send + Sync>,
    pub delta: f64,
    pub a: f64,
    pub epsilon: f64,
}

impl fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PerturbationFamily({}, delta={}, a={}, epsilon={})", self.name, self.delta, self.a, self.epsilon)
    }
}

impl PerturbationFamily {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        b: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        delta: f64,
        a: f64,
        epsilon: f64,
    ) -> Self {
        PerturbationFamily { name: name.into(), dim, b: Arc::new(b), delta, a, epsilon }
    }

    /// `B(t) = δ e^{−(ε+a)ρ(t)} ρ'(t) · pattern`; with `‖pattern‖ = 1` the bound
    /// is attained at every `t`.
    pub fn envelope(rate: &RateFunction, pattern: Matrix, delta: f64, a: f64, epsilon: f64) -> Self {
        let rate = rate.clone();
        let dim = pattern.nrows();
        PerturbationFamily::new(
            format!("envelope(delta={delta}, a={a})"),
            dim,
            move |t| &pattern * (delta * (-(epsilon + a) * rate.eval(t)).exp() * rate.deriv(t)),
            delta,
            a,
            epsilon,
        )
    }

    /// `B ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        PerturbationFamily::new("zero", dim, move |_| Matrix::zeros(dim, dim), 0.0, 1.0, 0.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, t: f64) -> Matrix {
        (self.b)(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationBoundReport {
    /// Max over the grid of `‖B(t)‖ e^{(ε+a)ρ(t)} / ρ'(t)`.
    pub max_ratio: f64,
    pub at: f64,
    pub delta: f64,
    pub passed: bool,
}

pub fn check_perturbation_bound(b: &PerturbationFamily, rate: &RateFunction, grid: &[f64]) -> Result<PerturbationBoundReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("perturbation bound check needs a nonempty grid".into()));
    }
    let mut report = PerturbationBoundReport { max_ratio: 0.0, at: grid[0], delta: b.delta, passed: true };
    for &t in grid {
        let r = op_norm(&b.at(t)) * ((b.epsilon + b.a) * rate.eval(t)).exp() / rate.deriv(t);
        if r > report.max_ratio || r.is_nan() {
            report.max_ratio = r;
            report.at = t;
        }
    }
    report.passed = report.max_ratio <= b.delta * (1.0 + 1e-9);
    Ok(report)
}

/// Discretization and stopping rule of the Picard iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    /// Stop when `sup ‖U^{k+1} − U^k‖ ≤ tol·(1 + sup ‖U^k‖)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Spacing of the global ρ-lattice used as quadrature nodes.
    pub rho_spacing: f64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings { tol: 1e-10, max_iters: 60, rho_spacing: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardSolution {
    /// `U(t_k, s)X` at each requested time.
    pub values: Vec<Matrix>,
    pub iterations: usize,
    /// Successive-iterate distances.
    pub distances: Vec<f64>,
    /// Last ratio of successive distances (0 if fewer than two).
    pub contraction: f64,
}

/// Quadrature nodes: `s`, lattice points `ρ⁻¹(k h)` in `(s, t_end)`, and
/// every requested time.
fn picard_nodes(rate: &RateFunction, s: f64, targets: &[f64], spacing: f64) -> Result<Vec<f64>> {
    let end = targets.iter().copied().fold(s, f64::max);
    let (r0, r1) = (rate.eval(s), rate.eval(end));
    let mut nodes = vec![s];
    let mut k = (r0 / spacing).floor() as i64 + 1;
    while (k as f64) * spacing < r1 {
        let t = rate.inverse(k as f64 * spacing)?;
        if t > s && t < end {
            nodes.push(t);
        }
        k += 1;
    }
    nodes.extend_from_slice(targets);
    nodes.push(end);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    Ok(nodes)
}

/// Solves the Volterra equation for `U(·, s)X` by Picard iteration on the
/// trapezoid rule, returning values at each of `targets` (all `≥ s`).
pub fn solve_perturbed_matrix(
    family: &EvolutionFamily,
    b: &PerturbationFamily,
    rate: &RateFunction,
    s: f64,
    targets: &[f64],
    x: &Matrix,
    settings: &PicardSettings,
) -> Result<PicardSolution> {
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidArgument("Picard tolerance must be positive".into()));
    }
    if targets.iter().any(|&t| !(t >= s)) {
        return Err(Error::InvalidArgument(format!("Picard targets must be ≥ s = {s}")));
    }
    if b.dim() != family.dim() || x.nrows() != family.dim() {
        return Err(Error::Dimension("perturbation, family and initial data differ in dimension".into()));
    }
    let nodes = picard_nodes(rate, s, targets, settings.rho_spacing)?;
    let n = nodes.len();
    let base: Vec<Matrix> = family.propagators_from(s, &nodes)?.into_iter().map(|m| m * x).collect();
    let bs: Vec<Matrix> = nodes.iter().map(|&t| b.at(t)).collect();
    let pick = |u: &[Matrix]| -> Vec<Matrix> {
        targets.iter().map(|t| u[nodes.partition_point(|v| v < t)].clone()).collect()
    };
    if bs.iter().all(|m| m.iter().all(|&v| v == 0.0)) {
        return Ok(PicardSolution { values: pick(&base), iterations: 0, distances: vec![], contraction: 0.0 });
    }
    let steps: Vec<Matrix> = (0..n - 1)
        .into_par_iter()
        .map(|i| family.propagator(nodes[i + 1], nodes[i]))
        .collect::<Result<_>>()?;
    let mut u = base.clone();
    let mut distances = Vec::new();
    for iter in 1..=settings.max_iters {
        let mut next = Vec::with_capacity(n);
        let mut integral = Matrix::zeros(x.nrows(), x.ncols());
        next.push(&base[0] + &integral);
        for i in 0..n - 1 {
            let h = nodes[i + 1] - nodes[i];
            integral = &steps[i] * (&integral + &bs[i] * &u[i] * (0.5 * h)) + &bs[i + 1] * &u[i + 1] * (0.5 * h);
            next.push(&base[i + 1] + &integral);
        }
        let dist = next.iter().zip(&u).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = u.iter().map(|m| m.norm()).fold(0.0, f64::max);
        distances.push(dist);
        u = next;
        let contraction = match distances.len() {
            l if l >= 2 && distances[l - 2] > 0.0 => distances[l - 1] / distances[l - 2],
            _ => 0.0,
        };
        if dist <= settings.tol * (1.0 + scale) {
            return Ok(PicardSolution { values: pick(&u), iterations: iter, distances, contraction });
        }
        if !dist.is_finite() {
            return Err(Error::NonConvergence { iterations: iter, ratio: contraction });
        }
    }
    let l = distances.len();
    let ratio = if l >= 2 { distances[l - 1] / distances[l - 2] } else { f64::NAN };
    Err(Error::NonConvergence { iterations: settings.max_iters, ratio })
}

/// `U(t,s)x` for one vector.
pub fn solve_perturbed(
    family: &EvolutionFamily,
    b: &PerturbationFamily,
    rate: &RateFunction,
    t: f64,
    s: f64,
    x: &Vector,
    settings: &PicardSettings,
) -> Result<(Vector, PicardSolution)> {
    let xm = Matrix::from_column_slice(x.len(), 1, x.as_slice());
    let sol = solve_perturbed_matrix(family, b, rate, s, &[t], &xm, settings)?;
    let v = sol.values[0].column(0).into_owned();
    Ok((v, sol))
}

/// Propagators of the perturbed family, one Picard solve per start time.
pub struct PerturbedSource {
    base: EvolutionFamily,
    b: PerturbationFamily,
    rate: RateFunction,
    settings: PicardSettings,
}

impl PropagatorSource for PerturbedSource {
    fn propagate(&self, t: f64, s: f64) -> Result<Matrix> {
        Ok(self.propagate_from(s, &[t])?.pop().expect("one target"))
    }

    fn propagate_from(&self, s: f64, ts: &[f64]) -> Result<Vec<Matrix>> {
        let d = self.base.dim();
        Ok(solve_perturbed_matrix(&self.base, &self.b, &self.rate, s, ts, &Matrix::identity(d, d), &self.settings)?.values)
    }
}

/// The perturbed family `U` as an [`EvolutionFamily`] (cached).
pub fn perturbed_family(
    family: &EvolutionFamily,
    b: &PerturbationFamily,
    rate: &RateFunction,
    settings: PicardSettings,
) -> EvolutionFamily {
    let source = PerturbedSource { base: family.clone(), b: b.clone(), rate: rate.clone(), settings };
    let fam = EvolutionFamily::new(
        format!("{}+{}", family.name(), b.name()),
        family.dim(),
        Arc::new(source),
        CachePolicy::Enabled,
    );
    if family.is_discontinuous() {
        fam.flagged_discontinuous()
    } else {
        fam
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorProbe {
    pub sup_x: f64,
    /// `‖t ↦ B(t)x(t)‖₁`.
    pub d_value: f64,
    /// Quadrature error estimate of `d_value`, credited to the bound.
    pub d_quadrature_error: f64,
    pub d_bound: f64,
    /// `‖t ↦ B(t)x(t)/ρ'(t)‖_∞`.
    pub d_prime_value: f64,
    pub d_prime_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorBoundsReport {
    pub probes: Vec<OperatorProbe>,
    /// Max of `value / bound` for each operator (0 when both vanish).
    pub d_ratio: f64,
    pub d_prime_ratio: f64,
    pub passed: bool,
}

/// Checks `‖Bx‖₁ ≤ (δC/a)‖x‖_∞` and `‖Bx/ρ'‖_∞ ≤ δC‖x‖_∞` on probe functions,
/// with `C` the norm constant. Both hold up to a relative 1e−6; the integral
/// also gets its quadrature error estimate.
pub fn perturbation_operator_bounds(
    b: &PerturbationFamily,
    norms: &dyn NormFamily,
    c: f64,
    rate: &RateFunction,
    probes: &[SampledFunction],
) -> Result<OperatorBoundsReport> {
    let mut out = OperatorBoundsReport { probes: vec![], d_ratio: 0.0, d_prime_ratio: 0.0, passed: true };
    let ratio = |v: f64, bound: f64| if v == 0.0 { 0.0 } else { v / bound };
    let mut within = true;
    for x in probes {
        if x.dim() != b.dim() {
            return Err(Error::Dimension("probe dimension differs from the perturbation".into()));
        }
        let bx = x.map(|t, v| b.at(t) * v);
        let bx_weighted = x.map(|t, v| b.at(t) * v / rate.deriv(t));
        let sup_x = yinf_norm(x, norms).value;
        let d = y1_norm(&bx, norms);
        let p = OperatorProbe {
            sup_x,
            d_value: d.value,
            d_quadrature_error: d.quadrature_error,
            d_bound: b.delta * c / b.a * sup_x,
            d_prime_value: yinf_norm(&bx_weighted, norms).value,
            d_prime_bound: b.delta * c * sup_x,
        };
        out.d_ratio = out.d_ratio.max(ratio(p.d_value, p.d_bound));
        out.d_prime_ratio = out.d_prime_ratio.max(ratio(p.d_prime_value, p.d_prime_bound));
        within &= p.d_value <= p.d_bound * (1.0 + 1e-6) + p.d_quadrature_error;
        within &= p.d_prime_value <= p.d_prime_bound * (1.0 + 1e-6);
        out.probes.push(p);
    }
    out.passed = within;
    Ok(out)
}

/// Builds `x(t) = U(t,0)x₀ + ∫₀ᵗ U(t,τ)y(τ)dτ` on the grid of `y` and
/// returns, over `pairs`, the largest difference between the mild defect of
/// `x` against `y` for `U` and the mild defect of `x` against `y + Bx` for
/// `T`.
pub fn lemma_identity_defect(
    base: &EvolutionFamily,
    perturbed: &EvolutionFamily,
    b: &PerturbationFamily,
    y: &SampledFunction,
    x0: &Vector,
    pairs: &[(f64, f64)],
) -> Result<f64> {
    let g = y.grid();
    let yv = y.values();
    let mut xs = vec![x0.clone()];
    for k in 0..g.len() - 1 {
        let h = g[k + 1] - g[k];
        let next = if h > 0.0 {
            perturbed.propagator(g[k + 1], g[k])? * (&xs[k] + &yv[k] * (0.5 * h)) + &yv[k + 1] * (0.5 * h)
        } else {
            xs[k].clone()
        };
        xs.push(next);
    }
    let x = SampledFunction::new(g.to_vec(), xs)?;
    let forced = y.map(|t, v| v + b.at(t) * x.eval(t));
    let ru = mild_defects(perturbed, &x, y, None, pairs)?;
    let rt = mild_defects(base, &x, &forced, None, pairs)?;
    Ok(ru.iter().zip(&rt).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
}

/// Summary of one certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub d: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub m: f64,
    pub verified: bool,
}

impl From<&Detection> for CertificateSummary {
    fn from(d: &Detection) -> Self {
        let c = &d.certificate;
        CertificateSummary { d: c.d, lambda: c.lambda, epsilon: c.epsilon, m: c.m, verified: d.verification.passed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub perturbation: String,
    pub bound: PerturbationBoundReport,
    pub before: CertificateSummary,
    pub after: Option<CertificateSummary>,
    /// Why the perturbed family has no certificate, if it has none.
    pub failure: Option<String>,
    /// `λ − λ'`.
    pub lambda_loss: Option<f64>,
    /// `D' / D`.
    pub d_growth: Option<f64>,
    /// Largest principal angle between `S(0)` before and after.
    pub stable_angle: Option<f64>,
}

/// Detection on the family and on its perturbation with the same `Z`,
/// norms and rate.
pub fn robustness_experiment(
    family: &EvolutionFamily,
    b: &PerturbationFamily,
    z: Option<SubspaceZ>,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    detect_config: &DetectConfig,
    picard: PicardSettings,
) -> Result<RobustnessReport> {
    let check_grid = detect_config.verify_grid.build(rate)?;
    let bound = check_perturbation_bound(b, rate, &check_grid)?;
    let before = detect(family, rate, norms, z, detect_config)?;
    let perturbed = perturbed_family(family, b, rate, picard);
    let mut report = RobustnessReport {
        perturbation: b.name().to_string(),
        bound,
        before: CertificateSummary::from(&before),
        after: None,
        failure: None,
        lambda_loss: None,
        d_growth: None,
        stable_angle: None,
    };
    match detect(&perturbed, rate, norms, Some(before.z.clone()), detect_config) {
        Ok(after) => {
            let (c0, c1) = (&before.certificate, &after.certificate);
            report.lambda_loss = Some(c0.lambda - c1.lambda);
            report.d_growth = Some(c1.d / c0.d);
            let s0 = stable_subspace(family, rate, 0.0, &detect_config.split)?.basis;
            let s1 = stable_subspace(&perturbed, rate, 0.0, &detect_config.split)?.basis;
            report.stable_angle = Some(max_principal_angle(&s0, &s1));
            report.after = Some(CertificateSummary::from(&after));
        }
        Err(e) => report.failure = Some(e.to_string()),
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub report: RobustnessReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaSweep {
    pub points: Vec<SweepPoint>,
    /// Largest tested δ whose perturbed family kept a verified certificate.
    pub largest_certified: Option<f64>,
    /// Whether `λ'` is nonincreasing along increasing δ (certified points).
    pub monotone: bool,
}

/// Runs [`robustness_experiment`] for each δ, with `make(δ)` building the
/// perturbation.
pub fn delta_sweep(
    family: &EvolutionFamily,
    make: impl Fn(f64) -> PerturbationFamily,
    deltas: &[f64],
    z: Option<SubspaceZ>,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    detect_config: &DetectConfig,
    picard: PicardSettings,
) -> Result<DeltaSweep> {
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut points = Vec::new();
    for &delta in &sorted {
        let report = robustness_experiment(family, &make(delta), z.clone(), norms, rate, detect_config, picard)?;
        points.push(SweepPoint { delta, report });
    }
    let largest_certified = points
        .iter()
        .filter(|p| p.report.after.as_ref().is_some_and(|a| a.verified))
        .map(|p| p.delta)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    let lambdas: Vec<f64> = points.iter().filter_map(|p| p.report.after.as_ref().map(|a| a.lambda)).collect();
    let monotone = lambdas.windows(2).all(|w| w[1] <= w[0]);
    Ok(DeltaSweep { points, largest_certified, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{cocycle_residual, BaseNorm};
    use crate::linalg::unit;
    use crate::rates::uniform_grid;

    fn exp1() -> EvolutionFamily {
        EvolutionFamily::closed_form("exp", 1, |t, s| Matrix::from_element(1, 1, (-(t - s)).exp()))
    }

    #[test]
    fn bound_checks() {
        let id = RateFunction::identity();
        let grid = uniform_grid(30.0, 0.1);
        let b = PerturbationFamily::envelope(&id, Matrix::identity(1, 1), 0.05, 1.0, 0.0);
        let r = check_perturbation_bound(&b, &id, &grid).unwrap();
        assert!(r.passed && (r.max_ratio - 0.05).abs() < 1e-12);
        let c = PerturbationFamily::new("const", 1, |_| Matrix::from_element(1, 1, 0.05), 0.05, 1.0, 0.0);
        assert!(!check_perturbation_bound(&c, &id, &grid).unwrap().passed);
        let log = RateFunction::log1p();
        let p = PerturbationFamily::new("poly", 1, |t| Matrix::from_element(1, 1, 0.05 / (1.0 + t).powi(2)), 0.05, 1.0, 0.0);
        assert!(check_perturbation_bound(&p, &log, &grid).unwrap().passed);
    }

    #[test]
    fn volterra_closed_form() {
        let b = PerturbationFamily::new("const", 1, |_| Matrix::from_element(1, 1, 0.1), 0.1, 1.0, 0.0);
        let (v, sol) = solve_perturbed(&exp1(), &b, &RateFunction::identity(), 1.0, 0.0, &unit(1, 0), &PicardSettings { tol: 1e-8, ..Default::default() }).unwrap();
        assert!((v[0] - (-0.9f64).exp()).abs() < 1e-6, "{}", v[0]);
        assert!(sol.iterations <= 12, "{sol:?}");
        for w in sol.distances.windows(2) {
            assert!(w[1] <= 0.15 * w[0]);
        }
    }

    #[test]
    fn zero_perturbation_is_exact() {
        let fam = exp1();
        let u = perturbed_family(&fam, &PerturbationFamily::zero(1), &RateFunction::identity(), PicardSettings::default());
        for (t, s) in [(1.0, 0.0), (5.5, 2.25), (3.0, 3.0)] {
            assert_eq!(u.propagator(t, s).unwrap(), fam.propagator(t, s).unwrap());
        }
    }

    #[test]
    fn perturbed_cocycle() {
        let b = PerturbationFamily::new("const", 1, |_| Matrix::from_element(1, 1, 0.1), 0.1, 1.0, 0.0);
        let u = perturbed_family(&exp1(), &b, &RateFunction::identity(), PicardSettings::default());
        let triples = [(2.0, 1.3, 0.2), (3.7, 3.1, 1.05), (1.0, 0.5, 0.0)];
        assert!(cocycle_residual(&u, &triples).unwrap() <= 1e-6);
        let exact = (-0.9f64 * 2.0).exp();
        assert!((u.propagator(2.0, 0.0).unwrap()[(0, 0)] - exact).abs() < 1e-6);
    }

    #[test]
    fn tight_operator_bounds() {
        let id = RateFunction::identity();
        let b = PerturbationFamily::envelope(&id, Matrix::identity(1, 1), 0.05, 1.0, 0.0);
        let ones = SampledFunction::from_fn(uniform_grid(25.0, 1e-3), |_| unit(1, 0)).unwrap();
        let r = perturbation_operator_bounds(&b, &BaseNorm, 1.0, &id, &[ones]).unwrap();
        let p = &r.probes[0];
        assert!((p.d_value - 0.05).abs() < 1e-6 && (p.d_bound - 0.05).abs() < 1e-15);
        assert!((p.d_prime_value - 0.05).abs() < 1e-12);
        assert!(r.passed);
        let z = perturbation_operator_bounds(&PerturbationFamily::zero(1), &BaseNorm, 1.0, &id, &[SampledFunction::from_fn(uniform_grid(1.0, 0.1), |_| unit(1, 0)).unwrap()]).unwrap();
        assert_eq!((z.d_ratio, z.d_prime_ratio), (0.0, 0.0));
    }

    #[test]
    fn lemma_identity() {
        let id = RateFunction::identity();
        let b = PerturbationFamily::envelope(&id, Matrix::identity(1, 1), 0.05, 1.0, 0.0);
        let fam = exp1();
        let u = perturbed_family(&fam, &b, &id, PicardSettings::default());
        let y = SampledFunction::from_fn(uniform_grid(4.0, 0.005), |t| unit(1, 0) * (2.0 * t).sin()).unwrap();
        let pairs = [(0.0, 1.0), (0.5, 3.0), (1.0, 4.0)];
        let defect = lemma_identity_defect(&fam, &u, &b, &y, &unit(1, 0), &pairs).unwrap();
        assert!(defect < 1e-6, "{defect}");
    }
}
