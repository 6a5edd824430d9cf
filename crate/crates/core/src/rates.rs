//! Rate functions: strictly increasing C¹ time warps ρ with ρ(0) = 0.
//!
//! Three families are built in: the identity (exponential behaviour),
//! `ln(1 + t)` (polynomial behaviour) and the running integral of a positive
//! density μ. Arbitrary closures can be wrapped as custom rates; those are
//! the only kind that may fail validation.

use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const DENSITY_CELLS: usize = 64;
const DENSITY_MAX_DEPTH: usize = 30;

/// How a rate is specified in a scenario.
#[derive(Clone, Debug, PartialEq)]
pub enum RateSpec {
    Identity,
    Log1p,
    MuIntegral(Density),
}

/// Positive density μ whose running integral defines a rate.
#[derive(Clone, Debug, PartialEq)]
pub enum Density {
    Constant(f64),
    /// μ(t) = 1/(1+t); reproduces `ln(1+t)`.
    InvOnePlusT,
    /// μ(t) = a + b t.
    Affine { a: f64, b: f64 },
    /// Samples at increasing times starting at 0, linearly interpolated,
    /// constant beyond the last sample.
    Sampled { t: Vec<f64>, mu: Vec<f64> },
}

impl Density {
    fn closure(&self) -> Option<ScalarFn> {
        match *self {
            Density::Constant(c) => Some(Arc::new(move |_| c)),
            Density::InvOnePlusT => Some(Arc::new(|t| 1.0 / (1.0 + t))),
            Density::Affine { a, b } => Some(Arc::new(move |t| a + b * t)),
            Density::Sampled { .. } => None,
        }
    }
}

#[derive(Clone)]
enum RateKind {
    Identity,
    Log1p,
    MuIntegral(Arc<CumulativeTable>),
    Custom {
        name: String,
        eval: ScalarFn,
        deriv: ScalarFn,
    },
}

/// A rate function ρ together with its derivative and inverse.
///
/// Immutable once built; cloning shares the underlying tables.
#[derive(Clone)]
pub struct RateFunction {
    kind: RateKind,
    domain_hint: f64,
}

impl std::fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateFunction")
            .field("kind", &self.name())
            .field("domain_hint", &self.domain_hint)
            .finish()
    }
}

/// Cumulative integral of μ on an adaptively refined grid.
struct CumulativeTable {
    t: Vec<f64>,
    rho: Vec<f64>,
    mu_samples: Vec<f64>,
    mu: Option<ScalarFn>,
}

impl CumulativeTable {
    fn eval(&self, t: f64) -> f64 {
        let n = self.t.len();
        let last = self.t[n - 1];
        if t >= last {
            return match &self.mu {
                Some(mu) => self.rho[n - 1] + integrate_density(mu.as_ref(), last, t),
                None => self.rho[n - 1] + self.mu_samples[n - 1] * (t - last),
            };
        }
        let k = cell_index(&self.t, t);
        let (a, b) = (self.t[k], self.t[k + 1]);
        if let Some(mu) = &self.mu {
            return self.rho[k] + gauss5(mu.as_ref(), a, t);
        }
        let w = (t - a) / (b - a);
        self.rho[k] + w * (self.rho[k + 1] - self.rho[k])
    }

    fn deriv(&self, t: f64) -> f64 {
        if let Some(mu) = &self.mu {
            return mu(t);
        }
        let n = self.t.len();
        if t >= self.t[n - 1] {
            return self.mu_samples[n - 1];
        }
        let k = cell_index(&self.t, t);
        let w = (t - self.t[k]) / (self.t[k + 1] - self.t[k]);
        self.mu_samples[k] + w * (self.mu_samples[k + 1] - self.mu_samples[k])
    }
}

/// Index k with grid[k] <= t < grid[k+1]; assumes grid[0] <= t < grid[last].
fn cell_index(grid: &[f64], t: f64) -> usize {
    match grid.binary_search_by(|probe| probe.partial_cmp(&t).expect("finite grid")) {
        Ok(i) => i.min(grid.len() - 2),
        Err(i) => i.saturating_sub(1).min(grid.len() - 2),
    }
}

// 5-point Gauss-Legendre on [a, b].
fn gauss5(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683,
        0.538_469_310_105_683,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
        0.236_926_885_056_189,
    ];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    X.iter().zip(W.iter()).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

fn integrate_density(mu: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let pieces = ((b - a) / 1.0).ceil().max(1.0) as usize;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| gauss5(mu, a + i as f64 * h, a + (i + 1) as f64 * h))
        .sum()
}

fn check_positive(mu: &dyn Fn(f64) -> f64, t: f64) -> Result<f64> {
    let v = mu(t);
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonPositiveDensity { t, value: v })
    }
}

fn build_table_from_closure(mu: ScalarFn, t_end: f64, tol: f64) -> Result<CumulativeTable> {
    let mut t = vec![0.0];
    let mut rho = vec![0.0];
    check_positive(mu.as_ref(), 0.0)?;
    let width = t_end / DENSITY_CELLS as f64;
    for i in 0..DENSITY_CELLS {
        let a = i as f64 * width;
        let b = if i + 1 == DENSITY_CELLS { t_end } else { (i + 1) as f64 * width };
        refine_cell(mu.as_ref(), a, b, tol, 0, &mut t, &mut rho)?;
    }
    let mu_samples = t.iter().map(|&s| mu(s)).collect();
    Ok(CumulativeTable { t, rho, mu_samples, mu: Some(mu) })
}

// Appends nodes in (a, b] until one Gauss rule per cell agrees with the
// two-halves rule to `tol`.
fn refine_cell(
    mu: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    depth: usize,
    t: &mut Vec<f64>,
    rho: &mut Vec<f64>,
) -> Result<()> {
    let m = 0.5 * (a + b);
    for &s in &[a, m, b] {
        check_positive(mu, s)?;
    }
    let left = gauss5(mu, a, m);
    let right = gauss5(mu, m, b);
    let whole = left + right;
    let base = *rho.last().expect("table starts at 0");
    let miss = (gauss5(mu, a, b) - whole).abs();
    if miss <= tol * (1.0 + base + whole) || depth >= DENSITY_MAX_DEPTH {
        t.push(b);
        rho.push(base + whole);
        return Ok(());
    }
    refine_cell(mu, a, m, tol, depth + 1, t, rho)?;
    refine_cell(mu, m, b, tol, depth + 1, t, rho)
}

fn build_table_from_samples(ts: &[f64], mu: &[f64]) -> Result<CumulativeTable> {
    if ts.len() != mu.len() || ts.len() < 2 {
        return Err(Error::InvalidArgument(
            "density samples need matching t and mu columns with at least two rows".into(),
        ));
    }
    if ts[0] != 0.0 {
        return Err(Error::InvalidArgument("density samples must start at t = 0".into()));
    }
    for (i, (&s, &m)) in ts.iter().zip(mu).enumerate() {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::NonPositiveDensity { t: s, value: m });
        }
        if i > 0 && s <= ts[i - 1] {
            return Err(Error::InvalidArgument(format!(
                "density sample times must be strictly increasing (row {i})"
            )));
        }
    }
    let mut rho = vec![0.0];
    for k in 1..ts.len() {
        let cell = 0.5 * (mu[k] + mu[k - 1]) * (ts[k] - ts[k - 1]);
        rho.push(rho[k - 1] + cell);
    }
    Ok(CumulativeTable { t: ts.to_vec(), rho, mu_samples: mu.to_vec(), mu: None })
}

/// Builds a rate from its specification.
pub fn make_rate(spec: &RateSpec) -> Result<RateFunction> {
    match spec {
        RateSpec::Identity => Ok(RateFunction::identity()),
        RateSpec::Log1p => Ok(RateFunction::log1p()),
        RateSpec::MuIntegral(density) => RateFunction::mu_integral(density),
    }
}

impl RateFunction {
    pub fn identity() -> Self {
        RateFunction { kind: RateKind::Identity, domain_hint: 1e6 }
    }

    pub fn log1p() -> Self {
        RateFunction { kind: RateKind::Log1p, domain_hint: 1e12 }
    }

    /// ρ(t) = ∫₀ᵗ μ. Closed-form densities are tabulated on [0, 1000]
    /// and integrated on the fly beyond.
    pub fn mu_integral(density: &Density) -> Result<Self> {
        let table = match density {
            Density::Sampled { t, mu } => build_table_from_samples(t, mu)?,
            other => {
                let mu = other.closure().expect("closed-form density");
                build_table_from_closure(mu, 1e3, 1e-13)?
            }
        };
        let hint = table.t.last().copied().unwrap_or(1.0).max(1e3);
        Ok(RateFunction { kind: RateKind::MuIntegral(Arc::new(table)), domain_hint: hint })
    }

    /// Wraps arbitrary closures. No invariants are assumed; run
    /// [`validate_rate`] before relying on one.
    pub fn custom(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        RateFunction {
            kind: RateKind::Custom { name: name.into(), eval: Arc::new(eval), deriv: Arc::new(deriv) },
            domain_hint: 1e6,
        }
    }

    pub fn with_domain_hint(mut self, hint: f64) -> Self {
        self.domain_hint = hint;
        self
    }

    pub fn domain_hint(&self) -> f64 {
        self.domain_hint
    }

    pub fn name(&self) -> String {
        match &self.kind {
            RateKind::Identity => "identity".into(),
            RateKind::Log1p => "log1p".into(),
            RateKind::MuIntegral(_) => "mu_integral".into(),
            RateKind::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            RateKind::Identity => t,
            RateKind::Log1p => t.ln_1p(),
            RateKind::MuIntegral(table) => table.eval(t),
            RateKind::Custom { eval, .. } => eval(t),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match &self.kind {
            RateKind::Identity => 1.0,
            RateKind::Log1p => 1.0 / (1.0 + t),
            RateKind::MuIntegral(table) => table.deriv(t),
            RateKind::Custom { deriv, .. } => deriv(t),
        }
    }

    /// ρ⁻¹(y). Closed forms for identity and `ln(1+t)`; bracketing plus
    /// bisection for everything else.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) {
            return Err(Error::InvalidArgument(format!("rate inverse needs y >= 0, got {y}")));
        }
        match &self.kind {
            RateKind::Identity => Ok(y),
            RateKind::Log1p => Ok(y.exp_m1()),
            _ => self.bisect_inverse(y),
        }
    }

    /// Numeric inverse by bracket expansion and bisection, usable for any kind.
    pub fn bisect_inverse(&self, y: f64) -> Result<f64> {
        if y == 0.0 {
            return Ok(0.0);
        }
        let limit = self.domain_hint * 1024.0;
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.eval(hi) < y {
            lo = hi;
            hi *= 2.0;
            if hi > limit {
                return Err(Error::RateDivergence { target: y, limit });
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Bisection runs to f64 resolution; |ρ(t) − y| ≤ 1e-10 whenever the
        // spacing of floats near t allows it.
        let (elo, ehi) = ((self.eval(lo) - y).abs(), (self.eval(hi) - y).abs());
        let t = if elo <= ehi { lo } else { hi };
        Ok(t)
    }
}

/// Result of [`validate_rate`].
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub rho_at_zero: f64,
    /// Grid cells (t_i, t_{i+1}) on which ρ failed to increase.
    pub monotonicity_violations: Vec<(f64, f64)>,
    pub min_derivative: f64,
    pub min_derivative_at: f64,
    /// max |ρ⁻¹(ρ(t)) − t| / (1 + t); `None` when inversion was skipped
    /// because ρ is not monotone on the grid.
    pub max_inverse_error: Option<f64>,
    pub passed: bool,
}

/// Checks the rate invariants on a grid that starts at 0 and increases strictly.
pub fn validate_rate(rate: &RateFunction, grid: &[f64]) -> Result<ValidationReport> {
    check_time_grid(grid)?;
    let rho0 = rate.eval(0.0);
    let values: Vec<f64> = grid.iter().map(|&t| rate.eval(t)).collect();
    let monotonicity_violations: Vec<(f64, f64)> = grid
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| !(v[1] > v[0]))
        .map(|(g, _)| (g[0], g[1]))
        .collect();
    let (min_derivative_at, min_derivative) = grid
        .iter()
        .map(|&t| (t, rate.deriv(t)))
        .fold((0.0, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc });

    let max_inverse_error = if monotonicity_violations.is_empty() {
        let mut worst = 0.0f64;
        for &t in grid {
            let err = match rate.inverse(rate.eval(t)) {
                Ok(back) => (back - t).abs() / (1.0 + t),
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
        Some(worst)
    } else {
        None
    };

    let passed = rho0.abs() <= 1e-12
        && monotonicity_violations.is_empty()
        && min_derivative > 0.0
        && max_inverse_error.is_some_and(|e| e <= 1e-8);
    Ok(ValidationReport {
        rho_at_zero: rho0,
        monotonicity_violations,
        min_derivative,
        min_derivative_at,
        max_inverse_error,
        passed,
    })
}

pub(crate) fn check_time_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid[0] != 0.0 {
        return Err(Error::InvalidArgument("time grid must start at 0 and have at least two nodes".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Uniform grid 0, h, 2h, ... up to and including `t_max`.
pub fn uniform_grid(t_max: f64, step: f64) -> Vec<f64> {
    let n = (t_max / step).round().max(1.0) as usize;
    (0..=n).map(|i| t_max * i as f64 / n as f64).collect()
}

/// A time grid described either in ordinary time or in ρ-time.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeGrid {
    /// `0, h, 2h, …, t_max`.
    Uniform { t_max: f64, step: f64 },
    /// `ρ⁻¹(0), ρ⁻¹(h), …, ρ⁻¹(rho_max)`.
    RhoUniform { rho_max: f64, step: f64 },
}

impl TimeGrid {
    pub fn build(&self, rate: &RateFunction) -> Result<Vec<f64>> {
        match *self {
            TimeGrid::Uniform { t_max, step } => {
                if !(t_max > 0.0 && step > 0.0 && step <= t_max) {
                    return Err(Error::InvalidArgument(format!("uniform grid needs 0 < step ≤ t_max, got {step}, {t_max}")));
                }
                Ok(uniform_grid(t_max, step))
            }
            TimeGrid::RhoUniform { rho_max, step } => {
                if !(rho_max > 0.0 && step > 0.0 && step <= rho_max) {
                    return Err(Error::InvalidArgument(format!("ρ-uniform grid needs 0 < step ≤ rho_max, got {step}, {rho_max}")));
                }
                let mut grid = uniform_grid(rho_max, step)
                    .into_iter()
                    .map(|r| rate.inverse(r))
                    .collect::<Result<Vec<f64>>>()?;
                grid[0] = 0.0;
                grid.dedup();
                Ok(grid)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn closed_form_values() {
        let id = RateFunction::identity();
        assert_eq!(id.eval(2.0), 2.0);
        assert_eq!(id.deriv(2.0), 1.0);
        let lg = RateFunction::log1p();
        assert!((lg.eval(E - 1.0) - 1.0).abs() < 1e-15);
        assert!((lg.deriv(E - 1.0) - 1.0 / E).abs() < 1e-15);
        let mu = RateFunction::mu_integral(&Density::Constant(2.0)).unwrap();
        assert!((mu.eval(3.0) - 6.0).abs() < 1e-12);
        assert_eq!(mu.deriv(3.0), 2.0);
    }

    #[test]
    fn inverses() {
        assert_eq!(RateFunction::identity().inverse(5.0).unwrap(), 5.0);
        assert!((RateFunction::log1p().inverse(1.0).unwrap() - (E - 1.0)).abs() < 1e-14);
        let mu = RateFunction::mu_integral(&Density::Constant(2.0)).unwrap();
        let t = mu.inverse(6.0).unwrap();
        assert!((t - 6.0 / 2.0).abs() < 1e-9);
        assert!((mu.eval(t) - 6.0).abs() <= 1e-10);
        // bisection route agrees with the closed form
        let b = RateFunction::log1p().bisect_inverse(1.0).unwrap();
        assert!((b - (E - 1.0)).abs() < 1e-9);
        assert!(RateFunction::identity().inverse(-1.0).is_err());
    }

    #[test]
    fn slow_rate_diverges() {
        let slow = RateFunction::custom("slow", |t| (1.0 + t).ln().ln_1p(), |t| 1.0 / ((1.0 + t) * (1.0 + (1.0 + t).ln())))
            .with_domain_hint(10.0);
        assert!(matches!(slow.bisect_inverse(50.0), Err(Error::RateDivergence { .. })));
    }

    #[test]
    fn mu_one_reproduces_identity() {
        let mu = RateFunction::mu_integral(&Density::Constant(1.0)).unwrap();
        for &t in &[0.0, 0.3, 1.7, 10.0, 999.0, 1500.0] {
            assert!((mu.eval(t) - t).abs() <= 1e-10, "t = {t}");
        }
    }

    #[test]
    fn mu_inv_one_plus_t_reproduces_log1p() {
        let mu = RateFunction::mu_integral(&Density::InvOnePlusT).unwrap();
        for &t in &[0.0, 0.01, 0.5, 3.0, 100.0, 900.0] {
            assert!((mu.eval(t) - t.ln_1p()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn rejects_non_positive_density() {
        let err = RateFunction::mu_integral(&Density::Affine { a: 1.0, b: -0.01 }).unwrap_err();
        match err {
            Error::NonPositiveDensity { t, value } => {
                assert!(t >= 100.0 - 20.0);
                assert!(value <= 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = RateFunction::mu_integral(&Density::Sampled { t: vec![0.0, 1.0, 2.0], mu: vec![1.0, 0.0, 1.0] })
            .unwrap_err();
        assert!(matches!(err, Error::NonPositiveDensity { t, .. } if t == 1.0));
    }

    #[test]
    fn sampled_density() {
        let r = RateFunction::mu_integral(&Density::Sampled { t: vec![0.0, 1.0, 2.0], mu: vec![2.0, 2.0, 2.0] })
            .unwrap();
        assert!((r.eval(1.5) - 3.0).abs() < 1e-14);
        // constant extension beyond the last sample
        assert!((r.eval(5.0) - 10.0).abs() < 1e-14);
        assert!((r.inverse(7.0).unwrap() - 3.5).abs() < 1e-9);
    }

    #[test]
    fn validation_reports() {
        let grid = uniform_grid(10.0, 0.1);
        assert!(validate_rate(&RateFunction::identity(), &grid).unwrap().passed);

        let sine = RateFunction::custom("sin", f64::sin, f64::cos);
        let rep = validate_rate(&sine, &uniform_grid(4.0, 0.05)).unwrap();
        assert!(!rep.passed);
        let (a, b) = rep.monotonicity_violations[0];
        assert!(a <= std::f64::consts::FRAC_PI_2 + 0.05 && b >= std::f64::consts::FRAC_PI_2 - 0.05);

        let rep = validate_rate(&RateFunction::log1p(), &uniform_grid(100.0, 0.5)).unwrap();
        assert!(rep.passed);
        assert!((rep.min_derivative - 1.0 / 101.0).abs() < 1e-15);
        assert_eq!(rep.min_derivative_at, 100.0);

        assert!(validate_rate(&RateFunction::identity(), &[0.0, 1.0, 1.0]).is_err());
    }
}
