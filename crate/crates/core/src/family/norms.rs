//! Time-indexed norm families `t ↦ ‖·‖_t`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::envelope_fit_1;
use crate::linalg::Vector;
use crate::rates::RateFunction;

/// Claimed constants of the two-sided bound `‖x‖ ≤ ‖x‖_t ≤ C e^{ερ(t)}‖x‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormConstants {
    pub c: f64,
    pub epsilon: f64,
}

pub trait NormFamily: Send + Sync {
    fn norm(&self, t: f64, x: &Vector) -> f64;

    /// `‖x‖_t` for several vectors at one time.
    fn norm_many(&self, t: f64, xs: &[Vector]) -> Vec<f64> {
        xs.iter().map(|x| self.norm(t, x)).collect()
    }

    fn constants(&self) -> Option<NormConstants> {
        None
    }

    fn label(&self) -> String;
}

/// The Euclidean norm at every time.
#[derive(Clone, Copy, Debug, Default)]
pub struct BaseNorm;

impl NormFamily for BaseNorm {
    fn norm(&self, _t: f64, x: &Vector) -> f64 {
        x.norm()
    }

    fn constants(&self) -> Option<NormConstants> {
        Some(NormConstants { c: 1.0, epsilon: 0.0 })
    }

    fn label(&self) -> String {
        "base".into()
    }
}

/// `‖x‖_t = w(t)‖x‖` for a weight `w ≥ 1`.
#[derive(Clone)]
pub struct WeightedNorm {
    label: String,
    weight: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    constants: Option<NormConstants>,
}

impl fmt::Debug for WeightedNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WeightedNorm({})", self.label)
    }
}

impl WeightedNorm {
    pub fn new(
        label: impl Into<String>,
        weight: impl Fn(f64) -> f64 + Send + Sync + 'static,
        constants: Option<NormConstants>,
    ) -> Self {
        WeightedNorm { label: label.into(), weight: Arc::new(weight), constants }
    }

    /// `(1+t)^p ‖x‖`; with `ρ(t) = ln(1+t)` this has `C = 1`, `ε = p`.
    pub fn power(p: f64) -> Self {
        Self::new(format!("(1+t)^{p}"), move |t| (1.0 + t).powf(p), Some(NormConstants { c: 1.0, epsilon: p }))
    }
}

impl NormFamily for WeightedNorm {
    fn norm(&self, t: f64, x: &Vector) -> f64 {
        (self.weight)(t) * x.norm()
    }

    fn constants(&self) -> Option<NormConstants> {
        self.constants
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormAxiomReport {
    /// Max of `|‖αx‖_t − |α|‖x‖_t| / (|α|‖x‖_t)`.
    pub homogeneity_defect: f64,
    /// Max of `(‖x+y‖_t − ‖x‖_t − ‖y‖_t) / (‖x‖_t + ‖y‖_t)`, clipped at 0.
    pub triangle_excess: f64,
    /// Smallest `‖x‖_t` over nonzero samples.
    pub min_positive: f64,
    pub passed: bool,
}

/// Spot-checks homogeneity, the triangle inequality and positivity on
/// seeded random vectors at each of `times`.
pub fn check_norm_axioms(
    norms: &dyn NormFamily,
    times: &[f64],
    dim: usize,
    samples: usize,
    seed: u64,
) -> NormAxiomReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random = |rng: &mut ChaCha8Rng| Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
    let (mut hom, mut tri, mut min_pos) = (0.0_f64, 0.0_f64, f64::INFINITY);
    for &t in times {
        for _ in 0..samples {
            let x = random(&mut rng);
            let y = random(&mut rng);
            let alpha: f64 = rng.random_range(-5.0..5.0);
            let (nx, ny) = (norms.norm(t, &x), norms.norm(t, &y));
            if nx > 0.0 && alpha != 0.0 {
                hom = hom.max((norms.norm(t, &(&x * alpha)) - alpha.abs() * nx).abs() / (alpha.abs() * nx));
            }
            if nx + ny > 0.0 {
                tri = tri.max((norms.norm(t, &(&x + &y)) - nx - ny) / (nx + ny));
            }
            if x.norm() > 0.0 {
                min_pos = min_pos.min(nx);
            }
        }
    }
    let passed = hom <= 1e-10 && tri <= 1e-10 && min_pos > 0.0;
    NormAxiomReport { homogeneity_defect: hom, triangle_excess: tri.max(0.0), min_positive: min_pos, passed }
}

/// Fitted constants of the two-sided bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormBounds {
    pub c: f64,
    pub epsilon: f64,
    /// Smallest slack of the fitted bound over the samples (0 when tight).
    pub min_slack: f64,
    /// Smallest `‖x‖_t / ‖x‖` seen; the lower bound needs this `≥ 1`.
    pub worst_lower_ratio: f64,
    /// Whether the claimed constants, if any, dominate every sample.
    pub claimed_ok: Option<bool>,
}

/// Fits `ln(‖x‖_t/‖x‖) ≤ ln Ĉ + ε̂ρ(t)` over `grid × probes` with `ε̂ ≥ 0`,
/// minimizing the squared slack, and checks `‖x‖ ≤ ‖x‖_t`.
pub fn norm_bounds_estimate(
    norms: &dyn NormFamily,
    rate: &RateFunction,
    grid: &[f64],
    probes: &[Vector],
) -> Result<NormBounds> {
    if grid.is_empty() || probes.is_empty() {
        return Err(Error::InvalidArgument("norm bounds need a nonempty grid and probe set".into()));
    }
    let mut rho = Vec::with_capacity(grid.len());
    let mut target = Vec::with_capacity(grid.len());
    let mut worst = f64::INFINITY;
    for &t in grid {
        let mut g = f64::NEG_INFINITY;
        for (x, nt) in probes.iter().zip(norms.norm_many(t, probes)) {
            let base = x.norm();
            if base == 0.0 {
                continue;
            }
            let ratio = nt / base;
            if !ratio.is_finite() {
                return Err(Error::InvalidArgument(format!("norm at t={t} is not finite")));
            }
            if ratio < 1.0 - 1e-9 {
                return Err(Error::NormLowerBound { t, x: x.iter().copied().collect(), ratio });
            }
            worst = worst.min(ratio);
            g = g.max(ratio.ln());
        }
        if g.is_finite() {
            rho.push(rate.eval(t));
            target.push(g);
        }
    }
    if target.is_empty() {
        return Err(Error::InvalidArgument("all probes are zero".into()));
    }
    let fit = envelope_fit_1(&rho, &target, 0.0, 50.0);
    let (lnc, eps) = (fit.intercept, fit.weights[0]);
    let min_slack = rho.iter().zip(&target).map(|(r, g)| lnc + eps * r - g).fold(f64::INFINITY, f64::min);
    let claimed_ok = norms.constants().map(|k| {
        rho.iter().zip(&target).all(|(r, g)| *g <= k.c.ln() + k.epsilon * r + 1e-9)
    });
    Ok(NormBounds { c: lnc.exp(), epsilon: eps, min_slack, worst_lower_ratio: worst, claimed_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::unit;

    fn probes() -> Vec<Vector> {
        vec![unit(2, 0), unit(2, 1), Vector::from_vec(vec![0.6, -0.8])]
    }

    #[test]
    fn base_norm_bounds() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let b = norm_bounds_estimate(&BaseNorm, &RateFunction::identity(), &grid, &probes()).unwrap();
        assert!((b.c - 1.0).abs() < 1e-9 && b.epsilon.abs() < 1e-6, "{b:?}");
        assert_eq!(b.claimed_ok, Some(true));
    }

    #[test]
    fn power_weight_bounds() {
        let grid: Vec<f64> = (0..=200).map(|k| k as f64 * 0.5).collect();
        let b = norm_bounds_estimate(&WeightedNorm::power(1.0), &RateFunction::log1p(), &grid, &probes()).unwrap();
        assert!((b.c - 1.0).abs() < 1e-6 && (b.epsilon - 1.0).abs() < 1e-6, "{b:?}");
        assert!(b.min_slack.abs() < 1e-6);
    }

    #[test]
    fn lower_bound_violation_is_reported() {
        let shrink = WeightedNorm::new("half", |_| 0.5, None);
        let err = norm_bounds_estimate(&shrink, &RateFunction::identity(), &[0.0, 1.0], &probes()).unwrap_err();
        assert!(matches!(err, Error::NormLowerBound { t, .. } if t == 0.0));
    }

    #[test]
    fn axioms() {
        let r = check_norm_axioms(&WeightedNorm::power(2.0), &[0.0, 1.0, 10.0], 3, 50, 7);
        assert!(r.passed, "{r:?}");
    }
}
