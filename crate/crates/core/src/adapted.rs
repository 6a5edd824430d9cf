//! Adapted norms that turn a (possibly nonuniform) dichotomy into one with
//! `D = 1`:
//!
//! `‖x‖_t = sup_{τ≥t} e^{λ(ρ(τ)−ρ(t))}‖T(τ,t)P(t)x‖ + sup_{τ≤t} e^{λ(ρ(t)−ρ(τ))}‖T(τ,t)Q(t)x‖`.
//!
//! Suprema run over the global lattice `ρ(τ) ∈ {k/64}` plus `τ = t`; the
//! forward one stops at `ρ(t) + H`.

use std::sync::RwLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::dichotomy::{restricted_backward, DichotomyCertificate, Splitting};
use crate::error::{Error, Result};
use crate::family::{norm_bounds_estimate, EvolutionFamily, NormBounds, NormConstants, NormFamily};
use crate::green::ProjectionPath;
use crate::linalg::{Matrix, Vector};
use crate::rates::RateFunction;

/// Lattice nodes per unit of ρ-time.
pub const NODES_PER_UNIT: f64 = 64.0;

/// Where the adapted norms read `P(τ)` from.
#[derive(Clone, Debug)]
pub enum Projections {
    /// Sampled path, quantized to its nodes.
    Path(ProjectionPath),
    /// Recomputed at every lattice time.
    Splitting(Splitting),
}

impl Projections {
    fn at(&self, t: f64) -> Result<Matrix> {
        match self {
            Projections::Path(p) => Ok(p.at(t).clone()),
            Projections::Splitting(s) => Ok(s.at(t)?.p),
        }
    }
}

#[derive(Debug)]
pub struct AdaptedNorms {
    family: EvolutionFamily,
    rate: RateFunction,
    proj: Projections,
    lambda: f64,
    horizon: f64,
    claimed: Option<NormConstants>,
    lattice: RwLock<Vec<f64>>,
}

/// Weighted operators whose images give the two suprema at one time.
struct Operators {
    forward: Vec<(f64, Matrix)>,
    backward: Vec<(f64, Matrix)>,
}

impl AdaptedNorms {
    /// `lambda` is the rate used inside the norm; `horizon` the forward
    /// window in ρ-time.
    pub fn new(family: EvolutionFamily, rate: RateFunction, proj: Projections, lambda: f64, horizon: f64) -> Result<Self> {
        if !(lambda > 0.0 && horizon >= 0.0) {
            return Err(Error::InvalidArgument(format!("adapted norms need λ > 0 and H ≥ 0, got {lambda}, {horizon}")));
        }
        Ok(AdaptedNorms { family, rate, proj, lambda, horizon, claimed: None, lattice: RwLock::new(vec![0.0]) })
    }

    /// Adapted norms for a certificate with `λ = λ̂/2`, claiming `C = 2D̂`
    /// and the certificate's `ε`.
    pub fn from_certificate(
        family: EvolutionFamily,
        rate: RateFunction,
        cert: &DichotomyCertificate,
        proj: Option<Projections>,
        horizon: f64,
    ) -> Result<Self> {
        let proj = proj.unwrap_or_else(|| Projections::Path(cert.proj.clone()));
        let mut n = Self::new(family, rate, proj, 0.5 * cert.lambda, horizon)?;
        n.claimed = Some(NormConstants { c: 2.0 * cert.d, epsilon: cert.epsilon });
        Ok(n)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        AdaptedNorms {
            family: self.family.clone(),
            rate: self.rate.clone(),
            proj: self.proj.clone(),
            lambda: self.lambda,
            horizon,
            claimed: self.claimed,
            lattice: RwLock::new(self.lattice.read().expect("lattice lock").clone()),
        }
    }

    /// Truncation bound `D̂ e^{−(λ̂−λ)H}` for a certificate rate `λ̂`.
    pub fn truncation_bound(&self, d_hat: f64, lambda_hat: f64) -> f64 {
        d_hat * (-(lambda_hat - self.lambda) * self.horizon).exp()
    }

    fn lattice_times(&self, k_max: usize) -> Result<Vec<f64>> {
        {
            let l = self.lattice.read().expect("lattice lock");
            if l.len() > k_max {
                return Ok(l[..=k_max].to_vec());
            }
        }
        let mut l = self.lattice.write().expect("lattice lock");
        while l.len() <= k_max {
            let k = l.len();
            l.push(self.rate.inverse(k as f64 / NODES_PER_UNIT)?);
        }
        Ok(l[..=k_max].to_vec())
    }

    fn operators(&self, t: f64) -> Result<Operators> {
        let rt = self.rate.eval(t);
        let k_lo = (rt * NODES_PER_UNIT).floor() as usize;
        let k_hi = ((rt + self.horizon) * NODES_PER_UNIT).floor() as usize;
        let lattice = self.lattice_times(k_hi)?;
        let d = self.family.dim();
        let pt = self.proj.at(t)?;

        let mut fwd_times = vec![t];
        fwd_times.extend(lattice[k_lo..=k_hi].iter().copied().filter(|&tau| tau > t));
        let props = self.family.propagators_from(t, &fwd_times)?;
        let forward = fwd_times
            .iter()
            .zip(props)
            .map(|(&tau, m)| ((self.lambda * (self.rate.eval(tau) - rt)).exp(), m * &pt))
            .collect();

        let mut back_times: Vec<f64> = lattice[..=k_lo.min(k_hi)].iter().copied().filter(|&tau| tau < t).collect();
        back_times.push(t);
        let backward = back_times
            .par_iter()
            .map(|&tau| {
                let m = if tau == t {
                    Matrix::identity(d, d) - &pt
                } else {
                    restricted_backward(&self.family.propagator(t, tau)?, &self.proj.at(tau)?, &pt, tau, t)?.0
                };
                Ok(((self.lambda * (rt - self.rate.eval(tau))).exp(), m))
            })
            .collect::<Result<_>>()?;
        Ok(Operators { forward, backward })
    }

    /// Adapted norms of several vectors at one time.
    pub fn eval_many(&self, t: f64, xs: &[Vector]) -> Result<Vec<f64>> {
        let ops = self.operators(t)?;
        xs.iter()
            .map(|x| {
                let mut fwd = 0.0_f64;
                let mut arg = 0usize;
                for (i, (w, m)) in ops.forward.iter().enumerate() {
                    let v = w * (m * x).norm();
                    if v > fwd {
                        fwd = v;
                        arg = i;
                    }
                }
                let n = ops.forward.len();
                if n > 1 && arg == n - 1 {
                    let first = ops.forward[0].0 * (&ops.forward[0].1 * x).norm();
                    if fwd > first * (1.0 + 1e-12) {
                        return Err(Error::HorizonTooShort { t });
                    }
                }
                let back = ops.backward.iter().map(|(w, m)| w * (m * x).norm()).fold(0.0, f64::max);
                Ok(fwd + back)
            })
            .collect()
    }

    pub fn eval(&self, t: f64, x: &Vector) -> Result<f64> {
        Ok(self.eval_many(t, std::slice::from_ref(x))?[0])
    }
}

impl NormFamily for AdaptedNorms {
    fn norm(&self, t: f64, x: &Vector) -> f64 {
        self.eval(t, x).unwrap_or(f64::INFINITY)
    }

    fn norm_many(&self, t: f64, xs: &[Vector]) -> Vec<f64> {
        self.eval_many(t, xs).unwrap_or_else(|_| vec![f64::INFINITY; xs.len()])
    }

    fn constants(&self) -> Option<NormConstants> {
        self.claimed
    }

    fn label(&self) -> String {
        format!("adapted(lambda={}, H={})", self.lambda, self.horizon)
    }
}

/// Tolerated excess of the uniformity ratio over 1.
pub const UNIFORMITY_SLACK: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformityReport {
    /// Max of `‖T(t,s)P(s)x‖'_t / (e^{−λ(ρ(t)−ρ(s))}‖x‖'_s)`.
    pub forward_ratio: f64,
    /// Max of `‖T(s,t)Q(t)x‖'_s / (e^{−λ(ρ(t)−ρ(s))}‖x‖'_t)`.
    pub backward_ratio: f64,
    pub worst_pair: Option<(f64, f64)>,
    pub passed: bool,
}

/// Checks that the adapted norms satisfy both dichotomy inequalities with
/// `D = 1` at the norm's own `λ`, on `pairs` `(s, t)`, `s ≤ t`.
pub fn adapted_uniformity_check(
    adapted: &AdaptedNorms,
    pairs: &[(f64, f64)],
    probes: &[Vector],
) -> Result<UniformityReport> {
    let fam = &adapted.family;
    let rate = &adapted.rate;
    let per_pair: Vec<(f64, f64, (f64, f64))> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let fwd = fam.propagator(t, s)?;
            let (ps, pt) = (adapted.proj.at(s)?, adapted.proj.at(t)?);
            let tp = &fwd * &ps;
            let (back, _) = restricted_backward(&fwd, &ps, &pt, s, t)?;
            let decay = (-adapted.lambda * (rate.eval(t) - rate.eval(s))).exp();
            let pushed: Vec<Vector> = probes.iter().map(|x| &tp * x).collect();
            let pulled: Vec<Vector> = probes.iter().map(|x| &back * x).collect();
            let at_s = adapted.eval_many(s, &[probes, &pulled].concat())?;
            let at_t = adapted.eval_many(t, &[probes, &pushed].concat())?;
            let n = probes.len();
            let (mut f, mut b) = (0.0_f64, 0.0_f64);
            for i in 0..n {
                if at_s[i] > 0.0 {
                    f = f.max(at_t[n + i] / (decay * at_s[i]));
                }
                if at_t[i] > 0.0 {
                    b = b.max(at_s[n + i] / (decay * at_t[i]));
                }
            }
            Ok((f, b, (s, t)))
        })
        .collect::<Result<_>>()?;
    let mut report = UniformityReport { forward_ratio: 0.0, backward_ratio: 0.0, worst_pair: None, passed: true };
    let mut worst = 0.0;
    for (f, b, pair) in per_pair {
        report.forward_ratio = report.forward_ratio.max(f);
        report.backward_ratio = report.backward_ratio.max(b);
        if f.max(b) > worst {
            worst = f.max(b);
            report.worst_pair = Some(pair);
        }
    }
    report.passed = report.forward_ratio <= 1.0 + UNIFORMITY_SLACK && report.backward_ratio <= 1.0 + UNIFORMITY_SLACK;
    Ok(report)
}

/// Tolerance added to `2D̂` in the equivalence check.
pub const EQUIVALENCE_TOL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub bounds: NormBounds,
    pub d_hat: f64,
    /// `2D̂ + tolerance`.
    pub allowed_c: f64,
    /// Max over pairs/probes of `‖T(t,s)P(s)x‖ / (Ĉ e^{ε̂ρ(s)} e^{−λ(ρ(t)−ρ(s))}‖x‖)`.
    pub recovered_stable: f64,
    /// The same for `‖T(s,t)Q(t)x‖` against `Ĉ e^{ε̂ρ(t)} e^{−λ(ρ(t)−ρ(s))}‖x‖`.
    pub recovered_unstable: f64,
    pub passed: bool,
}

/// Fits `(Ĉ, ε̂)` of `‖x‖ ≤ ‖x‖'_t ≤ Ĉ e^{ε̂ρ(t)}‖x‖` on `grid` and checks
/// the nonuniform bounds in the base norm that follow from uniformity in the
/// adapted norms.
pub fn adapted_equivalence_check(
    adapted: &AdaptedNorms,
    d_hat: f64,
    grid: &[f64],
    pairs: &[(f64, f64)],
    probes: &[Vector],
) -> Result<EquivalenceReport> {
    let bounds = norm_bounds_estimate(adapted, &adapted.rate, grid, probes)?;
    let fam = &adapted.family;
    let rate = &adapted.rate;
    let ratios: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let fwd = fam.propagator(t, s)?;
            let (ps, pt) = (adapted.proj.at(s)?, adapted.proj.at(t)?);
            let (back, _) = restricted_backward(&fwd, &ps, &pt, s, t)?;
            let decay = (-adapted.lambda * (rate.eval(t) - rate.eval(s))).exp();
            let (mut a, mut b) = (0.0_f64, 0.0_f64);
            for x in probes {
                let n = x.norm();
                if n == 0.0 {
                    continue;
                }
                let bs = bounds.c * (bounds.epsilon * rate.eval(s)).exp() * decay * n;
                let bt = bounds.c * (bounds.epsilon * rate.eval(t)).exp() * decay * n;
                a = a.max((&fwd * &ps * x).norm() / bs);
                b = b.max((&back * x).norm() / bt);
            }
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let recovered_stable = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let recovered_unstable = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let allowed_c = 2.0 * d_hat + EQUIVALENCE_TOL;
    let passed = bounds.c <= allowed_c
        && recovered_stable <= 1.0 + UNIFORMITY_SLACK
        && recovered_unstable <= 1.0 + UNIFORMITY_SLACK;
    Ok(EquivalenceReport { bounds, d_hat, allowed_c, recovered_stable, recovered_unstable, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::{grid_pairs, probe_vectors};
    use crate::linalg::unit;

    fn diag(a: f64, b: f64) -> EvolutionFamily {
        EvolutionFamily::closed_form("diag", 2, move |t, s| {
            Matrix::from_diagonal(&Vector::from_vec(vec![(a * (t - s)).exp(), (b * (t - s)).exp()]))
        })
    }

    fn const_proj(p: Matrix) -> Projections {
        Projections::Path(ProjectionPath::constant(vec![0.0], p).unwrap())
    }

    #[test]
    fn closed_form_values() {
        let exp2 = EvolutionFamily::closed_form("exp", 1, |t, s| Matrix::from_element(1, 1, (-2.0 * (t - s)).exp()));
        let n = AdaptedNorms::new(exp2, RateFunction::identity(), const_proj(Matrix::identity(1, 1)), 1.0, 20.0).unwrap();
        assert!((n.eval(3.0, &Vector::from_element(1, -1.5)).unwrap() - 1.5).abs() < 1e-15);

        let p = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        let n = AdaptedNorms::new(diag(-2.0, 2.0), RateFunction::identity(), const_proj(p), 1.0, 20.0).unwrap();
        let x = Vector::from_vec(vec![1.0, 1.0]);
        assert!((n.eval(1.0, &x).unwrap() - 2.0).abs() < 1e-12);

        let id = EvolutionFamily::closed_form("id", 1, |_, _| Matrix::identity(1, 1));
        let n = AdaptedNorms::new(id, RateFunction::identity(), const_proj(Matrix::identity(1, 1)), 1.0, 5.0).unwrap();
        assert!(matches!(n.eval(1.0, &unit(1, 0)), Err(Error::HorizonTooShort { .. })));
    }

    #[test]
    fn monotone_in_horizon() {
        let fam = EvolutionFamily::closed_form("osc", 1, |t, s| {
            Matrix::from_element(1, 1, (-(t - s) + (t * t.cos() - s * s.cos()) / 4.0).exp())
        });
        let short = AdaptedNorms::new(fam, RateFunction::identity(), const_proj(Matrix::identity(1, 1)), 0.5, 5.0).unwrap();
        let long = short.with_horizon(15.0);
        let x = unit(1, 0);
        for t in [0.0, 1.0, 2.5, 7.0] {
            assert!(long.eval(t, &x).unwrap() >= short.eval(t, &x).unwrap());
        }
    }

    #[test]
    fn scalar_uniformity() {
        let exp2 = EvolutionFamily::closed_form("exp", 1, |t, s| Matrix::from_element(1, 1, (-2.0 * (t - s)).exp()));
        let n = AdaptedNorms::new(exp2, RateFunction::identity(), const_proj(Matrix::identity(1, 1)), 1.0, 20.0).unwrap();
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let r = adapted_uniformity_check(&n, &grid_pairs(&grid, 300), &probe_vectors(1, 1, 1)).unwrap();
        assert!(r.forward_ratio <= 1.0 + 1e-12 && r.passed, "{r:?}");
    }

    #[test]
    fn zero_horizon_breaks_uniformity() {
        let p = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        let fam = EvolutionFamily::closed_form("osc2", 2, |t, s| {
            let a = (-(t - s) + (t * t.cos() - s * s.cos()) / 4.0).exp();
            Matrix::from_diagonal(&Vector::from_vec(vec![a, (t - s).exp()]))
        });
        let n = AdaptedNorms::new(fam, RateFunction::identity(), const_proj(p), 0.5, 0.0).unwrap();
        let grid: Vec<f64> = (0..=16).map(|k| k as f64 * 0.5).collect();
        let r = adapted_uniformity_check(&n, &grid_pairs(&grid, 300), &probe_vectors(2, 2, 1)).unwrap();
        assert!(r.forward_ratio > 1.0 && !r.passed, "{r:?}");
    }
}
