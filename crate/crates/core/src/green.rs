//! Green operators for the two inhomogeneous problems and the admissibility
//! probe.
//!
//! All integrals use the composite trapezoid rule on the grid of the input
//! function. Integrals over `[t, ∞)` stop at `T_max`; with dichotomy
//! constants attached, the omitted tail is bounded and reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dichotomy::restricted_backward;
use crate::error::{Error, Result};
use crate::family::{EvolutionFamily, NormFamily};
use crate::funcspaces::{y1_norm, yinf_norm, Extension, SampledFunction, SubspaceZ};
use crate::linalg::{op_norm, Matrix, Vector};
use crate::rates::RateFunction;

/// Projections `P(t)` sampled on a strictly increasing grid. Evaluation at
/// other times uses the last node at or before `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionPath {
    grid: Vec<f64>,
    p: Vec<Matrix>,
}

impl ProjectionPath {
    pub fn new(grid: Vec<f64>, p: Vec<Matrix>) -> Result<Self> {
        if grid.is_empty() || grid.len() != p.len() {
            return Err(Error::InvalidArgument("projection path needs one matrix per grid node".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("projection grid must be strictly increasing".into()));
        }
        let d = p[0].nrows();
        if p.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::Dimension("projection matrices must be square of one size".into()));
        }
        let path = ProjectionPath { grid, p };
        let defect = path.idempotency_defect();
        if defect > 1e-8 {
            return Err(Error::InvalidArgument(format!("P(t)^2 != P(t): defect {defect:.3e}")));
        }
        Ok(path)
    }

    /// The same projection at every node; repeated grid times are merged.
    pub fn constant(mut grid: Vec<f64>, p: Matrix) -> Result<Self> {
        grid.dedup();
        let n = grid.len();
        Self::new(grid, vec![p; n])
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p[0].nrows()
    }

    fn index(&self, t: f64) -> usize {
        self.grid.partition_point(|&g| g <= t).saturating_sub(1)
    }

    pub fn at(&self, t: f64) -> &Matrix {
        &self.p[self.index(t)]
    }

    pub fn q_at(&self, t: f64) -> Matrix {
        Matrix::identity(self.dim(), self.dim()) - self.at(t)
    }

    /// Max of `‖P² − P‖` over nodes.
    pub fn idempotency_defect(&self) -> f64 {
        self.p.iter().map(|m| (m * m - m).amax()).fold(0.0, f64::max)
    }

    /// Max over pairs `(s, t)`, `s ≤ t`, of `‖T(t,s)P(s) − P(t)T(t,s)‖ / (1 + ‖T(t,s)‖)`.
    pub fn commutation_defect(&self, family: &EvolutionFamily, pairs: &[(f64, f64)]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for &(s, t) in pairs {
            let tm = family.propagator(t, s)?;
            let diff = &tm * self.at(s) - self.at(t) * &tm;
            worst = worst.max(op_norm(&diff) / (1.0 + op_norm(&tm)));
        }
        Ok(worst)
    }
}

/// Constants `(D, λ)` of a dichotomy bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyConstants {
    pub d: f64,
    pub lambda: f64,
}

/// Comparison of `‖x‖_∞` with the bound implied by dichotomy constants.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub sup_x: f64,
    pub input_norm: f64,
    pub allowed: f64,
    /// `sup_x / allowed`.
    pub ratio: f64,
    pub holds: bool,
}

#[derive(Clone, Debug)]
pub struct GreenSolution {
    pub x: SampledFunction,
    /// Bound on the part of `∫_t^∞` dropped at `T_max` (requires constants).
    pub tail_bound: Option<f64>,
    pub bound: Option<BoundCheck>,
    /// Largest condition number met in kernel-restricted inverses.
    pub max_condition: f64,
}

/// Relative slack allowed in the certificate bounds for quadrature and
/// truncation.
pub const BOUND_SLACK: f64 = 0.05;

fn distinct_steps(grid: &[f64]) -> Vec<usize> {
    (0..grid.len() - 1).filter(|&k| grid[k + 1] > grid[k]).collect()
}

/// Nodal values of `∫₀ᵗ w T(t,s)P(s)y(s) ds − ∫ₜ^{T_max} w T(t,s)Q(s)y(s) ds`.
fn green_core(
    family: &EvolutionFamily,
    proj: &ProjectionPath,
    y: &SampledFunction,
    weight: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<(Vec<Vector>, f64)> {
    let d = family.dim();
    if y.dim() != d || proj.dim() != d {
        return Err(Error::Dimension(format!(
            "family has dimension {d}, input {}, projections {}",
            y.dim(),
            proj.dim()
        )));
    }
    let g = y.grid();
    let n = g.len();
    let steps = distinct_steps(g);
    let maps: Vec<(usize, Matrix, Matrix, f64)> = steps
        .par_iter()
        .map(|&k| {
            let fwd = family.propagator(g[k + 1], g[k])?;
            let (back, cond) = restricted_backward(&fwd, proj.at(g[k]), proj.at(g[k + 1]), g[k], g[k + 1])?;
            Ok((k, fwd, back, cond))
        })
        .collect::<Result<_>>()?;
    let max_condition = maps.iter().map(|m| m.3).fold(1.0, f64::max);
    let yv = y.values();
    let wy: Vec<Vector> = g.iter().zip(yv).map(|(&t, v)| v * weight(t)).collect();

    let mut plus = vec![Vector::zeros(d); n];
    let mut m = 0;
    for k in 0..n - 1 {
        if m < maps.len() && maps[m].0 == k {
            let h = g[k + 1] - g[k];
            let fwd = &maps[m].1;
            plus[k + 1] = fwd * (&plus[k] + proj.at(g[k]) * &wy[k] * (0.5 * h))
                + proj.at(g[k + 1]) * &wy[k + 1] * (0.5 * h);
            m += 1;
        } else {
            plus[k + 1] = plus[k].clone();
        }
    }

    let mut minus = vec![Vector::zeros(d); n];
    let mut m = maps.len();
    for k in (0..n - 1).rev() {
        if m > 0 && maps[m - 1].0 == k {
            let h = g[k + 1] - g[k];
            let back = &maps[m - 1].2;
            minus[k] = back * (&minus[k + 1] + proj.q_at(g[k + 1]) * &wy[k + 1] * (0.5 * h))
                + proj.q_at(g[k]) * &wy[k] * (0.5 * h);
            m -= 1;
        } else {
            minus[k] = minus[k + 1].clone();
        }
    }
    let x = plus.iter().zip(&minus).map(|(a, b)| a - b).collect();
    Ok((x, max_condition))
}

fn finish(
    y: &SampledFunction,
    values: Vec<Vector>,
    max_condition: f64,
    norms: &dyn NormFamily,
    tail_and_allowed: Option<(f64, f64, f64)>,
) -> Result<GreenSolution> {
    let x = SampledFunction::new(y.grid().to_vec(), values)?;
    let (tail_bound, bound) = match tail_and_allowed {
        Some((tail, input_norm, allowed)) => {
            let sup_x = yinf_norm(&x, norms).value;
            let holds = sup_x <= allowed * (1.0 + BOUND_SLACK) + tail;
            let ratio = if allowed > 0.0 { sup_x / allowed } else if sup_x == 0.0 { 0.0 } else { f64::INFINITY };
            (Some(tail), Some(BoundCheck { sup_x, input_norm, allowed, ratio, holds }))
        }
        None => (None, None),
    };
    Ok(GreenSolution { x, tail_bound, bound, max_condition })
}

/// `x(t) = ∫₀ᵗ T(t,s)P(s)y(s)ds − ∫ₜ^∞ T(t,s)Q(s)y(s)ds`, truncated at `T_max`.
///
/// With constants, checks `‖x‖_∞ ≤ D‖y‖₁`; the tail bound is `D` times the
/// `Y₁` mass of `y` beyond `T_max`.
pub fn green_y1(
    family: &EvolutionFamily,
    proj: &ProjectionPath,
    norms: &dyn NormFamily,
    y: &SampledFunction,
    constants: Option<DichotomyConstants>,
) -> Result<GreenSolution> {
    let (values, cond) = green_core(family, proj, y, &|_| 1.0)?;
    let extra = constants.map(|c| {
        let ny = y1_norm(y, norms);
        (c.d * ny.tail_bound, ny.value, c.d * ny.value)
    });
    finish(y, values, cond, norms, extra)
}

/// The weighted operator `x(t) = ∫₀ᵗ ρ'(s)T(t,s)P(s)y(s)ds − ∫ₜ^∞ ρ'(s)T(t,s)Q(s)y(s)ds`.
///
/// With constants, checks `‖x‖_∞ ≤ (2D/λ)‖y‖'_∞`; the tail bound is
/// `(D/λ)` times the sup of `y` beyond `T_max`.
pub fn green_yinf(
    family: &EvolutionFamily,
    proj: &ProjectionPath,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    y: &SampledFunction,
    constants: Option<DichotomyConstants>,
) -> Result<GreenSolution> {
    let (values, cond) = green_core(family, proj, y, &|t| rate.deriv(t))?;
    let extra = constants.map(|c| {
        let ny = yinf_norm(y, norms).value;
        let beyond = match y.extension() {
            Extension::Zero => 0.0,
            Extension::Constant => norms.norm(y.t_max(), y.values().last().expect("nonempty")),
        };
        (c.d / c.lambda * beyond, ny, 2.0 * c.d / c.lambda * ny)
    });
    finish(y, values, cond, norms, extra)
}

/// Max over pairs `(s, t)`, `s ≤ t`, of
/// `‖x(t) − T(t,s)x(s) − ∫ₛᵗ w T(t,τ)y(τ)dτ‖ / (1 + ‖x(t)‖)` with `w = ρ'`
/// when `weight` is given and `w = 1` otherwise. Each `T(t,τ)` is evaluated
/// directly.
pub fn mild_residual(
    family: &EvolutionFamily,
    x: &SampledFunction,
    y: &SampledFunction,
    weight: Option<&RateFunction>,
    pairs: &[(f64, f64)],
) -> Result<f64> {
    let defects = mild_defects(family, x, y, weight, pairs)?;
    Ok(pairs
        .iter()
        .zip(&defects)
        .map(|(&(_, t), r)| r.norm() / (1.0 + x.eval(t).norm()))
        .fold(0.0, f64::max))
}

/// The defect vectors `x(t) − T(t,s)x(s) − ∫ₛᵗ w T(t,τ)y(τ)dτ`, one per pair.
pub fn mild_defects(
    family: &EvolutionFamily,
    x: &SampledFunction,
    y: &SampledFunction,
    weight: Option<&RateFunction>,
    pairs: &[(f64, f64)],
) -> Result<Vec<Vector>> {
    let w = |t: f64| weight.map_or(1.0, |r| r.deriv(t));
    pairs
        .par_iter()
        .map(|&(s, t)| {
            if !(t >= s && s >= 0.0) {
                return Err(Error::InvalidArgument(format!("mild residual needs t ≥ s ≥ 0, got s={s}, t={t}")));
            }
            let mut nodes: Vec<(f64, Vector)> = vec![(s, y.eval(s))];
            for (&g, v) in y.grid().iter().zip(y.values()) {
                if g >= s && g <= t {
                    nodes.push((g, v.clone()));
                }
            }
            nodes.push((t, y.eval(t)));
            let mut integral = Vector::zeros(y.dim());
            let mut prev = family.propagator(t, nodes[0].0)? * &nodes[0].1 * w(nodes[0].0);
            for k in 1..nodes.len() {
                let (tau, ref v) = nodes[k];
                let cur = family.propagator(t, tau)? * v * w(tau);
                let h = tau - nodes[k - 1].0;
                if h > 0.0 {
                    integral += (&prev + &cur) * (0.5 * h);
                }
                prev = cur;
            }
            Ok(x.eval(t) - family.propagator(t, s)? * x.eval(s) - integral)
        })
        .collect()
}

/// Which admissibility problem a probe addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pair {
    /// Inputs in `Y₁`, unweighted mild equation.
    Y1,
    /// Inputs in `Y'_∞`, mild equation weighted by `ρ'`.
    YinfPrime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Largest admissible `‖x‖_∞ / ‖y‖`.
    pub b_max: f64,
    /// Largest admissible growth of the sup norm per unit of ρ-time in the
    /// last quarter of the horizon, relative to `‖y‖`.
    pub growth_tol: f64,
    /// Largest admissible `‖Zc‖ / ‖T(T_max,0)Zc‖`.
    pub uniqueness_tol: f64,
    /// Smallest admissible eigenvalue of the (grid-averaged) normal matrix.
    pub eig_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { b_max: 1e6, growth_tol: 0.1, uniqueness_tol: 1e-2, eig_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeMember {
    pub input_norm: f64,
    pub sup: f64,
    pub sup_at: f64,
    pub ratio: f64,
    /// Growth of the sup norm per unit ρ over the last quarter of the horizon.
    pub growth_slope: f64,
    pub bounded: bool,
    /// Shooting coefficients `c` with `x(0) = Zc`.
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub pair: Pair,
    pub solvable: bool,
    pub unique: bool,
    /// Max over the suite of `‖x‖_∞ / ‖y‖`.
    pub bound_estimate: f64,
    /// `max_c ‖Zc‖ / ‖T(T_max,0)Zc‖`; small values mean nonzero homogeneous
    /// solutions from `Z` grow, so only `c = 0` stays bounded.
    pub uniqueness_margin: f64,
    pub min_normal_eigenvalue: f64,
    pub members: Vec<ProbeMember>,
    /// Suite indices whose candidate is unbounded.
    pub witnesses: Vec<usize>,
    /// Candidate solutions, one per suite member.
    #[serde(skip)]
    pub candidates: Vec<SampledFunction>,
}

/// Max over `(s, t)` of `‖·‖` growth: `(late sup − early sup)⁺ / ρ-width`
/// where "late" is the last quarter of `[ρ(0), ρ(T_max)]`.
fn growth_slope(x: &SampledFunction, norms: &dyn NormFamily, rate: &RateFunction) -> f64 {
    let g = x.grid();
    let (r0, r1) = (rate.eval(g[0]), rate.eval(x.t_max()));
    let cut = r0 + 0.75 * (r1 - r0);
    let (mut early, mut late) = (0.0_f64, 0.0_f64);
    for (&t, v) in g.iter().zip(x.values()) {
        let n = norms.norm(t, v);
        if rate.eval(t) < cut {
            early = early.max(n);
        } else {
            late = late.max(n);
        }
    }
    if r1 <= cut {
        return 0.0;
    }
    (late - early).max(0.0) / (r1 - cut)
}

/// Shooting-method probe of unique solvability of the mild equation with
/// `x(0) ∈ Z` for each member of `suite`.
///
/// The candidate is `x = x_p + Σ c_j T(·,0)z_j`, where `x_p` solves the
/// equation from `x(0) = 0` and `c` minimizes `Σ_nodes ‖x(t)‖²` (minimal-norm
/// solution). The suite members must share one grid.
pub fn admissibility_probe(
    family: &EvolutionFamily,
    z: &SubspaceZ,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    suite: &[SampledFunction],
    pair: Pair,
    config: &ProbeConfig,
) -> Result<AdmissibilityReport> {
    let first = suite.first().ok_or_else(|| Error::InvalidArgument("probe suite is empty".into()))?;
    let d = family.dim();
    if z.ambient_dim() != d {
        return Err(Error::Dimension(format!("Z lives in dimension {}, family in {d}", z.ambient_dim())));
    }
    let g = first.grid().to_vec();
    if suite.iter().any(|y| y.grid() != g.as_slice()) {
        return Err(Error::InvalidArgument("probe suite members must share one grid".into()));
    }
    let n = g.len();
    let k = z.dim();
    let from_zero = family.propagators_from(0.0, &g)?;
    let homog: Vec<Matrix> = from_zero.iter().map(|m| m * z.basis()).collect();
    let mut normal = Matrix::zeros(k, k);
    for h in &homog {
        normal += h.transpose() * h;
    }
    normal /= n as f64;
    let min_eig = if k == 0 { f64::INFINITY } else { normal.clone().symmetric_eigen().eigenvalues.min() };
    let uniqueness_margin = if k == 0 {
        0.0
    } else {
        let sv = nalgebra::SVD::new(homog[n - 1].clone(), false, false).singular_values;
        let smin = sv.min();
        if smin == 0.0 {
            f64::INFINITY
        } else {
            1.0 / smin
        }
    };
    let unique = min_eig > config.eig_tol && uniqueness_margin <= config.uniqueness_tol;

    let steps: Vec<(usize, Matrix)> = distinct_steps(&g)
        .into_par_iter()
        .map(|i| Ok((i, family.propagator(g[i + 1], g[i])?)))
        .collect::<Result<_>>()?;
    let weight = |t: f64| match pair {
        Pair::Y1 => 1.0,
        Pair::YinfPrime => rate.deriv(t),
    };

    let results: Vec<(ProbeMember, SampledFunction)> = suite
        .par_iter()
        .map(|y| {
            if y.dim() != d {
                return Err(Error::Dimension("suite member dimension differs from the family".into()));
            }
            let yv = y.values();
            let mut xp = vec![Vector::zeros(d); n];
            let mut m = 0;
            for i in 0..n - 1 {
                if m < steps.len() && steps[m].0 == i {
                    let h = g[i + 1] - g[i];
                    xp[i + 1] = &steps[m].1 * (&xp[i] + &yv[i] * (0.5 * h * weight(g[i])))
                        + &yv[i + 1] * (0.5 * h * weight(g[i + 1]));
                    m += 1;
                } else {
                    xp[i + 1] = xp[i].clone();
                }
            }
            let c = if k == 0 {
                Vector::zeros(0)
            } else {
                let mut rhs = Vector::zeros(k);
                for (h, x) in homog.iter().zip(&xp) {
                    rhs -= h.transpose() * x;
                }
                rhs /= n as f64;
                nalgebra::SVD::new(normal.clone(), true, true)
                    .solve(&rhs, 1e-14 * normal.amax().max(f64::MIN_POSITIVE))
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
            };
            let values: Vec<Vector> = xp.iter().zip(&homog).map(|(x, h)| x + h * &c).collect();
            let x = SampledFunction::new(g.clone(), values)?;
            let input_norm = match pair {
                Pair::Y1 => y1_norm(y, norms).value,
                Pair::YinfPrime => yinf_norm(y, norms).value,
            };
            let sup = yinf_norm(&x, norms);
            let slope = growth_slope(&x, norms, rate);
            let ratio = if input_norm > 0.0 { sup.value / input_norm } else { 0.0 };
            let finite = sup.value.is_finite();
            let bounded = finite && ratio <= config.b_max && slope <= config.growth_tol * input_norm;
            let member = ProbeMember {
                input_norm,
                sup: sup.value,
                sup_at: sup.at,
                ratio,
                growth_slope: slope,
                bounded,
                coefficients: c.iter().copied().collect(),
            };
            Ok((member, x))
        })
        .collect::<Result<_>>()?;

    let (members, candidates): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let witnesses: Vec<usize> = members.iter().enumerate().filter(|(_, m)| !m.bounded).map(|(i, _)| i).collect();
    let bound_estimate = members.iter().map(|m| m.ratio).fold(0.0, f64::max);
    Ok(AdmissibilityReport {
        pair,
        solvable: witnesses.is_empty() && unique,
        unique,
        bound_estimate,
        uniqueness_margin,
        min_normal_eigenvalue: min_eig,
        members,
        witnesses,
        candidates,
    })
}
