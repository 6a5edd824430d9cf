//! Splitting `X = S(τ) ⊕ U(τ)`, projections, and fitted dichotomy
//! certificates `(D, λ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{EvolutionFamily, NormFamily};
use crate::fit::{envelope_fit_1, envelope_fit_2};
use crate::funcspaces::SubspaceZ;
use crate::green::{DichotomyConstants, ProjectionPath};
use crate::linalg::{condition_number, min_principal_angle, orthonormal_basis, to_rows, Matrix, Vector};
use crate::rates::{RateFunction, TimeGrid};

/// Condition numbers above this make kernel-restricted inverses unusable.
pub const CONDITION_GATE: f64 = 1e8;

/// The backward map `T(s,t)Q(t)` for `s ≤ t`: the inverse of
/// `T(t,s)|_{Ker P(s)} : Ker P(s) → Ker P(t)` applied after `Q(t)`.
///
/// `fwd` is `T(t,s)`. Returns the `d×d` matrix and the condition number of
/// the restricted map.
pub fn restricted_backward(fwd: &Matrix, p_s: &Matrix, p_t: &Matrix, s: f64, t: f64) -> Result<(Matrix, f64)> {
    let d = fwd.nrows();
    let id = Matrix::identity(d, d);
    let (ks, rs, _) = orthonormal_basis(&(&id - p_s), 1e-10);
    let (kt, rt, _) = orthonormal_basis(&(&id - p_t), 1e-10);
    if rs == 0 && rt == 0 {
        return Ok((Matrix::zeros(d, d), 1.0));
    }
    if rs != rt {
        return Err(Error::Invertibility { t: s, s: t, condition: f64::INFINITY });
    }
    let m = kt.transpose() * fwd * &ks;
    let cond = condition_number(&m);
    if !(cond <= CONDITION_GATE) {
        return Err(Error::Invertibility { t: s, s: t, condition: cond });
    }
    let inv = m.try_inverse().ok_or(Error::Invertibility { t: s, s: t, condition: cond })?;
    Ok((ks * inv * kt.transpose() * (&id - p_t), cond))
}

/// `T(s,t)Q(t)` for `s ≤ t` from the family and the projections at both ends.
pub fn backward_on_kernel(
    family: &EvolutionFamily,
    proj: &ProjectionPath,
    s: f64,
    t: f64,
) -> Result<(Matrix, f64)> {
    restricted_backward(&family.propagator(t, s)?, proj.at(s), proj.at(t), s, t)
}

/// Knobs of the splitting construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// ρ-time span of the finite-time SVD horizon (at least 5).
    pub horizon_span: f64,
    /// Half-width of the exponent gap around 0.
    pub gap_margin: f64,
    /// Smallest admissible principal angle between `S(τ)` and `U(τ)`.
    pub angle_tol: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { horizon_span: 5.0, gap_margin: 0.2, angle_tol: 1e-6 }
    }
}

/// Basis of `S(τ)` with the finite-time exponents of all directions.
#[derive(Clone, Debug, PartialEq)]
pub struct StableSubspace {
    pub basis: Matrix,
    /// `ln σ_i / (ρ(τ+H) − ρ(τ))`, descending; `−∞` for `σ_i = 0`.
    pub exponents: Vec<f64>,
}

/// Right singular directions of `T(τ+H, τ)` with finite-time ρ-exponent
/// below `−η`. Exponents in `[−η, η]` are a gap violation.
pub fn stable_subspace(
    family: &EvolutionFamily,
    rate: &RateFunction,
    tau: f64,
    config: &SplitConfig,
) -> Result<StableSubspace> {
    if !(config.horizon_span >= 5.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon ρ-span must be at least 5, got {}",
            config.horizon_span
        )));
    }
    let end = rate.inverse(rate.eval(tau) + config.horizon_span)?;
    let span = rate.eval(end) - rate.eval(tau);
    let m = family.propagator(end, tau)?;
    let d = family.dim();
    let svd = nalgebra::SVD::new(m, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut exponents = Vec::with_capacity(d);
    let mut stable = Vec::new();
    for &i in &order {
        let sigma = svd.singular_values[i];
        let e = if sigma > 0.0 { sigma.ln() / span } else { f64::NEG_INFINITY };
        exponents.push(e);
        if e.abs() <= config.gap_margin {
            return Err(Error::GapViolation { tau, exponent: e, margin: config.gap_margin });
        }
        if e < -config.gap_margin {
            stable.push(v_t.row(i).transpose());
        }
    }
    let mut basis = Matrix::zeros(d, stable.len());
    for (j, v) in stable.iter().enumerate() {
        basis.set_column(j, v);
    }
    Ok(StableSubspace { basis, exponents })
}

/// Orthonormal basis of `U(τ) = T(τ,0)Z`.
pub fn unstable_subspace(family: &EvolutionFamily, z: &SubspaceZ, tau: f64) -> Result<Matrix> {
    if z.dim() == 0 {
        return Ok(Matrix::zeros(family.dim(), 0));
    }
    let t = family.propagator(tau, 0.0)?;
    let image = &t * z.basis();
    let smin = nalgebra::SVD::new(image.clone(), false, false).singular_values.min();
    let scale = crate::linalg::op_norm(&t);
    if !(smin > 1e-10 * scale) {
        let condition = if smin > 0.0 { scale / smin } else { f64::INFINITY };
        return Err(Error::Invertibility { t: tau, s: 0.0, condition });
    }
    Ok(orthonormal_basis(&image, 1e-10).0)
}

/// Projection onto `span(s_basis)` along `span(u_basis)`.
pub fn build_projection(s_basis: &Matrix, u_basis: &Matrix, tau: f64, angle_tol: f64) -> Result<Matrix> {
    let d = s_basis.nrows();
    let (k, m) = (s_basis.ncols(), u_basis.ncols());
    if k + m != d || u_basis.nrows() != d {
        return Err(Error::Dimension(format!("dim S + dim U = {k} + {m}, expected {d} at tau = {tau}")));
    }
    if k == 0 {
        return Ok(Matrix::zeros(d, d));
    }
    if m == 0 {
        return Ok(Matrix::identity(d, d));
    }
    let angle = min_principal_angle(s_basis, u_basis);
    if angle < angle_tol {
        return Err(Error::DegenerateSplitting { tau, angle });
    }
    let mut w = Matrix::zeros(d, d);
    w.columns_mut(0, k).copy_from(s_basis);
    w.columns_mut(k, m).copy_from(u_basis);
    let inv = w.clone().try_inverse().ok_or(Error::DegenerateSplitting { tau, angle })?;
    let mut sel = Matrix::zeros(d, d);
    for i in 0..k {
        sel[(i, i)] = 1.0;
    }
    Ok(w * sel * inv)
}

/// One node of a splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitNode {
    pub t: f64,
    pub stable: Matrix,
    pub unstable: Matrix,
    pub p: Matrix,
}

/// Recomputes `S(τ)`, `U(τ)` and `P(τ)` at any time.
#[derive(Clone, Debug)]
pub struct Splitting {
    family: EvolutionFamily,
    rate: RateFunction,
    z: SubspaceZ,
    config: SplitConfig,
}

impl Splitting {
    /// With `z = None`, `Z` is taken as the orthogonal complement of `S(0)`.
    pub fn new(family: EvolutionFamily, rate: RateFunction, z: Option<SubspaceZ>, config: SplitConfig) -> Result<Self> {
        let z = match z {
            Some(z) => {
                if z.ambient_dim() != family.dim() {
                    return Err(Error::Dimension("Z and the family live in different dimensions".into()));
                }
                z
            }
            None => SubspaceZ::span(&stable_subspace(&family, &rate, 0.0, &config)?.basis).complement(),
        };
        Ok(Splitting { family, rate, z, config })
    }

    pub fn z(&self) -> &SubspaceZ {
        &self.z
    }

    pub fn at(&self, tau: f64) -> Result<SplitNode> {
        let stable = stable_subspace(&self.family, &self.rate, tau, &self.config)?.basis;
        let unstable = unstable_subspace(&self.family, &self.z, tau)?;
        let p = build_projection(&stable, &unstable, tau, self.config.angle_tol)?;
        Ok(SplitNode { t: tau, stable, unstable, p })
    }

    /// Splitting nodes at each grid time (computed in parallel).
    pub fn nodes(&self, grid: &[f64]) -> Result<Vec<SplitNode>> {
        let nodes: Vec<SplitNode> = grid.par_iter().map(|&t| self.at(t)).collect::<Result<_>>()?;
        if let Some(first) = nodes.first() {
            let k = first.stable.ncols();
            if let Some(bad) = nodes.iter().find(|n| n.stable.ncols() != k) {
                return Err(Error::NoDichotomy(format!(
                    "stable dimension changes from {k} at t = {} to {} at t = {}",
                    first.t,
                    bad.stable.ncols(),
                    bad.t
                )));
            }
        }
        Ok(nodes)
    }

    pub fn path(&self, grid: &[f64]) -> Result<ProjectionPath> {
        let nodes = self.nodes(grid)?;
        ProjectionPath::new(grid.to_vec(), nodes.into_iter().map(|n| n.p).collect())
    }
}

/// Standard basis vectors followed by `n_random` seeded random unit vectors.
pub fn probe_vectors(d: usize, n_random: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vector> = (0..d).map(|i| crate::linalg::unit(d, i)).collect();
    while out.len() < d + n_random {
        let v = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 {
            out.push(v / n);
        }
    }
    out
}

/// Index pairs `(i, j)`, `i ≤ j`, on a grid of `n` nodes: all pairs when
/// `n ≤ all_below`, otherwise every `i` with gaps `0, 1, 2, 3, 4, 6, 8, …`.
pub fn sample_pairs(n: usize, all_below: usize) -> Vec<(usize, usize)> {
    if n <= all_below {
        return (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    }
    let mut gaps = vec![0usize, 1, 2, 3];
    let mut g = 4usize;
    while g < n {
        gaps.push(g);
        gaps.push(g + g / 2);
        g *= 2;
    }
    gaps.retain(|&g| g < n);
    gaps.dedup();
    (0..n).flat_map(|i| gaps.iter().filter(move |&&g| i + g < n).map(move |&g| (i, i + g))).collect()
}

/// One fitted condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionFit {
    pub d: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub rms_slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateDiagnostics {
    pub d1: Option<ConditionFit>,
    pub d2: Option<ConditionFit>,
    pub commutation: f64,
    pub idempotency: f64,
    pub max_condition: f64,
}

/// Fitted dichotomy constants with the projections they refer to.
#[derive(Clone, Debug)]
pub struct DichotomyCertificate {
    pub d: f64,
    pub lambda: f64,
    /// Growth `e^{ερ(s)}` in the initial time; 0 for a uniform fit.
    pub epsilon: f64,
    /// Probe bound on `‖P(τ)v‖_τ / ‖v‖_τ`.
    pub m: f64,
    pub rate: String,
    pub proj: ProjectionPath,
    pub diagnostics: CertificateDiagnostics,
}

impl DichotomyCertificate {
    pub fn constants(&self) -> DichotomyConstants {
        DichotomyConstants { d: self.d, lambda: self.lambda }
    }

    /// Same certificate with other constants.
    pub fn with_constants(&self, d: f64, lambda: f64) -> Self {
        DichotomyCertificate { d, lambda, ..self.clone() }
    }

    pub fn record(&self) -> CertificateRecord {
        CertificateRecord {
            d: self.d,
            lambda: self.lambda,
            epsilon: self.epsilon,
            m: self.m,
            rate: self.rate.clone(),
            grid: self.proj.grid().to_vec(),
            projections: self.proj.matrices().iter().map(to_rows).collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Serializable form of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub d: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub m: f64,
    pub rate: String,
    pub grid: Vec<f64>,
    pub projections: Vec<Vec<Vec<f64>>>,
    pub diagnostics: CertificateDiagnostics,
}

impl CertificateRecord {
    pub fn into_certificate(self) -> Result<DichotomyCertificate> {
        let mats = self
            .projections
            .iter()
            .map(|rows| {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension("projection matrices must be square".into()));
                }
                Ok(crate::linalg::from_rows(rows, n))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DichotomyCertificate {
            d: self.d,
            lambda: self.lambda,
            epsilon: self.epsilon,
            m: self.m,
            rate: self.rate,
            proj: ProjectionPath::new(self.grid, mats)?,
            diagnostics: self.diagnostics,
        })
    }
}

/// One sample of a dichotomy inequality: `ratio ≤ D e^{−λ span} e^{ε rho_s}`.
#[derive(Clone, Copy, Debug)]
struct Sample {
    s: f64,
    t: f64,
    span: f64,
    rho_s: f64,
    ln_ratio: f64,
}

/// Log-ratios for (d1) (`‖T(t,s)P(s)x‖_t / ‖x‖_s`) and (d2)
/// (`‖T(s,t)Q(t)x‖_s / ‖x‖_t`) over pairs and probes, maximized over probes;
/// pairs where every ratio vanishes are dropped. Also returns the largest
/// kernel-inverse condition number.
fn collect_samples(
    family: &EvolutionFamily,
    proj: &ProjectionPath,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    pairs: &[(f64, f64)],
    probes: &[Vector],
) -> Result<(Vec<Sample>, Vec<Sample>, f64)> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for (s, t) in sorted {
        match groups.last_mut() {
            Some((gs, ts)) if *gs == s => ts.push(t),
            _ => groups.push((s, vec![t])),
        }
    }
    let per_pair: Vec<(Option<Sample>, Option<Sample>, f64)> = groups
        .par_iter()
        .map(|(s, ts)| {
            let props = family.propagators_from(*s, ts)?;
            ts.iter()
                .zip(props)
                .map(|(&t, fwd)| pair_sample(&fwd, proj, norms, rate, probes, *s, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let cond = per_pair.iter().map(|p| p.2).fold(1.0, f64::max);
    let d1 = per_pair.iter().filter_map(|p| p.0).collect();
    let d2 = per_pair.iter().filter_map(|p| p.1).collect();
    Ok((d1, d2, cond))
}

fn pair_sample(
    fwd: &Matrix,
    proj: &ProjectionPath,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    probes: &[Vector],
    s: f64,
    t: f64,
) -> Result<(Option<Sample>, Option<Sample>, f64)> {
    let tp = fwd * proj.at(s);
    let (back, cond) = restricted_backward(fwd, proj.at(s), proj.at(t), s, t)?;
    let pushed: Vec<Vector> = probes.iter().map(|x| &tp * x).collect();
    let pulled: Vec<Vector> = probes.iter().map(|x| &back * x).collect();
    let at_s = norms.norm_many(s, &[probes, &pulled].concat());
    let at_t = norms.norm_many(t, &[probes, &pushed].concat());
    let n = probes.len();
    let (mut r1, mut r2) = (0.0_f64, 0.0_f64);
    for i in 0..n {
        if at_s[i] > 0.0 {
            r1 = r1.max(at_t[n + i] / at_s[i]);
        }
        if at_t[i] > 0.0 {
            r2 = r2.max(at_s[n + i] / at_t[i]);
        }
    }
    let (rs, rt) = (rate.eval(s), rate.eval(t));
    let mk = |r: f64| (r > 0.0).then(|| Sample { s, t, span: rt - rs, rho_s: rs, ln_ratio: r.ln() });
    Ok((mk(r1), mk(r2), cond))
}

fn fit_condition(samples: &[Sample], nonuniform: bool) -> Option<ConditionFit> {
    if samples.is_empty() {
        return None;
    }
    let neg_span: Vec<f64> = samples.iter().map(|s| -s.span).collect();
    let g: Vec<f64> = samples.iter().map(|s| s.ln_ratio).collect();
    let fit = if nonuniform {
        let rho_s: Vec<f64> = samples.iter().map(|s| s.rho_s).collect();
        envelope_fit_2(&neg_span, &rho_s, &g, (-1e3, 1e3), (0.0, 10.0))
    } else {
        envelope_fit_1(&neg_span, &g, -1e3, 1e3)
    };
    Some(ConditionFit {
        d: fit.intercept.exp(),
        lambda: fit.weights[0],
        epsilon: fit.weights.get(1).copied().unwrap_or(0.0),
        samples: samples.len(),
        rms_slack: fit.rms_slack,
    })
}

/// Smallest `ln D` making `ln ratio ≤ ln D − λ span + ε ρ(s)` hold on all samples.
fn intercept_at(samples: &[Sample], lambda: f64, epsilon: f64) -> f64 {
    samples
        .iter()
        .map(|s| s.ln_ratio + lambda * s.span - epsilon * s.rho_s)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Fits `(D, λ)` (and `ε` when `nonuniform`) to (d1) and (d2) over `pairs`
/// (`(s, t)` with `s ≤ t`) and `probes`. Each condition is fitted on its
/// own; the certificate takes the smaller `λ` (and larger `ε`) and the
/// smallest `D` valid for both at those values.
pub fn estimate_certificate(
    family: &EvolutionFamily,
    proj: &ProjectionPath,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    pairs: &[(f64, f64)],
    probes: &[Vector],
    nonuniform: bool,
) -> Result<DichotomyCertificate> {
    if pairs.is_empty() || probes.is_empty() {
        return Err(Error::InvalidArgument("certificate fit needs pairs and probes".into()));
    }
    let (s1, s2, max_condition) = collect_samples(family, proj, norms, rate, pairs, probes)?;
    let d1 = fit_condition(&s1, nonuniform);
    let d2 = fit_condition(&s2, nonuniform);
    let fits: Vec<&ConditionFit> = d1.iter().chain(d2.iter()).collect();
    if fits.is_empty() {
        return Err(Error::NoDichotomy("every sampled ratio vanishes".into()));
    }
    let lambda = fits.iter().map(|f| f.lambda).fold(f64::INFINITY, f64::min);
    let epsilon = fits.iter().map(|f| f.epsilon).fold(0.0, f64::max);
    if !(lambda > 0.0) {
        return Err(Error::NoDichotomy(format!("best-fit decay rate λ = {lambda:.4} is not positive")));
    }
    let ln_d = intercept_at(&s1, lambda, epsilon).max(intercept_at(&s2, lambda, epsilon));
    let mut m = 0.0_f64;
    for (&t, p) in proj.grid().iter().zip(proj.matrices()) {
        for v in probes {
            let nv = norms.norm(t, v);
            if nv > 0.0 {
                m = m.max(norms.norm(t, &(p * v)) / nv);
            }
        }
    }
    let commutation = proj.commutation_defect(family, pairs)?;
    Ok(DichotomyCertificate {
        d: ln_d.exp(),
        lambda,
        epsilon,
        m,
        rate: rate.name(),
        proj: proj.clone(),
        diagnostics: CertificateDiagnostics {
            d1,
            d2,
            commutation,
            idempotency: proj.idempotency_defect(),
            max_condition,
        },
    })
}

/// Worst relative excess of one inequality over the verification pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    /// Max of `ratio / bound − 1` (negative when every sample is inside).
    pub worst_slack: f64,
    pub worst_at: Option<(f64, f64)>,
    /// Violating pair `(s, t)` with the smallest `t` (then smallest `s`).
    pub first_violation: Option<(f64, f64)>,
    pub violations: usize,
}

impl ConditionCheck {
    fn from_samples(samples: &[Sample], c: &DichotomyCertificate, tol: f64) -> Self {
        let mut out = ConditionCheck { worst_slack: f64::NEG_INFINITY, worst_at: None, first_violation: None, violations: 0 };
        for s in samples {
            let ln_bound = c.d.ln() - c.lambda * s.span + c.epsilon * s.rho_s;
            let slack = (s.ln_ratio - ln_bound).exp() - 1.0;
            if slack > out.worst_slack {
                out.worst_slack = slack;
                out.worst_at = Some((s.s, s.t));
            }
            if slack > tol {
                out.violations += 1;
                let better = match out.first_violation {
                    None => true,
                    Some((fs, ft)) => (s.t, s.s) < (ft, fs),
                };
                if better {
                    out.first_violation = Some((s.s, s.t));
                }
            }
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verification {
    pub d1: ConditionCheck,
    pub d2: ConditionCheck,
    pub commutation: f64,
    pub projection_bound: f64,
    pub max_condition: f64,
    pub passed: bool,
}

/// Rechecks a certificate on `pairs` (typically finer than the fit used).
/// Passes iff (d1), (d2) and the projection bound hold within relative
/// tolerance `tol`, commutation holds to 1e−6 and every kernel inverse is
/// within the condition gate.
pub fn verify_dichotomy(
    family: &EvolutionFamily,
    cert: &DichotomyCertificate,
    norms: &dyn NormFamily,
    rate: &RateFunction,
    pairs: &[(f64, f64)],
    probes: &[Vector],
    tol: f64,
) -> Result<Verification> {
    let (s1, s2, max_condition) = collect_samples(family, &cert.proj, norms, rate, pairs, probes)?;
    let d1 = ConditionCheck::from_samples(&s1, cert, tol);
    let d2 = ConditionCheck::from_samples(&s2, cert, tol);
    let commutation = cert.proj.commutation_defect(family, pairs)?;
    let mut projection_bound = 0.0_f64;
    for (&t, p) in cert.proj.grid().iter().zip(cert.proj.matrices()) {
        for v in probes {
            let nv = norms.norm(t, v);
            if nv > 0.0 {
                projection_bound = projection_bound.max(norms.norm(t, &(p * v)) / nv);
            }
        }
    }
    let passed = d1.passed()
        && d2.passed()
        && commutation <= 1e-6
        && projection_bound <= cert.m * (1.0 + tol)
        && max_condition <= CONDITION_GATE;
    Ok(Verification { d1, d2, commutation, projection_bound, max_condition, passed })
}

/// Settings of the detection pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub split: SplitConfig,
    /// Grid for fitting.
    pub fit_grid: TimeGrid,
    /// Finer grid for verification; projections live on it.
    pub verify_grid: TimeGrid,
    pub random_probes: usize,
    pub seed: u64,
    pub nonuniform: bool,
    pub tol: f64,
    /// Grids with at most this many nodes use all pairs.
    pub all_pairs_below: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            split: SplitConfig::default(),
            fit_grid: TimeGrid::Uniform { t_max: 10.0, step: 0.25 },
            verify_grid: TimeGrid::Uniform { t_max: 10.0, step: 0.125 },
            random_probes: 4,
            seed: 1,
            nonuniform: false,
            tol: 1e-6,
            all_pairs_below: 300,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub certificate: DichotomyCertificate,
    pub verification: Verification,
    pub z: SubspaceZ,
    pub stable_dim: usize,
    pub probes: Vec<Vector>,
}

fn pairs_on(grid: &[f64], all_below: usize) -> Vec<(f64, f64)> {
    sample_pairs(grid.len(), all_below).into_iter().map(|(i, j)| (grid[i], grid[j])).collect()
}

/// Splitting, fit and verification in one pass. Projections are built on the
/// union of both grids.
pub fn detect(
    family: &EvolutionFamily,
    rate: &RateFunction,
    norms: &dyn NormFamily,
    z: Option<SubspaceZ>,
    config: &DetectConfig,
) -> Result<Detection> {
    let fit_grid = config.fit_grid.build(rate)?;
    let verify_grid = config.verify_grid.build(rate)?;
    let mut all: Vec<f64> = fit_grid.iter().chain(&verify_grid).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let splitting = Splitting::new(family.clone(), rate.clone(), z, config.split)?;
    let nodes = splitting.nodes(&all)?;
    let stable_dim = nodes.first().map_or(0, |n| n.stable.ncols());
    let proj = ProjectionPath::new(all, nodes.into_iter().map(|n| n.p).collect())?;
    let probes = probe_vectors(family.dim(), config.random_probes, config.seed);
    let certificate = estimate_certificate(
        family,
        &proj,
        norms,
        rate,
        &pairs_on(&fit_grid, config.all_pairs_below),
        &probes,
        config.nonuniform,
    )?;
    let verification = verify_dichotomy(
        family,
        &certificate,
        norms,
        rate,
        &pairs_on(&verify_grid, config.all_pairs_below),
        &probes,
        config.tol,
    )?;
    Ok(Detection { certificate, verification, z: splitting.z().clone(), stable_dim, probes })
}

/// Pairs `(s, t)` on a grid, as used by [`detect`].
pub fn grid_pairs(grid: &[f64], all_below: usize) -> Vec<(f64, f64)> {
    pairs_on(grid, all_below)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::BaseNorm;
    use crate::linalg::{max_principal_angle, unit};

    fn diag(a: f64, b: f64) -> EvolutionFamily {
        EvolutionFamily::closed_form("diag", 2, move |t, s| {
            Matrix::from_diagonal(&Vector::from_vec(vec![(a * (t - s)).exp(), (b * (t - s)).exp()]))
        })
    }

    #[test]
    fn stable_subspaces() {
        let cfg = SplitConfig { horizon_span: 10.0, ..Default::default() };
        let s = stable_subspace(&diag(-1.0, 1.0), &RateFunction::identity(), 0.0, &cfg).unwrap();
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(max_principal_angle(&e1, &s.basis) <= 1e-3);
        let both = stable_subspace(&diag(-1.0, -2.0), &RateFunction::identity(), 0.0, &cfg).unwrap();
        assert_eq!(both.basis.ncols(), 2);
        let id = EvolutionFamily::closed_form("id", 2, |_, _| Matrix::identity(2, 2));
        let err = stable_subspace(&id, &RateFunction::identity(), 0.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::GapViolation { exponent, .. } if exponent == 0.0));
        let short = SplitConfig { horizon_span: 2.0, ..Default::default() };
        assert!(stable_subspace(&diag(-1.0, 1.0), &RateFunction::identity(), 0.0, &short).is_err());
    }

    #[test]
    fn unstable_subspaces() {
        let z = SubspaceZ::span(&Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let u = unstable_subspace(&diag(-1.0, 1.0), &z, 1.0).unwrap();
        assert!((u[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert_eq!(unstable_subspace(&diag(-1.0, 1.0), &SubspaceZ::trivial(2), 1.0).unwrap().ncols(), 0);
        let kill = EvolutionFamily::closed_form("kill", 2, |t, s| {
            if t > s {
                Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]))
            } else {
                Matrix::identity(2, 2)
            }
        });
        let r = unstable_subspace(&kill, &z, 1.0);
        assert!(matches!(r, Err(Error::Invertibility { .. })), "{r:?}");
    }

    #[test]
    fn projections() {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let p = build_projection(&e1, &e2, 0.0, 1e-6).unwrap();
        assert!((p - Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let diag_s = Matrix::from_column_slice(2, 1, &[h, h]);
        let p = build_projection(&diag_s, &e2, 0.0, 1e-6).unwrap();
        assert!((&p - Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0])).amax() < 1e-12);
        assert!((&p * &p - &p).amax() < 1e-12);
        assert!(matches!(build_projection(&e1, &e1, 0.0, 1e-6), Err(Error::DegenerateSplitting { .. })));
    }

    #[test]
    fn backward_inverse() {
        let fam = diag(-1.0, 1.0);
        let grid: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let proj = ProjectionPath::constant(grid, Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]))).unwrap();
        let (b, cond) = backward_on_kernel(&fam, &proj, 1.0, 3.0).unwrap();
        assert!((b[(1, 1)] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(b[(0, 0)], 0.0);
        assert_eq!(cond, 1.0);
    }

    #[test]
    fn scalar_certificates() {
        let grid: Vec<f64> = (0..=40).map(|k| k as f64 * 0.25).collect();
        let pairs = grid_pairs(&grid, 300);
        let probes = probe_vectors(1, 2, 3);
        let exp2 = EvolutionFamily::closed_form("exp", 1, |t, s| Matrix::from_element(1, 1, (-2.0 * (t - s)).exp()));
        let proj = ProjectionPath::constant(grid.clone(), Matrix::identity(1, 1)).unwrap();
        let c = estimate_certificate(&exp2, &proj, &BaseNorm, &RateFunction::identity(), &pairs, &probes, false).unwrap();
        assert!((c.lambda - 2.0).abs() < 1e-6 && (c.d - 1.0).abs() < 1e-6, "{c:?}");
        let v = verify_dichotomy(&exp2, &c, &BaseNorm, &RateFunction::identity(), &pairs, &probes, 1e-6).unwrap();
        assert!(v.passed);
        let inflated = c.with_constants(c.d, 2.0 * c.lambda);
        let v = verify_dichotomy(&exp2, &inflated, &BaseNorm, &RateFunction::identity(), &pairs, &probes, 1e-6).unwrap();
        assert!(!v.passed && !v.d1.passed());

        let id = EvolutionFamily::closed_form("id", 1, |_, _| Matrix::identity(1, 1));
        let err = estimate_certificate(&id, &proj, &BaseNorm, &RateFunction::identity(), &pairs, &probes, false).unwrap_err();
        assert!(matches!(err, Error::NoDichotomy(_)));
    }

    #[test]
    fn diag_detection() {
        let cfg = DetectConfig::default();
        let z = SubspaceZ::span(&Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let det = detect(&diag(-1.0, 1.0), &RateFunction::identity(), &BaseNorm, Some(z), &cfg).unwrap();
        let c = &det.certificate;
        assert!((c.lambda - 1.0).abs() < 1e-6 && (c.d - 1.0).abs() < 1e-6, "{c:?}");
        assert!(det.verification.passed, "{:?}", det.verification);
        let auto = detect(&diag(-1.0, 1.0), &RateFunction::identity(), &BaseNorm, None, &cfg).unwrap();
        assert!((auto.z.basis()[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert_eq!(auto.stable_dim, 1);
    }

    #[test]
    fn record_round_trip() {
        let grid = vec![0.0, 1.0];
        let proj = ProjectionPath::constant(grid, Matrix::identity(1, 1)).unwrap();
        let exp = EvolutionFamily::closed_form("exp", 1, |t, s| Matrix::from_element(1, 1, (-(t - s)).exp()));
        let c = estimate_certificate(&exp, &proj, &BaseNorm, &RateFunction::identity(), &[(0.0, 1.0), (0.0, 0.0)], &[unit(1, 0)], false).unwrap();
        let json = serde_json::to_string(&c.record()).unwrap();
        let back: CertificateRecord = serde_json::from_str(&json).unwrap();
        let c2 = back.into_certificate().unwrap();
        assert_eq!(c2.d, c.d);
        assert_eq!(c2.proj, c.proj);
    }

    #[test]
    fn pair_sampling() {
        assert_eq!(sample_pairs(3, 300).len(), 6);
        let big = sample_pairs(1000, 300);
        assert!(big.contains(&(500, 501)) && big.contains(&(0, 512)) && big.len() < 30_000);
    }
}
