//! Evolution families `T(t,s)` and time-indexed norm families.

mod norms;
mod ode;

pub use norms::{
    check_norm_axioms, norm_bounds_estimate, BaseNorm, NormAxiomReport, NormBounds, NormConstants,
    NormFamily, WeightedNorm,
};
pub use ode::{builtin_generator, integrate_propagators, sampled_generator, Generator};

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::linalg::{op_norm, Matrix};

/// Anything that can produce propagator matrices `T(t,s)`, `t ≥ s ≥ 0`.
pub trait PropagatorSource: Send + Sync {
    fn propagate(&self, t: f64, s: f64) -> Result<Matrix>;

    /// `T(t_k, s)` for each `t_k` in the nondecreasing list `ts` (all `≥ s`).
    /// Sources that integrate forward override this to do one sweep.
    fn propagate_from(&self, s: f64, ts: &[f64]) -> Result<Vec<Matrix>> {
        ts.iter().map(|&t| self.propagate(t, s)).collect()
    }
}

/// `T(t,s)` given by an explicit formula.
pub struct ClosedForm<F>(pub F);

impl<F> PropagatorSource for ClosedForm<F>
where
    F: Fn(f64, f64) -> Matrix + Send + Sync,
{
    fn propagate(&self, t: f64, s: f64) -> Result<Matrix> {
        Ok((self.0)(t, s))
    }
}

/// `T(t,s)` as the solution operator of `x' = A(t)x`.
pub struct OdeSource {
    pub generator: Generator,
    pub tol: f64,
}

impl PropagatorSource for OdeSource {
    fn propagate(&self, t: f64, s: f64) -> Result<Matrix> {
        Ok(integrate_propagators(&self.generator, s, &[t], self.tol)?.pop().expect("one target"))
    }

    fn propagate_from(&self, s: f64, ts: &[f64]) -> Result<Vec<Matrix>> {
        integrate_propagators(&self.generator, s, ts, self.tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CachePolicy {
    Enabled,
    Disabled,
}

type Cache = RwLock<HashMap<(u64, u64), Matrix>>;

struct Inner {
    name: String,
    dim: usize,
    source: Arc<dyn PropagatorSource>,
    discontinuous: bool,
    cache: Option<Cache>,
}

/// A two-parameter operator family on `ℝ^d`. Cheap to clone.
#[derive(Clone)]
pub struct EvolutionFamily {
    inner: Arc<Inner>,
}

impl fmt::Debug for EvolutionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvolutionFamily")
            .field("name", &self.inner.name)
            .field("dim", &self.inner.dim)
            .field("discontinuous", &self.inner.discontinuous)
            .finish()
    }
}

impl EvolutionFamily {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        source: Arc<dyn PropagatorSource>,
        cache: CachePolicy,
    ) -> Self {
        EvolutionFamily {
            inner: Arc::new(Inner {
                name: name.into(),
                dim,
                source,
                discontinuous: false,
                cache: (cache == CachePolicy::Enabled).then(|| RwLock::new(HashMap::new())),
            }),
        }
    }

    pub fn closed_form<F>(name: impl Into<String>, dim: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> Matrix + Send + Sync + 'static,
    {
        Self::new(name, dim, Arc::new(ClosedForm(f)), CachePolicy::Disabled)
    }

    pub fn ode(name: impl Into<String>, generator: Generator, tol: f64) -> Self {
        let dim = generator.dim();
        Self::new(name, dim, Arc::new(OdeSource { generator, tol }), CachePolicy::Enabled)
    }

    /// Marks the family as discontinuous in `t`, which disables continuity
    /// diagnostics.
    pub fn flagged_discontinuous(self) -> Self {
        let inner = Arc::try_unwrap(self.inner).unwrap_or_else(|arc| Inner {
            name: arc.name.clone(),
            dim: arc.dim,
            source: arc.source.clone(),
            discontinuous: arc.discontinuous,
            cache: arc.cache.as_ref().map(|_| RwLock::new(HashMap::new())),
        });
        EvolutionFamily { inner: Arc::new(Inner { discontinuous: true, ..inner }) }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn is_discontinuous(&self) -> bool {
        self.inner.discontinuous
    }

    pub fn source(&self) -> Arc<dyn PropagatorSource> {
        self.inner.source.clone()
    }

    fn check_order(t: f64, s: f64) -> Result<()> {
        if !(t.is_finite() && s.is_finite() && t >= s && s >= 0.0) {
            return Err(Error::InvalidArgument(format!("propagator needs t ≥ s ≥ 0, got t={t}, s={s}")));
        }
        Ok(())
    }

    /// `T(t,s)`, served from the cache when enabled.
    pub fn propagator(&self, t: f64, s: f64) -> Result<Matrix> {
        Self::check_order(t, s)?;
        if t == s {
            return Ok(Matrix::identity(self.dim(), self.dim()));
        }
        let key = (t.to_bits(), s.to_bits());
        if let Some(cache) = &self.inner.cache {
            if let Some(m) = cache.read().expect("cache lock").get(&key) {
                return Ok(m.clone());
            }
        }
        let m = self.inner.source.propagate(t, s)?;
        self.check_shape(&m)?;
        if let Some(cache) = &self.inner.cache {
            cache.write().expect("cache lock").insert(key, m.clone());
        }
        Ok(m)
    }

    /// `T(t,s)` bypassing the cache.
    pub fn propagator_uncached(&self, t: f64, s: f64) -> Result<Matrix> {
        Self::check_order(t, s)?;
        if t == s {
            return Ok(Matrix::identity(self.dim(), self.dim()));
        }
        let m = self.inner.source.propagate(t, s)?;
        self.check_shape(&m)?;
        Ok(m)
    }

    /// `T(t_k, s)` for a nondecreasing list of times `t_k ≥ s`.
    pub fn propagators_from(&self, s: f64, ts: &[f64]) -> Result<Vec<Matrix>> {
        if let Some(&last) = ts.last() {
            Self::check_order(last, s)?;
        }
        if ts.windows(2).any(|w| w[1] < w[0]) || ts.first().is_some_and(|&t0| t0 < s) {
            return Err(Error::InvalidArgument("propagators_from needs sorted times ≥ s".into()));
        }
        let out = self.inner.source.propagate_from(s, ts)?;
        for m in &out {
            self.check_shape(m)?;
        }
        if let Some(cache) = &self.inner.cache {
            let mut c = cache.write().expect("cache lock");
            for (&t, m) in ts.iter().zip(&out) {
                if t > s {
                    c.insert((t.to_bits(), s.to_bits()), m.clone());
                }
            }
        }
        Ok(out)
    }

    fn check_shape(&self, m: &Matrix) -> Result<()> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "family {} returned a {}x{} propagator, expected {d}x{d}",
                self.name(),
                m.nrows(),
                m.ncols(),
                d = self.dim()
            )));
        }
        Ok(())
    }

    pub fn cached_entries(&self) -> usize {
        self.inner.cache.as_ref().map_or(0, |c| c.read().expect("cache lock").len())
    }
}

/// Max over triples of `‖T(t,s)T(s,τ) − T(t,τ)‖ / (1 + ‖T(t,τ)‖)`.
pub fn cocycle_residual(family: &EvolutionFamily, triples: &[(f64, f64, f64)]) -> Result<f64> {
    let mut worst = 0.0_f64;
    for &(t, s, tau) in triples {
        if !(t >= s && s >= tau && tau >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cocycle triple must satisfy t ≥ s ≥ τ ≥ 0, got ({t}, {s}, {tau})"
            )));
        }
        let whole = family.propagator(t, tau)?;
        let split = family.propagator(t, s)? * family.propagator(s, tau)?;
        worst = worst.max(op_norm(&(split - &whole)) / (1.0 + op_norm(&whole)));
    }
    Ok(worst)
}

/// Forward-continuity diagnostic for `t ↦ T(t,s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityReport {
    /// Largest increment between neighbouring nodes at spacing `h`.
    pub max_jump_coarse: f64,
    /// The same at spacing `h/2`.
    pub max_jump_fine: f64,
    /// `None` when the family is flagged discontinuous and the check is skipped.
    pub continuous: Option<bool>,
}

/// Compares the largest propagator increment on `[s, t_end]` at spacing `h`
/// and `h/2`. For a continuous family the increment shrinks roughly in
/// proportion to the spacing; a jump keeps it fixed.
pub fn continuity_check(family: &EvolutionFamily, s: f64, t_end: f64, n: usize) -> Result<ContinuityReport> {
    if family.is_discontinuous() {
        return Ok(ContinuityReport { max_jump_coarse: f64::NAN, max_jump_fine: f64::NAN, continuous: None });
    }
    if n < 2 || t_end <= s {
        return Err(Error::InvalidArgument("continuity check needs n ≥ 2 and t_end > s".into()));
    }
    let max_jump = |m: usize| -> Result<f64> {
        let ts: Vec<f64> = (0..=m).map(|k| s + (t_end - s) * k as f64 / m as f64).collect();
        let ps = family.propagators_from(s, &ts)?;
        Ok(ps.windows(2).map(|w| op_norm(&(&w[1] - &w[0]))).fold(0.0, f64::max))
    };
    let coarse = max_jump(n)?;
    let fine = max_jump(2 * n)?;
    let continuous = fine <= 0.75 * coarse || coarse <= 1e-12;
    Ok(ContinuityReport { max_jump_coarse: coarse, max_jump_fine: fine, continuous: Some(continuous) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag() -> EvolutionFamily {
        EvolutionFamily::closed_form("diag", 2, |t, s| {
            Matrix::from_diagonal(&crate::linalg::Vector::from_vec(vec![(-(t - s)).exp(), (t - s).exp()]))
        })
    }

    #[test]
    fn closed_form_values() {
        let f = diag();
        let m = f.propagator(2.0, 1.0).unwrap();
        assert_relative_eq!(m[(0, 0)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(m[(1, 1)], 1.0f64.exp(), epsilon = 1e-15);
        assert_eq!(f.propagator(3.0, 3.0).unwrap(), Matrix::identity(2, 2));
        assert!(f.propagator(1.0, 2.0).is_err());
    }

    #[test]
    fn scalar_ode() {
        let f = EvolutionFamily::ode("decay", builtin_generator("scalar_decay", Some(2.0)).unwrap(), 1e-9);
        let m = f.propagator(1.0, 0.0).unwrap();
        assert!((m[(0, 0)] - (-2.0f64).exp()).abs() < 1e-6);
        assert_eq!(f.cached_entries(), 1);
        let again = f.propagator(1.0, 0.0).unwrap();
        assert_eq!(m, again);
        let fresh = f.propagator_uncached(1.0, 0.0).unwrap();
        assert!((fresh[(0, 0)] - m[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn cocycle_and_ordering() {
        let f = diag();
        assert!(cocycle_residual(&f, &[(3.0, 2.0, 1.0), (1.0, 1.0, 0.0)]).unwrap() < 1e-14);
        assert!(cocycle_residual(&f, &[(1.0, 2.0, 0.0)]).is_err());
    }

    #[test]
    fn tighter_tolerance_shrinks_cocycle_residual() {
        let triples: Vec<_> = (0..10).map(|k| (5.0, 2.0 + 0.2 * k as f64, 0.3 * k as f64)).collect();
        let res = |tol| {
            let f = EvolutionFamily::ode("rot", builtin_generator("rotation", None).unwrap(), tol);
            cocycle_residual(&f, &triples).unwrap()
        };
        assert!(res(1e-8) < res(1e-5));
    }

    #[test]
    fn continuity_diagnostic() {
        let smooth = continuity_check(&diag(), 0.0, 2.0, 50).unwrap();
        assert_eq!(smooth.continuous, Some(true));
        let jumpy = EvolutionFamily::closed_form("step", 1, |t, s| {
            let count = |x: f64| if x >= 1.0 { 2.0 } else { 1.0 };
            Matrix::from_element(1, 1, count(t) / count(s))
        });
        let r = continuity_check(&jumpy, 0.0, 2.0, 50).unwrap();
        assert_eq!(r.continuous, Some(false));
        let flagged = jumpy.flagged_discontinuous();
        assert!(flagged.is_discontinuous());
        assert_eq!(continuity_check(&flagged, 0.0, 2.0, 50).unwrap().continuous, None);
    }
}
