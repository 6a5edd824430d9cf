//! Sampled functions `[0, T_max] → ℝ^d` and the norms of the input and
//! output spaces.
//!
//! A jump at time `a` is represented by two nodes with the same time: the
//! first carries the left limit, the second the value at `a`. Evaluation is
//! right-continuous and linear between distinct nodes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::NormFamily;
use crate::linalg::{orthonormal_basis, orthonormality_defect, Matrix, Vector};

/// Behaviour of a sampled function beyond its last node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Extension {
    Zero,
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledFunction {
    grid: Vec<f64>,
    values: Vec<Vector>,
    extension: Extension,
    /// Claimed `‖f(t)‖_t ≤ ‖f(T)‖_T e^{−r(t−T)}` for `t ≥ T = T_max`.
    decay: Option<f64>,
}

impl SampledFunction {
    /// `grid` must start at 0, be nondecreasing, and repeat a time at most
    /// twice (a jump).
    pub fn new(grid: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "sampled function needs ≥ 2 nodes and one value per node, got {} nodes and {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid[0] != 0.0 {
            return Err(Error::InvalidArgument("sampled function grid must start at 0".into()));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("sampled function grid must be nondecreasing".into()));
        }
        if grid.windows(3).any(|w| w[0] == w[1] && w[1] == w[2]) {
            return Err(Error::InvalidArgument("a grid time may repeat at most twice".into()));
        }
        if *grid.last().expect("nonempty") <= 0.0 {
            return Err(Error::InvalidArgument("sampled function needs T_max > 0".into()));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::Dimension("sampled function values differ in length".into()));
        }
        Ok(SampledFunction { grid, values, extension: Extension::Zero, decay: None })
    }

    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> Vector) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    /// `χ_[a,b)(t)·v` sampled on a uniform grid of spacing `h` over `[0, t_max]`,
    /// with jump nodes at `a` (if `a > 0`) and `b`.
    pub fn indicator(a: f64, b: f64, v: Vector, t_max: f64, h: f64) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= t_max) {
            return Err(Error::InvalidArgument(format!("indicator needs 0 ≤ a < b ≤ T_max, got [{a}, {b})")));
        }
        let zero = Vector::zeros(v.len());
        let mut times = crate::rates::uniform_grid(t_max, h);
        times.extend([a, b]);
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for t in times {
            let mut nodes = vec![];
            if t == a && a > 0.0 {
                nodes.push(&zero);
                nodes.push(&v);
            } else if t == b {
                nodes.push(&v);
                if b < t_max {
                    nodes.push(&zero);
                }
            } else {
                nodes.push(if a <= t && t < b { &v } else { &zero });
            }
            for x in nodes {
                grid.push(t);
                values.push(x.clone());
            }
        }
        Self::new(grid, values)
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }

    pub fn with_decay(mut self, rate: f64) -> Self {
        self.decay = Some(rate);
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn t_max(&self) -> f64 {
        *self.grid.last().expect("nonempty")
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    pub fn decay(&self) -> Option<f64> {
        self.decay
    }

    /// Right-continuous evaluation.
    pub fn eval(&self, t: f64) -> Vector {
        let n = self.grid.len();
        if t > self.t_max() {
            return match self.extension {
                Extension::Zero => Vector::zeros(self.dim()),
                Extension::Constant => self.values[n - 1].clone(),
            };
        }
        let i = self.grid.partition_point(|&g| g <= t).max(1);
        let k = i - 1;
        if k + 1 >= n || self.grid[k] == t {
            return self.values[k].clone();
        }
        let (a, b) = (self.grid[k], self.grid[k + 1]);
        let w = (t - a) / (b - a);
        &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
    }

    /// Node-wise map keeping grid, extension and decay.
    pub fn map(&self, f: impl Fn(f64, &Vector) -> Vector) -> Self {
        let values = self.grid.iter().zip(&self.values).map(|(&t, v)| f(t, v)).collect();
        SampledFunction { values, ..self.clone() }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|_, v| v * alpha)
    }

    /// Sum of two functions on the same grid.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Dimension("functions must share a grid to be added".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(SampledFunction { values, decay: None, ..self.clone() })
    }

    /// Same function with each interval of positive length split at its
    /// midpoint.
    pub fn refined(&self) -> Self {
        let mut grid = vec![self.grid[0]];
        let mut values = vec![self.values[0].clone()];
        for k in 1..self.grid.len() {
            let (a, b) = (self.grid[k - 1], self.grid[k]);
            if b > a {
                grid.push(0.5 * (a + b));
                values.push((&self.values[k - 1] + &self.values[k]) * 0.5);
            }
            grid.push(b);
            values.push(self.values[k].clone());
        }
        SampledFunction { grid, values, ..self.clone() }
    }
}

/// Result of a `Y₁` norm evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Y1Norm {
    /// Composite-trapezoid value over `[0, T_max]`.
    pub value: f64,
    /// `|Simpson − trapezoid|`, an estimate of the quadrature error.
    pub quadrature_error: f64,
    /// Bound on the contribution beyond `T_max` (0 for zero extension,
    /// infinite for a nonzero constant tail without decay).
    pub tail_bound: f64,
}

/// Composite Simpson over node triples on one jump-free segment, with a
/// trapezoid on a leftover last interval.
fn simpson_segment(g: &[f64], y: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut k = 0;
    while k + 2 < g.len() {
        let (h1, h2) = (g[k + 1] - g[k], g[k + 2] - g[k + 1]);
        total += (h1 + h2) / 6.0
            * ((2.0 - h2 / h1) * y[k] + (h1 + h2).powi(2) / (h1 * h2) * y[k + 1] + (2.0 - h1 / h2) * y[k + 2]);
        k += 2;
    }
    if k + 1 < g.len() {
        total += 0.5 * (g[k + 1] - g[k]) * (y[k] + y[k + 1]);
    }
    total
}

/// `∫₀^T ‖f(t)‖_t dt` by the composite trapezoid rule.
pub fn y1_norm(f: &SampledFunction, norms: &dyn NormFamily) -> Y1Norm {
    let g = &f.grid;
    let at: Vec<f64> = g.iter().zip(&f.values).map(|(&t, v)| norms.norm(t, v)).collect();
    let mut trap = 0.0;
    for k in 1..g.len() {
        trap += 0.5 * (g[k] - g[k - 1]) * (at[k - 1] + at[k]);
    }
    let mut simpson = 0.0;
    let mut start = 0;
    for k in 1..=g.len() {
        if k == g.len() || g[k] == g[k - 1] {
            simpson += simpson_segment(&g[start..k], &at[start..k]);
            start = k;
        }
    }
    let last = *at.last().expect("nonempty");
    let tail_bound = match (f.extension, f.decay) {
        (Extension::Zero, _) => 0.0,
        (Extension::Constant, Some(r)) if r > 0.0 => last / r,
        (Extension::Constant, _) if last == 0.0 => 0.0,
        (Extension::Constant, _) => f64::INFINITY,
    };
    Y1Norm { value: trap, quadrature_error: (simpson - trap).abs(), tail_bound }
}

/// Result of a sup-norm evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YinfNorm {
    pub value: f64,
    /// Time at which the grid supremum is attained.
    pub at: f64,
}

/// `sup_t ‖f(t)‖_t` over the nodes and interval midpoints. Used for both
/// `Y∞` and `Y'∞`.
pub fn yinf_norm(f: &SampledFunction, norms: &dyn NormFamily) -> YinfNorm {
    let mut best = YinfNorm { value: norms.norm(f.grid[0], &f.values[0]), at: f.grid[0] };
    let mut consider = |t: f64, v: &Vector| {
        let n = norms.norm(t, v);
        if n > best.value {
            best = YinfNorm { value: n, at: t };
        }
    };
    for k in 1..f.grid.len() {
        let (a, b) = (f.grid[k - 1], f.grid[k]);
        if b > a {
            consider(0.5 * (a + b), &((&f.values[k - 1] + &f.values[k]) * 0.5));
        }
        consider(b, &f.values[k]);
    }
    best
}

/// A subspace of `ℝ^d` with an orthonormal basis (possibly empty).
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceZ {
    basis: Matrix,
}

impl SubspaceZ {
    /// The trivial subspace `{0}` of `ℝ^d`.
    pub fn trivial(d: usize) -> Self {
        SubspaceZ { basis: Matrix::zeros(d, 0) }
    }

    /// Span of the columns of `m`, orthonormalized.
    pub fn span(m: &Matrix) -> Self {
        SubspaceZ { basis: orthonormal_basis(m, 1e-12).0 }
    }

    /// Takes `basis` as given after checking orthonormality to 1e−12.
    pub fn from_orthonormal(basis: Matrix) -> Result<Self> {
        let defect = orthonormality_defect(&basis);
        if defect > 1e-12 {
            return Err(Error::InvalidArgument(format!("subspace basis is not orthonormal (defect {defect:.2e})")));
        }
        Ok(SubspaceZ { basis })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Orthogonal projection onto the subspace.
    pub fn project(&self, x: &Vector) -> Vector {
        &self.basis * (self.basis.transpose() * x)
    }

    /// The orthogonal complement.
    pub fn complement(&self) -> Self {
        let d = self.ambient_dim();
        let proj = Matrix::identity(d, d) - &self.basis * self.basis.transpose();
        Self::span(&proj)
    }
}

/// Whether `f(0) ∈ Z` up to `tol·(1 + ‖f(0)‖)`, with the distance
/// `‖(I − Π_Z) f(0)‖`.
pub fn in_z(f: &SampledFunction, z: &SubspaceZ, tol: f64) -> (bool, f64) {
    let x0 = &f.values[0];
    let dist = (x0 - z.project(x0)).norm();
    (dist <= tol * (1.0 + x0.norm()), dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{BaseNorm, WeightedNorm};
    use crate::linalg::unit;
    use crate::rates::uniform_grid;
    use proptest::prelude::*;

    #[test]
    fn indicator_integral() {
        let v = Vector::from_vec(vec![3.0, 0.0]);
        let f = SampledFunction::indicator(0.0, 1.0, v, 2.0, 0.1).unwrap();
        assert!((y1_norm(&f, &BaseNorm).value - 3.0).abs() < 1e-12);
        assert_eq!(f.eval(1.0).norm(), 0.0);
        assert_eq!(f.eval(0.999)[0], 3.0);
        let g = SampledFunction::indicator(0.55, 1.25, unit(1, 0), 2.0, 0.1).unwrap();
        assert!((y1_norm(&g, &BaseNorm).value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn exponential_integrals() {
        let f = SampledFunction::from_fn(uniform_grid(40.0, 0.01), |t| unit(2, 0) * (-t).exp()).unwrap();
        let base = y1_norm(&f, &BaseNorm);
        assert!((base.value - 1.0).abs() < 1e-4);
        // trapezoid excess is h²/12 to leading order; the estimate tracks it
        let excess = base.value - (1.0 - (-40.0f64).exp());
        assert!((base.quadrature_error / excess - 1.0).abs() < 1e-3, "{} {excess}", base.quadrature_error);
        assert!((y1_norm(&f, &WeightedNorm::power(1.0)).value - 2.0).abs() < 1e-3);
    }

    #[test]
    fn sup_norms() {
        let v = Vector::from_vec(vec![0.0, 2.0]);
        let c = SampledFunction::from_fn(uniform_grid(5.0, 0.5), |_| v.clone()).unwrap();
        assert_eq!(yinf_norm(&c, &BaseNorm).value, 2.0);
        let e = SampledFunction::from_fn(uniform_grid(20.0, 0.01), |t| unit(2, 1) * (-t).exp()).unwrap();
        let s = yinf_norm(&e, &BaseNorm);
        assert_eq!((s.value, s.at), (1.0, 0.0));
        let fine = SampledFunction::from_fn(uniform_grid(20.0, 0.001), |t| unit(2, 1) * (-t).exp()).unwrap();
        let w = yinf_norm(&fine, &WeightedNorm::power(1.0));
        assert!((w.value - 1.0).abs() < 1e-6 && w.at <= 1e-3, "{w:?}");
    }

    #[test]
    fn tail_bounds() {
        let f = SampledFunction::from_fn(uniform_grid(10.0, 0.1), |t| unit(1, 0) * (-t).exp()).unwrap();
        assert_eq!(y1_norm(&f, &BaseNorm).tail_bound, 0.0);
        let g = f.clone().with_extension(Extension::Constant).with_decay(1.0);
        assert!((y1_norm(&g, &BaseNorm).tail_bound - (-10.0f64).exp()).abs() < 1e-15);
        let h = f.with_extension(Extension::Constant);
        assert!(y1_norm(&h, &BaseNorm).tail_bound.is_infinite());
    }

    #[test]
    fn refinement_is_stable() {
        let f = SampledFunction::from_fn(uniform_grid(8.0, 0.05), |t| unit(1, 0) * (t.sin() + 2.0)).unwrap();
        let a = y1_norm(&f, &BaseNorm);
        let b = y1_norm(&f.refined(), &BaseNorm);
        assert!((a.value - b.value).abs() <= 2.0 * a.quadrature_error + 1e-12);
    }

    #[test]
    fn membership_in_z() {
        let z = SubspaceZ::span(&Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let grid = vec![0.0, 1.0];
        let f = |x0: Vector| SampledFunction::new(grid.clone(), vec![x0.clone(), x0]).unwrap();
        assert_eq!(in_z(&f(Vector::zeros(2)), &z, 1e-9), (true, 0.0));
        assert_eq!(in_z(&f(unit(2, 0)), &z, 1e-9), (false, 1.0));
        assert!(in_z(&f(Vector::from_vec(vec![1e-9, 1.0])), &z, 1e-6).0);
        assert_eq!(z.complement().dim(), 1);
        assert_eq!(SubspaceZ::trivial(2).complement().dim(), 2);
    }

    fn arb_function() -> impl Strategy<Value = SampledFunction> {
        prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 11).prop_map(|vals| {
            let grid: Vec<f64> = (0..11).map(|k| k as f64 * 0.3).collect();
            let values = vals.into_iter().map(|(a, b)| Vector::from_vec(vec![a, b])).collect();
            SampledFunction::new(grid, values).unwrap()
        })
    }

    proptest! {
        #[test]
        fn norms_are_homogeneous(f in arb_function(), alpha in -20.0f64..20.0) {
            let w = WeightedNorm::power(0.5);
            let (a, b) = (y1_norm(&f, &w).value, y1_norm(&f.scaled(alpha), &w).value);
            prop_assert!((b - alpha.abs() * a).abs() <= 1e-12 * (1.0 + alpha.abs() * a));
            let (a, b) = (yinf_norm(&f, &w).value, yinf_norm(&f.scaled(alpha), &w).value);
            prop_assert!((b - alpha.abs() * a).abs() <= 1e-12 * (1.0 + alpha.abs() * a));
        }

        #[test]
        fn triangle_inequality(f in arb_function(), g in arb_function()) {
            let w = WeightedNorm::power(1.0);
            let s = f.add(&g).unwrap();
            let (a, b, c) = (y1_norm(&f, &w).value, y1_norm(&g, &w).value, y1_norm(&s, &w).value);
            prop_assert!(c <= (a + b) * (1.0 + 1e-12));
            let (a, b, c) = (yinf_norm(&f, &w).value, yinf_norm(&g, &w).value, yinf_norm(&s, &w).value);
            prop_assert!(c <= (a + b) * (1.0 + 1e-12));
        }
    }
}
