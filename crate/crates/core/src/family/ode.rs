//! Matrix ODE propagation `Y' = A(t)Y`, `Y(s) = I`, by an embedded
//! Dormand–Prince 5(4) pair with adaptive step control.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A time-dependent generator `t ↦ A(t)`.
#[derive(Clone)]
pub struct Generator {
    name: String,
    dim: usize,
    f: Arc<dyn Fn(f64) -> Matrix + Send + Sync>,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Generator({}, d={})", self.name, self.dim)
    }
}

impl Generator {
    pub fn new(name: impl Into<String>, dim: usize, f: impl Fn(f64) -> Matrix + Send + Sync + 'static) -> Self {
        Generator { name: name.into(), dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn at(&self, t: f64) -> Matrix {
        (self.f)(t)
    }
}

/// Named generators: `rotation` (`[[0,1],[−1,0]]`), `scalar_decay` (`−k`,
/// default `k = 2`) and `hyperbolic2d` (`diag(−1, 1)`).
pub fn builtin_generator(name: &str, param: Option<f64>) -> Result<Generator> {
    match name {
        "rotation" => Ok(Generator::new(name, 2, |_| Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))),
        "scalar_decay" => {
            let k = param.unwrap_or(2.0);
            Ok(Generator::new(name, 1, move |_| Matrix::from_element(1, 1, -k)))
        }
        "hyperbolic2d" => Ok(Generator::new(name, 2, |_| Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]))),
        _ => Err(Error::UnknownFixture {
            name: name.to_string(),
            available: "rotation, scalar_decay, hyperbolic2d".into(),
        }),
    }
}

/// A generator from samples `(t_k, A_k)`, linearly interpolated and held
/// constant outside the sampled range.
pub fn sampled_generator(name: impl Into<String>, times: Vec<f64>, mats: Vec<Matrix>) -> Result<Generator> {
    if times.is_empty() || times.len() != mats.len() {
        return Err(Error::InvalidArgument("sampled generator needs matching nonempty times and matrices".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("generator sample times must be strictly increasing".into()));
    }
    let dim = mats[0].nrows();
    if mats.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
        return Err(Error::Dimension("generator samples must be square of one size".into()));
    }
    Ok(Generator::new(name, dim, move |t| {
        if t <= times[0] {
            return mats[0].clone();
        }
        let n = times.len();
        if t >= times[n - 1] {
            return mats[n - 1].clone();
        }
        let k = times.partition_point(|&x| x <= t) - 1;
        let w = (t - times[k]) / (times[k + 1] - times[k]);
        &mats[k] * (1.0 - w) + &mats[k + 1] * w
    }))
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 10_000_000;

/// Integrates `Y' = A(t)Y` from `Y(s) = I` and returns `Y(t_k)` for each
/// target, which must be sorted and `≥ s`. Mixed absolute/relative error
/// control at `tol` per step.
pub fn integrate_propagators(gen: &Generator, s: f64, targets: &[f64], tol: f64) -> Result<Vec<Matrix>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("integrator tolerance must be positive, got {tol}")));
    }
    let d = gen.dim();
    let mut y = Matrix::identity(d, d);
    let mut t = s;
    let mut out = Vec::with_capacity(targets.len());
    let a0 = gen.at(s);
    let scale = crate::linalg::op_norm(&a0).max(1.0);
    let mut h = 0.1 * tol.powf(0.2) / scale;
    let mut k1 = &a0 * &y;
    let mut steps = 0usize;
    for &target in targets {
        if target < t {
            return Err(Error::InvalidArgument("integration targets must be sorted and ≥ s".into()));
        }
        while t < target {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Stiffness { from: s, to: target, at: t, step: h });
            }
            let clipped = target - t <= h;
            let step = if clipped { target - t } else { h };
            let mut k = Vec::with_capacity(7);
            k.push(k1.clone());
            for i in 1..7 {
                let mut yi = y.clone();
                for (j, kj) in k.iter().enumerate().take(i) {
                    if A[i][j] != 0.0 {
                        yi += kj * (step * A[i][j]);
                    }
                }
                k.push(gen.at(t + C[i] * step) * yi);
            }
            let mut y5 = y.clone();
            let mut e = Matrix::zeros(d, d);
            for i in 0..7 {
                if B5[i] != 0.0 {
                    y5 += &k[i] * (step * B5[i]);
                }
                e += &k[i] * (step * (B5[i] - B4[i]));
            }
            let err = e
                .iter()
                .zip(y.iter().zip(y5.iter()))
                .map(|(ei, (a, b))| ei.abs() / (tol + tol * a.abs().max(b.abs())))
                .fold(0.0, |m: f64, v| if v.is_nan() { f64::INFINITY } else { m.max(v) });
            let err = if y5.iter().all(|v| v.is_finite()) { err } else { f64::INFINITY };
            let factor = if !err.is_finite() {
                0.2
            } else if err == 0.0 {
                5.0
            } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if clipped { target } else { t + step };
                y = y5;
                k1 = k.swap_remove(6);
                if !clipped || factor < 1.0 {
                    h = step * factor;
                }
            } else {
                h = step * factor;
            }
            if h < 1e-13 * t.abs().max(1.0) {
                return Err(Error::Stiffness { from: s, to: target, at: t, step: h });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_matches_closed_form() {
        let g = builtin_generator("rotation", None).unwrap();
        let ys = integrate_propagators(&g, 0.0, &[1.0, 5.0], 1e-10).unwrap();
        for (y, t) in ys.iter().zip([1.0f64, 5.0]) {
            let exact = Matrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
            assert!((y - exact).amax() < 1e-8);
        }
    }

    #[test]
    fn sampled_generator_interpolates() {
        let g = sampled_generator(
            "lin",
            vec![0.0, 2.0],
            vec![Matrix::from_element(1, 1, 0.0), Matrix::from_element(1, 1, -2.0)],
        )
        .unwrap();
        assert_eq!(g.at(1.0)[(0, 0)], -1.0);
        assert_eq!(g.at(5.0)[(0, 0)], -2.0);
        // x' = -t x  ⇒  x(2) = e^{-2}
        let y = integrate_propagators(&g, 0.0, &[2.0], 1e-10).unwrap();
        assert!((y[0][(0, 0)] - (-2.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn blowup_reports_stiffness() {
        let g = Generator::new("blowup", 1, |t| Matrix::from_element(1, 1, 1.0 / (1.0 - t).powi(2)));
        let err = integrate_propagators(&g, 0.0, &[2.0], 1e-8).unwrap_err();
        assert!(matches!(err, Error::Stiffness { .. }), "{err:?}");
    }
}
