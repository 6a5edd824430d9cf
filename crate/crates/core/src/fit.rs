//! Least-squares fits of one-sided (upper envelope) bounds.
//!
//! Given samples (f_i, g_i) we look for a bound `g ≤ c + w·f` that holds at
//! every sample and minimizes the sum of squared slacks. For fixed `w` the
//! best intercept is `c(w) = max_i (g_i − w·f_i)`, which leaves a convex
//! objective in `w` alone; it is minimized by golden-section search (nested
//! for two weights). The returned bound is tight: at least one sample has
//! zero slack.

/// A fitted bound `g ≤ intercept + Σ weights[k]·f_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
    /// Root-mean-square slack over the samples.
    pub rms_slack: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Minimizes a unimodal function on [lo, hi].
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

fn intercept_and_cost(features: &[&[f64]], targets: &[f64], w: &[f64]) -> (f64, f64) {
    let resid = |i: usize| targets[i] - w.iter().zip(features).map(|(wk, fk)| wk * fk[i]).sum::<f64>();
    let c = (0..targets.len()).map(resid).fold(f64::NEG_INFINITY, f64::max);
    let cost = (0..targets.len()).map(|i| (c - resid(i)).powi(2)).sum();
    (c, cost)
}

/// One-weight envelope fit with `w` restricted to [lo, hi].
pub fn envelope_fit_1(features: &[f64], targets: &[f64], lo: f64, hi: f64) -> EnvelopeFit {
    assert_eq!(features.len(), targets.len());
    assert!(!targets.is_empty(), "envelope fit needs samples");
    let fs = [features];
    let w = golden_min(|w| intercept_and_cost(&fs, targets, &[w]).1, lo, hi, 300);
    let (c, cost) = intercept_and_cost(&fs, targets, &[w]);
    EnvelopeFit { intercept: c, weights: vec![w], rms_slack: (cost / targets.len() as f64).sqrt() }
}

/// Two-weight envelope fit on a box.
pub fn envelope_fit_2(
    f1: &[f64],
    f2: &[f64],
    targets: &[f64],
    box1: (f64, f64),
    box2: (f64, f64),
) -> EnvelopeFit {
    assert!(f1.len() == targets.len() && f2.len() == targets.len());
    assert!(!targets.is_empty(), "envelope fit needs samples");
    let fs = [f1, f2];
    let inner = |w2: f64| {
        let w1 = golden_min(|w1| intercept_and_cost(&fs, targets, &[w1, w2]).1, box1.0, box1.1, 120);
        (w1, intercept_and_cost(&fs, targets, &[w1, w2]).1)
    };
    let w2 = golden_min(|w2| inner(w2).1, box2.0, box2.1, 100);
    let (w1, _) = inner(w2);
    let (c, cost) = intercept_and_cost(&fs, targets, &[w1, w2]);
    EnvelopeFit { intercept: c, weights: vec![w1, w2], rms_slack: (cost / targets.len() as f64).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let g: Vec<f64> = x.iter().map(|x| 0.3 - 2.0 * x).collect();
        let fit = envelope_fit_1(&x, &g, -100.0, 100.0);
        assert!((fit.weights[0] + 2.0).abs() < 1e-9);
        assert!((fit.intercept - 0.3).abs() < 1e-8);
        assert!(fit.rms_slack < 1e-8);
    }

    #[test]
    fn bound_holds_everywhere_and_touches() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let g: Vec<f64> = x.iter().map(|x| -x + 0.3 * (3.0 * x).sin()).collect();
        let fit = envelope_fit_1(&x, &g, -10.0, 10.0);
        let slack: Vec<f64> = x.iter().zip(&g).map(|(x, g)| fit.intercept + fit.weights[0] * x - g).collect();
        assert!(slack.iter().all(|s| *s >= -1e-12));
        assert!(slack.iter().cloned().fold(f64::INFINITY, f64::min) < 1e-12);
    }

    #[test]
    fn two_weights() {
        let mut f1 = vec![];
        let mut f2 = vec![];
        let mut g = vec![];
        for i in 0..20 {
            for j in 0..20 {
                let (a, b) = (i as f64 * 0.3, j as f64 * 0.2);
                f1.push(a);
                f2.push(b);
                g.push(1.0 - 0.7 * a + 0.4 * b);
            }
        }
        let fit = envelope_fit_2(&f1, &f2, &g, (-10.0, 10.0), (0.0, 5.0));
        assert!((fit.weights[0] + 0.7).abs() < 1e-6, "{fit:?}");
        assert!((fit.weights[1] - 0.4).abs() < 1e-6, "{fit:?}");
    }
}
