//! Deterministic quadrature and normal-distribution helpers.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::scalar::{lit, Real};

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    /// Builds an `n`-point rule. Nodes are found by Newton iteration on the
    /// Legendre recurrence in f64 and then converted.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let nf = n as f64;
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = nf * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(lit(x));
            weights.push(lit(2.0 / ((1.0 - x * x) * dp * dp)));
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates a vector-valued function over `[lo, hi]`.
    pub fn integrate<const K: usize, F>(&self, lo: T, hi: T, f: &mut F) -> [T; K]
    where
        F: FnMut(T) -> [T; K],
    {
        let half = (hi - lo) / lit(2.0);
        let mid = (hi + lo) / lit(2.0);
        let mut acc = [T::zero(); K];
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * *x);
            for k in 0..K {
                acc[k] = acc[k] + *w * v[k];
            }
        }
        for a in acc.iter_mut() {
            *a = *a * half;
        }
        acc
    }
}

/// Adaptive composite Gauss–Legendre integration of a vector-valued function.
///
/// The interval is split into `panels` equal pieces; each piece is bisected
/// until the two-half estimate agrees with the whole-panel estimate to `tol`
/// in every component, or `max_depth` is reached.
pub fn adaptive_integrate<T: Real, const K: usize, F>(
    rule: &GaussLegendre<T>,
    lo: T,
    hi: T,
    panels: usize,
    tol: T,
    max_depth: u32,
    f: &mut F,
) -> [T; K]
where
    F: FnMut(T) -> [T; K],
{
    let width = (hi - lo) / lit(panels as f64);
    let mut total = [T::zero(); K];
    let panel_tol = tol / lit(panels as f64);
    for p in 0..panels {
        let a = lo + width * lit(p as f64);
        let b = a + width;
        let whole = rule.integrate(a, b, f);
        let v = refine(rule, a, b, whole, panel_tol, max_depth, f);
        for k in 0..K {
            total[k] = total[k] + v[k];
        }
    }
    total
}

fn refine<T: Real, const K: usize, F>(
    rule: &GaussLegendre<T>,
    a: T,
    b: T,
    whole: [T; K],
    tol: T,
    depth: u32,
    f: &mut F,
) -> [T; K]
where
    F: FnMut(T) -> [T; K],
{
    let m = (a + b) / lit(2.0);
    let left = rule.integrate(a, m, f);
    let right = rule.integrate(m, b, f);
    let mut converged = true;
    let mut sum = [T::zero(); K];
    for k in 0..K {
        sum[k] = left[k] + right[k];
        if (sum[k] - whole[k]).abs() > tol {
            converged = false;
        }
    }
    if converged || depth == 0 {
        return sum;
    }
    let half_tol = tol / lit(2.0);
    let l = refine(rule, a, m, left, half_tol, depth - 1, f);
    let r = refine(rule, m, b, right, half_tol, depth - 1, f);
    let mut out = [T::zero(); K];
    for k in 0..K {
        out[k] = l[k] + r[k];
    }
    out
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail, accurate far into the tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, polished with Newton steps on [`norm_cdf`].
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0,1), got {p}");
    let std = Normal::standard();
    let mut x = std.inverse_cdf(p);
    for _ in 0..3 {
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf <= 0.0 {
            break;
        }
        x -= (norm_cdf(x) - p) / pdf;
    }
    x
}

/// Log-density of `N(mean, sd^2)` at `x`.
#[inline]
pub fn norm_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.918_938_533_204_672_8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let rule = GaussLegendre::<f64>::new(8);
        let [v] = rule.integrate(0.0, 2.0, &mut |x| [x.powi(15) + 3.0 * x * x]);
        let exact = 2f64.powi(16) / 16.0 + 8.0;
        assert!((v - exact).abs() < 1e-9 * exact);
        let w: f64 = (0..rule.len()).map(|i| rule.weights[i]).sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_narrow_peaks() {
        let rule = GaussLegendre::<f64>::new(10);
        let sd = 0.01;
        let [v] = adaptive_integrate(&rule, -10.0, 10.0, 8, 1e-12, 30, &mut |x| {
            [(-(x - 0.3) * (x - 0.3) / (2.0 * sd * sd)).exp()]
        });
        let exact = sd * (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn f32_rule_integrates() {
        let rule = GaussLegendre::<f32>::new(6);
        let [v] = rule.integrate(0.0f32, 1.0, &mut |x| [x * x]);
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn quantile_round_trips() {
        for &p in &[1e-8, 0.02, 0.05, 0.25, 0.5, 0.88, 0.999_999] {
            let x = norm_quantile(p);
            assert!((norm_cdf(x) - p).abs() < 1e-14 * p.max(1e-3), "p={p}");
        }
        assert_eq!(norm_quantile(0.5), 0.0);
    }
}
