//! Gauss-Hermite quadrature for expectations under a normal distribution.

use crate::scalar::Scalar;
use crate::state::GaussianState;

/// Nodes and weights for `int e^{-x^2} g(x) dx`, ascending nodes.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes are bracketed by Sturm-count bisection on the Jacobi matrix and
    /// polished by Newton on the Hermite function recurrence, which keeps the
    /// weight factor folded in so large orders neither overflow nor collapse.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Hermite order must be >= 1");
        let n = order;
        let radius = (2.0 * n as f64 + 1.0).sqrt() + 1.0;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for k in 0..n.div_ceil(2) {
            let idx = n - 1 - k;
            let (mut lo, mut hi) = (0.0f64, radius);
            if n % 2 == 1 && idx == n / 2 {
                hi = 0.0;
            }
            while hi - lo > 1e-13 * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if count_below(n, mid) > idx {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut z = 0.5 * (lo + hi);
            let mut pp = 0.0;
            for _ in 0..8 {
                let (p, dp) = hermite_function(n, z);
                pp = dp;
                let step = p / dp;
                z -= step;
                if step.abs() <= 1e-16 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, dp) = hermite_function(n, z);
            if dp != 0.0 {
                pp = dp;
            }
            x[idx] = z;
            x[k] = -z;
            w[idx] = 2.0 / (pp * pp) * (-z * z).exp();
            w[k] = w[idx];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        Self { nodes: x, weights: w }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[g(X)]` for `X ~ N(s.mean, s.var)`; exact point evaluation when
    /// `s.var == 0`.
    pub fn expect<T: Scalar>(&self, s: GaussianState<T>, mut g: impl FnMut(T) -> T) -> T {
        if s.var == T::zero() {
            return g(s.mean);
        }
        let scale = (T::lit(2.0) * s.var).sqrt();
        let norm = T::lit(std::f64::consts::PI.sqrt().recip());
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + T::lit(w) * g(s.mean + scale * T::lit(x));
        }
        acc * norm
    }
}

/// Number of Jacobi-matrix eigenvalues (Hermite roots) below `t`.
fn count_below(n: usize, t: f64) -> usize {
    let mut count = 0;
    let mut q = -t;
    for k in 0..n {
        if k > 0 {
            let off2 = k as f64 / 2.0;
            q = -t - off2 / if q == 0.0 { f64::EPSILON } else { q };
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Orthonormal Hermite function of degree `n` and the matching derivative
/// scale used for the weights, both times `e^{-z^2/2}`.
fn hermite_function(n: usize, z: f64) -> (f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^{-1/4}
    let mut p1 = PIM4 * (-0.5 * z * z).exp();
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 20, 60, 80, 120, 200, 300] {
            let gh = GaussHermite::new(n);
            let s: f64 = gh.weights().iter().sum();
            assert!((s - std::f64::consts::PI.sqrt()).abs() < 1e-13, "n={n}: {s}");
            assert!(gh.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn low_order_nodes() {
        let gh = GaussHermite::new(2);
        assert!((gh.nodes()[1] - 0.5f64.sqrt()).abs() < 1e-15);
        let gh = GaussHermite::new(3);
        assert!(gh.nodes()[1].abs() < 1e-15);
        assert!((gh.nodes()[2] - 1.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_moments_are_exact() {
        let gh = GaussHermite::new(10);
        let s = GaussianState::new(0.7f64, 1.9).unwrap();
        assert!((gh.expect(s, |x| x) - 0.7).abs() < 1e-14);
        assert!((gh.expect(s, |x| (x - 0.7).powi(2)) - 1.9).abs() < 1e-13);
        assert!((gh.expect(s, |x| (x - 0.7).powi(4)) - 3.0 * 1.9 * 1.9).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_expectation() {
        // E[exp(-X^2/2)] for X ~ N(0, v) is 1/sqrt(1+v).
        let gh = GaussHermite::new(60);
        let s = GaussianState::new(0.0, 0.8).unwrap();
        let e: f64 = gh.expect(s, |x| (-x * x / 2.0).exp());
        assert!((e - 1.0 / 1.8f64.sqrt()).abs() < 1e-14);
    }
}
