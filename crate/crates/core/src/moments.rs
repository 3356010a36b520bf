//! Output-distribution approximation under the independence assumption.
//!
//! Each Euler step maps `X_n ~ N(nu, Sigma)` through `x + h f(x)` and keeps
//! only the first and second moments, treating `X_n` as independent of the
//! random field `f`. This is the classic multiple-step-ahead moment matching
//! baseline. It is reproduced as-is, including the variance underestimation
//! that gets worse as `h` shrinks.

use serde::Serialize;

use crate::gp::GpPosterior;
use crate::model::{FieldModel, LinearEmbedding};
use crate::quadrature::GaussHermite;
use crate::scalar::Scalar;
use crate::state::{grid_time, step_count, GaussianState, Method, TrajectoryDistribution};
use crate::error::Result;

/// Default Gauss-Hermite order for numerical moments.
pub const DEFAULT_QUADRATURE_ORDER: usize = 60;

/// The four Gaussian expectations one moment-matching step needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentTerms<T> {
    /// `E[mu(X)]`
    pub e_mu: T,
    /// `E[sigma^2(X)]`
    pub e_sigma2: T,
    /// `E[mu(X)^2]`
    pub e_mu2: T,
    /// `E[X mu(X)]`
    pub e_xmu: T,
}

/// Anything that can supply [`MomentTerms`] for a Gaussian input.
pub trait MomentProvider<T: Scalar> {
    fn moment_terms(&self, s: GaussianState<T>) -> MomentTerms<T>;
}

/// Gauss-Hermite evaluation of the four expectations for any field model.
pub fn quadrature_moments<T: Scalar, M: FieldModel<T> + ?Sized>(
    model: &M,
    s: GaussianState<T>,
    order: usize,
) -> MomentTerms<T> {
    let gh = GaussHermite::new(order);
    quadrature_moments_with(model, s, &gh)
}

pub fn quadrature_moments_with<T: Scalar, M: FieldModel<T> + ?Sized>(
    model: &M,
    s: GaussianState<T>,
    gh: &GaussHermite,
) -> MomentTerms<T> {
    MomentTerms {
        e_mu: gh.expect(s, |x| model.mean(x)),
        e_sigma2: gh.expect(s, |x| model.var(x)),
        e_mu2: gh.expect(s, |x| {
            let m = model.mean(x);
            m * m
        }),
        e_xmu: gh.expect(s, |x| x * model.mean(x)),
    }
}

/// Exact expectations for the squared-exponential posterior.
///
/// With `X ~ N(m, v)` and `k(x, x_i) = alpha exp(-(x - x_i)^2 / (2 l^2))`:
///
/// * `E[k(X, x_i)] = alpha sqrt(l^2/(l^2+v)) exp(-(m - x_i)^2 / (2(l^2+v)))`
/// * `E[X k(X, x_i)] = E[k(X, x_i)] (l^2 m + v x_i) / (l^2 + v)`
/// * `E[k(X, x_i) k(X, x_j)] = alpha^2 exp(-(x_i - x_j)^2 / (4 l^2))
///    sqrt((l^2/2)/(l^2/2+v)) exp(-(m - (x_i+x_j)/2)^2 / (2(l^2/2+v)))`
///
/// and the posterior mean and variance are linear and quadratic forms in the
/// kernel vector.
pub fn closed_form_moments<T: Scalar>(gp: &GpPosterior<T>, s: GaussianState<T>) -> MomentTerms<T> {
    let xs = gp.training().inputs();
    let w = gp.weights();
    let kinv = gp.gram_inverse();
    let alpha = gp.kernel().amplitude;
    let l2 = gp.kernel().lengthscale * gp.kernel().lengthscale;
    let two = T::lit(2.0);
    let (m, v) = (s.mean, s.var);

    let spread = l2 + v;
    let norm1 = alpha * (l2 / spread).sqrt();
    let mut e_mu = T::zero();
    let mut e_xmu = T::zero();
    for (&xi, &wi) in xs.iter().zip(w) {
        let d = m - xi;
        let ek = norm1 * (-(d * d) / (two * spread)).exp();
        e_mu = e_mu + wi * ek;
        e_xmu = e_xmu + wi * ek * (l2 * m + v * xi) / spread;
    }

    let half = l2 / two;
    let spread2 = half + v;
    let norm2 = alpha * alpha * (half / spread2).sqrt();
    let mut e_mu2 = T::zero();
    let mut trace = T::zero();
    for (i, &xi) in xs.iter().enumerate() {
        for (j, &xj) in xs.iter().enumerate() {
            let dij = xi - xj;
            let centre = m - (xi + xj) / two;
            let q = norm2
                * (-(dij * dij) / (T::lit(4.0) * l2)).exp()
                * (-(centre * centre) / (two * spread2)).exp();
            e_mu2 = e_mu2 + w[i] * w[j] * q;
            trace = trace + kinv.get(i, j) * q;
        }
    }
    MomentTerms {
        e_mu,
        e_sigma2: (alpha - trace).max(T::zero()),
        e_mu2: e_mu2.max(T::zero()),
        e_xmu,
    }
}

impl<T: Scalar> MomentProvider<T> for GpPosterior<T> {
    fn moment_terms(&self, s: GaussianState<T>) -> MomentTerms<T> {
        closed_form_moments(self, s)
    }
}

impl<T: Scalar> MomentProvider<T> for LinearEmbedding<T> {
    /// Exact: `mu(x) = -a x + c` is linear, `sigma^2 = beta` is constant.
    fn moment_terms(&self, s: GaussianState<T>) -> MomentTerms<T> {
        let (a, c) = (self.a, self.offset);
        let second = s.var + s.mean * s.mean;
        MomentTerms {
            e_mu: -a * s.mean + c,
            e_sigma2: self.beta,
            e_mu2: a * a * second - T::lit(2.0) * a * c * s.mean + c * c,
            e_xmu: -a * second + c * s.mean,
        }
    }
}

/// A field model paired with quadrature, for kernels without closed forms.
#[derive(Debug, Clone)]
pub struct QuadratureProvider<'a, M> {
    pub model: &'a M,
    pub rule: GaussHermite,
}

impl<'a, M> QuadratureProvider<'a, M> {
    pub fn new(model: &'a M, order: usize) -> Self {
        Self {
            model,
            rule: GaussHermite::new(order),
        }
    }
}

impl<T: Scalar, M: FieldModel<T>> MomentProvider<T> for QuadratureProvider<'_, M> {
    fn moment_terms(&self, s: GaussianState<T>) -> MomentTerms<T> {
        quadrature_moments_with(self.model, s, &self.rule)
    }
}

/// One moment-matching Euler step. Returns the new state and whether a
/// negative variance had to be clamped.
pub fn mm_euler_step_checked<T: Scalar, P: MomentProvider<T> + ?Sized>(
    provider: &P,
    s: GaussianState<T>,
    h: T,
) -> (GaussianState<T>, bool) {
    let t = provider.moment_terms(s);
    let mean = s.mean + h * t.e_mu;
    let var = s.var
        + h * h * (t.e_sigma2 + t.e_mu2 - t.e_mu * t.e_mu)
        + T::lit(2.0) * h * (t.e_xmu - s.mean * t.e_mu);
    if var < T::zero() {
        log::warn!("moment matching produced negative variance {var}; clamping to 0");
        (GaussianState { mean, var: T::zero() }, true)
    } else {
        (GaussianState { mean, var }, false)
    }
}

pub fn mm_euler_step<T: Scalar, P: MomentProvider<T> + ?Sized>(
    provider: &P,
    s: GaussianState<T>,
    h: T,
) -> GaussianState<T> {
    mm_euler_step_checked(provider, s, h).0
}

/// `ceil(horizon/h) + 1` states of iterated [`mm_euler_step`].
pub fn mm_trajectory<T: Scalar, P: MomentProvider<T> + ?Sized>(
    provider: &P,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
) -> Result<TrajectoryDistribution<T>> {
    let n = step_count(horizon, h)?;
    let mut out = TrajectoryDistribution::with_capacity(Method::Mm, h, n + 1);
    let mut s = x0;
    out.push(T::zero(), s);
    for k in 0..n {
        let (next, clamped) = mm_euler_step_checked(provider, s, h);
        out.meta.clamp_events += usize::from(clamped);
        s = next;
        out.push(grid_time(k + 1, h), s);
    }
    Ok(out)
}
