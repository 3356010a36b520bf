//! Closed-form analysis of the linear prototype `x' = -a x + B`,
//! `B ~ N(0, beta)`.
//!
//! Two families of recursions live here. The naive ones propagate `(mean, var)`
//! as if every state were independent of `B`; they converge to step-size
//! dependent fixed points that underestimate the true stationary variance
//! `beta / a^2`. The corrected ones carry `cov(X_n, B)` and recover the exact
//! flow moments.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::state::{grid_time, step_count, GaussianState, Method, TrajectoryDistribution};
use crate::stats::par_accumulate;

/// Distribution of stable linear ODEs `f(x) = -a x + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearModelDist<T> {
    pub a: T,
    pub beta: T,
}

impl<T: Scalar> LinearModelDist<T> {
    pub fn new(a: T, beta: T) -> Result<Self> {
        if !(a > T::zero()) || !a.is_finite() {
            return Err(Error::invalid(format!("decay rate a must be positive, got {a}")));
        }
        if !(beta >= T::zero()) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { a, beta })
    }

    /// `beta / a^2`
    pub fn stationary_var(&self) -> T {
        self.beta / (self.a * self.a)
    }

    /// Exact flow of one realization: `e^{-at} x0 + (b/a)(1 - e^{-at})`.
    pub fn flow(&self, x0: T, b: T, t: T) -> T {
        let decay = (-self.a * t).exp();
        decay * x0 + b / self.a * (T::one() - decay)
    }
}

/// A state together with its covariance with the model intercept `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelatedState<T> {
    pub state: GaussianState<T>,
    pub cov_xb: T,
}

impl<T: Scalar> CorrelatedState<T> {
    /// Initial states are independent of the model.
    pub fn independent(state: GaussianState<T>) -> Self {
        Self {
            state,
            cov_xb: T::zero(),
        }
    }
}

/// Moments of the exact flow at time `t`, assuming `cov(X_0, B) = 0`.
pub fn analytic_moments<T: Scalar>(m: &LinearModelDist<T>, x0: GaussianState<T>, t: T) -> GaussianState<T> {
    let decay = (-m.a * t).exp();
    let rise = T::one() - decay;
    GaussianState {
        mean: decay * x0.mean,
        var: decay * decay * x0.var + m.stationary_var() * rise * rise,
    }
}

pub fn exact_fixed_point_var<T: Scalar>(m: &LinearModelDist<T>) -> T {
    m.stationary_var()
}

/// One explicit Euler step under the independence assumption.
pub fn naive_euler_step<T: Scalar>(m: &LinearModelDist<T>, s: GaussianState<T>, h: T) -> GaussianState<T> {
    let (a, beta) = (m.a, m.beta);
    GaussianState {
        mean: (T::one() - a * h) * s.mean,
        var: s.var + h * h * beta + h * h * a * a * s.var - T::lit(2.0) * h * a * s.var,
    }
}

/// `(beta/a^2) * ah / (2 - ah)`; only meaningful for `0 < ah < 2`.
pub fn naive_euler_fixed_point<T: Scalar>(m: &LinearModelDist<T>, h: T) -> Result<T> {
    let ah = m.a * h;
    if !(ah > T::zero()) || !(ah < T::lit(2.0)) {
        return Err(Error::InvalidStep { ah: ah.to_f64_lossy() });
    }
    Ok(m.stationary_var() * ah / (T::lit(2.0) - ah))
}

/// One application of the exact flow over `h`, restarting from an
/// independent state each time.
pub fn naive_iter_flow_step<T: Scalar>(m: &LinearModelDist<T>, s: GaussianState<T>, h: T) -> GaussianState<T> {
    analytic_moments(m, s, h)
}

/// `(beta/a^2) tanh(ah/2)`
pub fn iter_flow_fixed_point<T: Scalar>(m: &LinearModelDist<T>, h: T) -> T {
    m.stationary_var() * (m.a * h / T::lit(2.0)).tanh()
}

/// `cov(X_n, B)` after `n` exact flow steps of size `h`.
pub fn cov_xb_flow<T: Scalar>(m: &LinearModelDist<T>, h: T, n: usize) -> T {
    let t = T::from_usize_lossy(n) * h;
    m.beta / m.a * (T::one() - (-m.a * t).exp())
}

/// Flow step that adds the state-model covariance term; `n` is the number
/// of steps already taken.
pub fn corrected_flow_step<T: Scalar>(m: &LinearModelDist<T>, s: GaussianState<T>, h: T, n: usize) -> GaussianState<T> {
    let naive = naive_iter_flow_step(m, s, h);
    let decay = (-m.a * h).exp();
    let history = T::one() - (-m.a * h * T::from_usize_lossy(n)).exp();
    let extra = T::lit(2.0) * m.stationary_var() * (T::one() - decay) * decay * history;
    GaussianState {
        mean: naive.mean,
        var: naive.var + extra,
    }
}

/// Explicit Euler step carrying `cov(X_n, B)`.
pub fn corrected_euler_step<T: Scalar>(m: &LinearModelDist<T>, cs: CorrelatedState<T>, h: T) -> CorrelatedState<T> {
    let amp = T::one() - m.a * h;
    let s = cs.state;
    CorrelatedState {
        state: GaussianState {
            mean: amp * s.mean,
            var: amp * amp * s.var + h * h * m.beta + T::lit(2.0) * h * amp * cs.cov_xb,
        },
        cov_xb: amp * cs.cov_xb + h * m.beta,
    }
}

/// Telescope-sum form `h sum_{i<n} (1-ah)^{n-1-i} beta` of `cov(X_n, B)`
/// under Euler steps.
pub fn cov_xb_euler_closed<T: Scalar>(m: &LinearModelDist<T>, h: T, n: usize) -> T {
    let amp = T::one() - m.a * h;
    let mut sum = T::zero();
    let mut power = T::one();
    for _ in 0..n {
        sum = sum + power * m.beta;
        power = power * amp;
    }
    h * sum
}

fn trajectory<T: Scalar>(
    method: Method,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
    mut step: impl FnMut(usize, GaussianState<T>) -> GaussianState<T>,
) -> Result<TrajectoryDistribution<T>> {
    let n = step_count(horizon, h)?;
    let mut out = TrajectoryDistribution::with_capacity(method, h, n + 1);
    let mut s = x0;
    out.push(T::zero(), s);
    for k in 0..n {
        s = step(k, s);
        out.push(grid_time(k + 1, h), s);
    }
    Ok(out)
}

pub fn analytic_trajectory<T: Scalar>(
    m: &LinearModelDist<T>,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
) -> Result<TrajectoryDistribution<T>> {
    trajectory(Method::Analytic, x0, h, horizon, |k, _| {
        analytic_moments(m, x0, grid_time(k + 1, h))
    })
}

pub fn naive_euler_trajectory<T: Scalar>(
    m: &LinearModelDist<T>,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
) -> Result<TrajectoryDistribution<T>> {
    trajectory(Method::NaiveEuler, x0, h, horizon, |_, s| naive_euler_step(m, s, h))
}

pub fn naive_flow_trajectory<T: Scalar>(
    m: &LinearModelDist<T>,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
) -> Result<TrajectoryDistribution<T>> {
    trajectory(Method::NaiveFlow, x0, h, horizon, |_, s| naive_iter_flow_step(m, s, h))
}

pub fn corrected_flow_trajectory<T: Scalar>(
    m: &LinearModelDist<T>,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
) -> Result<TrajectoryDistribution<T>> {
    trajectory(Method::CorrectedFlow, x0, h, horizon, |k, s| corrected_flow_step(m, s, h, k))
}

pub fn corrected_euler_trajectory<T: Scalar>(
    m: &LinearModelDist<T>,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
) -> Result<TrajectoryDistribution<T>> {
    let mut cs = CorrelatedState::independent(x0);
    trajectory(Method::CorrectedEuler, x0, h, horizon, |_, _| {
        cs = corrected_euler_step(m, cs, h);
        cs.state
    })
}

/// Empirical trajectory moments of `n_samples` exact-flow realizations with
/// `x0 ~ N(x0.mean, x0.var)` and `b ~ N(0, beta)`.
pub fn sample_prototype<T: Scalar>(
    m: &LinearModelDist<T>,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
    n_samples: usize,
    seed: u64,
) -> Result<TrajectoryDistribution<T>> {
    if n_samples < 2 {
        return Err(Error::invalid("sample_prototype needs n_samples >= 2"));
    }
    let n = step_count(horizon, h)?;
    let times: Vec<T> = (0..=n).map(|k| grid_time(k, h)).collect();
    let acc = par_accumulate::<T, Error, _>(n_samples, n + 1, |i| {
        let mut r = rng::stream(seed, &[i as u64]);
        let x = rng::normal(&mut r, x0.mean, x0.var);
        let b = rng::normal(&mut r, T::zero(), m.beta);
        Ok(times.iter().map(|&t| m.flow(x, b, t)).collect())
    })?;
    Ok(TrajectoryDistribution {
        times,
        means: acc.means().to_vec(),
        vars: acc.variances(),
        meta: crate::state::TrajectoryMeta {
            method: Method::Mc,
            step: h,
            samples: n_samples,
            clamp_events: 0,
        },
    })
}

/// Sampling with restarts: every `segment_len` time units the ensemble is
/// replaced by fresh independent draws `x ~ N(empirical mean, empirical var)`,
/// `b ~ N(0, beta)`, discarding the accumulated state-model correlation.
/// Output is on the grid `k * h`; `segment_len` must be a multiple of `h`.
pub fn restart_sampling_demo<T: Scalar>(
    m: &LinearModelDist<T>,
    x0: GaussianState<T>,
    segment_len: T,
    n_segments: usize,
    h: T,
    n_samples: usize,
    seed: u64,
) -> Result<TrajectoryDistribution<T>> {
    if n_segments == 0 {
        return Err(Error::invalid("restart demo needs n_segments >= 1"));
    }
    if n_samples < 2 {
        return Err(Error::invalid("restart demo needs n_samples >= 2"));
    }
    let per_segment = step_count(segment_len, h)?;
    let local: Vec<T> = (0..=per_segment).map(|k| grid_time(k, h)).collect();
    let mut out = TrajectoryDistribution::with_capacity(Method::McRestart, h, n_segments * per_segment + 1);
    out.meta.samples = n_samples;
    let mut start = x0;
    for seg in 0..n_segments {
        let acc = par_accumulate::<T, Error, _>(n_samples, per_segment + 1, |i| {
            let mut r = rng::stream(seed, &[seg as u64, i as u64]);
            let x = rng::normal(&mut r, start.mean, start.var);
            let b = rng::normal(&mut r, T::zero(), m.beta);
            Ok(local.iter().map(|&t| m.flow(x, b, t)).collect())
        })?;
        let vars = acc.variances();
        let skip = if seg == 0 { 0 } else { 1 };
        for k in skip..=per_segment {
            out.push(
                grid_time(seg * per_segment + k, h),
                GaussianState {
                    mean: acc.means()[k],
                    var: vars[k],
                },
            );
        }
        start = GaussianState {
            mean: acc.means()[per_segment],
            var: vars[per_segment],
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> LinearModelDist<f64> {
        LinearModelDist::new(1.0, 1.0).unwrap()
    }

    fn iterate_to_fixed_point(mut step: impl FnMut(f64) -> f64) -> f64 {
        let mut v = 0.0;
        for _ in 0..1_000_000 {
            let next = step(v);
            if (next - v).abs() < 1e-15 {
                return next;
            }
            v = next;
        }
        panic!("no convergence");
    }

    #[test]
    fn model_validation() {
        assert!(LinearModelDist::new(0.0, 1.0).is_err());
        assert!(LinearModelDist::new(1.0, -0.1).is_err());
    }

    #[test]
    fn analytic_limits() {
        let m = unit();
        let x0 = GaussianState::new(1.0, 0.25).unwrap();
        assert_eq!(analytic_moments(&m, x0, 0.0), x0);
        let far = analytic_moments(&m, x0, 60.0);
        assert!(far.mean.abs() < 1e-20);
        assert!((far.var - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_fixed_point_values() {
        assert_eq!(exact_fixed_point_var(&unit()), 1.0);
        assert_eq!(exact_fixed_point_var(&LinearModelDist::new(1.0, 0.0).unwrap()), 0.0);
        let m = LinearModelDist::new(2.0f64, 1.0).unwrap();
        assert_eq!(exact_fixed_point_var(&m), 0.25);
        // the corrected Euler recursion converges towards it as h -> 0
        let h = 1e-3;
        let mut cs = CorrelatedState::independent(GaussianState::point(0.0));
        for _ in 0..20_000 {
            cs = corrected_euler_step(&m, cs, h);
        }
        assert!((cs.state.var - 0.25).abs() < 1e-3);
    }

    #[test]
    fn naive_euler_fixed_point_is_invariant() {
        let m = unit();
        for h in [0.05, 0.1, 0.5, 1.5] {
            let fp = naive_euler_fixed_point(&m, h).unwrap();
            let s = naive_euler_step(&m, GaussianState::new(0.0, fp).unwrap(), h);
            assert!((s.var - fp).abs() < 1e-14 * (1.0 + fp));
        }
        let iterated = iterate_to_fixed_point(|v| naive_euler_step(&m, GaussianState::point(0.0).with_var(v), 0.5).var);
        assert!((iterated - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn naive_euler_fixed_point_domain() {
        let m = unit();
        assert!(matches!(naive_euler_fixed_point(&m, 2.0), Err(Error::InvalidStep { .. })));
        assert!(matches!(naive_euler_fixed_point(&m, 3.0), Err(Error::InvalidStep { .. })));
        assert!(naive_euler_fixed_point(&m, 2.0 - 1e-9).unwrap() > 1e8);
        let tiny = naive_euler_fixed_point(&m, 1e-6).unwrap();
        assert!((tiny - 0.5e-6).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_stays_deterministic() {
        let m = LinearModelDist::new(1.0, 0.0).unwrap();
        let mut s = GaussianState::point(1.0);
        for _ in 0..10 {
            s = naive_euler_step(&m, s, 0.1);
        }
        assert_eq!(s.var, 0.0);
        let x0 = GaussianState::new(2.0, 0.3).unwrap();
        let traj = corrected_euler_trajectory(&m, x0, 0.1, 1.0).unwrap();
        for (n, v) in traj.vars.iter().enumerate() {
            assert!((v - 0.9f64.powi(2 * n as i32) * 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn iter_flow_fixed_point_is_invariant() {
        let m = LinearModelDist::new(1.3f64, 0.7).unwrap();
        let h = 0.4;
        let fp = iter_flow_fixed_point(&m, h);
        let s = naive_iter_flow_step(&m, GaussianState::new(0.0, fp).unwrap(), h);
        assert!((s.var - fp).abs() < 1e-15);
    }

    #[test]
    fn naive_flow_breaks_semigroup_by_missing_covariance() {
        let m = unit();
        let h = 0.3;
        let x0 = GaussianState::new(0.5, 0.2).unwrap();
        let two = naive_iter_flow_step(&m, naive_iter_flow_step(&m, x0, h), h);
        let exact = analytic_moments(&m, x0, 2.0 * h);
        let e = (-h).exp();
        let gap = 2.0 * (1.0 - e) * e * (1.0 - e);
        assert!((exact.var - two.var - gap).abs() < 1e-15);
        assert!((naive_iter_flow_step(&m, x0, h).var - analytic_moments(&m, x0, h).var).abs() < 1e-16);
    }

    #[test]
    fn cov_xb_flow_limits() {
        let m = unit();
        assert_eq!(cov_xb_flow(&m, 0.5, 0), 0.0);
        assert!((cov_xb_flow(&m, 0.5, 1000) - 1.0).abs() < 1e-15);
        assert!((cov_xb_flow(&m, 0.5, 2) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn corrected_flow_restores_semigroup() {
        let m = unit();
        let x0 = GaussianState::new(1.0, 0.25).unwrap();
        let mut s = x0;
        for n in 0..100 {
            s = corrected_flow_step(&m, s, 0.1, n);
        }
        let exact = analytic_moments(&m, x0, 10.0);
        assert!((s.var - exact.var).abs() <= 1e-12);
        assert_eq!(corrected_flow_step(&m, x0, 0.1, 0), naive_iter_flow_step(&m, x0, 0.1));

        // one big step vs two half steps
        let big = corrected_flow_step(&m, x0, 0.8, 0);
        let half = corrected_flow_step(&m, corrected_flow_step(&m, x0, 0.4, 0), 0.4, 1);
        assert!((big.var - half.var).abs() < 1e-15);
        assert!((big.mean - half.mean).abs() < 1e-15);
    }

    #[test]
    fn corrected_euler_first_step_matches_naive() {
        let m = LinearModelDist::new(0.8f64, 1.4).unwrap();
        let x0 = GaussianState::new(0.3, 0.6).unwrap();
        let c = corrected_euler_step(&m, CorrelatedState::independent(x0), 0.2);
        let n = naive_euler_step(&m, x0, 0.2);
        assert!((c.state.var - n.var).abs() < 1e-15);
        assert_eq!(c.state.mean, n.mean);
    }

    #[test]
    fn corrected_euler_cov_matches_telescope_sum() {
        let m = LinearModelDist::new(1.1f64, 0.9).unwrap();
        let h = 0.07;
        let mut cs = CorrelatedState::independent(GaussianState::point(1.0));
        for n in 0..=1000 {
            let closed = cov_xb_euler_closed(&m, h, n);
            assert!((cs.cov_xb - closed).abs() <= 1e-12, "n={n}");
            cs = corrected_euler_step(&m, cs, h);
        }
    }

    #[test]
    fn corrected_euler_fixed_point_is_exact() {
        let m = unit();
        let mut cs = CorrelatedState::independent(GaussianState::point(0.0));
        for _ in 0..5000 {
            cs = corrected_euler_step(&m, cs, 0.1);
        }
        assert!((cs.state.var - 1.0).abs() <= 0.06);
    }

    #[test]
    fn corrected_euler_error_is_first_order() {
        let m = unit();
        let x0 = GaussianState::new(1.0, 0.25).unwrap();
        let err = |h: f64| {
            let traj = corrected_euler_trajectory(&m, x0, h, 5.0).unwrap();
            (traj.last().unwrap().var - analytic_moments(&m, x0, 5.0).var).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn restart_demo_rejects_bad_args() {
        let m = unit();
        let x0 = GaussianState::point(1.0);
        assert!(restart_sampling_demo(&m, x0, 1.0, 0, 0.1, 100, 1).is_err());
        assert!(sample_prototype(&m, x0, 0.1, 1.0, 1, 1).is_err());
    }

    impl GaussianState<f64> {
        fn with_var(mut self, v: f64) -> Self {
            self.var = v;
            self
        }
    }
}
