//! Gaussian states and the trajectory record every propagator emits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean and variance of a scalar state random variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianState<T> {
    pub mean: T,
    pub var: T,
}

impl<T: Scalar> GaussianState<T> {
    pub fn new(mean: T, var: T) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() || var < T::zero() {
            return Err(Error::invalid(format!(
                "gaussian state needs finite mean and var >= 0, got ({mean}, {var})"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn point(mean: T) -> Self {
        Self {
            mean,
            var: T::zero(),
        }
    }

    pub fn std(&self) -> T {
        self.var.sqrt()
    }
}

/// How a trajectory distribution was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    NaiveEuler,
    NaiveFlow,
    CorrectedEuler,
    CorrectedFlow,
    Mm,
    PullFull,
    PullNone,
    PullWindow,
    PullThreshold,
    Mc,
    McRestart,
    MeanOde,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Analytic => "analytic",
            Method::NaiveEuler => "naive_euler",
            Method::NaiveFlow => "naive_flow",
            Method::CorrectedEuler => "corrected_euler",
            Method::CorrectedFlow => "corrected_flow",
            Method::Mm => "mm",
            Method::PullFull => "pull_full",
            Method::PullNone => "pull_none",
            Method::PullWindow => "pull_window",
            Method::PullThreshold => "pull_threshold",
            Method::Mc => "mc",
            Method::McRestart => "mc_restart",
            Method::MeanOde => "mean_ode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMeta<T> {
    pub method: Method,
    pub step: T,
    /// Number of sampled trajectories; 0 for analytic and approximate methods.
    pub samples: usize,
    /// Number of steps where a negative variance was clamped to zero.
    pub clamp_events: usize,
}

/// Per-time mean and variance of a trajectory distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryDistribution<T> {
    pub times: Vec<T>,
    pub means: Vec<T>,
    pub vars: Vec<T>,
    pub meta: TrajectoryMeta<T>,
}

impl<T: Scalar> TrajectoryDistribution<T> {
    pub(crate) fn with_capacity(method: Method, step: T, cap: usize) -> Self {
        Self {
            times: Vec::with_capacity(cap),
            means: Vec::with_capacity(cap),
            vars: Vec::with_capacity(cap),
            meta: TrajectoryMeta {
                method,
                step,
                samples: 0,
                clamp_events: 0,
            },
        }
    }

    pub(crate) fn push(&mut self, t: T, s: GaussianState<T>) {
        self.times.push(t);
        self.means.push(s.mean);
        self.vars.push(s.var);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> GaussianState<T> {
        GaussianState {
            mean: self.means[i],
            var: self.vars[i],
        }
    }

    pub fn last(&self) -> Option<GaussianState<T>> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn stds(&self) -> Vec<T> {
        self.vars.iter().map(|v| v.sqrt()).collect()
    }

    /// Index of the sample whose time equals `t` up to a relative 1e-9.
    pub fn index_of_time(&self, t: T) -> Option<usize> {
        let tol = T::lit(1e-9) * (T::one() + t.abs());
        let i = self.times.partition_point(|&x| x < t - tol);
        (i < self.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }
}

/// Number of fixed steps of size `h` needed to cover `[0, horizon]`:
/// `ceil(horizon / h)`, treating ratios within 1e-9 of an integer as exact.
pub fn step_count<T: Scalar>(horizon: T, h: T) -> Result<usize> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if !(horizon > T::zero()) || !horizon.is_finite() {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    let ratio = (horizon / h).to_f64_lossy();
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok(n as usize)
}

/// Time of grid index `n`, computed as `n * h` rather than by accumulation.
#[inline]
pub fn grid_time<T: Scalar>(n: usize, h: T) -> T {
    T::from_usize_lossy(n) * h
}
