//! PULL explicit Euler: propagating uncertainty through local linearization.
//!
//! Around the current mean `nu_n` the field is replaced by the linear model
//! `f_n(x) = a_n x + B_n` with deterministic slope `a_n = mu'(nu_n)` and
//! Gaussian intercept `B_n ~ N(mu(nu_n) - a_n nu_n, sigma^2(nu_n))`. One Euler
//! step on that piece gives
//!
//! ```text
//! nu_{n+1}    = nu_n + h mu(nu_n)
//! Sigma_{n+1} = (1 + a_n h)^2 Sigma_n + h^2 sigma^2(nu_n) + 2 h (1 + a_n h) cov(X_n, B_n)
//! cov(X_n, B_n) = h sum_{i<n} prod_{j=i+1}^{n-1} (1 + a_j h) cov(f(nu_i), f(nu_n))
//! ```
//!
//! where the last line is the telescoped state-model covariance. The
//! covariance between past and present intercepts is the posterior
//! cross-covariance of the field at the two linearization centres.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::FieldModel;
use crate::scalar::Scalar;
use crate::state::{grid_time, step_count, GaussianState, Method, TrajectoryDistribution};

/// Local linearization `f(x) ~ slope x + B`, `B ~ N(intercept_mean, intercept_var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Linearization<T> {
    pub slope: T,
    pub intercept_mean: T,
    pub intercept_var: T,
}

pub fn linearize<T: Scalar, M: FieldModel<T> + ?Sized>(model: &M, nu: T) -> Linearization<T> {
    let slope = model.mean_deriv(nu);
    Linearization {
        slope,
        intercept_mean: model.mean(nu) - slope * nu,
        intercept_var: model.var(nu),
    }
}

/// Which past steps enter the covariance sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum TruncationPolicy<T> {
    /// Every past step.
    Full,
    /// Only the most recent `W` steps.
    Window(usize),
    /// Steps whose amplification product satisfies `|prod| >= eps`.
    ProductThreshold(T),
    /// No past steps: reduces to moment matching on the linearized model.
    NoneHistory,
}

/// Number of steps up to which [`TruncationPolicy::default_for`] keeps the
/// full history.
pub const FULL_HISTORY_LIMIT: usize = 2000;

impl<T: Scalar> TruncationPolicy<T> {
    pub fn default_for(steps: usize) -> Self {
        if steps <= FULL_HISTORY_LIMIT {
            TruncationPolicy::Full
        } else {
            TruncationPolicy::ProductThreshold(T::lit(1e-10))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TruncationPolicy::ProductThreshold(eps) if !(eps > T::zero()) => Err(Error::invalid(
                format!("product threshold must be positive, got {eps}"),
            )),
            _ => Ok(()),
        }
    }

    fn method(&self) -> Method {
        match self {
            TruncationPolicy::Full => Method::PullFull,
            TruncationPolicy::Window(0) | TruncationPolicy::NoneHistory => Method::PullNone,
            TruncationPolicy::Window(_) => Method::PullWindow,
            TruncationPolicy::ProductThreshold(_) => Method::PullThreshold,
        }
    }
}

/// Linearization centres, slopes and cached amplification products of all
/// steps taken so far.
///
/// With `n` entries, `suffix_products[i] = prod_{j=i+1}^{n-1} (1 + a_j h)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PullHistory<T> {
    centers: Vec<T>,
    slopes: Vec<T>,
    suffix_products: Vec<T>,
}

impl<T: Scalar> PullHistory<T> {
    pub fn new() -> Self {
        Self {
            centers: Vec::new(),
            slopes: Vec::new(),
            suffix_products: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    pub fn suffix_products(&self) -> &[T] {
        &self.suffix_products
    }

    /// Appends step `n` and folds its factor into every cached product.
    pub fn push(&mut self, center: T, slope: T, h: T) {
        let factor = T::one() + slope * h;
        self.suffix_products.iter_mut().for_each(|p| *p = *p * factor);
        self.centers.push(center);
        self.slopes.push(slope);
        self.suffix_products.push(T::one());
    }

    /// Products recomputed directly from the stored slopes.
    pub fn recompute_suffix_products(&self, h: T) -> Vec<T> {
        let n = self.len();
        let mut out = vec![T::one(); n];
        let mut acc = T::one();
        for i in (0..n).rev() {
            out[i] = acc;
            acc = acc * (T::one() + self.slopes[i] * h);
        }
        out
    }

    /// Largest relative deviation between the cache and a direct recomputation.
    pub fn suffix_product_drift(&self, h: T) -> T {
        self.recompute_suffix_products(h)
            .iter()
            .zip(&self.suffix_products)
            .map(|(&direct, &cached)| (direct - cached).abs() / direct.abs().max(T::min_positive_value()))
            .fold(T::zero(), T::max)
    }

    fn kept_range(&self, policy: &TruncationPolicy<T>) -> std::ops::Range<usize> {
        let n = self.len();
        match *policy {
            TruncationPolicy::Full | TruncationPolicy::ProductThreshold(_) => 0..n,
            TruncationPolicy::Window(w) => n.saturating_sub(w)..n,
            TruncationPolicy::NoneHistory => n..n,
        }
    }

    /// `cov(X_n, B_n)` for the current centre `nu`, and the number of terms used.
    pub fn state_model_cov<M: FieldModel<T> + ?Sized>(
        &self,
        model: &M,
        nu: T,
        h: T,
        policy: &TruncationPolicy<T>,
    ) -> (T, usize) {
        let mut sum = T::zero();
        let mut kept = 0;
        for i in self.kept_range(policy) {
            let p = self.suffix_products[i];
            if let TruncationPolicy::ProductThreshold(eps) = *policy {
                if p.abs() < eps {
                    continue;
                }
            }
            sum = sum + p * model.cov(self.centers[i], nu);
            kept += 1;
        }
        (h * sum, kept)
    }
}

/// Diagnostics of a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo<T> {
    pub linearization: Linearization<T>,
    pub cov_xb: T,
    pub kept_terms: usize,
    pub clamped: bool,
}

/// Advances `s` by one step and records the step in `hist`.
pub fn pull_step_in_place<T: Scalar, M: FieldModel<T> + ?Sized>(
    model: &M,
    s: GaussianState<T>,
    hist: &mut PullHistory<T>,
    h: T,
    policy: &TruncationPolicy<T>,
) -> (GaussianState<T>, StepInfo<T>) {
    let nu = s.mean;
    let lin = linearize(model, nu);
    let (cov_xb, kept_terms) = hist.state_model_cov(model, nu, h, policy);
    let amp = T::one() + lin.slope * h;
    let mean = nu + h * model.mean(nu);
    let mut var = amp * amp * s.var + h * h * lin.intercept_var + T::lit(2.0) * h * amp * cov_xb;
    let clamped = var < T::zero();
    if clamped {
        log::warn!("PULL step at nu = {nu} produced negative variance {var}; clamping to 0");
        var = T::zero();
    }
    hist.push(nu, lin.slope, h);
    (
        GaussianState { mean, var },
        StepInfo {
            linearization: lin,
            cov_xb,
            kept_terms,
            clamped,
        },
    )
}

pub fn pull_step<T: Scalar, M: FieldModel<T> + ?Sized>(
    model: &M,
    s: GaussianState<T>,
    mut hist: PullHistory<T>,
    h: T,
    policy: &TruncationPolicy<T>,
) -> (GaussianState<T>, PullHistory<T>) {
    let (next, _) = pull_step_in_place(model, s, &mut hist, h, policy);
    (next, hist)
}

/// `ceil(horizon/h) + 1` states of PULL explicit Euler.
pub fn pull_trajectory<T: Scalar, M: FieldModel<T> + ?Sized>(
    model: &M,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
    policy: TruncationPolicy<T>,
) -> Result<TrajectoryDistribution<T>> {
    policy.validate()?;
    let n = step_count(horizon, h)?;
    let mut out = TrajectoryDistribution::with_capacity(policy.method(), h, n + 1);
    let mut hist = PullHistory::new();
    let mut s = x0;
    out.push(T::zero(), s);
    for k in 0..n {
        let (next, info) = pull_step_in_place(model, s, &mut hist, h, &policy);
        out.meta.clamp_events += usize::from(info.clamped);
        s = next;
        out.push(grid_time(k + 1, h), s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationRow<T> {
    pub epsilon: T,
    pub terminal_var: T,
    pub abs_deviation: T,
    pub rel_deviation: T,
}

/// Terminal-variance deviation of product-threshold truncation from the
/// full-history run, one row per threshold.
pub fn truncation_error_report<T: Scalar, M: FieldModel<T> + ?Sized>(
    model: &M,
    x0: GaussianState<T>,
    h: T,
    horizon: T,
    epsilons: &[T],
) -> Result<Vec<TruncationRow<T>>> {
    let full = pull_trajectory(model, x0, h, horizon, TruncationPolicy::Full)?;
    let reference = full.last().map(|s| s.var).unwrap_or_else(T::zero);
    epsilons
        .iter()
        .map(|&eps| {
            let run = pull_trajectory(model, x0, h, horizon, TruncationPolicy::ProductThreshold(eps))?;
            let terminal_var = run.last().map(|s| s.var).unwrap_or_else(T::zero);
            let abs_deviation = (terminal_var - reference).abs();
            Ok(TruncationRow {
                epsilon: eps,
                terminal_var,
                abs_deviation,
                rel_deviation: abs_deviation / reference.abs().max(T::min_positive_value()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpPosterior, KernelConfig};
    use crate::model::LinearEmbedding;
    use crate::moments::mm_euler_step;

    #[test]
    fn linearizing_a_linear_model_is_identity() {
        let emb = LinearEmbedding::new(1.3f64, 0.4);
        for nu in [-2.0, 0.0, 0.7] {
            let l = linearize(&emb, nu);
            assert_eq!(l.slope, -1.3);
            assert!(l.intercept_mean.abs() < 1e-15);
            assert_eq!(l.intercept_var, 0.4);
        }
    }

    #[test]
    fn prior_linearization() {
        let gp = GpPosterior::prior(KernelConfig::new(1.0, 2.0).unwrap()).unwrap();
        let l = linearize(&gp, 0.3);
        assert_eq!((l.slope, l.intercept_mean, l.intercept_var), (0.0, 0.0, 2.0));
    }

    #[test]
    fn empty_history_step_is_moment_matching_on_linearized_model() {
        let gp = GpPosterior::prior(KernelConfig::new(1.0, 1.0).unwrap()).unwrap();
        let s = GaussianState::new(0.4f64, 0.02).unwrap();
        let (pull, hist) = pull_step(&gp, s, PullHistory::new(), 0.1, &TruncationPolicy::Full);
        let lin = linearize(&gp, 0.4);
        let local = LinearEmbedding::with_offset(-lin.slope, lin.intercept_mean, lin.intercept_var);
        let mm = mm_euler_step(&local, s, 0.1);
        assert!((pull.mean - mm.mean).abs() < 1e-15);
        assert!((pull.var - mm.var).abs() < 1e-15);
        assert_eq!(hist.len(), 1);
    }

    #[test]
    fn history_push_updates_products() {
        let mut hist = PullHistory::new();
        let h = 0.1f64;
        hist.push(0.0, -1.0, h);
        hist.push(0.1, -2.0, h);
        hist.push(0.2, 0.5, h);
        let p = hist.suffix_products();
        assert!((p[0] - 0.8 * 1.05).abs() < 1e-15);
        assert!((p[1] - 1.05).abs() < 1e-15);
        assert_eq!(p[2], 1.0);
        assert!(hist.suffix_product_drift(h) < 1e-15);
    }

    #[test]
    fn window_zero_equals_none_history() {
        let emb = LinearEmbedding::new(0.9, 0.3);
        let x0 = GaussianState::new(1.0, 0.1).unwrap();
        let a = pull_trajectory(&emb, x0, 0.1, 3.0, TruncationPolicy::Window(0)).unwrap();
        let b = pull_trajectory(&emb, x0, 0.1, 3.0, TruncationPolicy::NoneHistory).unwrap();
        assert_eq!(a.vars, b.vars);
        assert_eq!(a.means, b.means);
    }

    #[test]
    fn wide_window_equals_full() {
        let emb = LinearEmbedding::new(0.9, 0.3);
        let x0 = GaussianState::new(1.0, 0.1).unwrap();
        let a = pull_trajectory(&emb, x0, 0.1, 3.0, TruncationPolicy::Window(30)).unwrap();
        let b = pull_trajectory(&emb, x0, 0.1, 3.0, TruncationPolicy::Full).unwrap();
        assert_eq!(a.vars, b.vars);
    }

    #[test]
    fn invalid_threshold_rejected() {
        let emb = LinearEmbedding::new(1.0, 1.0);
        let x0 = GaussianState::point(0.0);
        assert!(pull_trajectory(&emb, x0, 0.1, 1.0, TruncationPolicy::ProductThreshold(0.0)).is_err());
    }

    #[test]
    fn default_policy_switches_on_length() {
        assert_eq!(TruncationPolicy::<f64>::default_for(2000), TruncationPolicy::Full);
        assert_eq!(
            TruncationPolicy::<f64>::default_for(2001),
            TruncationPolicy::ProductThreshold(1e-10)
        );
    }
}
