//! One-dimensional Gaussian Process regression with the squared-exponential
//! kernel.
//!
//! The prior mean is zero. Conditioning factorizes `K + σ_n² I` once and
//! caches the weight vector, so mean queries cost O(N) and covariance queries
//! O(N²).

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Jitter, SquareMatrix};
use crate::model::FieldModel;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelConfig<T> {
    pub lengthscale: T,
    pub amplitude: T,
}

impl<T: Scalar> KernelConfig<T> {
    pub fn new(lengthscale: T, amplitude: T) -> Result<Self> {
        let cfg = Self {
            lengthscale,
            amplitude,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > T::zero()) || !self.lengthscale.is_finite() {
            return Err(Error::invalid(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.amplitude > T::zero()) || !self.amplitude.is_finite() {
            return Err(Error::invalid(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    /// `amplitude * exp(-(x - xp)^2 / (2 lengthscale^2))`
    #[inline]
    pub fn eval(&self, x: T, xp: T) -> T {
        let d = x - xp;
        self.amplitude * (-(d * d) / (T::lit(2.0) * self.lengthscale * self.lengthscale)).exp()
    }

    /// Partial derivative of [`eval`](Self::eval) in its first argument.
    #[inline]
    pub fn deriv_x(&self, x: T, xp: T) -> T {
        -((x - xp) / (self.lengthscale * self.lengthscale)) * self.eval(x, xp)
    }
}

impl<T: Scalar> Default for KernelConfig<T> {
    fn default() -> Self {
        Self {
            lengthscale: T::one(),
            amplitude: T::one(),
        }
    }
}

pub fn kernel_eval<T: Scalar>(cfg: &KernelConfig<T>, x: T, xp: T) -> T {
    cfg.eval(x, xp)
}

pub fn kernel_deriv_x<T: Scalar>(cfg: &KernelConfig<T>, x: T, xp: T) -> T {
    cfg.deriv_x(x, xp)
}

/// Observations `y^i = f(x^i) + eps^i` with `eps^i ~ N(0, noise_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    inputs: Vec<T>,
    outputs: Vec<T>,
    noise_var: T,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(inputs: Vec<T>, outputs: Vec<T>, noise_var: T) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::invalid(format!(
                "training inputs ({}) and outputs ({}) differ in length",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.iter().chain(&outputs).any(|v| !v.is_finite()) {
            return Err(Error::invalid("training data must be finite"));
        }
        if !(noise_var >= T::zero()) || !noise_var.is_finite() {
            return Err(Error::invalid(format!(
                "noise variance must be >= 0, got {noise_var}"
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            noise_var,
        })
    }

    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            outputs: Vec::new(),
            noise_var: T::zero(),
        }
    }

    /// Reads a two-column CSV with header `x,y`.
    pub fn from_csv(path: impl AsRef<Path>, noise_var: T) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())
            .map_err(|e| Error::invalid(format!("reading {}: {e}", path.as_ref().display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::invalid(format!("csv header: {e}")))?
            .clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
            return Err(Error::invalid(format!(
                "training csv must have header `x,y`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (line, record) in reader.deserialize::<(f64, f64)>().enumerate() {
            let (x, y) =
                record.map_err(|e| Error::invalid(format!("csv row {}: {e}", line + 2)))?;
            xs.push(T::lit(x));
            ys.push(T::lit(y));
        }
        Self::new(xs, ys, noise_var)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[T] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[T] {
        &self.outputs
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }
}

/// A GP conditioned on a [`TrainingSet`]. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpPosterior<T> {
    training: TrainingSet<T>,
    kernel: KernelConfig<T>,
    chol: Cholesky<T>,
    weights: Vec<T>,
    gram_inverse: SquareMatrix<T>,
}

pub fn condition<T: Scalar>(training: TrainingSet<T>, kernel: KernelConfig<T>) -> Result<GpPosterior<T>> {
    GpPosterior::condition(training, kernel)
}

impl<T: Scalar> GpPosterior<T> {
    /// Conditions with the standard jitter schedule.
    pub fn condition(training: TrainingSet<T>, kernel: KernelConfig<T>) -> Result<Self> {
        let jitter = Jitter::standard(kernel.amplitude);
        Self::condition_with_jitter(training, kernel, jitter)
    }

    pub fn condition_with_jitter(
        training: TrainingSet<T>,
        kernel: KernelConfig<T>,
        jitter: Jitter<T>,
    ) -> Result<Self> {
        kernel.validate()?;
        let xs = training.inputs();
        let n = xs.len();
        let gram = SquareMatrix::from_fn(n, |i, j| {
            let k = kernel.eval(xs[i], xs[j]);
            if i == j {
                k + training.noise_var()
            } else {
                k
            }
        });
        let chol = Cholesky::factor(&gram, jitter)?;
        let weights = chol.solve(training.outputs());
        let gram_inverse = chol.inverse();
        Ok(Self {
            training,
            kernel,
            chol,
            weights,
            gram_inverse,
        })
    }

    /// The unconditioned prior.
    pub fn prior(kernel: KernelConfig<T>) -> Result<Self> {
        Self::condition_with_jitter(TrainingSet::empty(), kernel, Jitter::none())
    }

    pub fn training(&self) -> &TrainingSet<T> {
        &self.training
    }

    pub fn kernel(&self) -> &KernelConfig<T> {
        &self.kernel
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `(K + σ_n² I + jitter I)^{-1}`.
    pub fn gram_inverse(&self) -> &SquareMatrix<T> {
        &self.gram_inverse
    }

    pub fn jitter(&self) -> T {
        self.chol.jitter()
    }

    fn cross_kernel(&self, x: T) -> Vec<T> {
        self.training
            .inputs()
            .iter()
            .map(|&xi| self.kernel.eval(x, xi))
            .collect()
    }

    /// `L^{-1} k(x, X)`, the whitened cross-kernel vector.
    fn whitened(&self, x: T) -> Vec<T> {
        self.chol.forward_solve(&self.cross_kernel(x))
    }

    pub fn mean(&self, x: T) -> T {
        self.training
            .inputs()
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&xi, &w)| acc + w * self.kernel.eval(x, xi))
    }

    pub fn mean_deriv(&self, x: T) -> T {
        self.training
            .inputs()
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&xi, &w)| acc + w * self.kernel.deriv_x(x, xi))
    }

    /// Posterior cross-covariance, unclamped.
    pub fn cov(&self, x: T, xp: T) -> T {
        let vx = self.whitened(x);
        let vxp = self.whitened(xp);
        self.kernel.eval(x, xp) - dot(&vx, &vxp)
    }

    /// Posterior variance clamped at zero.
    pub fn var(&self, x: T) -> T {
        self.cov(x, x).max(T::zero())
    }

    /// Dense posterior covariance over `grid`.
    pub fn cov_matrix(&self, grid: &[T]) -> SquareMatrix<T> {
        let whitened: Vec<Vec<T>> = grid.iter().map(|&g| self.whitened(g)).collect();
        SquareMatrix::from_fn(grid.len(), |i, j| {
            self.kernel.eval(grid[i], grid[j]) - dot(&whitened[i], &whitened[j])
        })
    }

    /// Draws `n_samples` joint posterior realizations on `grid` as
    /// `m + L zeta`, with `L` the jittered Cholesky factor of the posterior
    /// covariance. Row `i` uses its own RNG stream derived from `(seed, i)`.
    pub fn sample_on_grid(&self, grid: &[T], n_samples: usize, seed: u64) -> Result<GridSample<T>> {
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("sampling grid must be non-empty and strictly increasing"));
        }
        let mean: Vec<T> = grid.iter().map(|&g| self.mean(g)).collect();
        let cov = self.cov_matrix(grid);
        let chol = Cholesky::factor(&cov, Jitter::standard(self.kernel.amplitude))?;
        let g = grid.len();
        let rows: Vec<Vec<T>> = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, &[i as u64]);
                let zeta: Vec<T> = (0..g).map(|_| rng::std_normal(&mut rng)).collect();
                let mut row = chol.lower_mul(&zeta);
                row.iter_mut().zip(&mean).for_each(|(v, &m)| *v = *v + m);
                row
            })
            .collect();
        Ok(GridSample {
            grid: grid.to_vec(),
            values: rows.concat(),
            n_samples,
            seed,
        })
    }
}

impl<T: Scalar> FieldModel<T> for GpPosterior<T> {
    fn mean(&self, x: T) -> T {
        GpPosterior::mean(self, x)
    }
    fn var(&self, x: T) -> T {
        GpPosterior::var(self, x)
    }
    fn cov(&self, x: T, xp: T) -> T {
        GpPosterior::cov(self, x, xp)
    }
    fn mean_deriv(&self, x: T) -> T {
        GpPosterior::mean_deriv(self, x)
    }
}

pub fn posterior_mean<T: Scalar>(gp: &GpPosterior<T>, x: T) -> T {
    gp.mean(x)
}

pub fn posterior_cov<T: Scalar>(gp: &GpPosterior<T>, x: T, xp: T) -> T {
    gp.cov(x, xp)
}

pub fn posterior_var<T: Scalar>(gp: &GpPosterior<T>, x: T) -> T {
    gp.var(x)
}

pub fn posterior_mean_deriv<T: Scalar>(gp: &GpPosterior<T>, x: T) -> T {
    gp.mean_deriv(x)
}

pub fn sample_on_grid<T: Scalar>(
    gp: &GpPosterior<T>,
    grid: &[T],
    n_samples: usize,
    seed: u64,
) -> Result<GridSample<T>> {
    gp.sample_on_grid(grid, n_samples, seed)
}

/// Joint posterior draws on a fixed grid, stored row-major
/// (`n_samples x grid.len()`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample<T> {
    pub grid: Vec<T>,
    pub values: Vec<T>,
    pub n_samples: usize,
    pub seed: u64,
}

impl<T: Scalar> GridSample<T> {
    pub fn row(&self, i: usize) -> &[T] {
        let g = self.grid.len();
        &self.values[i * g..(i + 1) * g]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks(self.grid.len())
    }
}

/// `n` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / T::from_usize_lossy(n - 1);
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        lo + T::from_usize_lossy(i) * step
                    }
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> KernelConfig<f64> {
        KernelConfig::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(&unit(), 0.0, 0.0), 1.0);
        assert!(kernel_eval(&unit(), 0.0, 10.0) < 1e-21);
        let k2 = KernelConfig::new(2.0, 1.0).unwrap();
        assert!((kernel_eval(&k2, 0.0, 2.0) - (-0.5f64).exp()).abs() < 1e-15);
        let amp = KernelConfig::new(1.0, 3.0).unwrap();
        assert_eq!(kernel_eval(&amp, 1.5, 1.5), 3.0);
    }

    #[test]
    fn kernel_derivative() {
        let k = unit();
        assert_eq!(kernel_deriv_x(&k, 0.7, 0.7), 0.0);
        let d = 1e-6;
        let fd = (k.eval(1.0 + d, 0.0) - k.eval(1.0 - d, 0.0)) / (2.0 * d);
        assert!((fd - (-(-0.5f64).exp())).abs() < 1e-6);
        assert!((kernel_deriv_x(&k, 1.0, 0.0) - (-(-0.5f64).exp())).abs() < 1e-15);
        assert_eq!(kernel_deriv_x(&k, 0.3, -1.2), -kernel_deriv_x(&k, -1.2, 0.3));
    }

    #[test]
    fn invalid_kernel_rejected() {
        assert!(KernelConfig::new(0.0, 1.0).is_err());
        assert!(KernelConfig::new(1.0, -1.0).is_err());
    }

    #[test]
    fn empty_conditioning_is_prior() {
        let k = KernelConfig::new(0.8, 2.5).unwrap();
        let gp = GpPosterior::condition(TrainingSet::empty(), k).unwrap();
        for x in [-3.0, 0.0, 1.7] {
            assert_eq!(gp.mean(x), 0.0);
            assert_eq!(gp.var(x), 2.5);
            assert_eq!(gp.mean_deriv(x), 0.0);
        }
    }

    #[test]
    fn single_point_interpolation() {
        let ts = TrainingSet::new(vec![0.0], vec![2.0], 0.0).unwrap();
        let gp = GpPosterior::condition_with_jitter(ts, unit(), Jitter::none()).unwrap();
        assert_eq!(gp.mean(0.0), 2.0);
        assert_eq!(gp.var(0.0), 0.0);
        assert!(gp.cov(0.0, 1.3).abs() < 1e-15);
    }

    #[test]
    fn symmetric_peak_has_zero_slope() {
        let ts = TrainingSet::new(vec![0.0], vec![1.0], 0.0).unwrap();
        let gp = GpPosterior::condition_with_jitter(ts, unit(), Jitter::none()).unwrap();
        assert_eq!(gp.mean_deriv(0.0), 0.0);
    }

    #[test]
    fn duplicate_inputs_without_noise_or_jitter_fail() {
        let ts = TrainingSet::new(vec![1.0, 1.0], vec![0.5, 0.5], 0.0).unwrap();
        let err = GpPosterior::condition_with_jitter(ts.clone(), unit(), Jitter::none());
        assert!(matches!(err, Err(Error::FactorizationFailure { .. })));
        // the standard jitter rescues it
        assert!(GpPosterior::condition(ts, unit()).is_ok());
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![0.0, 1.0], vec![1.0], 0.0).is_err());
        assert!(TrainingSet::new(vec![f64::NAN], vec![1.0], 0.0).is_err());
        assert!(TrainingSet::new(vec![0.0], vec![1.0], -1.0).is_err());
    }

    #[test]
    fn sampling_rejects_bad_grids() {
        let gp = GpPosterior::prior(unit()).unwrap();
        assert!(gp.sample_on_grid(&[0.0, 0.0], 3, 1).is_err());
        assert!(gp.sample_on_grid(&[0.0, 1.0], 0, 1).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(-4.0, 4.0, 9);
        assert_eq!(g, vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(linspace(0.0, 1.0, 1), vec![0.0]);
    }

    #[test]
    fn f32_posterior_works() {
        let ts = TrainingSet::new(vec![-1.0f32, 0.0, 1.0], vec![0.5, 0.0, -0.5], 1e-4).unwrap();
        let gp = GpPosterior::condition(ts, KernelConfig::default()).unwrap();
        assert!((gp.mean(0.0)).abs() < 1e-4);
        assert!(gp.var(0.5) >= 0.0);
    }
}
