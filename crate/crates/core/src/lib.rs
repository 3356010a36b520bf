//! Trajectory distributions for ODEs `x' = f(x)` whose right-hand side is a
//! one-dimensional Gaussian Process.
//!
//! * [`gp`]: squared-exponential GP regression, posterior derivatives and
//!   grid sampling.
//! * [`linear`]: the linear prototype `x' = -a x + B` in closed form, with
//!   naive and covariance-corrected recursions.
//! * [`moments`]: the independence-assumption moment matching baseline.
//! * [`pull`]: PULL explicit Euler with the telescoped state-model covariance.
//! * [`mc`]: Monte Carlo ground truth over sampled vector fields.
//! * [`experiment`]: the experiment runner behind the `pullode` binary.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod error;
pub mod experiment;
pub mod gp;
pub mod integrate;
pub mod linalg;
pub mod linear;
pub mod mc;
pub mod model;
pub mod moments;
pub mod pull;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod state;
pub mod stats;

pub use error::{Error, Result};
pub use gp::{GpPosterior, KernelConfig, TrainingSet};
pub use integrate::Integrator;
pub use linear::{CorrelatedState, LinearModelDist};
pub use mc::{EnsembleConfig, FieldRealization, Interpolation, Pairing};
pub use model::{FieldModel, LinearEmbedding};
pub use moments::{MomentProvider, MomentTerms};
pub use pull::{PullHistory, TruncationPolicy};
pub use scalar::Scalar;
pub use state::{GaussianState, Method, TrajectoryDistribution};

pub type Gp = GpPosterior<f64>;
pub type Kernel = KernelConfig<f64>;
pub type Training = TrainingSet<f64>;
pub type Gaussian = GaussianState<f64>;
pub type Trajectory = TrajectoryDistribution<f64>;
pub type LinearModel = LinearModelDist<f64>;
pub type Ensemble = EnsembleConfig<f64>;
pub type Policy = TruncationPolicy<f64>;

pub type Gp32 = GpPosterior<f32>;
pub type Gaussian32 = GaussianState<f32>;
pub type Trajectory32 = TrajectoryDistribution<f32>;
