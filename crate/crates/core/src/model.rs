//! The seam between propagators and the distribution of vector fields they
//! propagate through.

use crate::scalar::Scalar;

/// Pointwise statistics of a Gaussian distribution over vector fields `f`.
pub trait FieldModel<T: Scalar>: Sync {
    /// `E[f(x)]`
    fn mean(&self, x: T) -> T;
    /// `var f(x)`, non-negative.
    fn var(&self, x: T) -> T;
    /// `cov(f(x), f(xp))`
    fn cov(&self, x: T, xp: T) -> T;
    /// `d/dx E[f(x)]`
    fn mean_deriv(&self, x: T) -> T;
}

/// The linear prototype `f(x) = -a x + c + B`, `B ~ N(0, beta)`, viewed as a
/// degenerate GP with mean `-a x + c` and constant covariance `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearEmbedding<T> {
    pub a: T,
    pub offset: T,
    pub beta: T,
}

impl<T: Scalar> LinearEmbedding<T> {
    pub fn new(a: T, beta: T) -> Self {
        Self {
            a,
            offset: T::zero(),
            beta,
        }
    }

    pub fn with_offset(a: T, offset: T, beta: T) -> Self {
        Self { a, offset, beta }
    }
}

impl<T: Scalar> FieldModel<T> for LinearEmbedding<T> {
    fn mean(&self, x: T) -> T {
        -self.a * x + self.offset
    }
    fn var(&self, _x: T) -> T {
        self.beta
    }
    fn cov(&self, _x: T, _xp: T) -> T {
        self.beta
    }
    fn mean_deriv(&self, _x: T) -> T {
        -self.a
    }
}

impl<T: Scalar, M: FieldModel<T> + ?Sized> FieldModel<T> for &M {
    fn mean(&self, x: T) -> T {
        (**self).mean(x)
    }
    fn var(&self, x: T) -> T {
        (**self).var(x)
    }
    fn cov(&self, x: T, xp: T) -> T {
        (**self).cov(x, xp)
    }
    fn mean_deriv(&self, x: T) -> T {
        (**self).mean_deriv(x)
    }
}
