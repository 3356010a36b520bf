//! Small dense linear algebra: just enough Cholesky machinery for 1D GP work.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = A + jitter I`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: SquareMatrix<T>,
    jitter: T,
}

/// Diagonal jitter schedule: try `initial`, and on failure retry once with
/// `retry` if given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter<T> {
    pub initial: T,
    pub retry: Option<T>,
}

impl<T: Scalar> Jitter<T> {
    /// 1e-9 relative to the kernel amplitude, falling back to 1e-6.
    pub fn standard(amplitude: T) -> Self {
        Self {
            initial: T::lit(1e-9) * amplitude,
            retry: Some(T::lit(1e-6) * amplitude),
        }
    }

    pub fn none() -> Self {
        Self {
            initial: T::zero(),
            retry: None,
        }
    }

    pub fn fixed(value: T) -> Self {
        Self {
            initial: value,
            retry: None,
        }
    }
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes `a + jitter I` following the jitter schedule.
    pub fn factor(a: &SquareMatrix<T>, jitter: Jitter<T>) -> Result<Self> {
        match Self::factor_once(a, jitter.initial) {
            Ok(c) => Ok(c),
            Err(first) => match jitter.retry {
                Some(retry) => {
                    log::debug!("cholesky failed with jitter {}, retrying", jitter.initial);
                    Self::factor_once(a, retry)
                }
                None => Err(first),
            },
        }
    }

    fn factor_once(a: &SquareMatrix<T>, jitter: T) -> Result<Self> {
        let n = a.dim();
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut diag = a.get(j, j) + jitter;
            for k in 0..j {
                let ljk = l.get(j, k);
                diag = diag - ljk * ljk;
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(Error::FactorizationFailure {
                    pivot: j,
                    jitter: jitter.to_f64_lossy(),
                });
            }
            let ljj = diag.sqrt();
            l.set(j, j, ljj);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(Self { lower: l, jitter })
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn lower(&self) -> &SquareMatrix<T> {
        &self.lower
    }

    /// Jitter that was actually applied.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Solves `L z = b`.
    pub fn forward_solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.lower.row(i);
            let mut s = b[i];
            for k in 0..i {
                s = s - row[k] * z[k];
            }
            z.push(s / row[i]);
        }
        z
    }

    /// Solves `L^T x = z`.
    pub fn backward_solve(&self, z: &[T]) -> Vec<T> {
        let n = self.dim();
        debug_assert_eq!(z.len(), n);
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s = s - self.lower.get(k, i) * x[k];
            }
            x[i] = s / self.lower.get(i, i);
        }
        x
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.backward_solve(&self.forward_solve(b))
    }

    /// Explicit inverse of `L L^T`, symmetrized.
    pub fn inverse(&self) -> SquareMatrix<T> {
        let n = self.dim();
        let mut inv = SquareMatrix::zeros(n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        let half = T::lit(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let s = half * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, s);
                inv.set(j, i, s);
            }
        }
        inv
    }

    /// Computes `L z`.
    pub fn lower_mul(&self, z: &[T]) -> Vec<T> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let row = self.lower.row(i);
                let mut s = T::zero();
                for k in 0..=i {
                    s = s + row[k] * z[k];
                }
                s
            })
            .collect()
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
