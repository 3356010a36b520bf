//! Streaming per-time moments with a scheduling-independent parallel reduction.

use rayon::prelude::*;

use crate::scalar::Scalar;

/// Running count, mean and sum of squared deviations for each time index.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator<T> {
    count: usize,
    mean: Vec<T>,
    m2: Vec<T>,
}

impl<T: Scalar> MomentAccumulator<T> {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![T::zero(); len],
            m2: vec![T::zero(); len],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &[T]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        self.count += 1;
        let n = T::from_usize_lossy(self.count);
        for ((m, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *m;
            *m = *m + delta / n;
            *m2 = *m2 + delta * (x - *m);
        }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = T::from_usize_lossy(self.count);
        let nb = T::from_usize_lossy(other.count);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] = self.mean[i] + delta * nb / n;
            self.m2[i] = self.m2[i] + other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn means(&self) -> &[T] {
        &self.mean
    }

    /// Unbiased (n - 1) variances; zero when fewer than two samples.
    pub fn variances(&self) -> Vec<T> {
        if self.count < 2 {
            return vec![T::zero(); self.mean.len()];
        }
        let d = T::from_usize_lossy(self.count - 1);
        self.m2.iter().map(|&m2| (m2 / d).max(T::zero())).collect()
    }
}

/// Fixed chunk size for parallel reductions. The chunking (not the thread
/// count) determines the floating point reduction order.
pub const REDUCTION_CHUNK: usize = 256;

/// Accumulates `sample(i)` for `i in 0..n_items` in parallel. Each chunk of
/// [`REDUCTION_CHUNK`] items is reduced sequentially and the chunk results are
/// merged in index order, so the output is identical for any worker count.
pub fn par_accumulate<T, E, F>(n_items: usize, len: usize, sample: F) -> Result<MomentAccumulator<T>, E>
where
    T: Scalar,
    E: Send,
    F: Fn(usize) -> Result<Vec<T>, E> + Sync,
{
    let n_chunks = n_items.div_ceil(REDUCTION_CHUNK);
    let partials: Vec<MomentAccumulator<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = MomentAccumulator::new(len);
            let start = c * REDUCTION_CHUNK;
            let end = (start + REDUCTION_CHUNK).min(n_items);
            for i in start..end {
                acc.push(&sample(i)?);
            }
            Ok(acc)
        })
        .collect::<Result<_, E>>()?;
    let mut total = MomentAccumulator::new(len);
    for p in &partials {
        total.merge(p);
    }
    Ok(total)
}
