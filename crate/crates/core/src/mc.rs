//! Sampling-based ground truth: draw whole vector fields from the GP on a
//! grid, interpolate them, integrate each realization from sampled initial
//! values, and reduce to per-time empirical moments.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{linspace, GpPosterior};
use crate::integrate::{integrate, Integrator};
use crate::rng;
use crate::scalar::Scalar;
use crate::state::{grid_time, step_count, GaussianState, Method, TrajectoryDistribution, TrajectoryMeta};
use crate::stats::{MomentAccumulator, REDUCTION_CHUNK};

const FIELD_STREAM: u64 = 0;
const INITIAL_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Monotone piecewise-cubic Hermite (Fritsch-Carlson slopes).
    #[default]
    Cubic,
}

/// One sampled vector field, evaluable anywhere on `[grid[0], grid[last]]`.
#[derive(Debug, Clone)]
pub struct FieldRealization<T> {
    grid: Arc<Vec<T>>,
    values: Vec<T>,
    slopes: Vec<T>,
    interpolation: Interpolation,
}

impl<T: Scalar> FieldRealization<T> {
    pub fn new(grid: Arc<Vec<T>>, values: Vec<T>, interpolation: Interpolation) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::invalid("field needs >= 2 grid nodes and one value per node"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("field grid must be strictly increasing"));
        }
        let slopes = match interpolation {
            Interpolation::Linear => Vec::new(),
            Interpolation::Cubic => pchip_slopes(&grid, &values),
        };
        Ok(Self {
            grid,
            values,
            slopes,
            interpolation,
        })
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn span(&self) -> (T, T) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    /// Interpolated value, or `None` outside the grid span. Grid nodes return
    /// the stored value directly.
    pub fn eval(&self, x: T) -> Option<T> {
        let (lo, hi) = self.span();
        if !(x >= lo && x <= hi) {
            return None;
        }
        let g = &self.grid;
        let k = g.partition_point(|&node| node <= x);
        // k is the index of the first node > x
        if k > 0 && g[k - 1] == x {
            return Some(self.values[k - 1]);
        }
        let i = k - 1;
        let (x0, x1) = (g[i], g[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let w = x1 - x0;
        let s = (x - x0) / w;
        Some(match self.interpolation {
            Interpolation::Linear => y0 + s * (y1 - y0),
            Interpolation::Cubic => {
                let (d0, d1) = (self.slopes[i], self.slopes[i + 1]);
                let s2 = s * s;
                let s3 = s2 * s;
                let two = T::lit(2.0);
                let three = T::lit(3.0);
                let h00 = two * s3 - three * s2 + T::one();
                let h10 = s3 - two * s2 + s;
                let h01 = three * s2 - two * s3;
                let h11 = s3 - s2;
                h00 * y0 + h10 * w * d0 + h01 * y1 + h11 * w * d1
            }
        })
    }
}

/// Fritsch-Carlson derivative estimates with shape-preserving end conditions.
fn pchip_slopes<T: Scalar>(x: &[T], y: &[T]) -> Vec<T> {
    let n = x.len();
    let h: Vec<T> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<T> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let mut d = vec![T::zero(); n];
    for k in 1..n - 1 {
        let (dl, dr) = (delta[k - 1], delta[k]);
        if dl * dr > T::zero() {
            let w1 = two * h[k] + h[k - 1];
            let w2 = h[k] + two * h[k - 1];
            d[k] = (w1 + w2) / (w1 / dl + w2 / dr);
        }
    }
    let edge = |h0: T, h1: T, m0: T, m1: T| {
        let d = ((two * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() || m0 == T::zero() {
            T::zero()
        } else if m0.signum() != m1.signum() && d.abs() > three * m0.abs() {
            three * m0
        } else {
            d
        }
    };
    d[0] = edge(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// How sampled fields are paired with sampled initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Every initial value with every field.
    #[default]
    CrossProduct,
    /// Field `i` with initial value `i`; requires equal counts.
    OneToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig<T> {
    pub n_fields: usize,
    pub n_initial: usize,
    pub pairing: Pairing,
    pub grid_span: (T, T),
    pub grid_points: usize,
    pub interpolation: Interpolation,
    pub integrator: Integrator,
    pub h: T,
    pub horizon: T,
    pub seed: u64,
}

impl<T: Scalar> EnsembleConfig<T> {
    /// Desk-scale defaults: 500 fields x 50 initial values, grid [-4, 4]
    /// with 400 nodes, rk4.
    pub fn desk(h: T, horizon: T, seed: u64) -> Self {
        Self {
            n_fields: 500,
            n_initial: 50,
            pairing: Pairing::CrossProduct,
            grid_span: (T::lit(-4.0), T::lit(4.0)),
            grid_points: 400,
            interpolation: Interpolation::Cubic,
            integrator: Integrator::Rk4,
            h,
            horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fields == 0 {
            return Err(Error::config("n_fields", "must be >= 1"));
        }
        if self.n_initial == 0 {
            return Err(Error::config("n_initial", "must be >= 1"));
        }
        if self.pairing == Pairing::OneToOne && self.n_fields != self.n_initial {
            return Err(Error::config(
                "pairing",
                format!(
                    "one_to_one needs n_fields == n_initial, got {} and {}",
                    self.n_fields, self.n_initial
                ),
            ));
        }
        if !(self.grid_span.0 < self.grid_span.1) {
            return Err(Error::config("grid_span", "lo must be < hi"));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid_points", "must be >= 2"));
        }
        step_count(self.horizon, self.h)?;
        Ok(())
    }

    pub fn grid(&self) -> Vec<T> {
        linspace(self.grid_span.0, self.grid_span.1, self.grid_points)
    }

    pub fn n_trajectories(&self) -> usize {
        match self.pairing {
            Pairing::CrossProduct => self.n_fields * self.n_initial,
            Pairing::OneToOne => self.n_fields,
        }
    }
}

/// Draws `cfg.n_fields` joint posterior realizations on the configured grid.
pub fn draw_fields<T: Scalar>(gp: &GpPosterior<T>, cfg: &EnsembleConfig<T>) -> Result<Vec<FieldRealization<T>>> {
    cfg.validate()?;
    let grid = cfg.grid();
    let sample = gp.sample_on_grid(&grid, cfg.n_fields, rng::derive_seed(cfg.seed, &[FIELD_STREAM]))?;
    let grid = Arc::new(grid);
    sample
        .rows()
        .map(|row| FieldRealization::new(Arc::clone(&grid), row.to_vec(), cfg.interpolation))
        .collect()
}

/// Initial value of trajectory `(field_id, x0_id)`, drawn from
/// `N(x0.mean, x0.var)` on a stream keyed by both indices.
pub fn initial_value<T: Scalar>(x0: GaussianState<T>, seed: u64, field_id: usize, x0_id: usize) -> T {
    let mut r = rng::stream(seed, &[INITIAL_STREAM, field_id as u64, x0_id as u64]);
    rng::normal(&mut r, x0.mean, x0.var)
}

/// `(field_id, x0_id)` of every trajectory, in reduction order.
pub fn trajectory_pairs(pairing: Pairing, n_fields: usize, n_initial: usize) -> Result<Vec<(usize, usize)>> {
    match pairing {
        Pairing::CrossProduct => Ok((0..n_fields * n_initial)
            .map(|idx| (idx % n_fields, idx / n_fields))
            .collect()),
        Pairing::OneToOne => {
            if n_fields != n_initial {
                return Err(Error::config("pairing", "one_to_one needs n_fields == n_initial"));
            }
            Ok((0..n_fields).map(|i| (i, i)).collect())
        }
    }
}

/// Integrates one realization; fails with [`Error::GridEscape`] if any
/// evaluation point leaves the grid.
pub fn integrate_realization<T: Scalar>(
    field: &FieldRealization<T>,
    x0: T,
    integrator: Integrator,
    h: T,
    horizon: T,
) -> Result<Vec<T>> {
    let steps = step_count(horizon, h)?;
    integrate(integrator, x0, h, steps, |t, x| {
        field.eval(x).ok_or(Error::GridEscape {
            time: t.to_f64_lossy(),
            state: x.to_f64_lossy(),
        })
    })
}

/// Raw trajectory kept for debugging dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory<T> {
    pub field_id: usize,
    pub x0_id: usize,
    pub states: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput<T> {
    pub distribution: TrajectoryDistribution<T>,
    /// Final state of every trajectory, in trajectory order.
    pub terminal_states: Vec<T>,
    pub raw: Option<Vec<RawTrajectory<T>>>,
}

/// Integrates the listed `(field_id, x0_id)` pairs and reduces to per-time
/// moments. The result does not depend on the rayon pool size.
pub fn ensemble_from_fields<T: Scalar>(
    fields: &[FieldRealization<T>],
    x0: GaussianState<T>,
    pairs: &[(usize, usize)],
    cfg: &EnsembleConfig<T>,
    keep_raw: bool,
) -> Result<EnsembleOutput<T>> {
    if pairs.is_empty() {
        return Err(Error::invalid("ensemble needs at least one trajectory"));
    }
    if let Some(&(f, _)) = pairs.iter().find(|p| p.0 >= fields.len()) {
        return Err(Error::invalid(format!("field index {f} out of range ({} fields)", fields.len())));
    }
    let (integrator, h, horizon) = (cfg.integrator, cfg.h, cfg.horizon);
    let total = pairs.len();
    let steps = step_count(horizon, h)?;
    let len = steps + 1;
    let n_chunks = total.div_ceil(REDUCTION_CHUNK);

    struct Chunk<T> {
        acc: MomentAccumulator<T>,
        terminal: Vec<T>,
        raw: Vec<RawTrajectory<T>>,
    }

    let chunks: Vec<Chunk<T>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * REDUCTION_CHUNK;
            let end = (start + REDUCTION_CHUNK).min(total);
            let mut chunk = Chunk {
                acc: MomentAccumulator::new(len),
                terminal: Vec::with_capacity(end - start),
                raw: Vec::new(),
            };
            for &(f, j) in &pairs[start..end] {
                let x = initial_value(x0, cfg.seed, f, j);
                let states = integrate_realization(&fields[f], x, integrator, h, horizon)?;
                chunk.acc.push(&states);
                chunk.terminal.push(states[len - 1]);
                if keep_raw {
                    chunk.raw.push(RawTrajectory {
                        field_id: f,
                        x0_id: j,
                        states,
                    });
                }
            }
            Ok(chunk)
        })
        .collect::<Result<_>>()?;

    let mut acc = MomentAccumulator::new(len);
    let mut terminal_states = Vec::with_capacity(total);
    let mut raw = keep_raw.then(|| Vec::with_capacity(total));
    for chunk in chunks {
        acc.merge(&chunk.acc);
        terminal_states.extend(chunk.terminal);
        if let Some(r) = raw.as_mut() {
            r.extend(chunk.raw);
        }
    }
    let distribution = TrajectoryDistribution {
        times: (0..len).map(|k| grid_time(k, h)).collect(),
        means: acc.means().to_vec(),
        vars: acc.variances(),
        meta: TrajectoryMeta {
            method: Method::Mc,
            step: h,
            samples: total,
            clamp_events: 0,
        },
    };
    Ok(EnsembleOutput {
        distribution,
        terminal_states,
        raw,
    })
}

/// Full sampling pipeline: draw fields, pair them with initial values,
/// integrate, reduce.
pub fn ensemble_run<T: Scalar>(
    gp: &GpPosterior<T>,
    x0: GaussianState<T>,
    cfg: &EnsembleConfig<T>,
    keep_raw: bool,
) -> Result<EnsembleOutput<T>> {
    let fields = draw_fields(gp, cfg)?;
    let pairs = trajectory_pairs(cfg.pairing, cfg.n_fields, cfg.n_initial)?;
    ensemble_from_fields(&fields, x0, &pairs, cfg, keep_raw)
}

pub fn ensemble_stats<T: Scalar>(
    gp: &GpPosterior<T>,
    x0: GaussianState<T>,
    cfg: &EnsembleConfig<T>,
) -> Result<TrajectoryDistribution<T>> {
    Ok(ensemble_run(gp, x0, cfg, false)?.distribution)
}

/// Writes `field_id,x0_id,t,x` rows.
pub fn write_raw_csv<T: Scalar, W: Write>(out: W, raw: &[RawTrajectory<T>], h: T) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::invalid(format!("writing raw trajectories: {e}"));
    w.write_record(["field_id", "x0_id", "t", "x"]).map_err(io)?;
    for r in raw {
        for (k, x) in r.states.iter().enumerate() {
            w.write_record([
                r.field_id.to_string(),
                r.x0_id.to_string(),
                format!("{:.16e}", grid_time(k, h).to_f64_lossy()),
                format!("{:.16e}", x.to_f64_lossy()),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::invalid(format!("flushing raw trajectories: {e}")))?;
    Ok(())
}

/// Equal-width histogram `(bin_lo, bin_hi, count)` over `[lo, hi]`.
pub fn histogram<T: Scalar>(values: &[T], lo: T, hi: T, bins: usize) -> Vec<(T, T, usize)> {
    let edges = linspace(lo, hi, bins + 1);
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / T::from_usize_lossy(bins);
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let k = ((v - lo) / width).floor().to_usize().unwrap_or(0).min(bins - 1);
        counts[k] += 1;
    }
    (0..bins).map(|k| (edges[k], edges[k + 1], counts[k])).collect()
}
