//! Fixed-step explicit integrators for scalar autonomous ODEs.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::state::grid_time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `x_{n+1} = x_n + h f(x_n)`
    Euler,
    /// Classic fourth-order Runge-Kutta.
    #[default]
    Rk4,
}

/// Integrates `x' = f(t, x)` for `steps` steps of size `h` and returns all
/// `steps + 1` states. `f` may fail (e.g. when leaving a grid); the error is
/// passed through.
pub fn integrate<T, E>(
    integrator: Integrator,
    x0: T,
    h: T,
    steps: usize,
    mut f: impl FnMut(T, T) -> Result<T, E>,
) -> Result<Vec<T>, E>
where
    T: Scalar,
{
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0;
    out.push(x);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let sixth = T::one() / T::lit(6.0);
    for n in 0..steps {
        let t = grid_time(n, h);
        x = match integrator {
            Integrator::Euler => x + h * f(t, x)?,
            Integrator::Rk4 => {
                let k1 = f(t, x)?;
                let k2 = f(t + half * h, x + half * h * k1)?;
                let k3 = f(t + half * h, x + half * h * k2)?;
                let k4 = f(t + h, x + h * k3)?;
                x + h * sixth * (k1 + two * k2 + two * k3 + k4)
            }
        };
        out.push(x);
    }
    Ok(out)
}
