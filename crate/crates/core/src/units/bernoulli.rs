//! Bernoulli head parameterized by a logit. Noise is uniform on `[0, 1)` and
//! the unit emits `1` when the noise falls below `p`.

use crate::autodiff::{sigmoid, softplus, Matrix, Tape, Var};
use crate::error::Result;

pub fn sample(logit: f64, u: f64) -> f64 {
    if u < sigmoid(logit) {
        1.0
    } else {
        0.0
    }
}

pub fn loglk(x: f64, logit: f64) -> f64 {
    x * logit - softplus(logit)
}

/// Interval of noise values that regenerate `x`.
pub fn posterior_interval(x: f64, logit: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    if x == 1.0 {
        (0.0, p)
    } else {
        (p, 1.0)
    }
}

pub(crate) fn loglk_tape(tape: &mut Tape, theta: Var, x: &[f64]) -> Result<Var> {
    let xs = tape.constant(Matrix::column(x.to_vec()))?;
    let hit = tape.mul(xs, theta)?;
    let norm = tape.softplus(theta)?;
    tape.sub(hit, norm)
}
