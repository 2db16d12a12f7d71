//! Conditional Deep Sigmoidal Flow.
//!
//! Each layer maps `x` to `logit(sum_k w_k * sigmoid(a_k * x + b_k))`. Every
//! quantity is evaluated in log space (`log s` and `log(1 - s)` via
//! log-sum-exp over softplus terms), so saturated units never produce an
//! infinite logit and no clamping is needed.
//!
//! A stack with `L` layers of `K` units reads `3 * K * L` raw conditioner
//! outputs, laid out per layer as `[a_raw (K), b (K), w_raw (K)]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp, softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::units::normal::HALF_LN_2PI;

/// Floor added to `softplus(a_raw)` so every slope stays strictly positive.
pub const MIN_SLOPE: f64 = 1e-4;
/// Largest magnitude searched when bracketing an inverse.
pub const INVERSE_RANGE: f64 = 1e9;
const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowShape {
    pub layers: usize,
    pub units: usize,
}

impl Default for FlowShape {
    fn default() -> Self {
        Self { layers: 2, units: 8 }
    }
}

impl FlowShape {
    pub fn theta_len(&self) -> usize {
        3 * self.units * self.layers
    }
}

/// Output of a forward pass: the noise value and `log |d eps / d x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEvaluation {
    pub eps: f64,
    pub logdet: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsfLayer {
    a: Vec<f64>,
    b: Vec<f64>,
    log_w: Vec<f64>,
}

impl DsfLayer {
    /// Layer from activated parameters: slopes `a > 0`, offsets `b`, weights `w` on the simplex.
    pub fn new(a: Vec<f64>, b: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let k = a.len();
        if k == 0 || b.len() != k || w.len() != k {
            return Err(Error::Shape {
                context: "dsf layer",
                detail: format!("{} slopes, {} offsets, {} weights", a.len(), b.len(), w.len()),
            });
        }
        if a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Contract("DSF slopes must be positive and finite".into()));
        }
        let total: f64 = w.iter().sum();
        if w.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract("DSF weights must lie on the simplex".into()));
        }
        Ok(Self {
            a,
            b,
            log_w: w.iter().map(|v| v.ln()).collect(),
        })
    }

    /// Layer from raw conditioner outputs `[a_raw (K), b (K), w_raw (K)]`.
    pub fn from_raw(raw: &[f64]) -> Self {
        let k = raw.len() / 3;
        let a = raw[..k].iter().map(|&v| softplus(v) + MIN_SLOPE).collect();
        let b = raw[k..2 * k].to_vec();
        let w_raw = &raw[2 * k..3 * k];
        let lse = logsumexp(w_raw);
        Self {
            a,
            b,
            log_w: w_raw.iter().map(|v| v - lse).collect(),
        }
    }

    pub fn units(&self) -> usize {
        self.a.len()
    }

    /// Returns `(y, log dy/dx)`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        let k = self.a.len();
        let mut t_s = Vec::with_capacity(k);
        let mut t_1ms = Vec::with_capacity(k);
        let mut t_d = Vec::with_capacity(k);
        for i in 0..k {
            let p = self.a[i] * x + self.b[i];
            let (sp, sn) = (softplus(p), softplus(-p));
            t_s.push(self.log_w[i] - sn);
            t_1ms.push(self.log_w[i] - sp);
            t_d.push(self.log_w[i] + self.a[i].ln() - sp - sn);
        }
        let log_s = logsumexp(&t_s);
        let log_1ms = logsumexp(&t_1ms);
        (log_s - log_1ms, logsumexp(&t_d) - log_s - log_1ms)
    }

    /// Solve `forward(x).0 = y` by bracket doubling from `[-1, 1]` and bisection.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::InversionRange { target: y });
        }
        let f = |x: f64| self.forward(x).0;
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        while f(lo) > y {
            hi = lo;
            lo *= 2.0;
            if lo < -INVERSE_RANGE {
                return Err(Error::InversionRange { target: y });
            }
        }
        while f(hi) < y {
            lo = hi;
            hi *= 2.0;
            if hi > INVERSE_RANGE {
                return Err(Error::InversionRange { target: y });
            }
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(if (f(lo) - y).abs() <= (f(hi) - y).abs() { lo } else { hi })
    }
}

/// Stack of DSF layers applied in order, `x -> eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    layers: Vec<DsfLayer>,
}

impl FlowStack {
    pub fn new(layers: Vec<DsfLayer>) -> Self {
        Self { layers }
    }

    pub fn from_theta(theta: &[f64], shape: FlowShape) -> Result<Self> {
        if theta.len() != shape.theta_len() {
            return Err(Error::Shape {
                context: "flow theta",
                detail: format!("{} values for {} layers of {} units", theta.len(), shape.layers, shape.units),
            });
        }
        let block = 3 * shape.units;
        Ok(Self {
            layers: theta.chunks(block).map(DsfLayer::from_raw).collect(),
        })
    }

    pub fn layers(&self) -> &[DsfLayer] {
        &self.layers
    }

    pub fn forward(&self, x: f64) -> Result<FlowEvaluation> {
        dsf_forward(x, &self.layers)
    }

    pub fn inverse(&self, eps: f64) -> Result<f64> {
        dsf_inverse(eps, &self.layers)
    }

    /// Log-density of `x` under the flow with a standard normal base.
    pub fn loglk(&self, x: f64) -> Result<f64> {
        let ev = self.forward(x)?;
        Ok(-HALF_LN_2PI - 0.5 * ev.eps * ev.eps + ev.logdet)
    }
}

pub fn dsf_forward(x: f64, layers: &[DsfLayer]) -> Result<FlowEvaluation> {
    let mut eps = x;
    let mut logdet = 0.0;
    for (i, layer) in layers.iter().enumerate() {
        let (y, ld) = layer.forward(eps);
        if !y.is_finite() || !ld.is_finite() {
            return Err(Error::FlowStability {
                layer: i,
                detail: format!("input {eps} gave output {y}, log-derivative {ld}"),
            });
        }
        eps = y;
        logdet += ld;
    }
    Ok(FlowEvaluation { eps, logdet })
}

pub fn dsf_inverse(eps: f64, layers: &[DsfLayer]) -> Result<f64> {
    layers.iter().rev().try_fold(eps, |y, layer| layer.inverse(y))
}

fn softplus_inverse(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Raw parameters under which every layer is exactly the identity.
pub fn identity_theta(shape: FlowShape) -> Vec<f64> {
    let a_raw = softplus_inverse(1.0 - MIN_SLOPE);
    let mut theta = Vec::with_capacity(shape.theta_len());
    for _ in 0..shape.layers {
        theta.extend(std::iter::repeat_n(a_raw, shape.units));
        theta.extend(std::iter::repeat_n(0.0, 2 * shape.units));
    }
    theta
}

/// Initial raw parameters: unit slopes and uniform weights as in the identity,
/// with offsets spread over `[-0.5, 0.5]` so the units do not start out
/// interchangeable.
pub fn default_theta(shape: FlowShape) -> Vec<f64> {
    let mut theta = identity_theta(shape);
    let k = shape.units;
    if k > 1 {
        for l in 0..shape.layers {
            for i in 0..k {
                theta[l * 3 * k + k + i] = -0.5 + i as f64 / (k - 1) as f64;
            }
        }
    }
    theta
}

/// Batched forward pass on the tape. `theta` is `n x 3KL` (or `1 x 3KL`),
/// `x` is `n x 1`. Returns `(eps, logdet)`, both `n x 1`.
pub(crate) fn forward_tape(tape: &mut Tape, theta: Var, x: Var, shape: FlowShape) -> Result<(Var, Var)> {
    let k = shape.units;
    let mut cur = x;
    let mut logdet: Option<Var> = None;
    for l in 0..shape.layers {
        let off = 3 * k * l;
        let a_raw = tape.slice_cols(theta, off, k)?;
        let b = tape.slice_cols(theta, off + k, k)?;
        let w_raw = tape.slice_cols(theta, off + 2 * k, k)?;

        let sp_a = tape.softplus(a_raw)?;
        let a = tape.offset(sp_a, MIN_SLOPE)?;
        let log_a = tape.log(a)?;
        let w_lse = tape.row_logsumexp(w_raw)?;
        let log_w = tape.sub(w_raw, w_lse)?;

        let ax = tape.mul(cur, a)?;
        let p = tape.add(ax, b)?;
        let neg_p = tape.neg(p)?;
        let sp_pos = tape.softplus(p)?;
        let sp_neg = tape.softplus(neg_p)?;

        let ts = tape.sub(log_w, sp_neg)?;
        let log_s = tape.row_logsumexp(ts)?;
        let t1 = tape.sub(log_w, sp_pos)?;
        let log_1ms = tape.row_logsumexp(t1)?;
        let y = tape.sub(log_s, log_1ms)?;

        let td = tape.add(log_w, log_a)?;
        let td = tape.sub(td, sp_pos)?;
        let td = tape.sub(td, sp_neg)?;
        let num = tape.row_logsumexp(td)?;
        let ld = tape.sub(num, log_s)?;
        let ld = tape.sub(ld, log_1ms)?;

        logdet = Some(match logdet {
            Some(acc) => tape.add(acc, ld)?,
            None => ld,
        });
        cur = y;
    }
    let logdet = match logdet {
        Some(v) => v,
        None => tape.scale(x, 0.0)?,
    };
    Ok((cur, logdet))
}

/// Per-row standard-normal-base log-density of `z` on the tape.
pub(crate) fn loglk_tape(tape: &mut Tape, theta: Var, z: Var, shape: FlowShape) -> Result<Var> {
    let (eps, logdet) = forward_tape(tape, theta, z, shape)?;
    let sq = tape.square(eps)?;
    let half = tape.scale(sq, -0.5)?;
    let out = tape.add(half, logdet)?;
    tape.offset(out, -HALF_LN_2PI)
}
