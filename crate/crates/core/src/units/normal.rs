//! Gaussian head parameterized by `(mu, log_sigma)`.

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// `0.5 * ln(2 pi)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub fn sample(mu: f64, log_sigma: f64, eps: f64) -> f64 {
    mu + log_sigma.exp() * eps
}

pub fn loglk(x: f64, mu: f64, log_sigma: f64) -> f64 {
    let d = (x - mu) * (-log_sigma).exp();
    -HALF_LN_2PI - log_sigma - 0.5 * d * d
}

pub fn abduct(x: f64, mu: f64, log_sigma: f64) -> f64 {
    (x - mu) * (-log_sigma).exp()
}

pub fn standard_loglk(eps: f64) -> f64 {
    -HALF_LN_2PI - 0.5 * eps * eps
}

/// Per-row log-density of `z` (`n x 1`) given `theta` (`n x 2` or `1 x 2`).
pub(crate) fn loglk_tape(tape: &mut Tape, theta: Var, z: Var) -> Result<Var> {
    let mu = tape.slice_cols(theta, 0, 1)?;
    let log_sigma = tape.slice_cols(theta, 1, 1)?;
    let inv_sigma = {
        let neg = tape.neg(log_sigma)?;
        tape.exp(neg)?
    };
    let diff = tape.sub(z, mu)?;
    let d = tape.mul(diff, inv_sigma)?;
    let sq = tape.square(d)?;
    let quad = tape.scale(sq, -0.5)?;
    let out = tape.sub(quad, log_sigma)?;
    tape.offset(out, -HALF_LN_2PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_at_mode() {
        assert!((loglk(0.0, 0.0, 0.0) + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn abduct_inverts_location_scale() {
        assert_eq!(abduct(3.0, 1.0, 2f64.ln()), 1.0);
        assert_eq!(sample(1.0, 2f64.ln(), 1.0), 3.0);
    }

    #[test]
    fn abduct_sample_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (mu, ls, e) = (rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0), rng.random_range(-4.0..4.0));
            assert!((abduct(sample(mu, ls, e), mu, ls) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_matches_scalar() {
        let mut t = Tape::new();
        let theta = t.constant(Matrix::new(2, 2, vec![0.5, -0.3, 1.0, 0.7]).unwrap()).unwrap();
        let z = t.constant(Matrix::column(vec![1.2, -0.4])).unwrap();
        let l = loglk_tape(&mut t, theta, z).unwrap();
        assert!((t.value(l)[0] - loglk(1.2, 0.5, -0.3)).abs() < 1e-14);
        assert!((t.value(l)[1] - loglk(-0.4, 1.0, 0.7)).abs() < 1e-14);
    }
}
