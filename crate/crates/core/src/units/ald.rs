//! Asymmetric Laplace head parameterized by `(m, log_lambda, log_kappa)`.
//!
//! Density `lambda / (kappa + 1/kappa) * exp(-lambda * kappa * (x - m))` above
//! `m` and `lambda / (kappa + 1/kappa) * exp(lambda * (x - m) / kappa)` below.
//! Noise is uniform on `(0, 1)` and enters through the inverse CDF.

use crate::autodiff::{softplus, Tape, Var};
use crate::error::Result;

pub fn loglk(x: f64, m: f64, log_lambda: f64, log_kappa: f64) -> f64 {
    let (lambda, kappa) = (log_lambda.exp(), log_kappa.exp());
    let d = x - m;
    let log_norm = log_lambda - (softplus(2.0 * log_kappa) - log_kappa);
    if d >= 0.0 {
        log_norm - lambda * kappa * d
    } else {
        log_norm + lambda * d / kappa
    }
}

pub fn cdf(x: f64, m: f64, log_lambda: f64, log_kappa: f64) -> f64 {
    let (lambda, kappa) = (log_lambda.exp(), log_kappa.exp());
    let k2 = kappa * kappa;
    let d = x - m;
    if d < 0.0 {
        k2 / (1.0 + k2) * (lambda * d / kappa).exp()
    } else {
        1.0 - (-lambda * kappa * d).exp() / (1.0 + k2)
    }
}

/// Inverse CDF at `u` in `(0, 1)`.
pub fn sample(m: f64, log_lambda: f64, log_kappa: f64, u: f64) -> f64 {
    let (lambda, kappa) = (log_lambda.exp(), log_kappa.exp());
    let k2 = kappa * kappa;
    let split = k2 / (1.0 + k2);
    if u < split {
        m + kappa / lambda * (u / split).ln()
    } else {
        m - ((1.0 - u) * (1.0 + k2)).ln() / (lambda * kappa)
    }
}

pub fn abduct(x: f64, m: f64, log_lambda: f64, log_kappa: f64) -> f64 {
    cdf(x, m, log_lambda, log_kappa)
}

pub(crate) fn loglk_tape(tape: &mut Tape, theta: Var, z: Var) -> Result<Var> {
    let m = tape.slice_cols(theta, 0, 1)?;
    let log_lambda = tape.slice_cols(theta, 1, 1)?;
    let log_kappa = tape.slice_cols(theta, 2, 1)?;
    // log(kappa + 1/kappa) = softplus(2 log kappa) - log kappa
    let two_lk = tape.scale(log_kappa, 2.0)?;
    let sp = tape.softplus(two_lk)?;
    let log_k_sum = tape.sub(sp, log_kappa)?;
    let log_norm = tape.sub(log_lambda, log_k_sum)?;

    let d = tape.sub(z, m)?;
    let above = tape.relu(d)?;
    let neg_d = tape.neg(d)?;
    let below = tape.relu(neg_d)?;
    let rate_up = {
        let s = tape.add(log_lambda, log_kappa)?;
        tape.exp(s)?
    };
    let rate_down = {
        let s = tape.sub(log_lambda, log_kappa)?;
        tape.exp(s)?
    };
    let t_up = tape.mul(rate_up, above)?;
    let t_down = tape.mul(rate_down, below)?;
    let penalty = tape.add(t_up, t_down)?;
    tape.sub(log_norm, penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_case_peaks_at_half_lambda() {
        for l in [0.3f64, 1.0, 4.0] {
            assert!((loglk(2.0, 2.0, l.ln(), 0.0) - (l / 2.0).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn abduct_sample_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let m = rng.random_range(-3.0..3.0);
            let ll = rng.random_range(-1.0..1.5);
            let lk = rng.random_range(-1.0..1.0);
            let u: f64 = rng.random_range(1e-6..1.0 - 1e-6);
            let x = sample(m, ll, lk, u);
            assert!((abduct(x, m, ll, lk) - u).abs() < 1e-9, "u={u} x={x}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = rng.random_range(-2.0..2.0);
            let ll: f64 = rng.random_range(-1.0..1.0);
            let lk = rng.random_range(-1.0..1.0);
            let lambda = ll.exp();
            // Simpson on each side of the kink.
            let simpson = |a: f64, b: f64| {
                let n = 20_000;
                let h = (b - a) / n as f64;
                let f = |x: f64| loglk(x, m, ll, lk).exp();
                let mut s = f(a) + f(b);
                for i in 1..n {
                    s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
                }
                s * h / 3.0
            };
            let total = simpson(m - 50.0 / lambda, m) + simpson(m, m + 50.0 / lambda);
            assert!((total - 1.0).abs() < 1e-4, "total {total}");
        }
    }

    #[test]
    fn cdf_is_continuous_at_mode() {
        let (m, ll, lk) = (0.4, 0.2, -0.6);
        let below = cdf(m - 1e-12, m, ll, lk);
        let above = cdf(m, m, ll, lk);
        assert!((below - above).abs() < 1e-9);
    }

    #[test]
    fn tape_matches_scalar() {
        let mut t = Tape::new();
        let theta = t.constant(Matrix::new(1, 3, vec![0.2, 0.5, -0.4]).unwrap()).unwrap();
        let z = t.constant(Matrix::column(vec![-1.0, 0.2, 3.0])).unwrap();
        let l = loglk_tape(&mut t, theta, z).unwrap();
        for (i, x) in [-1.0, 0.2, 3.0].into_iter().enumerate() {
            assert!((t.value(l)[i] - loglk(x, 0.2, 0.5, -0.4)).abs() < 1e-13);
        }
    }
}
