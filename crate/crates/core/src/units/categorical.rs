//! Categorical head over `K` logits, sampled with the Gumbel-max trick.

use crate::autodiff::{logsumexp, Matrix, Tape, Var};
use crate::error::Result;

pub fn sample(logits: &[f64], gumbel: &[f64]) -> f64 {
    argmax(logits.iter().zip(gumbel).map(|(l, g)| l + g)) as f64
}

fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

pub fn loglk(class: usize, logits: &[f64]) -> f64 {
    logits[class] - logsumexp(logits)
}

pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

pub(crate) fn loglk_tape(tape: &mut Tape, theta: Var, classes: &[usize], k: usize) -> Result<Var> {
    let mut onehot = Matrix::zeros(classes.len(), k);
    for (r, &c) in classes.iter().enumerate() {
        onehot.data[r * k + c] = 1.0;
    }
    let oh = tape.constant(onehot)?;
    let picked = tape.mul(oh, theta)?;
    let hit = tape.row_sum(picked)?;
    let lse = tape.row_logsumexp(theta)?;
    tape.sub(hit, lse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        for c in 0..3 {
            assert!((loglk(c, &[0.4, 0.4, 0.4]) - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn pmf_sums_to_one() {
        let logits = [1.5, -2.0, 0.3, 7.0];
        let total: f64 = (0..4).map(|c| loglk(c, &logits).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gumbel_max_picks_largest_perturbed_logit() {
        assert_eq!(sample(&[0.0, 1.0, 0.5], &[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(sample(&[0.0, 1.0, 0.5], &[2.0, 0.0, 0.0]), 0.0);
    }
}
