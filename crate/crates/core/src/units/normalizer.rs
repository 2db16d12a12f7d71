use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine standardization learned from training data: `z = (x - m) / s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub m: f64,
    pub s: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self { m: 0.0, s: 1.0 }
    }

    /// Column mean and population standard deviation. `name` labels the error.
    pub fn fit(name: &str, values: &[f64]) -> Result<Self> {
        let first = values.first().copied();
        let distinct = first.is_some_and(|f| values.iter().any(|&v| v != f));
        if !distinct {
            return Err(Error::DegenerateColumn(name.to_string()));
        }
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        if !(s > 0.0 && s.is_finite() && m.is_finite()) {
            return Err(Error::DegenerateColumn(name.to_string()));
        }
        Ok(Self { m, s })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.m) / self.s
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.s + self.m
    }

    /// Added to a z-space log-density to obtain the x-space log-density.
    pub fn loglk_correction(&self) -> f64 {
        -self.s.ln()
    }
}
