use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    fn new(rows: usize, cols: usize, value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            rows,
            cols,
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Named trainable parameter blocks with their Adam moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

/// Serialized form of a single parameter block (moments are not persisted).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamRecord {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Contract(format!("parameter `{name}` already exists")));
        }
        if value.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Shape {
                context: "param insert",
                detail: format!("`{name}`: {} values for {rows}x{cols}", value.len()),
            });
        }
        self.params.insert(name.to_string(), Param::new(rows, cols, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&[f64]> {
        self.params
            .get(name)
            .map(|p| p.value.as_slice())
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    /// Overwrite a parameter's values; the shape is fixed at creation.
    pub fn set(&mut self, name: &str, value: &[f64]) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
        if p.value.len() != value.len() {
            return Err(Error::Shape {
                context: "param set",
                detail: format!("`{name}` holds {} values, got {}", p.value.len(), value.len()),
            });
        }
        p.value.copy_from_slice(value);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Put a stored parameter on the tape.
    pub fn on_tape(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
        tape.param(name, p.rows, p.cols, &p.value)
    }

    pub fn to_records(&self) -> BTreeMap<String, ParamRecord> {
        self.params
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    ParamRecord {
                        rows: p.rows,
                        cols: p.cols,
                        values: p.value.clone(),
                    },
                )
            })
            .collect()
    }

    /// Restore values from records. Every record must match an existing block.
    pub fn load_records(&mut self, records: &BTreeMap<String, ParamRecord>) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                self.params.len(),
                records.len()
            )));
        }
        for (name, rec) in records {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if p.rows != rec.rows || p.cols != rec.cols || rec.values.len() != rec.rows * rec.cols {
                return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
            }
            self.set(name, &rec.values)?;
        }
        Ok(())
    }

    /// Multiply every gradient by a common factor so their joint L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
        let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            grads.values_mut().flatten().for_each(|g| *g *= k);
        }
        norm
    }
}

/// One bias-corrected Adam update. Parameters absent from `grads` see a zero gradient.
pub fn adam_step(store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, cfg: &AdamConfig) -> Result<()> {
    for (name, g) in grads {
        let p = store
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.value.len() != g.len() {
            return Err(Error::Shape {
                context: "adam_step",
                detail: format!("`{name}` has {} values, gradient has {}", p.value.len(), g.len()),
            });
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in store.params.iter_mut() {
        let g = grads.get(name);
        for i in 0..p.value.len() {
            let gi = g.map_or(0.0, |g| g[i]);
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = p.m[i] / bc1;
            let vhat = p.v[i] / bc2;
            p.value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(pairs: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = ParamStore::new();
        s.insert("w", 1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        adam_step(&mut s, &grads(&[("w", vec![0.0; 3])]), &AdamConfig::default()).unwrap();
        assert_eq!(s.value("w").unwrap(), &[1.0, -2.0, 0.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        let mut s = ParamStore::new();
        s.insert("x", 1, 1, vec![0.0]).unwrap();
        let cfg = AdamConfig::default();
        adam_step(&mut s, &grads(&[("x", vec![1.0])]), &cfg).unwrap();
        let expected = -1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((s.value("x").unwrap()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn identical_params_share_trajectories() {
        let mut s = ParamStore::new();
        s.insert("a", 1, 1, vec![0.3]).unwrap();
        s.insert("b", 1, 1, vec![0.3]).unwrap();
        for k in 0..50 {
            let g = (k as f64 * 0.37).sin();
            adam_step(&mut s, &grads(&[("a", vec![g]), ("b", vec![g])]), &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.value("a").unwrap(), s.value("b").unwrap());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", 1, 2, vec![0.0, 0.0]).unwrap();
        let err = adam_step(&mut s, &grads(&[("a", vec![1.0])]), &AdamConfig::default());
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", 1, 1, vec![0.0]).unwrap();
        assert!(s.insert("a", 1, 1, vec![0.0]).is_err());
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = grads(&[("a", vec![3.0]), ("b", vec![4.0])]);
        let before = ParamStore::clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-15 && (g["b"][0] - 0.8).abs() < 1e-15);
    }
}
