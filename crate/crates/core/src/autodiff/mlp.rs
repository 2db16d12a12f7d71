use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

/// Fully connected network shape. Empty `hidden` means a single affine map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Tanh,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("MLP dimensions must be >= 1: {:?}", self.dims())));
        }
        Ok(())
    }
}

/// A network whose weights live in a [`ParamStore`] under `{prefix}.w{i}` / `{prefix}.b{i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    spec: MlpSpec,
}

impl Mlp {
    pub fn new(prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            prefix: prefix.to_string(),
            spec,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    pub fn num_layers(&self) -> usize {
        self.spec.hidden.len() + 1
    }

    /// Glorot-uniform hidden weights, zero hidden biases. The output layer's
    /// weights are additionally multiplied by `output_scale` and its bias set
    /// to `output_bias` (zeros when `None`).
    pub fn init<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        rng: &mut R,
        output_bias: Option<&[f64]>,
        output_scale: f64,
    ) -> Result<()> {
        let dims = self.spec.dims();
        let last = dims.len() - 2;
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if l == last { output_scale } else { 1.0 };
            let w = (0..fan_in * fan_out)
                .map(|_| scale * rng.random_range(-limit..limit))
                .collect();
            store.insert(&self.weight_name(l), fan_in, fan_out, w)?;
            let b = match (l == last, output_bias) {
                (true, Some(b)) => {
                    if b.len() != fan_out {
                        return Err(Error::Shape {
                            context: "mlp init",
                            detail: format!("output bias has {} values, expected {fan_out}", b.len()),
                        });
                    }
                    b.to_vec()
                }
                _ => vec![0.0; fan_out],
            };
            store.insert(&self.bias_name(l), 1, fan_out, b)?;
        }
        Ok(())
    }

    /// Batched forward pass: `input` is `n x input_dim`, result is `n x output_dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let (_, cols) = tape.shape(input);
        if cols != self.spec.input_dim {
            return Err(Error::Shape {
                context: "mlp_forward",
                detail: format!("input has {cols} columns, network expects {}", self.spec.input_dim),
            });
        }
        let mut h = input;
        for l in 0..self.num_layers() {
            let w = store.on_tape(tape, &self.weight_name(l))?;
            let b = store.on_tape(tape, &self.bias_name(l))?;
            let z = tape.matmul(h, w)?;
            h = tape.add(z, b)?;
            if l + 1 < self.num_layers() {
                h = match self.spec.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                    Activation::Sigmoid => tape.sigmoid(h)?,
                };
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_linear_map_outputs_zero() {
        let mlp = Mlp::new("f", MlpSpec::new(3, vec![], 2)).unwrap();
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), None, 0.0).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Matrix::new(1, 3, vec![1.0, -4.0, 9.0]).unwrap()).unwrap();
        let y = mlp.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn identity_weights_copy_input() {
        let mlp = Mlp::new("f", MlpSpec::new(2, vec![], 2)).unwrap();
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), None, 1.0).unwrap();
        store.set("f.w0", &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Matrix::new(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let y = mlp.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y), &[1.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mlp = Mlp::new("f", MlpSpec::new(2, vec![4], 1)).unwrap();
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), None, 1.0).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 3)).unwrap();
        assert!(matches!(mlp.forward(&mut t, &store, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_width_layers_are_invalid() {
        assert!(Mlp::new("f", MlpSpec::new(2, vec![0], 1)).is_err());
    }
}
