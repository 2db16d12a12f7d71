use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Matrix, Mlp, MlpSpec, ParamRecord, ParamStore, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::units::Normalizer;

pub const PREDICTOR_VERSION: &str = "dcg-predictor/1";

/// A scalar prediction from named features.
pub trait Predictor {
    /// Feature names, in the order `predict` expects them.
    fn features(&self) -> &[String];

    fn predict(&self, x: &[f64]) -> Result<f64>;

    fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Feature rows of `data` in the predictor's order.
pub fn feature_rows(predictor: &dyn Predictor, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let cols: Vec<&[f64]> = predictor
        .features()
        .iter()
        .map(|f| data.values(f))
        .collect::<Result<_>>()?;
    Ok((0..data.n_rows()).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
}

/// `b + w . x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    features: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearPredictor {
    pub fn new(features: &[&str], weights: Vec<f64>, bias: f64) -> Result<Self> {
        if features.len() != weights.len() {
            return Err(Error::Shape {
                context: "linear predictor",
                detail: format!("{} features, {} weights", features.len(), weights.len()),
            });
        }
        Ok(Self {
            features: features.iter().map(|f| f.to_string()).collect(),
            weights,
            bias,
        })
    }
}

impl Predictor for LinearPredictor {
    fn features(&self) -> &[String] {
        &self.features
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        check_width(x, self.features.len())?;
        Ok(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }
}

fn check_width(x: &[f64], want: usize) -> Result<()> {
    if x.len() != want {
        return Err(Error::Shape {
            context: "predictor input",
            detail: format!("{} values for {want} features", x.len()),
        });
    }
    Ok(())
}

/// Trainable regressor: standardized features through an MLP, output mapped
/// back to target units.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPredictor {
    features: Vec<String>,
    mlp: Mlp,
    params: ParamStore,
    x_norm: Vec<Normalizer>,
    y_norm: Normalizer,
}

#[derive(Serialize, Deserialize)]
struct PredictorFile {
    version: String,
    features: Vec<String>,
    net: MlpSpec,
    x_norm: Vec<Normalizer>,
    y_norm: Normalizer,
    params: BTreeMap<String, ParamRecord>,
}

impl MlpPredictor {
    pub fn new(features: &[&str], hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            activation: Activation::Tanh,
            ..MlpSpec::new(features.len(), hidden, 1)
        };
        let mlp = Mlp::new("predictor", spec)?;
        let mut params = ParamStore::new();
        mlp.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed), None, 1.0)?;
        Ok(Self {
            features: features.iter().map(|f| f.to_string()).collect(),
            mlp,
            params,
            x_norm: vec![Normalizer::identity(); features.len()],
            y_norm: Normalizer::identity(),
        })
    }

    /// Standardize features and target with statistics of the training
    /// rows. Constant features keep the identity map.
    pub fn fit_normalizers(&mut self, rows: &[Vec<f64>], target: &[f64]) -> Result<()> {
        for (k, f) in self.features.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            self.x_norm[k] = Normalizer::fit(f, &col).unwrap_or_else(|_| Normalizer::identity());
        }
        self.y_norm = Normalizer::fit("target", target)?;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn target_normalizer(&self) -> Normalizer {
        self.y_norm
    }

    /// Standardized feature matrix for raw feature rows.
    pub(crate) fn encode(&self, rows: &[Vec<f64>]) -> Result<Matrix> {
        let d = self.features.len();
        let mut m = Matrix::zeros(rows.len(), d);
        for (r, row) in rows.iter().enumerate() {
            check_width(row, d)?;
            for k in 0..d {
                m.data[r * d + k] = self.x_norm[k].normalize(row[k]);
            }
        }
        Ok(m)
    }

    /// Predictions in standardized target units (`n x 1`) on the tape.
    pub(crate) fn forward_z(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.mlp.forward(tape, &self.params, x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = PredictorFile {
            version: PREDICTOR_VERSION.to_string(),
            features: self.features.clone(),
            net: self.mlp.spec().clone(),
            x_norm: self.x_norm.clone(),
            y_norm: self.y_norm,
            params: self.params.to_records(),
        };
        serde_json::to_string_pretty(&file).expect("predictor serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PredictorFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed predictor file: {e}")))?;
        if file.version != PREDICTOR_VERSION {
            return Err(Error::Checkpoint(format!(
                "predictor version `{}` (expected `{PREDICTOR_VERSION}`)",
                file.version
            )));
        }
        if file.x_norm.len() != file.features.len() || file.net.input_dim != file.features.len() {
            return Err(Error::Checkpoint("predictor features and network disagree".into()));
        }
        let mlp = Mlp::new("predictor", file.net)?;
        let mut params = ParamStore::new();
        mlp.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0), None, 1.0)?;
        params.load_records(&file.params)?;
        Ok(Self {
            features: file.features,
            mlp,
            params,
            x_norm: file.x_norm,
            y_norm: file.y_norm,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl Predictor for MlpPredictor {
    fn features(&self) -> &[String] {
        &self.features
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_rows(std::slice::from_ref(&x.to_vec()))?[0])
    }

    fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let x = tape.constant(self.encode(rows)?)?;
        let z = self.forward_z(&mut tape, x)?;
        Ok(tape.value(z).iter().map(|&v| self.y_norm.denormalize(v)).collect())
    }
}
