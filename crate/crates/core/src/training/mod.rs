//! Joint maximum-likelihood training, warm start, k-fold evaluation and checkpoints.

mod checkpoint;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, ParamStore, Tape};
use crate::data::{ColumnKind, Dataset, GraphSpec};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, ConfounderDraws, InferenceConfig};
use crate::units::Normalizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Confounder draws per batch.
    pub m: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Stop after this many epochs without a lower training loss.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-3,
            m: 100,
            seed: 0,
            clip_norm: 10.0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.m == 0 {
            return Err(Error::Config("batch size and M must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }

    fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            m: self.m,
            n: 1,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training nll per epoch, averaged over the epoch's batches.
    pub curve: Vec<f64>,
    /// Mean nll on the training data before the first update.
    pub initial_nll: f64,
    pub final_nll: f64,
    pub steps: u64,
}

/// Fit a normalizer to every continuous node and take class labels of
/// discrete nodes from the data.
pub fn warm_start(graph: &mut CausalGraph, data: &Dataset) -> Result<BTreeMap<String, Normalizer>> {
    if data.n_rows() < 2 {
        return Err(Error::Data("warm start needs at least two rows".into()));
    }
    let names: Vec<String> = graph.observed_names().iter().map(|s| s.to_string()).collect();
    let mut fitted = BTreeMap::new();
    for name in names {
        let col = data
            .column(&name)
            .ok_or_else(|| Error::Data(format!("dataset has no column `{name}`")))?;
        let kind = graph.unit(&name)?.kind();
        if kind.is_continuous() {
            let values = data.values(&name)?;
            let values: Vec<f64> = match &col.kind {
                ColumnKind::Categorical { levels } => values.iter().map(|&c| levels[c as usize] as f64).collect(),
                ColumnKind::Continuous => values.to_vec(),
            };
            let n = Normalizer::fit(&name, &values)?;
            graph.set_normalizer(&name, n)?;
            fitted.insert(name, n);
        } else if let ColumnKind::Categorical { levels } = &col.kind {
            graph.set_levels(&name, levels.clone())?;
        }
    }
    Ok(fitted)
}

/// Mean negative log-likelihood of `data`.
pub fn evaluate_nll(graph: &CausalGraph, data: &Dataset, cfg: &InferenceConfig) -> Result<f64> {
    Ok(-graph.mean_loglk(data, cfg)?)
}

/// Minibatch Adam on the mean negative joint log-likelihood. Confounded
/// graphs draw fresh confounder values for every batch. On a non-finite loss
/// the parameters from before the offending batch are restored.
pub fn fit(graph: &mut CausalGraph, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let cols = graph.data_columns(data)?;
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let eval = cfg.inference();
    let initial_nll = evaluate_nll(graph, data, &eval)?;
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Vec<f64>> = cols.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect();
            let draws = graph
                .has_confounders()
                .then(|| ConfounderDraws::Shared(graph.draw_confounders(cfg.m, &mut rng)));
            let snapshot: ParamStore = graph.params().clone();
            match step(graph, &batch, draws.as_ref(), cfg.clip_norm, &adam) {
                Ok(loss) => total += loss * idx.len() as f64,
                Err(e) if e.is_numeric() => {
                    *graph.params_mut() = snapshot;
                    return Err(Error::NanLoss { epoch, batch: b });
                }
                Err(e) => return Err(e),
            }
        }
        let mean = total / n as f64;
        curve.push(mean);
        if let Some(p) = cfg.patience {
            if mean < best {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p {
                    break;
                }
            }
        }
    }
    let final_nll = evaluate_nll(graph, data, &eval)?;
    Ok(TrainReport {
        curve,
        initial_nll,
        final_nll,
        steps: graph.params().step(),
    })
}

fn step(
    graph: &mut CausalGraph,
    batch: &[Vec<f64>],
    draws: Option<&ConfounderDraws>,
    clip: f64,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let l = graph.loglk_tape(&mut tape, batch, draws)?;
    let mean = tape.mean(l)?;
    let loss = tape.neg(mean)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numeric {
            op: "loss",
            detail: format!("training loss is {value}"),
        });
    }
    let mut grads = tape.backward(loss)?.into_params();
    if grads.values().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            op: "gradient",
            detail: "non-finite gradient".into(),
        });
    }
    ParamStore::clip_grad_norm(&mut grads, clip);
    adam_step(graph.params_mut(), &grads, adam)?;
    Ok(value)
}

/// Fold index of every row: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub test_nll: f64,
    pub final_train_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub warnings: Vec<String>,
}

impl CrossValidation {
    pub fn test_nll(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.test_nll).collect()
    }

    pub fn mean_test_nll(&self) -> f64 {
        self.test_nll().iter().sum::<f64>() / self.folds.len() as f64
    }
}

/// Train a fresh graph on all but one fold and score the held-out fold, for
/// every fold in turn. Normalizers are fitted on the training folds only.
pub fn cross_validate(spec: &GraphSpec, data: &Dataset, folds: usize, cfg: &TrainConfig) -> Result<CrossValidation> {
    cfg.validate()?;
    if folds < 2 || data.n_rows() < folds {
        return Err(Error::Config(format!(
            "{folds} folds need at least {folds} rows (have {})",
            data.n_rows()
        )));
    }
    let assignment = fold_assignment(data.n_rows(), folds, cfg.seed);
    let mut warnings = Vec::new();
    let mut results = Vec::with_capacity(folds);
    for k in 0..folds {
        let train_idx: Vec<usize> = (0..data.n_rows()).filter(|&r| assignment[r] != k).collect();
        let test_idx: Vec<usize> = (0..data.n_rows()).filter(|&r| assignment[r] == k).collect();
        let mut fold_cfg = *cfg;
        if train_idx.len() < cfg.batch_size {
            fold_cfg.batch_size = train_idx.len();
            warnings.push(format!(
                "fold {k}: batch size shrunk from {} to {}",
                cfg.batch_size,
                train_idx.len()
            ));
        }
        let train = data.select_rows(&train_idx);
        let test = data.select_rows(&test_idx);
        let mut graph = CausalGraph::from_spec(spec)?;
        warm_start(&mut graph, &train)?;
        let report = fit(&mut graph, &train, &fold_cfg)?;
        results.push(FoldResult {
            fold: k,
            train_rows: train_idx.len(),
            test_rows: test_idx.len(),
            test_nll: evaluate_nll(&graph, &test, &cfg.inference())?,
            final_train_nll: report.final_nll,
        });
    }
    Ok(CrossValidation {
        folds: results,
        warnings,
    })
}
