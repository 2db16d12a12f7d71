//! Counterfactual explanations and fairness: CU_k audits, CU_2-regularized
//! predictor training, rank preservation per group.

mod predictor;
mod protocol;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Matrix, ParamStore, Tape};
use crate::data::{pearson, Dataset};
use crate::error::{Error, Result};
use crate::graph::{stream_rng, CausalGraph, CounterfactualSet, InferenceConfig, Intervention};
use crate::units::UnitKind;

pub use predictor::{feature_rows, LinearPredictor, MlpPredictor, Predictor, PREDICTOR_VERSION};
pub use protocol::{audit_from_predictions, read_cf_predictions, write_cf_inputs, CfPrediction};

/// Counterfactual draws per training row for the CU_2 penalty.
pub const DEFAULT_N_CF: usize = 5;

/// Which values the protected node is set to in the counterfactual world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "values")]
pub enum InterventionPolicy {
    /// Binary nodes only: the other class.
    Complement,
    /// Every listed class code except the factual one, results averaged.
    Values(Vec<f64>),
}

impl InterventionPolicy {
    /// Intervention values for a row whose protected value is `factual`.
    pub fn targets(&self, graph: &CausalGraph, protected: &str, factual: f64) -> Result<Vec<f64>> {
        let kind = graph.unit(protected)?.kind();
        match (self, kind) {
            (InterventionPolicy::Complement, UnitKind::Bernoulli) => Ok(vec![1.0 - factual]),
            (InterventionPolicy::Complement, _) => Err(Error::Config(format!(
                "protected node `{protected}` is not binary; give explicit intervention values"
            ))),
            (InterventionPolicy::Values(vs), k) if k.is_discrete() => {
                let out: Vec<f64> = vs.iter().copied().filter(|&v| v != factual).collect();
                if out.is_empty() {
                    return Err(Error::Config("intervention value list leaves nothing to compare".into()));
                }
                Ok(out)
            }
            _ => Err(Error::Config(format!("protected node `{protected}` must be discrete"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            InterventionPolicy::Complement => "complement".into(),
            InterventionPolicy::Values(vs) => format!("values {vs:?}"),
        }
    }
}

/// Counterfactual feature rows for one evidence row, pooled over all
/// intervention targets, with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualFeatures {
    pub factual: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

fn feature_index(names: &[String], features: &[String]) -> Result<Vec<usize>> {
    features
        .iter()
        .map(|f| {
            names
                .iter()
                .position(|n| n == f)
                .ok_or_else(|| Error::UnknownNode(f.clone()))
        })
        .collect()
}

/// A column of `data` as the graph sees it: class codes for discrete
/// nodes, values for continuous ones.
pub fn graph_column(graph: &CausalGraph, data: &Dataset, name: &str) -> Result<Vec<f64>> {
    match graph.observed_names().iter().position(|&n| n == name) {
        Some(k) => Ok(graph.data_columns(data)?.swap_remove(k)),
        None => Ok(data.values(name)?.to_vec()),
    }
}

/// Feature rows of `data` in the predictor's order, graph representation.
pub fn graph_feature_rows(graph: &CausalGraph, predictor: &dyn Predictor, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let cols: Vec<Vec<f64>> = predictor
        .features()
        .iter()
        .map(|f| graph_column(graph, data, f))
        .collect::<Result<_>>()?;
    Ok((0..data.n_rows()).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
}

/// Counterfactual sets for every row of `data` under the policy, one per
/// target value. Row `r` draws from substream `r` of `cfg.seed`.
pub fn counterfactual_features(
    graph: &CausalGraph,
    features: &[String],
    protected: &str,
    policy: &InterventionPolicy,
    data: &Dataset,
    cfg: &InferenceConfig,
) -> Result<Vec<CounterfactualFeatures>> {
    let cols = graph.data_columns(data)?;
    let names: Vec<String> = graph.observed_names().iter().map(|s| s.to_string()).collect();
    let idx = feature_index(&names, features)?;
    let p = feature_index(&names, &[protected.to_string()])?[0];
    (0..data.n_rows())
        .map(|r| {
            let ev: Vec<f64> = cols.iter().map(|c| c[r]).collect();
            let targets = policy.targets(graph, protected, ev[p])?;
            let mut rng = stream_rng(cfg.seed, r as u64);
            let mut rows = Vec::new();
            let mut weights = Vec::new();
            for &v in &targets {
                let set = graph.counterfactual_with(&ev, &Intervention::new().with(protected, v), cfg, &mut rng)?;
                for (row, w) in set.rows.iter().zip(&set.weights) {
                    rows.push(idx.iter().map(|&k| row[k]).collect());
                    weights.push(w / targets.len() as f64);
                }
            }
            Ok(CounterfactualFeatures {
                factual: idx.iter().map(|&k| ev[k]).collect(),
                rows,
                weights,
            })
        })
        .collect()
}

/// Per-row audit values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowAudit {
    pub row: usize,
    pub protected: f64,
    /// Y: prediction on the factual features.
    pub factual: f64,
    /// Weighted mean of Y' over the counterfactual draws.
    pub counterfactual: f64,
    /// E_w |Y' - Y|.
    pub abs_1: f64,
    /// E_w |Y' - Y|^2.
    pub abs_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub protected: String,
    pub policy: String,
    pub rows: usize,
    pub cu_1: f64,
    pub cu_2: f64,
    /// Mean |E_w[Y'] - Y|: the gap between the factual prediction and the
    /// expected counterfactual prediction.
    pub mean_gap: f64,
    pub factual_mean: f64,
    pub counterfactual_mean: f64,
    /// Spearman correlation between predictions and the target within each
    /// protected group, keyed by group label.
    pub spearman: BTreeMap<String, f64>,
}

/// Audit values from factual and weighted counterfactual predictions.
pub fn row_audit(row: usize, protected: f64, factual: f64, cf: &[f64], weights: &[f64]) -> RowAudit {
    let mut out = RowAudit {
        row,
        protected,
        factual,
        counterfactual: 0.0,
        abs_1: 0.0,
        abs_2: 0.0,
    };
    for (y, w) in cf.iter().zip(weights) {
        let d = (y - factual).abs();
        out.counterfactual += w * y;
        out.abs_1 += w * d;
        out.abs_2 += w * d * d;
    }
    out
}

/// Aggregate row audits. `spearman` is filled by the caller when targets are known.
pub fn summarize(protected: &str, policy: &InterventionPolicy, rows: &[RowAudit]) -> FairnessReport {
    let n = rows.len().max(1) as f64;
    FairnessReport {
        protected: protected.to_string(),
        policy: policy.label(),
        rows: rows.len(),
        cu_1: rows.iter().map(|r| r.abs_1).sum::<f64>() / n,
        cu_2: rows.iter().map(|r| r.abs_2).sum::<f64>() / n,
        mean_gap: rows.iter().map(|r| (r.counterfactual - r.factual).abs()).sum::<f64>() / n,
        factual_mean: rows.iter().map(|r| r.factual).sum::<f64>() / n,
        counterfactual_mean: rows.iter().map(|r| r.counterfactual).sum::<f64>() / n,
        spearman: BTreeMap::new(),
    }
}

/// Per-row CU terms of `predictor` on `data`.
pub fn audit_rows(
    graph: &CausalGraph,
    predictor: &dyn Predictor,
    protected: &str,
    policy: &InterventionPolicy,
    data: &Dataset,
    cfg: &InferenceConfig,
) -> Result<Vec<RowAudit>> {
    let sets = counterfactual_features(graph, predictor.features(), protected, policy, data, cfg)?;
    let prot = graph_column(graph, data, protected)?;
    sets.iter()
        .enumerate()
        .map(|(r, s)| {
            let y = predictor.predict(&s.factual)?;
            let cf = predictor.predict_rows(&s.rows)?;
            Ok(row_audit(r, prot[r], y, &cf, &s.weights))
        })
        .collect()
}

/// CU_k: mean over rows of E_w |Y' - Y|^k.
pub fn cu_k(
    graph: &CausalGraph,
    predictor: &dyn Predictor,
    protected: &str,
    k: u32,
    policy: &InterventionPolicy,
    data: &Dataset,
    cfg: &InferenceConfig,
) -> Result<f64> {
    let sets = counterfactual_features(graph, predictor.features(), protected, policy, data, cfg)?;
    let mut total = 0.0;
    for s in &sets {
        let y = predictor.predict(&s.factual)?;
        let cf = predictor.predict_rows(&s.rows)?;
        total += cf.iter().zip(&s.weights).map(|(c, w)| w * (c - y).abs().powi(k as i32)).sum::<f64>();
    }
    Ok(total / sets.len().max(1) as f64)
}

/// Full audit: CU_1, CU_2 and, when `target` is given, per-group Spearman.
pub fn audit(
    graph: &CausalGraph,
    predictor: &dyn Predictor,
    protected: &str,
    policy: &InterventionPolicy,
    data: &Dataset,
    target: Option<&str>,
    cfg: &InferenceConfig,
) -> Result<FairnessReport> {
    let rows = audit_rows(graph, predictor, protected, policy, data, cfg)?;
    let mut report = summarize(protected, policy, &rows);
    if let Some(t) = target {
        let preds: Vec<f64> = rows.iter().map(|r| r.factual).collect();
        let groups: Vec<f64> = rows.iter().map(|r| r.protected).collect();
        report.spearman = spearman_by_group(&preds, &graph_column(graph, data, t)?, &groups)?
            .into_iter()
            .map(|(g, rho)| (group_label(graph, protected, g), rho))
            .collect();
    }
    Ok(report)
}

fn group_label(graph: &CausalGraph, node: &str, code: i64) -> String {
    match graph.levels(node) {
        Some(levels) if (code as usize) < levels.len() => levels[code as usize].to_string(),
        _ => code.to_string(),
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data("Spearman correlation needs two equal-length samples of size >= 2".into()));
    }
    let rho = pearson(&ranks(a), &ranks(b));
    if !rho.is_finite() {
        return Err(Error::Data("Spearman correlation is undefined for a constant sample".into()));
    }
    Ok(rho.clamp(-1.0, 1.0))
}

/// Rank correlation between predictions and targets within each group code.
pub fn spearman_by_group(predictions: &[f64], targets: &[f64], groups: &[f64]) -> Result<BTreeMap<i64, f64>> {
    if predictions.len() != targets.len() || targets.len() != groups.len() {
        return Err(Error::Data("predictions, targets and groups differ in length".into()));
    }
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        members.entry(g as i64).or_default().push(i);
    }
    members
        .into_iter()
        .map(|(g, idx)| {
            if idx.len() < 2 {
                return Err(Error::Data(format!("group {g} has a single row")));
            }
            let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
            let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            Ok((g, spearman(&p, &t)?))
        })
        .collect()
}

/// Per-feature summary of a counterfactual explanation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureShift {
    pub name: String,
    pub factual: f64,
    pub counterfactual_mean: f64,
    /// Weighted share of draws in which the value differs from the factual one.
    pub changed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub factual_prediction: f64,
    pub counterfactual_prediction: f64,
    pub features: Vec<FeatureShift>,
}

/// Abduct, intervene and predict for one evidence row (observed order).
pub fn explain_sample(
    graph: &CausalGraph,
    predictor: &dyn Predictor,
    evidence: &[f64],
    doing: &Intervention,
    cfg: &InferenceConfig,
) -> Result<(Explanation, CounterfactualSet)> {
    let set = graph.counterfactual(evidence, doing, cfg)?;
    let idx = feature_index(&set.names, predictor.features())?;
    let pick = |row: &[f64]| idx.iter().map(|&k| row[k]).collect::<Vec<f64>>();
    let factual_prediction = predictor.predict(&pick(evidence))?;
    let preds = predictor.predict_rows(&set.rows.iter().map(|r| pick(r)).collect::<Vec<_>>())?;
    let counterfactual_prediction = preds.iter().zip(&set.weights).map(|(p, w)| p * w).sum();
    let features = set
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| FeatureShift {
            name: name.clone(),
            factual: evidence[k],
            counterfactual_mean: set.expectation_under(|r| r[k]),
            changed: set.expectation_under(|r| if r[k] != evidence[k] { 1.0 } else { 0.0 }),
        })
        .collect();
    Ok((
        Explanation {
            factual_prediction,
            counterfactual_prediction,
            features,
        },
        set,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the CU_2 penalty.
    pub lambda: f64,
    /// Counterfactual draws per training row.
    pub n_cf: usize,
    /// Confounder draws per counterfactual.
    pub m: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for FairTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 3e-3,
            lambda: 0.0,
            n_cf: DEFAULT_N_CF,
            m: 100,
            seed: 0,
            clip_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairTrainReport {
    /// Mean training objective per epoch (standardized target units).
    pub curve: Vec<f64>,
    pub holdout: FairnessReport,
}

/// Train `predictor` on `train` to minimize MSE(Y, target) + lambda * CU_2,
/// both on the standardized target scale. The counterfactual feature sets
/// are generated once per training row from that row's own substream and
/// reused every epoch. Returns the audit on `holdout`.
#[allow(clippy::too_many_arguments)]
pub fn train_fair(
    graph: &CausalGraph,
    predictor: &mut MlpPredictor,
    train: &Dataset,
    holdout: &Dataset,
    target: &str,
    protected: &str,
    policy: &InterventionPolicy,
    cfg: &FairTrainConfig,
) -> Result<FairTrainReport> {
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    if cfg.batch_size == 0 || cfg.n_cf == 0 || cfg.m == 0 {
        return Err(Error::Config("batch size, N_cf and M must be at least 1".into()));
    }
    if predictor.features().iter().any(|f| f == target) {
        return Err(Error::Config(format!("target `{target}` is also a predictor feature")));
    }
    let rows = graph_feature_rows(graph, predictor, train)?;
    let target_col = graph_column(graph, train, target)?;
    predictor.fit_normalizers(&rows, &target_col)?;
    let x = predictor.encode(&rows)?;
    let yn = predictor.target_normalizer();
    let y: Vec<f64> = target_col.iter().map(|&v| yn.normalize(v)).collect();
    let inference = InferenceConfig {
        m: cfg.m,
        n: cfg.n_cf,
        seed: cfg.seed,
    };
    let cf = if cfg.lambda > 0.0 {
        let sets = counterfactual_features(graph, predictor.features(), protected, policy, train, &inference)?;
        let encoded: Vec<(Matrix, Vec<f64>)> = sets
            .iter()
            .map(|s| Ok((predictor.encode(&s.rows)?, s.weights.clone())))
            .collect::<Result<_>>()?;
        Some(encoded)
    } else {
        None
    };

    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let d = x.cols;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let b = idx.len();
            let mut xb = Matrix::zeros(b, d);
            for (i, &r) in idx.iter().enumerate() {
                xb.data[i * d..(i + 1) * d].copy_from_slice(x.row(r));
            }
            let mut tape = Tape::new();
            let xv = tape.constant(xb)?;
            let pred = predictor.forward_z(&mut tape, xv)?;
            let yv = tape.constant(Matrix::column(idx.iter().map(|&r| y[r]).collect()))?;
            let err = tape.sub(pred, yv)?;
            let sq = tape.square(err)?;
            let mut loss = tape.mean(sq)?;
            if let Some(cf) = &cf {
                let (mut rows, mut owner, mut weights) = (Vec::new(), Vec::new(), Vec::new());
                for (i, &r) in idx.iter().enumerate() {
                    let (m, w) = &cf[r];
                    rows.extend_from_slice(&m.data);
                    owner.extend(std::iter::repeat_n(i, m.rows));
                    weights.extend_from_slice(w);
                }
                let xc = tape.constant(Matrix::new(owner.len(), d, rows)?)?;
                let pc = predictor.forward_z(&mut tape, xc)?;
                // Factual prediction of each counterfactual row's owner.
                let mut select = Matrix::zeros(owner.len(), b);
                for (j, &i) in owner.iter().enumerate() {
                    select.data[j * b + i] = 1.0;
                }
                let sel = tape.constant(select)?;
                let pf = tape.matmul(sel, pred)?;
                let gap = tape.sub(pc, pf)?;
                let gap2 = tape.square(gap)?;
                let w = tape.constant(Matrix::column(weights))?;
                let weighted = tape.mul(gap2, w)?;
                let cu2 = tape.sum(weighted)?;
                let cu2 = tape.scale(cu2, cfg.lambda / b as f64)?;
                loss = tape.add(loss, cu2)?;
            }
            total += tape.scalar(loss) * b as f64;
            let mut grads = tape.backward(loss)?.into_params();
            ParamStore::clip_grad_norm(&mut grads, cfg.clip_norm);
            adam_step(predictor.params_mut(), &grads, &adam)?;
        }
        curve.push(total / train.n_rows() as f64);
    }
    let holdout = audit(graph, predictor, protected, policy, holdout, Some(target), &inference)?;
    Ok(FairTrainReport { curve, holdout })
}

#[cfg(test)]
mod tests;
