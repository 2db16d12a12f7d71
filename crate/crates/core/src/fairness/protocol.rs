//! File exchange with an external predictor. `write_cf_inputs` emits every
//! observed column plus `row_id`, `cf_id`, `weight`; `cf_id` 0 is the factual
//! row (weight 0). The predictor answers with `row_id,cf_id,prediction`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{row_audit, summarize, FairnessReport, InterventionPolicy, RowAudit};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{stream_rng, CausalGraph, InferenceConfig, Intervention};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfPrediction {
    pub row_id: usize,
    pub cf_id: usize,
    pub prediction: f64,
}

/// Write counterfactual inputs for every row of `data`. Returns the number
/// of lines written.
pub fn write_cf_inputs(
    graph: &CausalGraph,
    protected: &str,
    policy: &InterventionPolicy,
    data: &Dataset,
    cfg: &InferenceConfig,
    path: &Path,
) -> Result<usize> {
    let names: Vec<&str> = graph.observed_names();
    let p = names
        .iter()
        .position(|&n| n == protected)
        .ok_or_else(|| Error::UnknownNode(protected.to_string()))?;
    let cols = graph.data_columns(data)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = names.clone();
    header.extend(["row_id", "cf_id", "weight"]);
    w.write_record(&header)?;
    let mut lines = 0;
    for r in 0..data.n_rows() {
        let ev: Vec<f64> = cols.iter().map(|c| c[r]).collect();
        let targets = policy.targets(graph, protected, ev[p])?;
        let mut record = |values: &[f64], cf_id: usize, weight: f64| -> Result<()> {
            let mut fields: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            fields.extend([r.to_string(), cf_id.to_string(), weight.to_string()]);
            w.write_record(&fields)?;
            lines += 1;
            Ok(())
        };
        record(&ev, 0, 0.0)?;
        let mut rng = stream_rng(cfg.seed, r as u64);
        let mut cf_id = 1;
        for &v in &targets {
            let set = graph.counterfactual_with(&ev, &Intervention::new().with(protected, v), cfg, &mut rng)?;
            for (row, wt) in set.rows.iter().zip(&set.weights) {
                record(row, cf_id, wt / targets.len() as f64)?;
                cf_id += 1;
            }
        }
    }
    w.flush()?;
    Ok(lines)
}

pub fn read_cf_predictions(path: &Path) -> Result<Vec<CfPrediction>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in r.deserialize::<CfPrediction>().enumerate() {
        let p = rec.map_err(|e| Error::Protocol(format!("prediction line {}: {e}", line + 2)))?;
        if !p.prediction.is_finite() {
            return Err(Error::Protocol(format!("prediction line {}: non-finite value", line + 2)));
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct InputMeta {
    row_id: usize,
    cf_id: usize,
    weight: f64,
}

/// CU report from a cf-inputs file and the external predictions for it.
/// Every input line needs exactly one prediction.
pub fn audit_from_predictions(
    inputs: &Path,
    predictions: &[CfPrediction],
    protected: &str,
    policy: &InterventionPolicy,
) -> Result<(FairnessReport, Vec<RowAudit>)> {
    let mut reader = csv::Reader::from_path(inputs)?;
    let header = reader.headers()?.clone();
    let p = header
        .iter()
        .position(|h| h == protected)
        .ok_or_else(|| Error::Protocol(format!("inputs have no column `{protected}`")))?;
    let mut preds: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for q in predictions {
        if preds.insert((q.row_id, q.cf_id), q.prediction).is_some() {
            return Err(Error::Protocol(format!("duplicate prediction for row {} cf {}", q.row_id, q.cf_id)));
        }
    }
    // row_id -> (protected value, factual, cf predictions, weights)
    let mut rows: BTreeMap<usize, (f64, Option<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let meta: InputMeta = rec
            .deserialize(Some(&header))
            .map_err(|e| Error::Protocol(format!("inputs: {e}")))?;
        let value: f64 = rec[p]
            .parse()
            .map_err(|_| Error::Protocol(format!("inputs: bad `{protected}` value `{}`", &rec[p])))?;
        let y = preds
            .remove(&(meta.row_id, meta.cf_id))
            .ok_or_else(|| Error::Protocol(format!("missing prediction for row {} cf {}", meta.row_id, meta.cf_id)))?;
        let entry = rows.entry(meta.row_id).or_insert((value, None, Vec::new(), Vec::new()));
        if meta.cf_id == 0 {
            entry.0 = value;
            entry.1 = Some(y);
        } else {
            entry.2.push(y);
            entry.3.push(meta.weight);
        }
    }
    if let Some(((r, c), _)) = preds.into_iter().next() {
        return Err(Error::Protocol(format!("prediction for row {r} cf {c} has no input line")));
    }
    let audits = rows
        .into_iter()
        .map(|(r, (value, factual, cf, w))| {
            let y = factual.ok_or_else(|| Error::Protocol(format!("row {r} has no factual line")))?;
            if cf.is_empty() {
                return Err(Error::Protocol(format!("row {r} has no counterfactual lines")));
            }
            Ok(row_audit(r, value, y, &cf, &w))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(protected, policy, &audits), audits))
}
