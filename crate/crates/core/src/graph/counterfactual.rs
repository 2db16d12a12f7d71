use std::collections::BTreeMap;

use rand::distr::StandardUniform;
use rand::Rng;

use super::sample::stream_rng;
use super::{CausalGraph, InferenceConfig, Intervention};
use crate::autodiff::logsumexp;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::units::{NoisePosterior, UnitKind};

/// Weighted counterfactual rows for one piece of evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSet {
    /// Observable node names; every row follows this order.
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Row weights, summing to one.
    pub weights: Vec<f64>,
    /// Normalized importance weights of the confounder draws (empty without confounders).
    pub confounder_weights: Vec<f64>,
    /// Number of confounder draws used.
    pub m: usize,
}

impl CounterfactualSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Weighted expectation of `f` over the rows.
    pub fn expectation_under(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.rows.iter().zip(&self.weights).map(|(r, w)| w * f(r)).sum()
    }

    /// Weighted mean of one column.
    pub fn mean(&self, name: &str) -> Result<f64> {
        let k = self.column_index(name)?;
        Ok(self.expectation_under(|r| r[k]))
    }
}

/// `n` indices drawn by systematic resampling from normalized `weights`.
fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let start: f64 = rng.sample::<f64, _>(StandardUniform) / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let t = start + i as f64 / n as f64;
        while cum <= t && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

impl CausalGraph {
    fn check_evidence(&self, evidence: &[f64]) -> Result<Vec<Vec<f64>>> {
        let obs: Vec<usize> = self.observed().collect();
        if evidence.len() != obs.len() {
            return Err(Error::Shape {
                context: "evidence",
                detail: format!("{} values for {} observed nodes", evidence.len(), obs.len()),
            });
        }
        for (&i, &v) in obs.iter().zip(evidence) {
            self.nodes[i].unit.check_value(v)?;
        }
        self.node_columns(&evidence.iter().map(|&v| vec![v]).collect::<Vec<_>>())
    }

    /// Noise posterior of every observable node given complete evidence
    /// (observed order) and, for confounded graphs, the confounder values
    /// (declaration order).
    pub fn abduct_all(&self, evidence: &[f64], confounders: &[f64]) -> Result<BTreeMap<String, NoisePosterior>> {
        let mut cols = self.check_evidence(evidence)?;
        self.pin_confounders(&mut cols, confounders)?;
        let mut out = BTreeMap::new();
        for i in self.observed() {
            let theta = self.theta_rows(i, &cols, 1)?;
            let unit = &self.nodes[i].unit;
            out.insert(unit.name().to_string(), unit.abduct(theta.row_bcast(0), cols[i][0])?);
        }
        Ok(out)
    }

    fn pin_confounders(&self, cols: &mut [Vec<f64>], values: &[f64]) -> Result<()> {
        let conf: Vec<usize> = self.confounders().collect();
        if values.len() != conf.len() {
            return Err(Error::Shape {
                context: "confounder values",
                detail: format!("{} values for {} confounders", values.len(), conf.len()),
            });
        }
        for (&c, &v) in conf.iter().zip(values) {
            cols[c] = vec![v];
        }
        Ok(())
    }

    /// Three-step counterfactual for one evidence row (observed order).
    pub fn counterfactual(&self, evidence: &[f64], doing: &Intervention, cfg: &InferenceConfig) -> Result<CounterfactualSet> {
        self.counterfactual_with(evidence, doing, cfg, &mut stream_rng(cfg.seed, 0))
    }

    /// Counterfactuals for every row of `data`; row `r` uses substream `r` of `cfg.seed`.
    pub fn counterfactual_rows(&self, data: &Dataset, doing: &Intervention, cfg: &InferenceConfig) -> Result<Vec<CounterfactualSet>> {
        let cols = self.data_columns(data)?;
        (0..data.n_rows())
            .map(|r| {
                let ev: Vec<f64> = cols.iter().map(|c| c[r]).collect();
                self.counterfactual_with(&ev, doing, cfg, &mut stream_rng(cfg.seed, r as u64))
            })
            .collect()
    }

    pub fn counterfactual_with<R: Rng + ?Sized>(
        &self,
        evidence: &[f64],
        doing: &Intervention,
        cfg: &InferenceConfig,
        rng: &mut R,
    ) -> Result<CounterfactualSet> {
        cfg.validate()?;
        let ev_cols = self.check_evidence(evidence)?;
        let targets = self.check_intervention(doing)?;
        let n = cfg.n;
        let touched = self.descendants(&targets.iter().map(|&(i, _)| i).collect::<Vec<_>>());

        let mut fixed: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for i in self.observed() {
            if !touched[i] {
                fixed[i] = Some(vec![ev_cols[i][0]; n]);
            }
        }
        for &(i, v) in &targets {
            fixed[i] = Some(vec![v; n]);
        }
        let regenerate: Vec<usize> = self.observed().filter(|&i| fixed[i].is_none()).collect();

        let (posteriors, assignment, confounder_weights, m) = if self.has_confounders() {
            let m = cfg.m;
            let conf: Vec<usize> = self.confounders().collect();
            let draws = self.draw_confounders(m, rng);
            let mut cols: Vec<Vec<f64>> = ev_cols.iter().map(|c| c.repeat(m)).collect();
            for (k, &c) in conf.iter().enumerate() {
                cols[c] = (0..m).map(|j| draws.get(j, k)).collect();
            }
            let mut logw = vec![0.0; m];
            let mut thetas = BTreeMap::new();
            for i in self.observed() {
                if self.nodes[i].confounders.is_empty() && !regenerate.contains(&i) {
                    continue;
                }
                let theta = self.theta_rows(i, &cols, m)?;
                if !self.nodes[i].confounders.is_empty() {
                    for (j, lw) in logw.iter_mut().enumerate() {
                        *lw += self.nodes[i].unit.loglk(theta.row_bcast(j), ev_cols[i][0])?;
                    }
                }
                thetas.insert(i, theta);
            }
            let lse = logsumexp(&logw);
            if !lse.is_finite() {
                return Err(Error::EvidenceImplausible);
            }
            let weights: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
            let assignment = systematic_resample(&weights, n, rng);
            let mut posteriors: BTreeMap<usize, Vec<Option<NoisePosterior>>> = BTreeMap::new();
            for &i in &regenerate {
                let theta = &thetas[&i];
                let mut per_draw = vec![None; m];
                for &j in &assignment {
                    if per_draw[j].is_none() {
                        per_draw[j] = Some(self.nodes[i].unit.abduct(theta.row_bcast(j), ev_cols[i][0])?);
                    }
                }
                posteriors.insert(i, per_draw);
            }
            for (k, &c) in conf.iter().enumerate() {
                fixed[c] = Some(assignment.iter().map(|&j| draws.get(j, k)).collect());
            }
            (posteriors, assignment, weights, m)
        } else {
            let mut posteriors = BTreeMap::new();
            for &i in &regenerate {
                let theta = self.theta_rows(i, &ev_cols, 1)?;
                posteriors.insert(i, vec![Some(self.nodes[i].unit.abduct(theta.row_bcast(0), ev_cols[i][0])?)]);
            }
            (posteriors, vec![0; n], Vec::new(), 0)
        };

        let cols = self.propagate(n, &fixed, |i, r| {
            let unit = &self.nodes[i].unit;
            if unit.kind() == UnitKind::Confounder {
                return Err(Error::Contract("confounders must be pinned".into()));
            }
            let post = posteriors[&i][assignment[r]]
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("no posterior for `{}`", unit.name())))?;
            unit.posterior_noise(post, rng)
        })?;

        let obs: Vec<usize> = self.observed().collect();
        Ok(CounterfactualSet {
            names: obs.iter().map(|&i| self.nodes[i].unit.name().to_string()).collect(),
            rows: (0..n).map(|r| obs.iter().map(|&i| cols[i][r]).collect()).collect(),
            weights: vec![1.0 / n as f64; n],
            confounder_weights,
            m,
        })
    }
}
