use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CausalGraph, Intervention};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::units::{Noise, UnitKind};

/// Noise realizations behind a batch of samples, keyed by node name.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    pub rows: usize,
    /// Exogenous noise of every observable, non-intervened node.
    pub noise: BTreeMap<String, Vec<Noise>>,
    /// Confounder values.
    pub confounders: BTreeMap<String, Vec<f64>>,
}

/// Generator for the `stream`-th independent substream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl CausalGraph {
    /// Push `n` rows through the graph in topological order. Nodes with a
    /// `fixed` column keep it; every other node applies its mechanism to the
    /// noise returned by `noise(node, row)`.
    pub(super) fn propagate(
        &self,
        n: usize,
        fixed: &[Option<Vec<f64>>],
        mut noise: impl FnMut(usize, usize) -> Result<Noise>,
    ) -> Result<Vec<Vec<f64>>> {
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        for &i in &self.order {
            if let Some(v) = &fixed[i] {
                cols[i] = v.clone();
                continue;
            }
            let unit = &self.nodes[i].unit;
            if unit.kind() == UnitKind::Confounder {
                cols[i] = (0..n)
                    .map(|r| {
                        noise(i, r)?
                            .scalar()
                            .ok_or_else(|| Error::Contract("confounder noise must be scalar".into()))
                    })
                    .collect::<Result<_>>()?;
                continue;
            }
            let theta = self.theta_rows(i, &cols, n)?;
            cols[i] = (0..n)
                .map(|r| unit.sample(theta.row_bcast(r), &noise(i, r)?))
                .collect::<Result<_>>()?;
        }
        Ok(cols)
    }

    fn intervention_columns(&self, n: usize, doing: &Intervention) -> Result<Vec<Option<Vec<f64>>>> {
        let mut fixed = vec![None; self.nodes.len()];
        for (i, v) in self.check_intervention(doing)? {
            fixed[i] = Some(vec![v; n]);
        }
        Ok(fixed)
    }

    /// Ancestral sampling of `n` rows under `doing`. Each node draws its noise
    /// from its own substream of `seed`, numbered by topological position.
    pub fn sample(&self, n: usize, doing: &Intervention, seed: u64) -> Result<Dataset> {
        Ok(self.sample_with_noise(n, doing, seed)?.0)
    }

    pub fn sample_with_noise(&self, n: usize, doing: &Intervention, seed: u64) -> Result<(Dataset, NoiseTable)> {
        let fixed = self.intervention_columns(n, doing)?;
        let mut noise: Vec<Vec<Noise>> = vec![Vec::new(); self.nodes.len()];
        for (pos, &i) in self.order.iter().enumerate() {
            if fixed[i].is_some() {
                continue;
            }
            let mut rng = stream_rng(seed, pos as u64);
            let unit = &self.nodes[i].unit;
            noise[i] = (0..n).map(|_| unit.prior_noise(&mut rng)).collect();
        }
        let cols = self.propagate(n, &fixed, |i, r| Ok(noise[i][r].clone()))?;
        let mut table = NoiseTable {
            rows: n,
            noise: BTreeMap::new(),
            confounders: BTreeMap::new(),
        };
        for (i, node) in self.nodes.iter().enumerate() {
            let name = node.unit.name().to_string();
            if node.unit.kind() == UnitKind::Confounder {
                table.confounders.insert(name, cols[i].clone());
            } else if fixed[i].is_none() {
                table.noise.insert(name, std::mem::take(&mut noise[i]));
            }
        }
        Ok((self.to_dataset(&cols)?, table))
    }

    /// Density of `node` at each of `xs` under `doing` (probabilities of
    /// class codes for discrete nodes): the node's conditional averaged over
    /// `draws` ancestral samples of its inputs.
    pub fn interventional_density(
        &self,
        node: &str,
        doing: &Intervention,
        xs: &[f64],
        draws: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let i = self.index(node)?;
        let unit = &self.nodes[i].unit;
        if unit.kind() == UnitKind::Confounder || doing.get(node).is_some() {
            return Err(Error::Config(format!("no density for `{node}` under this intervention")));
        }
        if draws == 0 {
            return Err(Error::Config("density needs at least one draw".into()));
        }
        let fixed = self.intervention_columns(draws, doing)?;
        let mut rngs: Vec<ChaCha8Rng> = (0..self.order.len()).map(|p| stream_rng(seed, p as u64)).collect();
        let pos: Vec<usize> = {
            let mut pos = vec![0; self.nodes.len()];
            for (p, &k) in self.order.iter().enumerate() {
                pos[k] = p;
            }
            pos
        };
        let cols = self.propagate(draws, &fixed, |k, _| Ok(self.nodes[k].unit.prior_noise(&mut rngs[pos[k]])))?;
        let theta = self.theta_rows(i, &cols, draws)?;
        xs.iter()
            .map(|&x| {
                let mut total = 0.0;
                for r in 0..draws {
                    total += unit.loglk(theta.row_bcast(r), x)?.exp();
                }
                Ok(total / draws as f64)
            })
            .collect()
    }

    /// Recompute rows from recorded noise, under a possibly different intervention.
    pub fn replay(&self, table: &NoiseTable, doing: &Intervention) -> Result<Dataset> {
        let n = table.rows;
        let mut fixed = self.intervention_columns(n, doing)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(u) = table.confounders.get(node.unit.name()) {
                fixed[i] = Some(u.clone());
            }
        }
        let cols = self.propagate(n, &fixed, |i, r| {
            let name = self.nodes[i].unit.name();
            table
                .noise
                .get(name)
                .and_then(|v| v.get(r))
                .cloned()
                .ok_or_else(|| Error::Contract(format!("no recorded noise for `{name}` row {r}")))
        })?;
        self.to_dataset(&cols)
    }
}
