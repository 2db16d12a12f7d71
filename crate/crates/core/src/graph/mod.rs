//! Deep causal graph: DAG wiring, ancestral sampling, interventions, joint
//! log-likelihood and counterfactual inference.

mod counterfactual;
mod loglk;
mod sample;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, ParamStore};
use crate::data::{Column, ColumnKind, Dataset, GraphSpec};
use crate::error::{Error, Result};
use crate::units::{Normalizer, Unit, UnitKind};

pub use counterfactual::CounterfactualSet;
pub use loglk::ConfounderDraws;
pub use sample::{stream_rng, NoiseTable};

/// Monte Carlo settings for inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Confounder draws.
    pub m: usize,
    /// Counterfactual samples.
    pub n: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { m: 100, n: 100, seed: 0 }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("M and N must be at least 1".into()));
        }
        Ok(())
    }
}

/// Constant assignments `do(node = value)`. Discrete values are class codes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Intervention {
    targets: BTreeMap<String, f64>,
}

impl Intervention {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: &str, value: f64) -> Self {
        self.targets.insert(node.to_string(), value);
        self
    }

    pub fn set(&mut self, node: &str, value: f64) {
        self.targets.insert(node.to_string(), value);
    }

    pub fn get(&self, node: &str) -> Option<f64> {
        self.targets.get(node).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.targets.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct GraphNode {
    unit: Unit,
    /// Observed parents in declaration order.
    parents: Vec<usize>,
    /// Confounder parents in declaration order.
    confounders: Vec<usize>,
}

/// A trained or trainable causal graph.
#[derive(Debug, Clone)]
pub struct CausalGraph {
    spec: GraphSpec,
    nodes: Vec<GraphNode>,
    order: Vec<usize>,
    params: ParamStore,
    levels: BTreeMap<String, Vec<i64>>,
}

/// Topological order of the spec's nodes (Kahn's algorithm, ties broken by
/// declaration order).
pub fn validate_and_order(spec: &GraphSpec) -> Result<Vec<String>> {
    let idx = index_of(spec)?;
    let parents = parent_indices(spec, &idx)?;
    let order = kahn(spec, &parents)?;
    Ok(order.into_iter().map(|i| spec.nodes[i].name.clone()).collect())
}

fn index_of(spec: &GraphSpec) -> Result<BTreeMap<&str, usize>> {
    let mut idx = BTreeMap::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.name.is_empty() {
            return Err(Error::InvalidGraph("empty node name".into()));
        }
        if idx.insert(n.name.as_str(), i).is_some() {
            return Err(Error::InvalidGraph(format!("duplicate node `{}`", n.name)));
        }
    }
    Ok(idx)
}

fn parent_indices(spec: &GraphSpec, idx: &BTreeMap<&str, usize>) -> Result<Vec<Vec<usize>>> {
    spec.nodes
        .iter()
        .map(|n| {
            let mut seen = Vec::new();
            for p in &n.parents {
                let j = *idx.get(p.as_str()).ok_or_else(|| Error::UnknownNode(p.clone()))?;
                if seen.contains(&j) {
                    return Err(Error::InvalidGraph(format!("`{}` lists parent `{p}` twice", n.name)));
                }
                seen.push(j);
            }
            Ok(seen)
        })
        .collect()
}

fn kahn(spec: &GraphSpec, parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut remaining: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let Some(next) = (0..n).find(|&i| !done[i] && remaining[i] == 0) else {
            return Err(Error::Cycle(find_cycle(spec, parents, &done)));
        };
        done[next] = true;
        order.push(next);
        for (i, ps) in parents.iter().enumerate() {
            remaining[i] -= ps.iter().filter(|&&p| p == next).count();
        }
    }
    Ok(order)
}

/// Walk parent links among unplaced nodes until a node repeats.
fn find_cycle(spec: &GraphSpec, parents: &[Vec<usize>], done: &[bool]) -> Vec<String> {
    let start = (0..parents.len()).find(|&i| !done[i]).expect("an unplaced node");
    let mut path = vec![start];
    let mut cur = start;
    loop {
        let p = *parents[cur].iter().find(|&&p| !done[p]).expect("unplaced nodes have unplaced parents");
        if let Some(pos) = path.iter().position(|&q| q == p) {
            let mut cycle: Vec<String> = path[pos..].iter().rev().map(|&i| spec.nodes[i].name.clone()).collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        path.push(p);
        cur = p;
    }
}

impl CausalGraph {
    /// Validate the spec, build every unit and initialize parameters from `spec.seed`.
    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        let idx = index_of(spec)?;
        let parent_idx = parent_indices(spec, &idx)?;
        let order = kahn(spec, &parent_idx)?;

        let mut children = vec![0usize; spec.nodes.len()];
        for ps in &parent_idx {
            for &p in ps {
                children[p] += 1;
            }
        }
        let mut nodes = Vec::with_capacity(spec.nodes.len());
        for (i, ns) in spec.nodes.iter().enumerate() {
            let (conf, obs): (Vec<usize>, Vec<usize>) = parent_idx[i]
                .iter()
                .partition(|&&p| spec.nodes[p].kind == UnitKind::Confounder);
            if ns.kind == UnitKind::Confounder {
                if !parent_idx[i].is_empty() {
                    return Err(Error::InvalidGraph(format!("confounder `{}` cannot have parents", ns.name)));
                }
                if children[i] != 2 {
                    return Err(Error::InvalidGraph(format!(
                        "confounder `{}` must have exactly two children, found {}",
                        ns.name, children[i]
                    )));
                }
            }
            let input_dim = obs.iter().map(|&p| spec.nodes[p].kind.encoded_width()).sum::<usize>() + conf.len();
            let unit = Unit::new(&ns.name, &ns.unit_spec(), input_dim)?;
            nodes.push(GraphNode {
                unit,
                parents: obs,
                confounders: conf,
            });
        }
        if nodes.iter().all(|n| n.unit.kind() == UnitKind::Confounder) {
            return Err(Error::InvalidGraph("graph has no observable nodes".into()));
        }

        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for &i in &order {
            nodes[i].unit.init_params(&mut params, &mut rng)?;
        }
        let levels = nodes
            .iter()
            .filter_map(|n| match n.unit.kind() {
                UnitKind::Bernoulli => Some((n.unit.name().to_string(), vec![0, 1])),
                UnitKind::Categorical { classes } => Some((n.unit.name().to_string(), (0..classes as i64).collect())),
                _ => None,
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            nodes,
            order,
            params,
            levels,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn topological_order(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.nodes[i].unit.name()).collect()
    }

    /// Observable node names in declaration order; rows and evidence follow this order.
    pub fn observed_names(&self) -> Vec<&str> {
        self.observed().map(|i| self.nodes[i].unit.name()).collect()
    }

    pub fn confounder_names(&self) -> Vec<&str> {
        self.confounders().map(|i| self.nodes[i].unit.name()).collect()
    }

    fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].unit.kind() != UnitKind::Confounder)
    }

    fn confounders(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].unit.kind() == UnitKind::Confounder)
    }

    pub fn has_confounders(&self) -> bool {
        self.confounders().next().is_some()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.unit.name() == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn unit(&self, name: &str) -> Result<&Unit> {
        Ok(&self.nodes[self.index(name)?].unit)
    }

    pub fn parents_of(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.index(name)?;
        Ok(self.nodes[i].parents.iter().map(|&p| self.nodes[p].unit.name()).collect())
    }

    /// Original integer labels of a discrete node's class codes.
    pub fn levels(&self, name: &str) -> Option<&[i64]> {
        self.levels.get(name).map(Vec::as_slice)
    }

    pub fn all_levels(&self) -> &BTreeMap<String, Vec<i64>> {
        &self.levels
    }

    pub fn set_levels(&mut self, name: &str, levels: Vec<i64>) -> Result<()> {
        let unit = self.unit(name)?;
        let k = match unit.kind() {
            UnitKind::Bernoulli => 2,
            UnitKind::Categorical { classes } => classes,
            _ => return Err(Error::Contract(format!("`{name}` is not discrete"))),
        };
        if levels.len() != k {
            return Err(Error::Data(format!("`{name}` has {k} classes but {} levels", levels.len())));
        }
        self.levels.insert(name.to_string(), levels);
        Ok(())
    }

    pub fn normalizer(&self, name: &str) -> Result<Option<Normalizer>> {
        Ok(self.unit(name)?.normalizer())
    }

    pub fn set_normalizer(&mut self, name: &str, n: Normalizer) -> Result<()> {
        let i = self.index(name)?;
        self.nodes[i].unit.set_normalizer(n)
    }

    /// True if `target` is reachable from `source` along directed edges.
    pub fn is_descendant(&self, target: &str, source: &str) -> Result<bool> {
        let (t, s) = (self.index(target)?, self.index(source)?);
        Ok(self.descendants(&[s])[t])
    }

    /// Mask of nodes reachable from any of `sources` (sources included).
    fn descendants(&self, sources: &[usize]) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        for &s in sources {
            mark[s] = true;
        }
        for &i in &self.order {
            let n = &self.nodes[i];
            if n.parents.iter().chain(&n.confounders).any(|&p| mark[p]) {
                mark[i] = true;
            }
        }
        mark
    }

    fn check_intervention(&self, doing: &Intervention) -> Result<Vec<(usize, f64)>> {
        doing
            .iter()
            .map(|(name, v)| {
                let i = self.index(name)?;
                let unit = &self.nodes[i].unit;
                if unit.kind() == UnitKind::Confounder {
                    return Err(Error::Contract(format!("cannot intervene on confounder `{name}`")));
                }
                unit.check_value(v)?;
                Ok((i, v))
            })
            .collect()
    }

    /// Values of one node taken from a dataset column: numeric values for
    /// continuous nodes, class codes for discrete ones.
    fn column_values(&self, data: &Dataset, node: usize) -> Result<Vec<f64>> {
        let unit = &self.nodes[node].unit;
        let col = data
            .column(unit.name())
            .ok_or_else(|| Error::Data(format!("dataset has no column `{}`", unit.name())))?;
        let vals = match (&col.kind, unit.kind().is_continuous()) {
            (ColumnKind::Categorical { levels }, true) => col.values.iter().map(|&c| levels[c as usize] as f64).collect(),
            (ColumnKind::Categorical { levels }, false) => {
                let own = self.levels(unit.name()).unwrap_or(&[]);
                if levels.as_slice() == own {
                    col.values.clone()
                } else {
                    col.values
                        .iter()
                        .map(|&c| {
                            let level = levels[c as usize];
                            own.iter().position(|&l| l == level).map(|p| p as f64).ok_or_else(|| Error::Support {
                                node: unit.name().to_string(),
                                value: level as f64,
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?
                }
            }
            (ColumnKind::Continuous, _) => col.values.clone(),
        };
        for &v in &vals {
            unit.check_value(v)?;
        }
        Ok(vals)
    }

    /// Observed columns in `observed_names` order.
    pub fn data_columns(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.observed().map(|i| self.column_values(data, i)).collect()
    }

    /// One evidence row (observed order) from a dataset.
    pub fn evidence(&self, data: &Dataset, row: usize) -> Result<Vec<f64>> {
        if row >= data.n_rows() {
            return Err(Error::Data(format!("row {row} out of range (dataset has {} rows)", data.n_rows())));
        }
        Ok(self.data_columns(&data.select_rows(&[row]))?.into_iter().map(|c| c[0]).collect())
    }

    /// Dataset from per-node columns (indexed like `nodes`), observed nodes only.
    fn to_dataset(&self, cols: &[Vec<f64>]) -> Result<Dataset> {
        let columns = self
            .observed()
            .map(|i| {
                let name = self.nodes[i].unit.name();
                match self.levels.get(name) {
                    Some(levels) => Column::categorical(name, levels.clone(), cols[i].clone()),
                    None => Column::continuous(name, cols[i].clone()),
                }
            })
            .collect();
        Dataset::new(columns)
    }

    /// Dataset from rows in observed order.
    pub fn rows_to_dataset(&self, rows: &[Vec<f64>]) -> Result<Dataset> {
        let mut cols = vec![Vec::new(); self.nodes.len()];
        for (k, i) in self.observed().enumerate() {
            cols[i] = rows.iter().map(|r| r[k]).collect();
        }
        self.to_dataset(&cols)
    }

    /// Encoded observed-parent inputs for `node` over `n` rows: continuous
    /// parents normalized, Bernoulli parents as 0/1, categorical parents
    /// one-hot. `cols` is indexed like `nodes`.
    fn encode_parents(&self, node: usize, cols: &[Vec<f64>], n: usize) -> Matrix {
        let gn = &self.nodes[node];
        let d: usize = gn.parents.iter().map(|&p| self.nodes[p].unit.kind().encoded_width()).sum();
        let mut m = Matrix::zeros(n, d);
        let mut off = 0;
        for &p in &gn.parents {
            let pu = &self.nodes[p].unit;
            let vals = &cols[p];
            match pu.kind() {
                UnitKind::Categorical { classes } => {
                    for r in 0..n {
                        m.data[r * d + off + vals[r] as usize] = 1.0;
                    }
                    off += classes;
                }
                k => {
                    let norm = if k.is_continuous() { pu.normalizer() } else { None };
                    for r in 0..n {
                        m.data[r * d + off] = norm.map_or(vals[r], |z| z.normalize(vals[r]));
                    }
                    off += 1;
                }
            }
        }
        m
    }

    /// Full unit inputs: encoded parents followed by confounder values.
    fn encode_inputs(&self, node: usize, cols: &[Vec<f64>], n: usize) -> Matrix {
        let gn = &self.nodes[node];
        let obs = self.encode_parents(node, cols, n);
        if gn.confounders.is_empty() {
            return obs;
        }
        let d = gn.unit.input_dim();
        let mut m = Matrix::zeros(n, d);
        for r in 0..n {
            m.data[r * d..r * d + obs.cols].copy_from_slice(obs.row(r));
            for (j, &c) in gn.confounders.iter().enumerate() {
                m.data[r * d + obs.cols + j] = cols[c][r];
            }
        }
        m
    }

    /// Forward-only parameter rows for `node`.
    fn theta_rows(&self, node: usize, cols: &[Vec<f64>], n: usize) -> Result<Matrix> {
        let inputs = self.encode_inputs(node, cols, n);
        self.nodes[node].unit.theta(&self.params, &inputs)
    }
}

#[cfg(test)]
mod tests;
