use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::flows::FlowShape;
use crate::units::{UnitKind, UnitSpec, DEFAULT_HIDDEN};

pub const SPEC_VERSION: &str = "dcg-spec/1";

/// Declarative description of a causal graph.
///
/// ```json
/// {"version": "dcg-spec/1", "seed": 0, "nodes": [
///   {"name": "u", "kind": "confounder"},
///   {"name": "a", "kind": "flow", "parents": ["u"], "flow_layers": 2, "flow_units": 8},
///   {"name": "b", "kind": "categorical", "classes": 3, "parents": ["a", "u"], "hidden": [16]}
/// ]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub version: String,
    #[serde(default)]
    pub seed: u64,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: UnitKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_units: Option<usize>,
}

impl NodeSpec {
    pub fn new(name: &str, kind: UnitKind, parents: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            hidden: None,
            flow_layers: None,
            flow_units: None,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = Some(hidden);
        self
    }

    pub fn with_flow(mut self, layers: usize, units: usize) -> Self {
        self.flow_layers = Some(layers);
        self.flow_units = Some(units);
        self
    }

    pub fn unit_spec(&self) -> UnitSpec {
        let default = FlowShape::default();
        UnitSpec {
            kind: self.kind,
            hidden: self.hidden.clone().unwrap_or_else(|| DEFAULT_HIDDEN.to_vec()),
            flow: FlowShape {
                layers: self.flow_layers.unwrap_or(default.layers),
                units: self.flow_units.unwrap_or(default.units),
            },
        }
    }
}

impl GraphSpec {
    pub fn new(seed: u64, nodes: Vec<NodeSpec>) -> Self {
        Self {
            version: SPEC_VERSION.to_string(),
            seed,
            nodes,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GraphSpec = serde_json::from_str(text)?;
        if spec.version != SPEC_VERSION {
            return Err(Error::Config(format!(
                "graph spec version `{}` (expected `{SPEC_VERSION}`)",
                spec.version
            )));
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        crate::sha256_hex(serde_json::to_string(self).expect("graph spec serializes").as_bytes())
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn observed(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.kind != UnitKind::Confounder)
    }

    /// Replace the kind of every continuous node.
    pub fn with_continuous_kind(&self, kind: UnitKind) -> GraphSpec {
        let mut out = self.clone();
        for n in &mut out.nodes {
            if n.kind.is_continuous() {
                n.kind = kind;
            }
        }
        out
    }
}

/// Complete DAG over the columns in file order: column `i` has every earlier
/// column as a parent. Binary columns become Bernoulli nodes, other
/// categorical columns Categorical nodes, and continuous columns use
/// `continuous`. With `continuous = Glm` the discrete nodes are linear too.
pub fn complete_graph_spec(data: &Dataset, continuous: UnitKind, seed: u64) -> Result<GraphSpec> {
    if data.n_cols() == 0 {
        return Err(Error::Data("dataset has no columns".into()));
    }
    if !continuous.is_continuous() {
        return Err(Error::Config(format!("`{}` is not a continuous unit kind", continuous.label())));
    }
    let mut nodes = Vec::new();
    let names = data.names();
    for (i, col) in data.columns().iter().enumerate() {
        let kind = match &col.kind {
            ColumnKind::Continuous => continuous,
            ColumnKind::Categorical { levels } => match levels.len() {
                0 | 1 => return Err(Error::DegenerateColumn(col.name.clone())),
                2 => UnitKind::Bernoulli,
                k => UnitKind::Categorical { classes: k },
            },
        };
        let mut node = NodeSpec::new(&col.name, kind, &names[..i]);
        if continuous == UnitKind::Glm && kind.is_discrete() {
            node.hidden = Some(Vec::new());
        }
        nodes.push(node);
    }
    Ok(GraphSpec::new(seed, nodes))
}
