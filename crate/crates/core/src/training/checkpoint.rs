use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::ParamRecord;
use crate::data::GraphSpec;
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::units::Normalizer;

pub const CHECKPOINT_VERSION: &str = "dcg-ckpt/1";

/// Everything needed to rebuild a trained graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub spec_hash: String,
    pub spec: GraphSpec,
    pub params: BTreeMap<String, ParamRecord>,
    pub normalizers: BTreeMap<String, Normalizer>,
    pub levels: BTreeMap<String, Vec<i64>>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn from_graph(graph: &CausalGraph, train: Option<TrainConfig>) -> Self {
        let normalizers = graph
            .observed_names()
            .into_iter()
            .filter_map(|name| graph.normalizer(name).ok().flatten().map(|n| (name.to_string(), n)))
            .collect();
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            spec_hash: graph.spec().hash(),
            spec: graph.spec().clone(),
            params: graph.params().to_records(),
            normalizers,
            levels: graph.all_levels().clone(),
            train,
        }
    }

    pub fn to_graph(&self) -> Result<CausalGraph> {
        let mut graph = CausalGraph::from_spec(&self.spec)?;
        graph.params_mut().load_records(&self.params)?;
        for (name, n) in &self.normalizers {
            graph.set_normalizer(name, *n)?;
        }
        for (name, levels) in &self.levels {
            graph.set_levels(name, levels.clone())?;
        }
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    /// Parse and validate the version and the spec hash.
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed file: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version `{}` (expected `{CHECKPOINT_VERSION}`)",
                ck.version
            )));
        }
        if ck.spec.hash() != ck.spec_hash {
            return Err(Error::Checkpoint("graph spec hash does not match the stored spec".into()));
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(graph: &CausalGraph, train: Option<TrainConfig>, path: &Path) -> Result<()> {
    std::fs::write(path, Checkpoint::from_graph(graph, train).to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CausalGraph, Checkpoint)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let ck = Checkpoint::from_json(&text)?;
    Ok((ck.to_graph()?, ck))
}
