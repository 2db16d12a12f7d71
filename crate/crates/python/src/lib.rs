use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use dcg::data::{complete_graph_spec, gen_salary, load_csv, salary_graph_spec, Column, Dataset, GraphSpec, SalaryGenConfig};
use dcg::graph::{CausalGraph, InferenceConfig, Intervention};
use dcg::training::{fit, load_checkpoint, save_checkpoint, warm_start, TrainConfig};
use dcg::units::UnitKind;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: dcg::Error) -> PyErr {
    match e {
        dcg::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Columns = BTreeMap<String, Vec<f64>>;

/// Columns keyed by name, discrete values as their original labels.
fn to_columns(data: &Dataset) -> Columns {
    data.columns()
        .iter()
        .map(|c| {
            let vals = match c.levels() {
                Some(levels) => c.values.iter().map(|&v| levels[v as usize] as f64).collect(),
                None => c.values.clone(),
            };
            (c.name.clone(), vals)
        })
        .collect()
}

fn code(graph: &CausalGraph, node: &str, label: f64) -> PyResult<f64> {
    match graph.levels(node) {
        Some(levels) => levels
            .iter()
            .position(|&l| l as f64 == label)
            .map(|k| k as f64)
            .ok_or_else(|| PyValueError::new_err(format!("`{node}` has no class {label} (classes {levels:?})"))),
        None => Ok(label),
    }
}

fn intervention(graph: &CausalGraph, doing: Option<HashMap<String, f64>>) -> PyResult<Intervention> {
    let mut out = Intervention::new();
    for (node, v) in doing.unwrap_or_default() {
        graph.unit(&node).map_err(py_err)?;
        out.set(&node, code(graph, &node, v)?);
    }
    Ok(out)
}

fn continuous_kind(label: &str) -> PyResult<UnitKind> {
    match label {
        "flow" => Ok(UnitKind::Flow),
        "normal" => Ok(UnitKind::Normal),
        "ald" => Ok(UnitKind::Ald),
        "glm" => Ok(UnitKind::Glm),
        _ => Err(PyValueError::new_err(format!("unknown continuous kind `{label}`"))),
    }
}

/// Synthetic salary data as a dict of columns.
#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn salary(n: usize, seed: u64) -> PyResult<Columns> {
    Ok(to_columns(&gen_salary(&SalaryGenConfig::new(n, seed)).map_err(py_err)?))
}

/// JSON spec of the ground-truth salary graph.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn salary_spec(seed: u64) -> String {
    salary_graph_spec(seed).to_json()
}

/// JSON spec of a fully connected graph over the columns of a CSV file.
#[pyfunction]
#[pyo3(signature = (path, continuous="flow", seed=0))]
fn complete_spec(path: PathBuf, continuous: &str, seed: u64) -> PyResult<String> {
    let data = load_csv(&path).map_err(py_err)?;
    Ok(complete_graph_spec(&data, continuous_kind(continuous)?, seed).map_err(py_err)?.to_json())
}

#[pyclass(module = "dcg_py")]
struct Graph {
    inner: CausalGraph,
}

#[pymethods]
impl Graph {
    #[staticmethod]
    fn from_spec(spec: &str) -> PyResult<Self> {
        let spec = GraphSpec::from_json(spec).map_err(py_err)?;
        Ok(Self {
            inner: CausalGraph::from_spec(&spec).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(py_err)?.0,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, None, &path).map_err(py_err)
    }

    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.topological_order().into_iter().map(String::from).collect()
    }

    /// Train on a CSV file; returns the per-epoch training nll.
    #[pyo3(signature = (path, epochs=300, batch_size=128, lr=1e-3, m=100, seed=0))]
    fn fit(&mut self, path: PathBuf, epochs: usize, batch_size: usize, lr: f64, m: usize, seed: u64) -> PyResult<Vec<f64>> {
        let data = load_csv(&path).map_err(py_err)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate: lr,
            m,
            seed,
            ..TrainConfig::default()
        };
        warm_start(&mut self.inner, &data).map_err(py_err)?;
        Ok(fit(&mut self.inner, &data, &cfg).map_err(py_err)?.curve)
    }

    /// Mean log-likelihood per row of a CSV file.
    #[pyo3(signature = (path, m=100, seed=0))]
    fn mean_loglk(&self, path: PathBuf, m: usize, seed: u64) -> PyResult<f64> {
        let data = load_csv(&path).map_err(py_err)?;
        let cfg = InferenceConfig { m, n: 1, seed };
        self.inner.mean_loglk(&data, &cfg).map_err(py_err)
    }

    #[pyo3(signature = (n, doing=None, seed=0))]
    fn sample(&self, n: usize, doing: Option<HashMap<String, f64>>, seed: u64) -> PyResult<Columns> {
        let doing = intervention(&self.inner, doing)?;
        Ok(to_columns(&self.inner.sample(n, &doing, seed).map_err(py_err)?))
    }

    /// Weighted counterfactual samples for one observed row. Returns the
    /// columns plus a `weight` entry.
    #[pyo3(signature = (evidence, doing, n=100, m=100, seed=0))]
    fn counterfactual(
        &self,
        evidence: HashMap<String, f64>,
        doing: HashMap<String, f64>,
        n: usize,
        m: usize,
        seed: u64,
    ) -> PyResult<Columns> {
        let g = &self.inner;
        let columns = g
            .observed_names()
            .into_iter()
            .map(|name| {
                let v = *evidence
                    .get(name)
                    .ok_or_else(|| PyValueError::new_err(format!("evidence is missing `{name}`")))?;
                Ok(match g.levels(name) {
                    Some(levels) => Column::categorical(name, levels.to_vec(), vec![code(g, name, v)?]),
                    None => Column::continuous(name, vec![v]),
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let row = g.evidence(&Dataset::new(columns).map_err(py_err)?, 0).map_err(py_err)?;
        let doing = intervention(g, Some(doing))?;
        let cfg = InferenceConfig { m, n, seed };
        let set = g.counterfactual(&row, &doing, &cfg).map_err(py_err)?;
        let data = g.rows_to_dataset(&set.rows).map_err(py_err)?;
        let mut out = to_columns(&data);
        out.insert("weight".into(), set.weights);
        Ok(out)
    }
}

#[pymodule]
fn dcg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(salary, m)?)?;
    m.add_function(wrap_pyfunction!(salary_spec, m)?)?;
    m.add_function(wrap_pyfunction!(complete_spec, m)?)?;
    m.add_class::<Graph>()?;
    Ok(())
}
