use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    /// Values are codes `0..levels.len()`; `levels` holds the original integers.
    Categorical { levels: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

impl Column {
    pub fn continuous(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            values,
        }
    }

    pub fn categorical(name: &str, levels: Vec<i64>, codes: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Categorical { levels },
            values: codes,
        }
    }

    pub fn levels(&self) -> Option<&[i64]> {
        match &self.kind {
            ColumnKind::Categorical { levels } => Some(levels),
            ColumnKind::Continuous => None,
        }
    }
}

/// Rectangular table with typed columns and no missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    rows: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.values.len());
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Data(format!("duplicate column `{}`", c.name)));
            }
            if c.values.len() != rows {
                return Err(Error::Data(format!(
                    "column `{}` has {} values, expected {rows}",
                    c.name,
                    c.values.len()
                )));
            }
            match &c.kind {
                ColumnKind::Continuous => {
                    if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                        return Err(Error::Data(format!("row {}, column `{}`: non-finite value", i + 1, c.name)));
                    }
                }
                ColumnKind::Categorical { levels } => {
                    let k = levels.len() as f64;
                    if let Some(i) = c.values.iter().position(|&v| !(v >= 0.0 && v < k && v.fract() == 0.0)) {
                        return Err(Error::Data(format!(
                            "row {}, column `{}`: code {} outside 0..{}",
                            i + 1,
                            c.name,
                            c.values[i],
                            levels.len()
                        )));
                    }
                }
            }
        }
        Ok(Self { columns, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c.values[i]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    kind: c.kind.clone(),
                    values: idx.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
            rows: idx.len(),
        }
    }

    /// Same schema, new rows (row-major, one value per column).
    pub fn with_rows(&self, rows: &[Vec<f64>]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| Column {
                name: c.name.clone(),
                kind: c.kind.clone(),
                values: rows.iter().map(|r| r[j]).collect(),
            })
            .collect();
        Dataset::new(columns)
    }
}
