use rand::Rng;

use super::sample::stream_rng;
use super::{CausalGraph, InferenceConfig};
use crate::autodiff::{Matrix, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};

const LOGLK_CHUNK: usize = 512;

/// Monte Carlo draws of the confounders, one column per confounder in
/// declaration order.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfounderDraws {
    /// The same `M` draws for every row (`M x c`).
    Shared(Matrix),
    /// `M` draws per row (`(n * M) x c`, row `r` owns rows `r*M .. (r+1)*M`).
    PerRow { draws: Matrix, m: usize },
}

impl ConfounderDraws {
    pub fn m(&self) -> usize {
        match self {
            ConfounderDraws::Shared(d) => d.rows,
            ConfounderDraws::PerRow { m, .. } => *m,
        }
    }

    fn matrix(&self) -> &Matrix {
        match self {
            ConfounderDraws::Shared(d) | ConfounderDraws::PerRow { draws: d, .. } => d,
        }
    }

    /// Value of confounder `c` for data row `r`, draw `j`.
    fn value(&self, r: usize, j: usize, c: usize) -> f64 {
        match self {
            ConfounderDraws::Shared(d) => d.get(j, c),
            ConfounderDraws::PerRow { draws, m } => draws.get(r * m + j, c),
        }
    }
}

impl CausalGraph {
    /// `m` prior draws of every confounder (`m x c`).
    pub fn draw_confounders<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Matrix {
        let conf: Vec<usize> = self.confounders().collect();
        let mut out = Matrix::zeros(m, conf.len());
        for r in 0..m {
            for (k, &c) in conf.iter().enumerate() {
                out.data[r * conf.len() + k] = self.nodes[c].unit.prior_noise(rng).scalar().unwrap_or(0.0);
            }
        }
        out
    }

    /// Observed columns (in `observed_names` order) spread onto node indices.
    pub(super) fn node_columns(&self, observed: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let obs: Vec<usize> = self.observed().collect();
        if observed.len() != obs.len() {
            return Err(Error::Shape {
                context: "graph columns",
                detail: format!("{} columns for {} observed nodes", observed.len(), obs.len()),
            });
        }
        let mut cols = vec![Vec::new(); self.nodes.len()];
        for (k, &i) in obs.iter().enumerate() {
            cols[i] = observed[k].clone();
        }
        Ok(cols)
    }

    /// Per-row joint log-likelihood (`n x 1`) of observed columns on the tape.
    /// With confounders the density is the Monte Carlo average over `draws`,
    /// combined in log space.
    pub fn loglk_tape(&self, tape: &mut Tape, observed: &[Vec<f64>], draws: Option<&ConfounderDraws>) -> Result<Var> {
        let cols = self.node_columns(observed)?;
        let n = observed.first().map_or(0, Vec::len);
        if n == 0 || observed.iter().any(|c| c.len() != n) {
            return Err(Error::Shape {
                context: "graph columns",
                detail: "columns must be non-empty and of equal length".into(),
            });
        }
        let draws = match (self.has_confounders(), draws) {
            (false, _) => None,
            (true, Some(d)) => Some(d),
            (true, None) => return Err(Error::Contract("confounded graph needs confounder draws".into())),
        };
        let m = draws.map_or(1, ConfounderDraws::m);
        if let Some(d) = draws {
            let expect = match d {
                ConfounderDraws::Shared(_) => m,
                ConfounderDraws::PerRow { .. } => n * m,
            };
            if m == 0 || d.matrix().rows != expect || d.matrix().cols != self.confounders().count() {
                return Err(Error::Shape {
                    context: "confounder draws",
                    detail: format!("{}x{} draws for {n} rows", d.matrix().rows, d.matrix().cols),
                });
            }
        }
        let conf_pos: Vec<usize> = {
            let mut pos = vec![usize::MAX; self.nodes.len()];
            for (k, c) in self.confounders().enumerate() {
                pos[c] = k;
            }
            pos
        };

        let mut total: Option<Var> = None;
        for i in self.observed() {
            let gn = &self.nodes[i];
            let unit = &gn.unit;
            let term = match draws {
                Some(d) if !gn.confounders.is_empty() => {
                    let values: Vec<f64> = cols[i].iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect();
                    let parents = self.encode_parents(i, &cols, n);
                    let theta = if parents.cols == 0 && matches!(d, ConfounderDraws::Shared(_)) {
                        let mut u = Matrix::zeros(m, gn.confounders.len());
                        for j in 0..m {
                            for (k, &c) in gn.confounders.iter().enumerate() {
                                u.data[j * gn.confounders.len() + k] = d.value(0, j, conf_pos[c]);
                            }
                        }
                        let u = tape.constant(u)?;
                        let th = unit.theta_tape(tape, &self.params, Some(u))?;
                        tape.tile_rows(th, n)?
                    } else {
                        let dim = unit.input_dim();
                        let mut x = Matrix::zeros(n * m, dim);
                        for r in 0..n {
                            for j in 0..m {
                                let row = &mut x.data[(r * m + j) * dim..(r * m + j + 1) * dim];
                                row[..parents.cols].copy_from_slice(parents.row(r));
                                for (k, &c) in gn.confounders.iter().enumerate() {
                                    row[parents.cols + k] = d.value(r, j, conf_pos[c]);
                                }
                            }
                        }
                        let x = tape.constant(x)?;
                        unit.theta_tape(tape, &self.params, Some(x))?
                    };
                    unit.loglk_tape(tape, Some(theta), &values)?
                }
                _ => {
                    let x = if unit.input_dim() > 0 {
                        Some(tape.constant(self.encode_parents(i, &cols, n))?)
                    } else {
                        None
                    };
                    let theta = unit.theta_tape(tape, &self.params, x)?;
                    let l = unit.loglk_tape(tape, Some(theta), &cols[i])?;
                    if m > 1 {
                        tape.repeat_rows(l, m)?
                    } else {
                        l
                    }
                }
            };
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidGraph("graph has no observable nodes".into()))?;
        if draws.is_none() {
            return Ok(total);
        }
        let grid = tape.reshape(total, n, m)?;
        let lse = tape.row_logsumexp(grid)?;
        tape.offset(lse, -(m as f64).ln())
    }

    /// Per-row joint log-likelihood of a dataset. Row `r` integrates the
    /// confounders with `cfg.m` draws from substream `r` of `cfg.seed`.
    pub fn loglk(&self, data: &Dataset, cfg: &InferenceConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        let observed = self.data_columns(data)?;
        let n = data.n_rows();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + LOGLK_CHUNK).min(n);
            let chunk: Vec<Vec<f64>> = observed.iter().map(|c| c[start..end].to_vec()).collect();
            let draws = self.has_confounders().then(|| {
                let c = self.confounders().count();
                let mut d = Matrix::zeros((end - start) * cfg.m, c);
                for r in start..end {
                    let block = self.draw_confounders(cfg.m, &mut stream_rng(cfg.seed, r as u64));
                    let at = (r - start) * cfg.m * c;
                    d.data[at..at + block.data.len()].copy_from_slice(&block.data);
                }
                ConfounderDraws::PerRow { draws: d, m: cfg.m }
            });
            let mut tape = Tape::new();
            let l = self.loglk_tape(&mut tape, &chunk, draws.as_ref())?;
            out.extend_from_slice(tape.value(l));
            start = end;
        }
        Ok(out)
    }

    /// Per-row joint log-likelihood with caller-supplied confounder draws.
    pub fn loglk_with(&self, data: &Dataset, draws: &ConfounderDraws) -> Result<Vec<f64>> {
        let observed = self.data_columns(data)?;
        let mut tape = Tape::new();
        let l = self.loglk_tape(&mut tape, &observed, Some(draws))?;
        Ok(tape.value(l).to_vec())
    }

    /// Mean per-row log-likelihood.
    pub fn mean_loglk(&self, data: &Dataset, cfg: &InferenceConfig) -> Result<f64> {
        let l = self.loglk(data, cfg)?;
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    }
}
