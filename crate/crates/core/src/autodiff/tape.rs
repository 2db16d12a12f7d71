//! Append-only reverse-mode tape over small row-major matrices.
//!
//! Every value on the tape is a `rows x cols` block of `f64`. Elementwise
//! binary ops broadcast a dimension of size one against the other operand,
//! which is how per-row parameters (1 x k) meet batched data (n x k) and how
//! batched scalars (n x 1) meet per-unit vectors (1 x k).

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Dense row-major matrix used for inputs and forward-only results.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                context: "matrix",
                detail: format!("{} values for a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row `r`, broadcasting a single-row matrix to any row index.
    pub fn row_bcast(&self, r: usize) -> &[f64] {
        if self.rows == 1 {
            self.row(0)
        } else {
            self.row(r)
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Square(Var),
    Scale(Var, f64),
    Offset(Var),
    Matmul(Var, Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    RowSum(Var),
    RowLogSumExp(Var),
    Sum(Var),
    RepeatRows(Var, usize),
    TileRows(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Above this input softplus is treated as the identity.
pub const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else if x < -SOFTPLUS_LINEAR_ABOVE {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Copy)]
struct Bcast {
    rs: usize,
    cs: usize,
}

impl Bcast {
    fn of(rows: usize, cols: usize) -> Self {
        Self {
            rs: if rows == 1 { 0 } else { cols },
            cs: if cols == 1 { 0 } else { 1 },
        }
    }

    #[inline]
    fn at(self, r: usize, c: usize) -> usize {
        r * self.rs + c * self.cs
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    /// Adjoint of any tape value; zero-filled when the root does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.adjoints.get(var.0).and_then(|a| a.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(Vec::as_slice)
    }

    pub fn params(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Vec<f64>> {
        self.params
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    param_names: Vec<String>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Value as an owned matrix.
    pub fn matrix(&self, v: Var) -> Matrix {
        let n = &self.nodes[v.0];
        Matrix {
            rows: n.rows,
            cols: n.cols,
            data: n.value.clone(),
        }
    }

    /// The single value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, name: &'static str) -> Result<Var> {
        debug_assert_eq!(value.len(), rows * cols);
        if let Some(bad) = value.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                op: name,
                detail: format!("produced non-finite value {bad}"),
            });
        }
        self.nodes.push(Node { op, rows, cols, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, m: Matrix) -> Result<Var> {
        self.push(Op::Leaf, m.rows, m.cols, m.data, "constant")
    }

    pub fn scalar_constant(&mut self, x: f64) -> Result<Var> {
        self.push(Op::Leaf, 1, 1, vec![x], "constant")
    }

    /// Record a named trainable parameter. Gradients for it are reported by name.
    pub fn param(&mut self, name: &str, rows: usize, cols: usize, value: &[f64]) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::Shape {
                context: "param",
                detail: format!("`{name}` has {} values, expected {rows}x{cols}", value.len()),
            });
        }
        let idx = match self.param_names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.param_names.push(name.to_string());
                self.param_names.len() - 1
            }
        };
        self.push(Op::Param(idx), rows, cols, value.to_vec(), "param")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let rows = bcast_dim(ar, br).ok_or_else(|| bcast_err(name, (ar, ac), (br, bc)))?;
        let cols = bcast_dim(ac, bc).ok_or_else(|| bcast_err(name, (ar, ac), (br, bc)))?;
        let (ia, ib) = (Bcast::of(ar, ac), Bcast::of(br, bc));
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = Vec::with_capacity(rows * cols);
        if ar == br && ac == bc {
            out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        } else {
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(av[ia.at(r, c)], bv[ib.at(r, c)]));
                }
            }
        }
        self.push(op, rows, cols, out, name)
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(op, rows, cols, out, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).iter().any(|&y| y == 0.0) {
            return Err(Error::Numeric {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "neg", |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Numeric {
                op: "log",
                detail: format!("input {bad} is not positive"),
            });
        }
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "softplus", softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary(a, "scale", |x| x * k, Op::Scale(a, k))
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary(a, "offset", |x| x + k, Op::Offset(a))
    }

    /// `a (n x k) * b (k x m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape {
                context: "matmul",
                detail: format!("{n}x{k} times {k2}x{m}"),
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            (&self.nodes[a.0].value, k as isize, 1),
            (&self.nodes[b.0].value, m as isize, 1),
            &mut out,
        );
        self.push(Op::Matmul(a, b), n, m, out, "matmul")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols || len == 0 {
            return Err(Error::Shape {
                context: "slice_cols",
                detail: format!("columns {start}..{} of {cols}", start + len),
            });
        }
        let v = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
        }
        self.push(Op::SliceCols(a, start), rows, len, out, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p).0,
            None => {
                return Err(Error::Shape {
                    context: "concat_cols",
                    detail: "no inputs".into(),
                })
            }
        };
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Shape {
                context: "concat_cols",
                detail: "row counts differ".into(),
            });
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.nodes[p.0].cols;
                out.extend_from_slice(&self.nodes[p.0].value[r * c..(r + 1) * c]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), rows, cols, out, "concat_cols")
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let v = &self.nodes[a.0].value;
        let out = (0..rows).map(|r| v[r * cols..(r + 1) * cols].iter().sum()).collect();
        self.push(Op::RowSum(a), rows, 1, out, "row_sum")
    }

    pub fn row_logsumexp(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let v = &self.nodes[a.0].value;
        let out = (0..rows).map(|r| logsumexp(&v[r * cols..(r + 1) * cols])).collect();
        self.push(Op::RowLogSumExp(a), rows, 1, out, "logsumexp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), 1, 1, vec![s], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Each row repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let v = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(rows * cols * times);
        for r in 0..rows {
            for _ in 0..times {
                out.extend_from_slice(&v[r * cols..(r + 1) * cols]);
            }
        }
        self.push(Op::RepeatRows(a, times), rows * times, cols, out, "repeat_rows")
    }

    /// The whole block stacked `times` times.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let v = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(rows * cols * times);
        for _ in 0..times {
            out.extend_from_slice(v);
        }
        self.push(Op::TileRows(a), rows * times, cols, out, "tile_rows")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::Shape {
                context: "reshape",
                detail: format!("{r}x{c} into {rows}x{cols}"),
            });
        }
        let v = self.nodes[a.0].value.clone();
        self.push(Op::Reshape(a), rows, cols, v, "reshape")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            let (r, c) = self.shape(root);
            return Err(Error::Contract(format!("backward needs a scalar root, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Add(a, b) => {
                    self.acc_bcast(&mut adj, *a, rows, cols, |i, _| g[i]);
                    self.acc_bcast(&mut adj, *b, rows, cols, |i, _| g[i]);
                }
                Op::Sub(a, b) => {
                    self.acc_bcast(&mut adj, *a, rows, cols, |i, _| g[i]);
                    self.acc_bcast(&mut adj, *b, rows, cols, |i, _| -g[i]);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.bcast_view(*a), self.bcast_view(*b));
                    self.acc_bcast(&mut adj, *a, rows, cols, |i, (r, c)| g[i] * bv.get(r, c));
                    self.acc_bcast(&mut adj, *b, rows, cols, |i, (r, c)| g[i] * av.get(r, c));
                }
                Op::Div(a, b) => {
                    let bv = self.bcast_view(*b);
                    let out = &node.value;
                    self.acc_bcast(&mut adj, *a, rows, cols, |i, (r, c)| g[i] / bv.get(r, c));
                    self.acc_bcast(&mut adj, *b, rows, cols, |i, (r, c)| -g[i] * out[i] / bv.get(r, c));
                }
                Op::Neg(a) => self.acc_map(&mut adj, *a, |i| -g[i]),
                Op::Exp(a) => self.acc_map(&mut adj, *a, |i| g[i] * node.value[i]),
                Op::Log(a) => {
                    let x = &self.nodes[a.0].value;
                    self.acc_map(&mut adj, *a, |i| g[i] / x[i])
                }
                Op::Tanh(a) => self.acc_map(&mut adj, *a, |i| g[i] * (1.0 - node.value[i] * node.value[i])),
                Op::Sigmoid(a) => self.acc_map(&mut adj, *a, |i| g[i] * node.value[i] * (1.0 - node.value[i])),
                Op::Softplus(a) => {
                    let x = &self.nodes[a.0].value;
                    self.acc_map(&mut adj, *a, |i| {
                        if x[i] > SOFTPLUS_LINEAR_ABOVE {
                            g[i]
                        } else {
                            g[i] * sigmoid(x[i])
                        }
                    })
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    self.acc_map(&mut adj, *a, |i| if x[i] > 0.0 { g[i] } else { 0.0 })
                }
                Op::Square(a) => {
                    let x = &self.nodes[a.0].value;
                    self.acc_map(&mut adj, *a, |i| 2.0 * g[i] * x[i])
                }
                Op::Scale(a, k) => self.acc_map(&mut adj, *a, |i| g[i] * k),
                Op::Offset(a) => self.acc_map(&mut adj, *a, |i| g[i]),
                Op::Matmul(a, b) => {
                    let (n, k) = self.shape(*a);
                    let m = cols;
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    // dA = G * B^T
                    let mut da = vec![0.0; n * k];
                    gemm(n, m, k, (&g, m as isize, 1), (bv, 1, m as isize), &mut da);
                    // dB = A^T * G
                    let mut db = vec![0.0; k * m];
                    gemm(k, n, m, (av, 1, k as isize), (&g, m as isize, 1), &mut db);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::SliceCols(a, start) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = vec![0.0; ar * ac];
                    for r in 0..rows {
                        da[r * ac + start..r * ac + start + cols].copy_from_slice(&g[r * cols..(r + 1) * cols]);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].cols;
                        let mut dp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                        }
                        accumulate(&mut adj, p, dp);
                        offset += pc;
                    }
                }
                Op::RowSum(a) => {
                    let ac = self.nodes[a.0].cols;
                    self.acc_map(&mut adj, *a, |i| g[i / ac])
                }
                Op::RowLogSumExp(a) => {
                    let ac = self.nodes[a.0].cols;
                    let x = &self.nodes[a.0].value;
                    self.acc_map(&mut adj, *a, |i| {
                        let r = i / ac;
                        g[r] * (x[i] - node.value[r]).exp()
                    })
                }
                Op::Sum(a) => self.acc_map(&mut adj, *a, |_| g[0]),
                Op::RepeatRows(a, times) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = vec![0.0; ar * ac];
                    for r in 0..rows {
                        let src = r / times;
                        for c in 0..ac {
                            da[src * ac + c] += g[r * ac + c];
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::TileRows(a) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = vec![0.0; ar * ac];
                    for r in 0..rows {
                        let src = r % ar;
                        for c in 0..ac {
                            da[src * ac + c] += g[r * ac + c];
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Reshape(a) => accumulate(&mut adj, *a, g.clone()),
            }
            adj[id] = Some(g);
        }

        let mut params: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                let entry = params
                    .entry(self.param_names[p].clone())
                    .or_insert_with(|| vec![0.0; node.value.len()]);
                if let Some(Some(g)) = adj.get(id) {
                    for (e, x) in entry.iter_mut().zip(g) {
                        *e += x;
                    }
                }
            }
        }
        adj.resize(self.nodes.len(), None);
        Ok(Gradients { adjoints: adj, params })
    }

    fn bcast_view(&self, v: Var) -> BView<'_> {
        let n = &self.nodes[v.0];
        BView {
            data: &n.value,
            idx: Bcast::of(n.rows, n.cols),
        }
    }

    /// Accumulate `f(out_index, (r, c))` into the adjoint of `target`, summing
    /// over broadcast dimensions.
    fn acc_bcast(
        &self,
        adj: &mut [Option<Vec<f64>>],
        target: Var,
        rows: usize,
        cols: usize,
        f: impl Fn(usize, (usize, usize)) -> f64,
    ) {
        let (tr, tc) = self.shape(target);
        let slot = adj[target.0].get_or_insert_with(|| vec![0.0; tr * tc]);
        if tr == rows && tc == cols {
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    slot[i] += f(i, (r, c));
                }
            }
        } else {
            let idx = Bcast::of(tr, tc);
            for r in 0..rows {
                for c in 0..cols {
                    slot[idx.at(r, c)] += f(r * cols + c, (r, c));
                }
            }
        }
    }

    fn acc_map(&self, adj: &mut [Option<Vec<f64>>], target: Var, f: impl Fn(usize) -> f64) {
        let len = self.nodes[target.0].value.len();
        let slot = adj[target.0].get_or_insert_with(|| vec![0.0; len]);
        for (i, s) in slot.iter_mut().enumerate() {
            *s += f(i);
        }
    }
}

struct BView<'a> {
    data: &'a [f64],
    idx: Bcast,
}

impl BView<'_> {
    #[inline]
    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[self.idx.at(r, c)]
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], target: Var, delta: Vec<f64>) {
    match &mut adj[target.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn bcast_dim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, n) | (n, 1) => Some(n),
        _ => None,
    }
}

fn bcast_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape {
        context: op,
        detail: format!("cannot broadcast {}x{} with {}x{}", a.0, a.1, b.0, b.1),
    }
}

/// `out (n x m) = A (n x k) * B (k x m)` with explicit row/column strides.
fn gemm(n: usize, k: usize, m: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), out: &mut [f64]) {
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    // SAFETY: strides describe in-bounds views of the given slices, and `out`
    // holds exactly n*m elements laid out row-major.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
