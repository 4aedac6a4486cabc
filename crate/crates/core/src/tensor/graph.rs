use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::kernels::{axpy, dot, gemm, lse_row};
use super::{sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softplus,
    Neg,
}

/// Binary elementwise ops. Operands must have equal shapes, or one of them
/// must be a rank-0 scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Hadamard,
}

enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    LogSumExp {
        x: Var,
        weights: Option<Rc<Tensor>>,
    },
    PickCols {
        x: Var,
        cols: Vec<usize>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    GroupedDot {
        h: Var,
        rows: Var,
        group: usize,
    },
    GatherDot {
        h: Var,
        table: Var,
        ids: Vec<usize>,
        group: usize,
    },
    SegmentMean {
        x: Var,
        lengths: Vec<usize>,
    },
    SumRows(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Each op evaluates eagerly and records how to propagate
/// gradients; [`Graph::backward`] walks the records in reverse order.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of parameter leaves, keyed by their [`Var`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, t: impl Into<Rc<Tensor>>) -> Var {
        self.push(t.into(), Op::Param, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: impl Into<Rc<Tensor>>) -> Var {
        self.push(t.into(), Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> Result<f64> {
        self.nodes.borrow()[v.0].value.item()
    }

    fn push(&self, value: Rc<Tensor>, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].needs_grad)
        };
        self.push(Rc::new(value), op, needs_grad)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.dims2()?;
        let (k2, n) = vb.dims2()?;
        if k != k2 {
            return Err(shape_err(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        Ok(self.record(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = va.dims2()?;
        let (n, k2) = vb.dims2()?;
        if k != k2 {
            return Err(shape_err(format!("matmul_bt {m}x{k} by ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), false, vb.data(), true, &mut out, false);
        Ok(self.record(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn unary(&self, op: Unary, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let f: fn(f64) -> f64 = match op {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Log => {
                if let Some(bad) = vx.data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                f64::ln
            }
            Unary::Softplus => softplus,
            Unary::Neg => |v| -v,
        };
        let out = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect())?;
        Ok(self.record(out, Op::Unary(op, x), &[x]))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn softplus(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    pub fn neg(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn binary(&self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Hadamard => |x, y| x * y,
        };
        let out = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.is_scalar() {
            let y = vb.data()[0];
            Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| f(x, y)).collect())?
        } else if va.is_scalar() {
            let x = va.data()[0];
            Tensor::new(vb.shape().to_vec(), vb.data().iter().map(|&y| f(x, y)).collect())?
        } else {
            return Err(shape_err(format!(
                "{op:?} of shapes {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        };
        Ok(self.record(out, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Hadamard, a, b)
    }

    /// Multiply by a constant.
    pub fn scale(&self, x: Var, c: f64) -> Var {
        let vx = self.value(x);
        let out = Tensor::from_fn(vx.shape().to_vec(), |i| c * vx.data()[i]);
        self.record(out, Op::Scale(x, c), &[x])
    }

    /// Add a constant.
    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        let vx = self.value(x);
        let out = Tensor::from_fn(vx.shape().to_vec(), |i| vx.data()[i] + c);
        self.record(out, Op::AddScalar(x), &[x])
    }

    /// Adds the length-`n` vector `bias` to every row of the `m×n` matrix `x`.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (m, n) = vx.dims2()?;
        if vb.numel() != n {
            return Err(shape_err(format!("bias of {} for {m}x{n}", vb.numel())));
        }
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        Ok(self.record(Tensor::matrix(m, n, out)?, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Row-wise `log Σ wᵢ exp(xᵢ)`. A vector gives a scalar; an `m×n`
    /// matrix gives one value per row. Zero weights drop their terms.
    pub fn log_sum_exp(&self, x: Var, weights: Option<Rc<Tensor>>) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols, out_shape) = row_layout(&vx)?;
        if cols == 0 {
            return Err(Error::Argument("log_sum_exp of an empty input".into()));
        }
        if let Some(w) = &weights {
            if w.shape() != vx.shape() {
                return Err(shape_err(format!(
                    "weights {:?} for values {:?}",
                    w.shape(),
                    vx.shape()
                )));
            }
            if w.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Argument("weights must be finite and nonnegative".into()));
            }
            if (0..rows).any(|r| !w.data()[r * cols..(r + 1) * cols].iter().any(|&v| v > 0.0)) {
                return Err(Error::Argument("every row needs a positive weight".into()));
            }
        }
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                let xs = &vx.data()[r * cols..(r + 1) * cols];
                let ws = weights.as_ref().map(|w| &w.data()[r * cols..(r + 1) * cols]);
                lse_row(xs, ws)
            })
            .collect();
        Ok(self.record(Tensor::new(out_shape, out)?, Op::LogSumExp { x, weights }, &[x]))
    }

    /// Picks `x[r, cols[r]]` from each row.
    pub fn pick_cols(&self, x: Var, cols: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (rows, ncols, out_shape) = row_layout(&vx)?;
        if cols.len() != rows {
            return Err(shape_err(format!("{} column indices for {rows} rows", cols.len())));
        }
        let mut out = Vec::with_capacity(rows);
        for (r, &c) in cols.iter().enumerate() {
            if c >= ncols {
                return Err(Error::Index { index: c, len: ncols });
            }
            out.push(vx.data()[r * ncols + c]);
        }
        Ok(self.record(
            Tensor::new(out_shape, out)?,
            Op::PickCols { x, cols: cols.to_vec() },
            &[x],
        ))
    }

    /// Embedding lookup: rows `ids` of an `N×d` table.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (n, d) = vt.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::Index { index: id, len: n });
            }
            out.extend_from_slice(vt.row(id));
        }
        Ok(self.record(
            Tensor::matrix(ids.len(), d, out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// `out[b, g] = ⟨h[b], rows[b·group + g]⟩` for `h: B×d`, `rows: (B·group)×d`.
    pub fn grouped_dot(&self, h: Var, rows: Var, group: usize) -> Result<Var> {
        let (vh, vr) = (self.value(h), self.value(rows));
        let (b, d) = vh.dims2()?;
        let (nr, d2) = vr.dims2()?;
        if d != d2 || nr != b * group {
            return Err(shape_err(format!(
                "grouped_dot of {b}x{d} with {nr}x{d2}, group {group}"
            )));
        }
        let mut out = Vec::with_capacity(b * group);
        for i in 0..b {
            let hi = vh.row(i);
            for g in 0..group {
                out.push(dot(hi, vr.row(i * group + g)));
            }
        }
        Ok(self.record(
            Tensor::matrix(b, group, out)?,
            Op::GroupedDot { h, rows, group },
            &[h, rows],
        ))
    }

    /// `out[b, g] = ⟨h[b], table[ids[b·group + g]]⟩` without materializing
    /// the gathered rows; the table gradient touches only the listed rows.
    pub fn gather_dot(&self, h: Var, table: Var, ids: &[usize], group: usize) -> Result<Var> {
        let (vh, vt) = (self.value(h), self.value(table));
        let (b, d) = vh.dims2()?;
        let (n, d2) = vt.dims2()?;
        if d != d2 || ids.len() != b * group {
            return Err(shape_err(format!(
                "gather_dot of {b}x{d} with {} ids into {n}x{d2}, group {group}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        let out: Vec<f64> = ids
            .iter()
            .enumerate()
            .map(|(r, &id)| dot(vh.row(r / group.max(1)), vt.row(id)))
            .collect();
        Ok(self.record(
            Tensor::matrix(b, group, out)?,
            Op::GatherDot {
                h,
                table,
                ids: ids.to_vec(),
                group,
            },
            &[h, table],
        ))
    }

    /// Mean over consecutive row segments of an `M×d` matrix.
    pub fn segment_mean(&self, x: Var, lengths: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (m, d) = vx.dims2()?;
        if lengths.iter().sum::<usize>() != m || lengths.contains(&0) {
            return Err(shape_err(format!("segment lengths {lengths:?} do not tile {m} rows")));
        }
        let mut out = vec![0.0; lengths.len() * d];
        let mut start = 0;
        for (s, &len) in lengths.iter().enumerate() {
            let dst = &mut out[s * d..(s + 1) * d];
            for r in start..start + len {
                axpy(1.0 / len as f64, vx.row(r), dst);
            }
            start += len;
        }
        Ok(self.record(
            Tensor::matrix(lengths.len(), d, out)?,
            Op::SegmentMean {
                x,
                lengths: lengths.to_vec(),
            },
            &[x],
        ))
    }

    /// Sums each row of a matrix (a vector sums to a scalar).
    pub fn sum_rows(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols, out_shape) = row_layout(&vx)?;
        let out = (0..rows)
            .map(|r| vx.data()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        Ok(self.record(Tensor::new(out_shape, out)?, Op::SumRows(x), &[x]))
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.numel() == 0 {
            return Err(Error::Argument("mean of an empty tensor".into()));
        }
        let s = vx.data().iter().sum::<f64>() / vx.numel() as f64;
        Ok(self.record(Tensor::scalar(s), Op::Mean(x), &[x]))
    }

    /// Reverse sweep from a scalar root. Returns gradients of every
    /// parameter leaf that the root depends on.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_node = nodes
            .get(root.0)
            .ok_or_else(|| Error::Argument(format!("node {} is not on this tape", root.0)))?;
        if root_node.value.numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar root, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        if root_node.needs_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Param) {
                if let Some(g) = grads[i].take() {
                    out.grads.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g)?);
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = Accumulator {
                nodes: &nodes,
                grads: &mut grads,
            };
            propagate(node, &g, &mut acc);
        }
        Ok(out)
    }
}

fn row_layout(t: &Tensor) -> Result<(usize, usize, Vec<usize>)> {
    match t.shape() {
        [n] => Ok((1, *n, Vec::new())),
        [r, c] => Ok((*r, *c, vec![*r])),
        s => Err(Error::Shape(format!("expected a vector or matrix, shape is {s:?}"))),
    }
}

struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Accumulator<'_> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of `v`, allocated on first use.
    fn buf(&mut self, v: Var) -> &mut Vec<f64> {
        let n = self.nodes[v.0].value.numel();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn add(&mut self, v: Var, g: impl IntoIterator<Item = f64>) {
        if self.wants(v) {
            for (dst, x) in self.buf(v).iter_mut().zip(g) {
                *dst += x;
            }
        }
    }

    fn add_scalar(&mut self, v: Var, s: f64) {
        if self.wants(v) {
            self.buf(v)[0] += s;
        }
    }
}

fn propagate(node: &Node, g: &[f64], acc: &mut Accumulator<'_>) {
    let y = node.value.data();
    match node.op {
        Op::Param | Op::Constant => {}
        Op::MatMul(a, b) => {
            let (m, k) = acc.value(a).dims2().expect("checked in forward");
            let n = acc.value(b).dims2().expect("checked in forward").1;
            if acc.wants(a) {
                let vb = acc.nodes[b.0].value.clone();
                gemm(m, n, k, g, false, vb.data(), true, acc.buf(a), true);
            }
            if acc.wants(b) {
                let va = acc.nodes[a.0].value.clone();
                gemm(k, m, n, va.data(), true, g, false, acc.buf(b), true);
            }
        }
        Op::MatMulBt(a, b) => {
            let (m, k) = acc.value(a).dims2().expect("checked in forward");
            let n = acc.value(b).dims2().expect("checked in forward").0;
            if acc.wants(a) {
                let vb = acc.nodes[b.0].value.clone();
                gemm(m, n, k, g, false, vb.data(), false, acc.buf(a), true);
            }
            if acc.wants(b) {
                let va = acc.nodes[a.0].value.clone();
                gemm(n, m, k, g, true, va.data(), false, acc.buf(b), true);
            }
        }
        Op::Unary(op, x) => {
            if !acc.wants(x) {
                return;
            }
            let xs = acc.nodes[x.0].value.clone();
            let xs = xs.data();
            let local: Vec<f64> = match op {
                Unary::Sigmoid => y.iter().zip(g).map(|(s, gi)| gi * s * (1.0 - s)).collect(),
                Unary::Tanh => y.iter().zip(g).map(|(t, gi)| gi * (1.0 - t * t)).collect(),
                Unary::Exp => y.iter().zip(g).map(|(e, gi)| gi * e).collect(),
                Unary::Log => xs.iter().zip(g).map(|(v, gi)| gi / v).collect(),
                Unary::Softplus => xs.iter().zip(g).map(|(&v, gi)| gi * sigmoid(v)).collect(),
                Unary::Neg => g.iter().map(|gi| -gi).collect(),
            };
            acc.add(x, local);
        }
        Op::Binary(op, a, b) => {
            let va = acc.nodes[a.0].value.clone();
            let vb = acc.nodes[b.0].value.clone();
            // d(out)/d(a) and d(out)/d(b) per element, then reduce for scalars
            let a_scalar = va.is_scalar() && va.shape() != vb.shape();
            let b_scalar = vb.is_scalar() && va.shape() != vb.shape();
            let at = |i: usize| if a_scalar { va.data()[0] } else { va.data()[i] };
            let bt = |i: usize| if b_scalar { vb.data()[0] } else { vb.data()[i] };
            let da: Vec<f64> = match op {
                Binary::Add | Binary::Sub => g.to_vec(),
                Binary::Hadamard => g.iter().enumerate().map(|(i, gi)| gi * bt(i)).collect(),
            };
            let db: Vec<f64> = match op {
                Binary::Add => g.to_vec(),
                Binary::Sub => g.iter().map(|gi| -gi).collect(),
                Binary::Hadamard => g.iter().enumerate().map(|(i, gi)| gi * at(i)).collect(),
            };
            if a_scalar {
                acc.add_scalar(a, da.iter().sum());
            } else {
                acc.add(a, da);
            }
            if b_scalar {
                acc.add_scalar(b, db.iter().sum());
            } else {
                acc.add(b, db);
            }
        }
        Op::Scale(x, c) => acc.add(x, g.iter().map(|gi| c * gi)),
        Op::AddScalar(x) => acc.add(x, g.iter().copied()),
        Op::AddBias(x, bias) => {
            acc.add(x, g.iter().copied());
            if acc.wants(bias) {
                let n = acc.value(bias).numel();
                let buf = acc.buf(bias);
                for row in g.chunks(n) {
                    for (dst, gi) in buf.iter_mut().zip(row) {
                        *dst += gi;
                    }
                }
            }
        }
        Op::LogSumExp { x, ref weights } => {
            if !acc.wants(x) {
                return;
            }
            let vx = acc.nodes[x.0].value.clone();
            let cols = *vx.shape().last().expect("vector or matrix");
            let buf = acc.buf(x);
            for (r, (&lse, &gr)) in y.iter().zip(g).enumerate() {
                let xs = &vx.data()[r * cols..(r + 1) * cols];
                let dst = &mut buf[r * cols..(r + 1) * cols];
                match weights {
                    None => {
                        for (d, &v) in dst.iter_mut().zip(xs) {
                            *d += gr * (v - lse).exp();
                        }
                    }
                    Some(w) => {
                        let ws = &w.data()[r * cols..(r + 1) * cols];
                        for ((d, &v), &wi) in dst.iter_mut().zip(xs).zip(ws) {
                            if wi > 0.0 {
                                *d += gr * wi * (v - lse).exp();
                            }
                        }
                    }
                }
            }
        }
        Op::PickCols { x, ref cols } => {
            if !acc.wants(x) {
                return;
            }
            let ncols = *acc.value(x).shape().last().expect("vector or matrix");
            let buf = acc.buf(x);
            for (r, (&c, &gr)) in cols.iter().zip(g).enumerate() {
                buf[r * ncols + c] += gr;
            }
        }
        Op::GatherRows { table, ref ids } => {
            if !acc.wants(table) {
                return;
            }
            let d = acc.value(table).dims2().expect("checked in forward").1;
            let buf = acc.buf(table);
            for (r, &id) in ids.iter().enumerate() {
                axpy(1.0, &g[r * d..(r + 1) * d], &mut buf[id * d..(id + 1) * d]);
            }
        }
        Op::GroupedDot { h, rows, group } => {
            let vh = acc.nodes[h.0].value.clone();
            let vr = acc.nodes[rows.0].value.clone();
            let (b, d) = vh.dims2().expect("checked in forward");
            if acc.wants(h) {
                let buf = acc.buf(h);
                for i in 0..b {
                    for k in 0..group {
                        axpy(g[i * group + k], vr.row(i * group + k), &mut buf[i * d..(i + 1) * d]);
                    }
                }
            }
            if acc.wants(rows) {
                let buf = acc.buf(rows);
                for i in 0..b {
                    for k in 0..group {
                        let r = i * group + k;
                        axpy(g[r], vh.row(i), &mut buf[r * d..(r + 1) * d]);
                    }
                }
            }
        }
        Op::GatherDot {
            h,
            table,
            ref ids,
            group,
        } => {
            let vh = acc.nodes[h.0].value.clone();
            let vt = acc.nodes[table.0].value.clone();
            let d = vh.dims2().expect("checked in forward").1;
            if acc.wants(h) {
                let buf = acc.buf(h);
                for (r, &id) in ids.iter().enumerate() {
                    let b = r / group;
                    axpy(g[r], vt.row(id), &mut buf[b * d..(b + 1) * d]);
                }
            }
            if acc.wants(table) {
                let buf = acc.buf(table);
                for (r, &id) in ids.iter().enumerate() {
                    axpy(g[r], vh.row(r / group), &mut buf[id * d..(id + 1) * d]);
                }
            }
        }
        Op::SegmentMean { x, ref lengths } => {
            if !acc.wants(x) {
                return;
            }
            let d = acc.value(x).dims2().expect("checked in forward").1;
            let buf = acc.buf(x);
            let mut start = 0;
            for (s, &len) in lengths.iter().enumerate() {
                let gs = &g[s * d..(s + 1) * d];
                for r in start..start + len {
                    axpy(1.0 / len as f64, gs, &mut buf[r * d..(r + 1) * d]);
                }
                start += len;
            }
        }
        Op::SumRows(x) => {
            if !acc.wants(x) {
                return;
            }
            let cols = *acc.value(x).shape().last().expect("vector or matrix");
            let expanded: Vec<f64> = g.iter().flat_map(|&gr| std::iter::repeat_n(gr, cols)).collect();
            acc.add(x, expanded);
        }
        Op::Sum(x) => {
            let n = acc.value(x).numel();
            acc.add(x, std::iter::repeat_n(g[0], n));
        }
        Op::Mean(x) => {
            let n = acc.value(x).numel();
            acc.add(x, std::iter::repeat_n(g[0] / n as f64, n));
        }
    }
}
