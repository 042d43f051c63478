use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::gemm;
use super::{NnError, ParamId, ParamStore, Tensor};
use crate::linalg::SparseMatrix;

/// Index marker for gathered rows that contribute zeros.
pub const PAD: usize = usize::MAX;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>, Axis),
    Slice {
        input: Var,
        axis: Axis,
        start: usize,
    },
    LeakyRelu(Var, f64),
    Gather {
        input: Var,
        indices: Arc<[usize]>,
        blocks: usize,
    },
    Reshape(Var),
    SparseMatMul {
        matrix: Arc<SparseMatrix>,
        input: Var,
        blocks: usize,
    },
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    leaves: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient for a leaf created with [`Tape::leaf`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (&id, g) in &other.params {
            match self.params.get_mut(&id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.params.insert(id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.params.values_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }
}

/// Records operations for reverse-mode differentiation.
///
/// A tape is consumed by [`Tape::backward`]; recording or differentiating
/// again afterwards is an error.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> NnError {
    NnError::Shape { op, lhs, rhs }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A tape that never records backward rules, for inference.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, NnError> {
        if self.consumed {
            return Err(NnError::TapeConsumed);
        }
        let requires_grad = self.grad_enabled
            && match op {
                Op::Leaf | Op::Param(_) => true,
                Op::Constant => false,
                _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
            };
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.push(value, Op::Constant, &[])
    }

    /// A differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, NnError> {
        self.push(value, Op::Leaf, &[])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, NnError> {
        self.push(store.get(id).clone(), Op::Param(id), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let out = gemm(av, false, bv, false);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum; `b` may also be a `1 x cols` row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let out = Tensor::new(av.rows(), av.cols(), data)?;
            return self.push(out, Op::Add(a, b), &[a, b]);
        }
        if bv.rows() == 1 && bv.cols() == av.cols() {
            let mut out = av.clone();
            let cols = av.cols();
            for (k, x) in out.data_mut().iter_mut().enumerate() {
                *x += bv.data()[k % cols];
            }
            return self.push(out, Op::AddRow(a, b), &[a, b]);
        }
        Err(shape_err("add", av.shape(), bv.shape()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("sub", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NnError> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, NnError> {
        let first = match parts.first() {
            Some(&v) => self.value(v).shape(),
            None => return Err(shape_err("concat", (0, 0), (0, 0))),
        };
        let out = match axis {
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let s = self.value(p).shape();
                    if s.0 != first.0 {
                        return Err(shape_err("concat", first, s));
                    }
                    cols += s.1;
                }
                let mut data = Vec::with_capacity(first.0 * cols);
                for r in 0..first.0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::new(first.0, cols, data)?
            }
            Axis::Rows => {
                let mut rows = 0;
                for &p in parts {
                    let s = self.value(p).shape();
                    if s.1 != first.1 {
                        return Err(shape_err("concat", first, s));
                    }
                    rows += s.0;
                }
                let mut data = Vec::with_capacity(rows * first.1);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(rows, first.1, data)?
            }
        };
        self.push(out, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// `len` rows or columns starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var, NnError> {
        let av = self.value(a);
        let out = match axis {
            Axis::Rows => {
                if start + len > av.rows() {
                    return Err(shape_err("slice", av.shape(), (start, len)));
                }
                Tensor::new(
                    len,
                    av.cols(),
                    av.data()[start * av.cols()..(start + len) * av.cols()].to_vec(),
                )?
            }
            Axis::Cols => {
                if start + len > av.cols() {
                    return Err(shape_err("slice", av.shape(), (start, len)));
                }
                let mut data = Vec::with_capacity(av.rows() * len);
                for r in 0..av.rows() {
                    data.extend_from_slice(&av.row(r)[start..start + len]);
                }
                Tensor::new(av.rows(), len, data)?
            }
        };
        self.push(out, Op::Slice { input: a, axis, start }, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NnError> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    /// Row gather: output row `i` is input row `indices[i]`, or zeros for [`PAD`].
    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var, NnError> {
        self.gather_concat(a, indices, 1, 1)
    }

    /// Gathers rows in groups of `group` and lays each group out side by side,
    /// giving `(blocks * indices.len() / group) x (group * C)`. The input is
    /// `blocks` stacked copies of an `n x C` layout, and `indices` address rows
    /// within one block.
    pub fn gather_concat(
        &mut self,
        a: Var,
        indices: Arc<[usize]>,
        group: usize,
        blocks: usize,
    ) -> Result<Var, NnError> {
        let av = self.value(a);
        if group == 0 || blocks == 0 || indices.len() % group != 0 || av.rows() % blocks != 0 {
            return Err(shape_err("gather", av.shape(), (indices.len(), group)));
        }
        let n_in = av.rows() / blocks;
        if let Some(&bad) = indices.iter().find(|&&i| i != PAD && i >= n_in) {
            return Err(NnError::IndexOutOfRange { index: bad, rows: n_in });
        }
        let c = av.cols();
        let n_out = indices.len() / group;
        let mut data = vec![0.0; blocks * indices.len() * c];
        for b in 0..blocks {
            let base_out = b * indices.len() * c;
            for (k, &i) in indices.iter().enumerate() {
                if i == PAD {
                    continue;
                }
                let src = av.row(b * n_in + i);
                data[base_out + k * c..base_out + (k + 1) * c].copy_from_slice(src);
            }
        }
        let out = Tensor::new(blocks * n_out, group * c, data)?;
        self.push(
            out,
            Op::Gather {
                input: a,
                indices,
                blocks,
            },
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Applies `matrix` to each of `blocks` stacked row blocks of `a`.
    pub fn sparse_matmul(&mut self, matrix: &Arc<SparseMatrix>, a: Var, blocks: usize) -> Result<Var, NnError> {
        let av = self.value(a);
        if blocks == 0 || av.rows() != blocks * matrix.cols() {
            return Err(shape_err("sparse_matmul", (matrix.rows(), matrix.cols()), av.shape()));
        }
        let c = av.cols();
        let block_in = matrix.cols() * c;
        let mut data = Vec::with_capacity(blocks * matrix.rows() * c);
        for b in 0..blocks {
            data.extend(matrix.mul_dense(&av.data()[b * block_in..(b + 1) * block_in], c));
        }
        let out = Tensor::new(blocks * matrix.rows(), c, data)?;
        self.push(
            out,
            Op::SparseMatMul {
                matrix: Arc::clone(matrix),
                input: a,
                blocks,
            },
            &[a],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var, NnError> {
        let av = self.value(a);
        let out = Tensor::scalar(av.sum() / av.len().max(1) as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Mean over rows of the row-wise L1 distance; for an `N x 3` vertex
    /// array this is the mean per-vertex L1 error.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("l1_loss", av.shape(), bv.shape()));
        }
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).abs()).sum();
        let out = Tensor::scalar(s / av.rows().max(1) as f64);
        self.push(out, Op::L1(a, b), &[a, b])
    }

    /// Reverse pass from a scalar; consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NnError> {
        if self.consumed {
            return Err(NnError::TapeConsumed);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NnError::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.params.insert(*id, g);
                    }
                },
                op => self.propagate(op, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let needs = |v: Var| nodes[v.0].requires_grad;
        let map = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
            let data = t.data().iter().enumerate().map(|(k, &x)| f(k, x)).collect();
            Tensor::new(t.rows(), t.cols(), data).expect("same shape")
        };
        match op {
            Op::Constant | Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                if needs(*a) {
                    send(*a, gemm(g, false, self.value(*b), true), grads);
                }
                if needs(*b) {
                    send(*b, gemm(self.value(*a), true, g, false), grads);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::AddRow(a, b) => {
                if needs(*b) {
                    let mut acc = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (x, y) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    send(*b, acc, grads);
                }
                send(*a, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads);
                if needs(*b) {
                    send(*b, map(g, &|_, x| -x), grads);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    send(*a, map(g, &|k, x| x * bv.data()[k]), grads);
                }
                if needs(*b) {
                    send(*b, map(g, &|k, x| x * av.data()[k]), grads);
                }
            }
            Op::Scale(a, c) => send(*a, map(g, &|_, x| x * c), grads),
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    if needs(p) {
                        let t = match axis {
                            Axis::Cols => Tensor::from_fn(rows, cols, |r, c| g.get(r, offset + c)),
                            Axis::Rows => Tensor::from_fn(rows, cols, |r, c| g.get(offset + r, c)),
                        };
                        send(p, t, grads);
                    }
                    offset += match axis {
                        Axis::Cols => cols,
                        Axis::Rows => rows,
                    };
                }
            }
            Op::Slice { input, axis, start } => {
                let (rows, cols) = self.value(*input).shape();
                let mut t = Tensor::zeros(rows, cols);
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        match axis {
                            Axis::Rows => t.set(start + r, c, g.get(r, c)),
                            Axis::Cols => t.set(r, start + c, g.get(r, c)),
                        }
                    }
                }
                send(*input, t, grads);
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                send(
                    *a,
                    map(g, &|k, x| if av.data()[k] > 0.0 { x } else { slope * x }),
                    grads,
                );
            }
            Op::Gather { input, indices, blocks } => {
                let (rows, c) = self.value(*input).shape();
                let n_in = rows / blocks;
                let mut t = Tensor::zeros(rows, c);
                let gd = g.data();
                for b in 0..*blocks {
                    let base_out = b * indices.len() * c;
                    for (k, &i) in indices.iter().enumerate() {
                        if i == PAD {
                            continue;
                        }
                        let dst = (b * n_in + i) * c;
                        let src = &gd[base_out + k * c..base_out + (k + 1) * c];
                        for (x, y) in t.data_mut()[dst..dst + c].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
                send(*input, t, grads);
            }
            Op::Reshape(a) => {
                let (rows, cols) = self.value(*a).shape();
                send(*a, g.clone().reshaped(rows, cols).expect("same size"), grads);
            }
            Op::SparseMatMul { matrix, input, blocks } => {
                let c = g.cols();
                let block_out = matrix.rows() * c;
                let mut data = Vec::with_capacity(blocks * matrix.cols() * c);
                for b in 0..*blocks {
                    data.extend(matrix.transpose_mul_dense(&g.data()[b * block_out..(b + 1) * block_out], c));
                }
                let t = Tensor::new(blocks * matrix.cols(), c, data).expect("block shape");
                send(*input, t, grads);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.value(*a).shape();
                send(*a, Tensor::full(rows, cols, g.get(0, 0)), grads);
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let s = g.get(0, 0) / av.len().max(1) as f64;
                send(*a, Tensor::full(av.rows(), av.cols(), s), grads);
            }
            Op::L1(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let s = g.get(0, 0) / av.rows().max(1) as f64;
                let sign = |k: usize| {
                    let d = av.data()[k] - bv.data()[k];
                    if d > 0.0 {
                        s
                    } else if d < 0.0 {
                        -s
                    } else {
                        0.0
                    }
                };
                if needs(*a) {
                    send(*a, map(av, &|k, _| sign(k)), grads);
                }
                if needs(*b) {
                    send(*b, map(bv, &|k, _| -sign(k)), grads);
                }
            }
        }
    }
}
