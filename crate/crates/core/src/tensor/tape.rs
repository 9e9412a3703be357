use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Deref;
use std::rc::Rc;

use super::kernels::{self, dot};
use super::{as_matrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a> {
    Borrowed(&'a [f64]),
    Owned(Vec<f64>),
}

impl Deref for Value<'_> {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        match self {
            Value::Borrowed(s) => s,
            Value::Owned(v) => v,
        }
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    GatherRows { src: Var, index: Rc<[usize]> },
    ScatterAddRows { src: Var, index: Rc<[usize]> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    GroupSoftmax { src: Var, groups: Rc<[Vec<usize>]> },
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Sum(Var),
    LogSoftmaxNll { src: Var, labels: Rc<[usize]> },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Value<'a>,
    op: Op,
    tracked: bool,
}

/// Records primitive applications in execution order.
///
/// Leaves borrow their data for the lifetime `'a`, so a tape built over a set
/// of parameters keeps them immutable until it is dropped.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: RefCell<Vec<Node<'a>>>,
}

/// Gradients of a scalar with respect to every tracked leaf reached by it.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_leaf: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, leaf: Var) -> Option<&[f64]> {
        self.by_leaf.get(&leaf).map(Vec::as_slice)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Value<'a>, op: Op, tracked: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(nodes.len() - 1)
    }

    /// Records a borrowed tensor. Tracked iff the tensor requires gradients.
    pub fn leaf(&self, tensor: &'a Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            Value::Borrowed(tensor.data()),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Records an owned tensor as a leaf.
    pub fn leaf_owned(&self, tensor: Tensor) -> Var {
        let tracked = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        let data = tensor.data;
        self.push(shape, Value::Owned(data), Op::Leaf, tracked)
    }

    /// Untracked constant.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf_owned(t))
    }

    pub fn zeros(&self, shape: &[usize]) -> Var {
        self.leaf_owned(Tensor::zeros(shape))
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.to_vec()
    }

    /// First element of a value; the loss value for scalars.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].tracked
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let nodes = self.nodes.borrow();
        let n = &nodes[x.0];
        let out: Vec<f64> = n.value.iter().map(|&v| f(v)).collect();
        let (shape, tracked) = (n.shape.clone(), n.tracked);
        drop(nodes);
        self.push(shape, Value::Owned(out), op, tracked)
    }

    fn binary_same_shape(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.0], &nodes[b.0]);
        if na.shape != nb.shape {
            return Err(Error::shape(name, &na.shape, &nb.shape));
        }
        let out: Vec<f64> = na
            .value
            .iter()
            .zip(nb.value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (shape, tracked) = (na.shape.clone(), na.tracked || nb.tracked);
        drop(nodes);
        Ok(self.push(shape, Value::Owned(out), op, tracked))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.0], &nodes[b.0]);
        if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
            return Err(Error::shape("matmul", &na.shape, &nb.shape));
        }
        let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(&na.value, &nb.value, m, k, n, &mut out);
        let tracked = na.tracked || nb.tracked;
        drop(nodes);
        Ok(self.push(vec![m, n], Value::Owned(out), Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let nx = &nodes[x.0];
        if nx.shape.len() != 2 {
            return Err(Error::shape("transpose", &nx.shape, &[]));
        }
        let (r, c) = (nx.shape[0], nx.shape[1]);
        let out = kernels::transpose(&nx.value, r, c);
        let tracked = nx.tracked;
        drop(nodes);
        Ok(self.push(vec![c, r], Value::Owned(out), Op::Transpose(x), tracked))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let nx = &nodes[x.0];
        if shape.iter().product::<usize>() != nx.value.len() {
            return Err(Error::shape("reshape", &nx.shape, shape));
        }
        let out = nx.value.to_vec();
        let tracked = nx.tracked;
        drop(nodes);
        Ok(self.push(shape.to_vec(), Value::Owned(out), Op::Reshape(x), tracked))
    }

    /// Concatenates 1-d vectors (axis 0) or 2-d matrices along rows (axis 0)
    /// or columns (axis 1).
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let nodes = self.nodes.borrow();
        let first = &nodes[parts[0].0].shape;
        let rank = first.len();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(Error::shape("concat", first, &[axis]));
        }
        for p in &parts[1..] {
            let s = &nodes[p.0].shape;
            let compatible = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == first[d]);
            if !compatible {
                return Err(Error::shape("concat", first, s));
            }
        }
        let tracked = parts.iter().any(|p| nodes[p.0].tracked);
        let (shape, out) = if axis == 0 {
            let mut shape = first.clone();
            shape[0] = parts.iter().map(|p| nodes[p.0].shape[0]).sum();
            let mut out = Vec::with_capacity(shape.iter().product());
            for p in parts {
                out.extend_from_slice(&nodes[p.0].value);
            }
            (shape, out)
        } else {
            let rows = first[0];
            let widths: Vec<usize> = parts.iter().map(|p| nodes[p.0].shape[1]).collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    out.extend_from_slice(&nodes[p.0].value[r * w..(r + 1) * w]);
                }
            }
            (vec![rows, total], out)
        };
        drop(nodes);
        Ok(self.push(
            shape,
            Value::Owned(out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    /// Selects rows by index (embedding lookup). 1-d inputs gather elements.
    pub fn gather_rows(&self, src: Var, index: &[usize]) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let ns = &nodes[src.0];
        let (rows, cols) = as_matrix(&ns.shape);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Vocab {
                index: bad,
                size: rows,
            });
        }
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(&ns.value[i * cols..(i + 1) * cols]);
        }
        let shape = if ns.shape.len() == 1 {
            vec![index.len()]
        } else {
            vec![index.len(), cols]
        };
        let tracked = ns.tracked;
        drop(nodes);
        Ok(self.push(
            shape,
            Value::Owned(out),
            Op::GatherRows {
                src,
                index: index.into(),
            },
            tracked,
        ))
    }

    /// Sums row `r` of `src` into output row `index[r]`; the output has
    /// `out_rows` rows.
    pub fn scatter_add_rows(&self, src: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let ns = &nodes[src.0];
        let (rows, cols) = as_matrix(&ns.shape);
        if rows != index.len() {
            return Err(Error::shape("scatter_add_rows", &ns.shape, &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(Error::shape("scatter_add_rows", &[bad], &[out_rows]));
        }
        let mut out = vec![0.0; out_rows * cols];
        for (r, &dst) in index.iter().enumerate() {
            let src_row = &ns.value[r * cols..(r + 1) * cols];
            for (o, &v) in out[dst * cols..(dst + 1) * cols].iter_mut().zip(src_row) {
                *o += v;
            }
        }
        let shape = if ns.shape.len() == 1 {
            vec![out_rows]
        } else {
            vec![out_rows, cols]
        };
        let tracked = ns.tracked;
        drop(nodes);
        Ok(self.push(
            shape,
            Value::Owned(out),
            Op::ScatterAddRows {
                src,
                index: index.into(),
            },
            tracked,
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    /// Adds a row vector to every row of a matrix (bias broadcast).
    pub fn add_row(&self, mat: Var, row: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (nm, nr) = (&nodes[mat.0], &nodes[row.0]);
        let (rows, cols) = as_matrix(&nm.shape);
        if nm.shape.len() != 2 || nr.value.len() != cols {
            return Err(Error::shape("add_row", &nm.shape, &nr.shape));
        }
        let mut out = nm.value.to_vec();
        for r in 0..rows {
            for (o, &b) in out[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(nr.value.iter())
            {
                *o += b;
            }
        }
        let (shape, tracked) = (nm.shape.clone(), nm.tracked || nr.tracked);
        drop(nodes);
        Ok(self.push(shape, Value::Owned(out), Op::AddRow(mat, row), tracked))
    }

    /// Multiplies row `r` of a matrix by `factors[r]`.
    pub fn scale_rows(&self, mat: Var, factors: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (nm, nf) = (&nodes[mat.0], &nodes[factors.0]);
        let (rows, cols) = as_matrix(&nm.shape);
        if nf.value.len() != rows {
            return Err(Error::shape("scale_rows", &nm.shape, &nf.shape));
        }
        let mut out = nm.value.to_vec();
        for r in 0..rows {
            let f = nf.value[r];
            out[r * cols..(r + 1) * cols]
                .iter_mut()
                .for_each(|o| *o *= f);
        }
        let (shape, tracked) = (nm.shape.clone(), nm.tracked || nf.tracked);
        drop(nodes);
        Ok(self.push(
            shape,
            Value::Owned(out),
            Op::ScaleRows(mat, factors),
            tracked,
        ))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    /// Softmax over each index group of the flattened input. Positions not
    /// covered by any group are exactly zero. Groups must be non-empty and
    /// disjoint.
    pub fn group_softmax(&self, x: Var, groups: Rc<[Vec<usize>]>) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let nx = &nodes[x.0];
        let len = nx.value.len();
        let mut out = vec![0.0; len];
        for g in groups.iter() {
            if g.is_empty() {
                return Err(Error::Contract("softmax over an empty index set".into()));
            }
            if let Some(&bad) = g.iter().find(|&&i| i >= len) {
                return Err(Error::shape("group_softmax", &nx.shape, &[bad]));
            }
            kernels::softmax_subset(&nx.value, g, &mut out);
        }
        let (shape, tracked) = (nx.shape.clone(), nx.tracked);
        drop(nodes);
        Ok(self.push(
            shape,
            Value::Owned(out),
            Op::GroupSoftmax { src: x, groups },
            tracked,
        ))
    }

    /// Row-wise softmax over the columns selected by `mask`; unselected
    /// columns are exactly zero.
    pub fn masked_softmax(&self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x);
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(Error::shape("masked_softmax", &shape, &[])),
        };
        if mask.len() != cols {
            return Err(Error::shape("masked_softmax", &shape, &[mask.len()]));
        }
        let cols_on: Vec<usize> = (0..cols).filter(|&c| mask[c]).collect();
        if cols_on.is_empty() {
            return Err(Error::Contract("masked softmax with an empty mask".into()));
        }
        let groups: Vec<Vec<usize>> = (0..rows)
            .map(|r| cols_on.iter().map(|&c| r * cols + c).collect())
            .collect();
        self.group_softmax(x, groups.into())
    }

    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap_or(&1);
        self.masked_softmax(x, &vec![true; cols])
    }

    /// Sum of a 2-d input over `axis`, dropping that axis.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    fn reduce_axis(&self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let nx = &nodes[x.0];
        if nx.shape.len() != 2 || axis > 1 {
            return Err(Error::shape("reduce_axis", &nx.shape, &[axis]));
        }
        let (rows, cols) = (nx.shape[0], nx.shape[1]);
        let out = if axis == 0 {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, &v) in out.iter_mut().zip(&nx.value[r * cols..(r + 1) * cols]) {
                    *o += v;
                }
            }
            if mean {
                out.iter_mut().for_each(|o| *o /= rows as f64);
            }
            out
        } else {
            (0..rows)
                .map(|r| {
                    let s: f64 = nx.value[r * cols..(r + 1) * cols].iter().sum();
                    if mean {
                        s / cols as f64
                    } else {
                        s
                    }
                })
                .collect()
        };
        let shape = vec![if axis == 0 { cols } else { rows }];
        let tracked = nx.tracked;
        drop(nodes);
        let op = if mean {
            Op::MeanAxis(x, axis)
        } else {
            Op::SumAxis(x, axis)
        };
        Ok(self.push(shape, Value::Owned(out), op, tracked))
    }

    pub fn sum(&self, x: Var) -> Var {
        let nodes = self.nodes.borrow();
        let nx = &nodes[x.0];
        let s: f64 = nx.value.iter().sum();
        let tracked = nx.tracked;
        drop(nodes);
        self.push(Vec::new(), Value::Owned(vec![s]), Op::Sum(x), tracked)
    }

    /// `Σ_b −log softmax(z_b)[label_b]` over the rows of `z` (a 1-d `z` is a
    /// single row).
    pub fn log_softmax_nll(&self, z: Var, labels: &[usize]) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let nz = &nodes[z.0];
        let (rows, cols) = match nz.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => return Err(Error::shape("log_softmax_nll", s, &[])),
        };
        if labels.len() != rows {
            return Err(Error::shape("log_softmax_nll", &nz.shape, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Vocab {
                index: bad,
                size: cols,
            });
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &nz.value[r * cols..(r + 1) * cols];
            total += kernels::log_sum_exp(row) - row[label];
        }
        let tracked = nz.tracked;
        drop(nodes);
        Ok(self.push(
            Vec::new(),
            Value::Owned(vec![total]),
            Op::LogSoftmaxNll {
                src: z,
                labels: labels.into(),
            },
            tracked,
        ))
    }

    /// Reverse pass from a scalar. Returns the gradient for every tracked
    /// leaf that the scalar depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                out.by_leaf.insert(Var(id), g);
                continue;
            }
            backprop(&nodes, &mut grads, node, &g);
        }
        Ok(out)
    }
}

fn grad_slot<'g>(
    nodes: &[Node<'_>],
    grads: &'g mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'g mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.tracked {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

fn backprop(nodes: &[Node<'_>], grads: &mut [Option<Vec<f64>>], node: &Node<'_>, g: &[f64]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if nodes[a.0].tracked {
                let bv = &nodes[b.0].value;
                let ga = grad_slot(nodes, grads, *a).unwrap();
                kernels::matmul_nt_acc(g, bv, m, n, k, ga);
            }
            if nodes[b.0].tracked {
                let av = &nodes[a.0].value;
                let gb = grad_slot(nodes, grads, *b).unwrap();
                kernels::matmul_tn_acc(av, g, k, m, n, gb);
            }
        }
        Op::Transpose(x) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                let (r, c) = (node.shape[0], node.shape[1]);
                let t = kernels::transpose(g, r, c);
                add_into(gx, &t);
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                add_into(gx, g);
            }
        }
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            } else {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut col = 0;
                for p in parts {
                    let w = nodes[p.0].shape[1];
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + col..r * total + col + w],
                            );
                        }
                    }
                    col += w;
                }
            }
        }
        Op::GatherRows { src, index } => {
            let cols = as_matrix(&nodes[src.0].shape).1;
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for (r, &i) in index.iter().enumerate() {
                    add_into(
                        &mut gs[i * cols..(i + 1) * cols],
                        &g[r * cols..(r + 1) * cols],
                    );
                }
            }
        }
        Op::ScatterAddRows { src, index } => {
            let cols = as_matrix(&nodes[src.0].shape).1;
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for (r, &dst) in index.iter().enumerate() {
                    add_into(
                        &mut gs[r * cols..(r + 1) * cols],
                        &g[dst * cols..(dst + 1) * cols],
                    );
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                add_into(gb, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v);
            }
        }
        Op::Mul(a, b) => {
            if nodes[a.0].tracked {
                let bv = &nodes[b.0].value;
                let ga = grad_slot(nodes, grads, *a).unwrap();
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bv.iter()) {
                    *o += gv * y;
                }
            }
            if nodes[b.0].tracked {
                let av = &nodes[a.0].value;
                let gb = grad_slot(nodes, grads, *b).unwrap();
                for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(av.iter()) {
                    *o += gv * x;
                }
            }
        }
        Op::Scale(x, f) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(o, &v)| *o += f * v);
            }
        }
        Op::AddRow(mat, row) => {
            if let Some(gm) = grad_slot(nodes, grads, *mat) {
                add_into(gm, g);
            }
            if let Some(gr) = grad_slot(nodes, grads, *row) {
                let cols = gr.len();
                for chunk in g.chunks(cols) {
                    add_into(gr, chunk);
                }
            }
        }
        Op::ScaleRows(mat, factors) => {
            let (rows, cols) = as_matrix(&nodes[mat.0].shape);
            if nodes[mat.0].tracked {
                let fv = &nodes[factors.0].value;
                let gm = grad_slot(nodes, grads, *mat).unwrap();
                for r in 0..rows {
                    let f = fv[r];
                    for (o, &v) in gm[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                    {
                        *o += f * v;
                    }
                }
            }
            if nodes[factors.0].tracked {
                let mv = &nodes[mat.0].value;
                let gf = grad_slot(nodes, grads, *factors).unwrap();
                for r in 0..rows {
                    gf[r] += dot(&mv[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            }
        }
        Op::Relu(x) => {
            let xv = &nodes[x.0].value;
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((o, &gv), &v) in gx.iter_mut().zip(g).zip(xv.iter()) {
                    if v > 0.0 {
                        *o += gv;
                    }
                }
            }
        }
        Op::LeakyRelu(x, slope) => {
            let xv = &nodes[x.0].value;
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((o, &gv), &v) in gx.iter_mut().zip(g).zip(xv.iter()) {
                    *o += if v > 0.0 { gv } else { slope * gv };
                }
            }
        }
        Op::Exp(x) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((o, &gv), &y) in gx.iter_mut().zip(g).zip(out.iter()) {
                    *o += gv * y;
                }
            }
        }
        Op::Log(x) => {
            let xv = &nodes[x.0].value;
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((o, &gv), &v) in gx.iter_mut().zip(g).zip(xv.iter()) {
                    *o += gv / v;
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((o, &gv), &y) in gx.iter_mut().zip(g).zip(out.iter()) {
                    *o += gv * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((o, &gv), &y) in gx.iter_mut().zip(g).zip(out.iter()) {
                    *o += gv * (1.0 - y * y);
                }
            }
        }
        Op::GroupSoftmax { src, groups } => {
            if let Some(gs) = grad_slot(nodes, grads, *src) {
                for grp in groups.iter() {
                    let inner: f64 = grp.iter().map(|&i| out[i] * g[i]).sum();
                    for &i in grp {
                        gs[i] += out[i] * (g[i] - inner);
                    }
                }
            }
        }
        Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
            let (rows, cols) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
            let denom = match (&node.op, axis) {
                (Op::MeanAxis(..), 0) => rows as f64,
                (Op::MeanAxis(..), _) => cols as f64,
                _ => 1.0,
            };
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for r in 0..rows {
                    for c in 0..cols {
                        let up = if *axis == 0 { g[c] } else { g[r] };
                        gx[r * cols + c] += up / denom;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                let up = g[0];
                gx.iter_mut().for_each(|o| *o += up);
            }
        }
        Op::LogSoftmaxNll { src, labels } => {
            let zv = &nodes[src.0].value;
            let cols = zv.len() / labels.len();
            let up = g[0];
            if let Some(gz) = grad_slot(nodes, grads, *src) {
                for (r, &label) in labels.iter().enumerate() {
                    let row = &zv[r * cols..(r + 1) * cols];
                    let lse = kernels::log_sum_exp(row);
                    let grow = &mut gz[r * cols..(r + 1) * cols];
                    for (c, (o, &z)) in grow.iter_mut().zip(row).enumerate() {
                        let p = (z - lse).exp();
                        *o += up * (p - if c == label { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
