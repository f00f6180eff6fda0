//! Reverse-mode differentiation over an append-only tape.
//!
//! Nodes hold dense row-major matrices (vectors are `n x 1`, scalars
//! `1 x 1`). All node values live in one arena so recording a forward pass
//! performs no per-node allocation. Parameter leaves map a contiguous slice
//! of the flat parameter vector onto a node; [`Tape::backward`] scatters the
//! leaf adjoints back into a gradient aligned with that vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Constant,
    Param { offset: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    MatVec(NodeId, NodeId),
    Silu(NodeId),
    Sigmoid(NodeId),
    PosPart(NodeId),
    Square(NodeId),
    Mean(NodeId),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    shape: Shape,
    start: usize,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

/// Computation tape. Single writer while recording; `backward` only reads.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    param_len: usize,
}

impl Tape {
    /// A tape whose gradients are reported against a parameter vector of
    /// length `param_len`.
    pub fn new(param_len: usize) -> Self {
        Self {
            nodes: Vec::new(),
            values: Vec::new(),
            param_len,
        }
    }

    pub fn with_capacity(param_len: usize, nodes: usize, values: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(values),
            param_len,
        }
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let node = &self.nodes[id.0];
        &self.values[node.start..node.start + node.shape.len()]
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    fn push_with(&mut self, op: Op, shape: Shape, fill: impl FnOnce(&[f64], &mut [f64])) -> NodeId {
        let start = self.values.len();
        self.values.resize(start + shape.len(), 0.0);
        let (inputs, out) = self.values.split_at_mut(start);
        fill(inputs, out);
        self.nodes.push(Node { op, shape, start });
        NodeId(self.nodes.len() - 1)
    }

    fn range(&self, id: NodeId) -> std::ops::Range<usize> {
        let node = &self.nodes[id.0];
        node.start..node.start + node.shape.len()
    }

    fn check(&self, id: NodeId) -> Result<Shape> {
        self.nodes
            .get(id.0)
            .map(|n| n.shape)
            .ok_or_else(|| Error::domain(format!("node {} is not on this tape", id.0)))
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, data: &[f64], shape: Shape) -> Result<NodeId> {
        if data.len() != shape.len() {
            return Err(Error::domain(format!(
                "constant has {} values for shape {}x{}",
                data.len(),
                shape.rows,
                shape.cols
            )));
        }
        Ok(self.push_with(Op::Constant, shape, |_, out| out.copy_from_slice(data)))
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push_with(Op::Constant, Shape::SCALAR, |_, out| out[0] = v)
    }

    /// Differentiable leaf backed by `params[offset..offset + shape.len()]`.
    pub fn param(&mut self, params: &[f64], offset: usize, shape: Shape) -> Result<NodeId> {
        let end = offset + shape.len();
        if params.len() != self.param_len || end > self.param_len {
            return Err(Error::domain(format!(
                "parameter slot {offset}..{end} outside vector of length {}",
                self.param_len
            )));
        }
        Ok(self.push_with(Op::Param { offset }, shape, |_, out| {
            out.copy_from_slice(&params[offset..end])
        }))
    }

    fn elementwise2(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let sa = self.check(a)?;
        let sb = self.check(b)?;
        if sa != sb {
            return Err(Error::domain(format!(
                "{name}: shape {}x{} vs {}x{}",
                sa.rows, sa.cols, sb.rows, sb.cols
            )));
        }
        let ra = self.range(a);
        let rb = self.range(b);
        Ok(self.push_with(op, sa, |vals, out| {
            for ((o, x), y) in out.iter_mut().zip(&vals[ra]).zip(&vals[rb]) {
                *o = f(*x, *y);
            }
        }))
    }

    fn elementwise1(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let sa = self.check(a)?;
        let ra = self.range(a);
        Ok(self.push_with(op, sa, |vals, out| {
            for (o, x) in out.iter_mut().zip(&vals[ra]) {
                *o = f(*x);
            }
        }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(b)?;
        if self.value(b).contains(&0.0) {
            return Err(Error::numeric("division by zero"));
        }
        self.elementwise2(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// Multiplication by a non-differentiable constant.
    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.elementwise1(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1(a, Op::Silu(a), silu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn pospart(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1(a, Op::PosPart(a), |x| x.max(0.0))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1(a, Op::Square(a), |x| x * x)
    }

    /// Mean of all entries, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.check(a)?;
        if sa.is_empty() {
            return Err(Error::domain("mean of empty node"));
        }
        let ra = self.range(a);
        let n = sa.len() as f64;
        Ok(self.push_with(Op::Mean(a), Shape::SCALAR, |vals, out| {
            out[0] = vals[ra].iter().sum::<f64>() / n;
        }))
    }

    /// Matrix (`r x c`) times column vector (`c x 1`).
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let sm = self.check(m)?;
        let sv = self.check(v)?;
        if sv.cols != 1 || sm.cols != sv.rows {
            return Err(Error::domain(format!(
                "matvec: {}x{} times {}x{}",
                sm.rows, sm.cols, sv.rows, sv.cols
            )));
        }
        let rm = self.range(m);
        let rv = self.range(v);
        let cols = sm.cols;
        Ok(self.push_with(Op::MatVec(m, v), Shape::vector(sm.rows), |vals, out| {
            let mat = &vals[rm];
            let vec = &vals[rv];
            for (o, row) in out.iter_mut().zip(mat.chunks_exact(cols)) {
                *o = row.iter().zip(vec).map(|(a, b)| a * b).sum();
            }
        }))
    }

    /// Gradient of the scalar node `output` with respect to every parameter
    /// slot, aligned with the parameter vector.
    pub fn backward(&self, output: NodeId) -> Result<Vec<f64>> {
        let shape = self.check(output)?;
        if !shape.is_scalar() {
            return Err(Error::domain(format!(
                "backward needs a scalar output, got {}x{}",
                shape.rows, shape.cols
            )));
        }
        let mut adj = vec![0.0; self.values.len()];
        adj[self.nodes[output.0].start] = 1.0;
        let mut grad = vec![0.0; self.param_len];
        let vals = &self.values;

        for idx in (0..=output.0).rev() {
            let node = self.nodes[idx];
            let len = node.shape.len();
            let (below, here) = adj.split_at_mut(node.start);
            let g = &here[..len];
            let out = &vals[node.start..node.start + len];
            match node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (dst, src) in grad[offset..offset + len].iter_mut().zip(g) {
                        *dst += src;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(below, self.range(a), g, |_, gi| gi);
                    accumulate(below, self.range(b), g, |_, gi| gi);
                }
                Op::Sub(a, b) => {
                    accumulate(below, self.range(a), g, |_, gi| gi);
                    accumulate(below, self.range(b), g, |_, gi| -gi);
                }
                Op::Mul(a, b) => {
                    let (ra, rb) = (self.range(a), self.range(b));
                    let (va, vb) = (&vals[ra.clone()], &vals[rb.clone()]);
                    accumulate(below, ra, g, |i, gi| gi * vb[i]);
                    accumulate(below, rb, g, |i, gi| gi * va[i]);
                }
                Op::Div(a, b) => {
                    let (ra, rb) = (self.range(a), self.range(b));
                    let vb = &vals[rb.clone()];
                    accumulate(below, ra, g, |i, gi| gi / vb[i]);
                    accumulate(below, rb, g, |i, gi| -gi * out[i] / vb[i]);
                }
                Op::Scale(a, k) => accumulate(below, self.range(a), g, |_, gi| k * gi),
                Op::Silu(a) => {
                    let ra = self.range(a);
                    let z = &vals[ra.clone()];
                    accumulate(below, ra, g, |i, gi| {
                        let s = sigmoid(z[i]);
                        gi * (s + out[i] * (1.0 - s))
                    });
                }
                Op::Sigmoid(a) => {
                    accumulate(below, self.range(a), g, |i, gi| gi * out[i] * (1.0 - out[i]))
                }
                Op::PosPart(a) => {
                    let ra = self.range(a);
                    let z = &vals[ra.clone()];
                    accumulate(below, ra, g, |i, gi| if z[i] > 0.0 { gi } else { 0.0 });
                }
                Op::Square(a) => {
                    let ra = self.range(a);
                    let z = &vals[ra.clone()];
                    accumulate(below, ra, g, |i, gi| 2.0 * z[i] * gi);
                }
                Op::Mean(a) => {
                    let ra = self.range(a);
                    let share = g[0] / ra.len() as f64;
                    for dst in &mut below[ra] {
                        *dst += share;
                    }
                }
                Op::MatVec(m, v) => {
                    let (rm, rv) = (self.range(m), self.range(v));
                    let cols = rv.len();
                    let mat = &vals[rm.clone()];
                    let vec = &vals[rv.clone()];
                    {
                        let gm = &mut below[rm];
                        for (row_adj, gi) in gm.chunks_exact_mut(cols).zip(g) {
                            if *gi != 0.0 {
                                for (dst, vj) in row_adj.iter_mut().zip(vec) {
                                    *dst += gi * vj;
                                }
                            }
                        }
                    }
                    let gv = &mut below[rv];
                    for (row, gi) in mat.chunks_exact(cols).zip(g) {
                        if *gi != 0.0 {
                            for (dst, mij) in gv.iter_mut().zip(row) {
                                *dst += gi * mij;
                            }
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[inline]
fn accumulate(
    adj: &mut [f64],
    range: std::ops::Range<usize>,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    for (i, (dst, gi)) in adj[range].iter_mut().zip(g).enumerate() {
        *dst += f(i, *gi);
    }
}
