use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Exp,
    /// Errors on any non-positive input.
    Log,
    /// Maps zero to `-inf` (gradient zero there); negative inputs still error.
    LogAllowZero,
    Tanh,
    Relu,
    Sigmoid,
    PowConst(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary {
        kind: UnaryOp,
        input: Var,
    },
    Binary {
        kind: BinaryOp,
        lhs: Var,
        rhs: Var,
        bcast: Broadcast,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    MatMul {
        lhs: Var,
        rhs: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    AddRow {
        matrix: Var,
        row: Var,
    },
    LogSumExp {
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LogSoftmax {
        input: Var,
        cols: usize,
    },
    Sum {
        input: Var,
    },
    Gather {
        input: Var,
        index: Vec<Option<usize>>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    Reshape {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it. A tape belongs to one computation; build a fresh one per utterance.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    pub fn has(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Identity forward; contributes nothing to any ancestor in backward.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn unary(&mut self, kind: UnaryOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        let values: Vec<f64> = match kind {
            UnaryOp::Exp => x.values().iter().map(|v| v.exp()).collect(),
            UnaryOp::Log | UnaryOp::LogAllowZero => {
                let allow_zero = kind == UnaryOp::LogAllowZero;
                let mut out = Vec::with_capacity(x.len());
                for (index, &value) in x.values().iter().enumerate() {
                    if value > 0.0 {
                        out.push(value.ln());
                    } else if value == 0.0 && allow_zero {
                        out.push(f64::NEG_INFINITY);
                    } else {
                        return Err(Error::LogOfNonPositive { index, value });
                    }
                }
                out
            }
            UnaryOp::Tanh => x.values().iter().map(|v| v.tanh()).collect(),
            UnaryOp::Relu => x.values().iter().map(|v| v.max(0.0)).collect(),
            UnaryOp::Sigmoid => x.values().iter().map(|v| sigmoid(*v)).collect(),
            UnaryOp::PowConst(p) => x.values().iter().map(|v| v.powf(p)).collect(),
        };
        let shape = x.shape().to_vec();
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(shape, values),
            Op::Unary { kind, input: a },
            rg,
        ))
    }

    /// Elementwise binary op. Shapes must match, or one side must hold a
    /// single value.
    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let bcast = if x.shape() == y.shape() {
            Broadcast::Same
        } else if x.is_scalar() {
            Broadcast::LhsScalar
        } else if y.is_scalar() {
            Broadcast::RhsScalar
        } else {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        };
        let shape = match bcast {
            Broadcast::LhsScalar => y.shape().to_vec(),
            _ => x.shape().to_vec(),
        };
        let n = shape.iter().product::<usize>();
        let (xv, yv) = (x.values(), y.values());
        let f = |l: f64, r: f64| match kind {
            BinaryOp::Add => l + r,
            BinaryOp::Sub => l - r,
            BinaryOp::Mul => l * r,
            BinaryOp::Div => l / r,
        };
        let values: Vec<f64> = match bcast {
            Broadcast::Same => xv.iter().zip(yv).map(|(l, r)| f(*l, *r)).collect(),
            Broadcast::LhsScalar => yv.iter().map(|r| f(xv[0], *r)).collect(),
            Broadcast::RhsScalar => xv.iter().map(|l| f(*l, yv[0])).collect(),
        };
        debug_assert_eq!(values.len(), n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(shape, values),
            Op::Binary {
                kind,
                lhs: a,
                rhs: b,
                bcast,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(UnaryOp::PowConst(p), a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let values = x.values().iter().map(|v| v * factor).collect();
        let shape = x.shape().to_vec();
        let rg = self.needs(a);
        self.push(
            Tensor::from_parts(shape, values),
            Op::Scale { input: a, factor },
            rg,
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(x.values(), y.values(), &mut out, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                lhs: a,
                rhs: b,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// Adds a `[n]` row to every row of an `[m,n]` matrix.
    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(matrix), self.value(row));
        let n = r.len();
        if x.rank() != 2 || r.rank() != 1 || x.shape()[1] != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: x.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let rv = r.values();
        let values = x
            .values()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(a, b)| a + b))
            .collect();
        let shape = x.shape().to_vec();
        let rg = self.needs(matrix) || self.needs(row);
        Ok(self.push(
            Tensor::from_parts(shape, values),
            Op::AddRow { matrix, row },
            rg,
        ))
    }

    /// Numerically stable `log(sum(exp(.)))` over `axis`, which is removed
    /// from the output shape. `-inf` entries are absorbed.
    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(Error::BadAxis {
                axis,
                shape: shape.to_vec(),
            });
        }
        let len = shape[axis];
        if len == 0 {
            return Err(Error::EmptyAxis {
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = x.values();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| xv[(o * len + j) * inner + i];
                out.push(log_sum_exp_iter((0..len).map(at)));
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::LogSumExp {
                input: a,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let cols = match x.shape().last() {
            Some(&c) if c > 0 => c,
            _ => {
                return Err(Error::EmptyAxis {
                    axis: x.rank().saturating_sub(1),
                    shape: x.shape().to_vec(),
                })
            }
        };
        let mut out = Vec::with_capacity(x.len());
        for row in x.values().chunks(cols) {
            let lse = log_sum_exp_iter(row.iter().copied());
            out.extend(row.iter().map(|v| v - lse));
        }
        let shape = x.shape().to_vec();
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LogSoftmax { input: a, cols },
            rg,
        ))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).values().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum { input: a }, rg)
    }

    /// Picks flat entries of `a` by index; `None` positions take `fill` and
    /// receive no gradient.
    pub fn gather(
        &mut self,
        a: Var,
        index: Vec<Option<usize>>,
        fill: f64,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::BadLength {
                shape,
                expected: index.len(),
                actual: index.len(),
            });
        }
        let xv = x.values();
        let mut values = Vec::with_capacity(index.len());
        for ix in &index {
            match *ix {
                Some(i) if i < xv.len() => values.push(xv[i]),
                Some(i) => {
                    return Err(Error::OutOfRange {
                        what: "gather",
                        index: i,
                        bound: xv.len(),
                    })
                }
                None => values.push(fill),
            }
        }
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(shape, values),
            Op::Gather { input: a, index },
            rg,
        ))
    }

    /// Rows of a rank-2 tensor; `None` rows are zero.
    pub fn gather_rows(&mut self, a: Var, rows: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (n, cols) = (shape[0], shape[1]);
        let mut index = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            match *r {
                Some(r) if r >= n => {
                    return Err(Error::OutOfRange {
                        what: "gather_rows",
                        index: r,
                        bound: n,
                    })
                }
                Some(r) => index.extend((0..cols).map(|c| Some(r * cols + c))),
                None => index.extend(std::iter::repeat_n(None, cols)),
            }
        }
        self.gather(a, index, 0.0, vec![rows.len(), cols])
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || start + len > shape[1] {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: shape,
                rhs: vec![start, len],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let index = (0..rows)
            .flat_map(|r| (start..start + len).map(move |c| Some(r * cols + c)))
            .collect();
        self.gather(a, index, 0.0, vec![rows, len])
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => {
                return Err(Error::EmptyAxis {
                    axis,
                    shape: Vec::new(),
                })
            }
        };
        if axis >= first.len() {
            return Err(Error::BadAxis { axis, shape: first });
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut axis_total = 0;
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s[..axis] == first[..axis]
                && s[axis + 1..] == first[axis + 1..];
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
            widths.push(s[axis] * inner);
        }
        let mut values = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                values.extend_from_slice(&self.value(v).values()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = axis_total;
        let rg = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::from_parts(shape, values),
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                widths,
            },
            rg,
        ))
    }

    /// Stacks equal-length vectors as the columns of a `[n, k]` matrix.
    pub fn stack_columns(&mut self, columns: &[Var]) -> Result<Var> {
        let mut reshaped = Vec::with_capacity(columns.len());
        for &c in columns {
            let n = self.value(c).len();
            reshaped.push(self.reshape(c, vec![n, 1])?);
        }
        self.concat(&reshaped, 1)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.len() {
            return Err(Error::BadLength {
                expected: shape.iter().product(),
                shape,
                actual: x.len(),
            });
        }
        let value = Tensor::from_parts(shape, x.values().to_vec());
        let rg = self.needs(a);
        Ok(self.push(value, Op::Reshape { input: a }, rg))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|node| node.value.shape().to_vec())
            .collect();
        // Only nodes that require a gradient carry one.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    /// Gradients of `root` with respect to `params`, zero-filled where the
    /// root does not depend on a parameter.
    pub fn backward_for(&self, root: Var, params: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.backward(root)?;
        Ok(params.iter().map(|&p| grads.wrt(p)).collect())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Unary { kind, input } => {
                if !self.needs(*input) {
                    return;
                }
                let x = self.value(*input).values();
                let y = node.value.values();
                let acc = accumulate(&mut grads[input.0], x.len());
                for i in 0..x.len() {
                    let d = match *kind {
                        UnaryOp::Exp => y[i],
                        UnaryOp::Log => 1.0 / x[i],
                        UnaryOp::LogAllowZero => {
                            if x[i] == 0.0 {
                                0.0
                            } else {
                                1.0 / x[i]
                            }
                        }
                        UnaryOp::Tanh => 1.0 - y[i] * y[i],
                        UnaryOp::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Sigmoid => y[i] * (1.0 - y[i]),
                        UnaryOp::PowConst(p) => p * x[i].powf(p - 1.0),
                    };
                    acc[i] += g[i] * d;
                }
            }
            Op::Binary {
                kind,
                lhs,
                rhs,
                bcast,
            } => {
                let xv = self.value(*lhs).values();
                let yv = self.value(*rhs).values();
                let xi = |i: usize| if *bcast == Broadcast::LhsScalar { 0 } else { i };
                let yi = |i: usize| if *bcast == Broadcast::RhsScalar { 0 } else { i };
                if self.needs(*lhs) {
                    let acc = accumulate(&mut grads[lhs.0], xv.len());
                    for (i, gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryOp::Add | BinaryOp::Sub => 1.0,
                            BinaryOp::Mul => yv[yi(i)],
                            BinaryOp::Div => 1.0 / yv[yi(i)],
                        };
                        acc[xi(i)] += gi * d;
                    }
                }
                if self.needs(*rhs) {
                    let acc = accumulate(&mut grads[rhs.0], yv.len());
                    for (i, gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryOp::Add => 1.0,
                            BinaryOp::Sub => -1.0,
                            BinaryOp::Mul => xv[xi(i)],
                            BinaryOp::Div => {
                                let r = yv[yi(i)];
                                -xv[xi(i)] / (r * r)
                            }
                        };
                        acc[yi(i)] += gi * d;
                    }
                }
            }
            Op::Scale { input, factor } => {
                if self.needs(*input) {
                    let acc = accumulate(&mut grads[input.0], g.len());
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += gi * factor;
                    }
                }
            }
            Op::MatMul { lhs, rhs, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.value(*lhs).values();
                let bv = self.value(*rhs).values();
                if self.needs(*lhs) {
                    // dA = G * B^T
                    let acc = accumulate(&mut grads[lhs.0], m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            acc[i * k + p] += dot;
                        }
                    }
                }
                if self.needs(*rhs) {
                    // dB = A^T * G
                    let acc = accumulate(&mut grads[rhs.0], k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a = av[i * k + p];
                            if a == 0.0 {
                                continue;
                            }
                            let out = &mut acc[p * n..(p + 1) * n];
                            for (o, gj) in out.iter_mut().zip(grow) {
                                *o += a * gj;
                            }
                        }
                    }
                }
            }
            Op::AddRow { matrix, row } => {
                let n = self.value(*row).len();
                if self.needs(*matrix) {
                    let acc = accumulate(&mut grads[matrix.0], g.len());
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
                if self.needs(*row) {
                    let acc = accumulate(&mut grads[row.0], n);
                    for chunk in g.chunks(n) {
                        for (a, gi) in acc.iter_mut().zip(chunk) {
                            *a += gi;
                        }
                    }
                }
            }
            Op::LogSumExp {
                input,
                outer,
                len,
                inner,
            } => {
                if !self.needs(*input) {
                    return;
                }
                let xv = self.value(*input).values();
                let out = node.value.values();
                let acc = accumulate(&mut grads[input.0], xv.len());
                for o in 0..*outer {
                    for i in 0..*inner {
                        let lse = out[o * inner + i];
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        let go = g[o * inner + i];
                        for j in 0..*len {
                            let at = (o * len + j) * inner + i;
                            acc[at] += go * (xv[at] - lse).exp();
                        }
                    }
                }
            }
            Op::LogSoftmax { input, cols } => {
                if !self.needs(*input) {
                    return;
                }
                let y = node.value.values();
                let acc = accumulate(&mut grads[input.0], y.len());
                for ((yrow, grow), arow) in y
                    .chunks(*cols)
                    .zip(g.chunks(*cols))
                    .zip(acc.chunks_mut(*cols))
                {
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..*cols {
                        arow[j] += grow[j] - yrow[j].exp() * gsum;
                    }
                }
            }
            Op::Sum { input } => {
                if self.needs(*input) {
                    let len = self.value(*input).len();
                    let acc = accumulate(&mut grads[input.0], len);
                    for a in acc.iter_mut() {
                        *a += g[0];
                    }
                }
            }
            Op::Gather { input, index } => {
                if self.needs(*input) {
                    let len = self.value(*input).len();
                    let acc = accumulate(&mut grads[input.0], len);
                    for (ix, gi) in index.iter().zip(g) {
                        if let Some(i) = ix {
                            acc[*i] += gi;
                        }
                    }
                }
            }
            Op::Concat {
                inputs,
                outer,
                widths,
            } => {
                let total: usize = widths.iter().sum();
                let mut start = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    if self.needs(v) {
                        let acc = accumulate(&mut grads[v.0], outer * w);
                        for o in 0..*outer {
                            let src = &g[o * total + start..o * total + start + w];
                            for (a, gi) in acc[o * w..(o + 1) * w].iter_mut().zip(src) {
                                *a += gi;
                            }
                        }
                    }
                    start += w;
                }
            }
            Op::Reshape { input } => {
                if self.needs(*input) {
                    let acc = accumulate(&mut grads[input.0], g.len());
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `out[m,n] = a[m,k] * b[k,n]`, accumulating into `out`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Stable log-sum-exp of an iterator; `-inf` when empty or all `-inf`.
pub fn log_sum_exp_iter(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))` with `-inf` absorbed.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(tape: &mut Tape, v: f64) -> Var {
        tape.param(Tensor::scalar(v))
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 3.0);
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item().unwrap(), 6.0);
    }

    #[test]
    fn log_gradient() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 2.0);
        let y = tape.log(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item().unwrap(), 0.5);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(vec![2, 3]));
        let b = tape.param(Tensor::zeros(vec![3, 2]));
        assert!(matches!(
            tape.mul(a, b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn log_of_non_positive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(
            tape.log(a),
            Err(Error::LogOfNonPositive { index: 1, .. })
        ));
        let y = tape.unary(UnaryOp::LogAllowZero, a).unwrap();
        assert_eq!(tape.value(y).values()[1], f64::NEG_INFINITY);
        let neg = tape.constant(Tensor::scalar(-1.0));
        assert!(tape.unary(UnaryOp::LogAllowZero, neg).is_err());
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.param(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[3.0, 7.0]);

        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = tape.constant(Tensor::matrix(2, 1, vec![5.0, -2.0]).unwrap());
        let w = tape.matmul(eye, v).unwrap();
        assert_eq!(tape.value(w).values(), &[5.0, -2.0]);

        // d sum(AB) / dA = ones * B^T
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).values(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.wrt(b).values(), &[4.0, 6.0]);

        let bad = tape.constant(Tensor::zeros(vec![3, 1]));
        assert!(tape.matmul(a, bad).is_err());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1000.0, 1000.0]).unwrap());
        let l = tape.log_sum_exp(a, 0).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        for gi in g.wrt(a).values() {
            assert!((gi - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_absorbs_neg_inf() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::with_log_zero(vec![2], vec![f64::NEG_INFINITY, 0.7]).unwrap());
        let l = tape.log_sum_exp(a, 0).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.7);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(a).values(), &[0.0, 1.0]);

        let b = tape.param(Tensor::with_log_zero(vec![2], vec![f64::NEG_INFINITY; 2]).unwrap());
        let l = tape.log_sum_exp(b, 0).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), f64::NEG_INFINITY);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(b).values(), &[0.0, 0.0]);
    }

    #[test]
    fn log_sum_exp_gradient_is_softmax() {
        let mut tape = Tape::new();
        let xs = vec![0.3, -1.2, 2.0];
        let a = tape.param(Tensor::vector(xs.clone()).unwrap());
        let l = tape.log_sum_exp(a, 0).unwrap();
        let g = tape.backward(l).unwrap();
        let z: f64 = xs.iter().map(|v| v.exp()).sum();
        for (gi, x) in g.wrt(a).values().iter().zip(&xs) {
            assert!((gi - x.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_axis_errors() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(vec![3, 0]));
        assert!(matches!(
            tape.log_sum_exp(a, 1),
            Err(Error::EmptyAxis { axis: 1, .. })
        ));
    }

    #[test]
    fn stop_gradient_examples() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 3.0);
        let sx = tape.stop_gradient(x);
        assert_eq!(tape.value(sx), tape.value(x));
        let y = tape.mul(x, sx).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item().unwrap(), 3.0);

        let sq = tape.mul(x, x).unwrap();
        let detached = tape.stop_gradient(sq);
        let g = tape.backward(detached).unwrap();
        assert_eq!(g.wrt(x).item().unwrap(), 0.0);
    }

    #[test]
    fn chain_rule() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 1.0);
        let y = tape.scale(x, 2.0);
        let z = tape.mul(y, y).unwrap();
        assert_eq!(tape.backward(z).unwrap().wrt(x).item().unwrap(), 8.0);
    }

    #[test]
    fn independent_param_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 1.0);
        let w = tape.param(Tensor::zeros(vec![2, 2]));
        let y = tape.exp(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(!g.has(w));
        assert_eq!(g.wrt(w), Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn non_scalar_root_errors() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(vec![2]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn scalar_broadcast() {
        let mut tape = Tape::new();
        let s = scalar_param(&mut tape, 2.0);
        let v = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let p = tape.mul(s, v).unwrap();
        let t = tape.sum(p);
        let g = tape.backward(t).unwrap();
        assert_eq!(g.wrt(s).item().unwrap(), 6.0);
        assert_eq!(g.wrt(v).values(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn log_add_exp_helpers() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
