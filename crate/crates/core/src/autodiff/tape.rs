use crate::autodiff::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Relu,
    Sigmoid,
    Tanh,
    Log,
    Exp,
    Abs,
    /// `min(x, c)`; the derivative at the boundary is 0.
    ClampMax(f64),
    Scale(f64),
    Shift(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Min,
    Max,
}

#[derive(Debug, Clone)]
enum Record {
    Leaf,
    Unary {
        op: UnaryOp,
        input: Var,
    },
    Binary {
        op: BinaryOp,
        lhs: Var,
        rhs: Var,
    },
    Reduce {
        op: ReduceOp,
        input: Var,
        layout: AxisLayout,
        /// For min/max: flat input index chosen for each output element.
        selected: Vec<usize>,
    },
    MatMul {
        lhs: Var,
        rhs: Var,
    },
    Softmax {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    GatherRows {
        input: Var,
        indices: Vec<usize>,
    },
    Index {
        input: Var,
        flat: usize,
    },
    Custom {
        input: Var,
        local_grad: Vec<f64>,
    },
}

/// Input viewed as `[outer, len, inner]` around the reduced axis.
#[derive(Debug, Clone, Copy)]
struct AxisLayout {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisLayout {
    fn input_index(&self, o: usize, j: usize, i: usize) -> usize {
        (o * self.len + j) * self.inner + i
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    record: Record,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's parents precede it and
/// a reverse sweep is a valid topological order for backpropagation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if `var` is not an ancestor of the root.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled for non-ancestors.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }
}

fn unary_value(op: UnaryOp, x: f64) -> f64 {
    match op {
        UnaryOp::Neg => -x,
        UnaryOp::Relu => x.max(0.0),
        UnaryOp::Sigmoid => sigmoid(x),
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Log => x.ln(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::Abs => x.abs(),
        UnaryOp::ClampMax(c) => x.min(c),
        UnaryOp::Scale(s) => s * x,
        UnaryOp::Shift(s) => x + s,
    }
}

fn unary_deriv(op: UnaryOp, x: f64, y: f64) -> f64 {
    match op {
        UnaryOp::Neg => -1.0,
        UnaryOp::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryOp::Sigmoid => y * (1.0 - y),
        UnaryOp::Tanh => 1.0 - y * y,
        UnaryOp::Log => 1.0 / x,
        UnaryOp::Exp => y,
        UnaryOp::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryOp::ClampMax(c) => {
            if x < c {
                1.0
            } else {
                0.0
            }
        }
        UnaryOp::Scale(s) => s,
        UnaryOp::Shift(_) => 1.0,
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
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

    fn push(&mut self, value: Tensor, record: Record) -> Var {
        self.nodes.push(Node { value, record });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor (parameter or data).
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Record::Leaf)
    }

    /// Records a rank-0 input.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.var(Tensor::scalar(v))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn unary(&mut self, op: UnaryOp, input: Var) -> Result<Var> {
        let x = self.value(input);
        if op == UnaryOp::Log {
            if let Some(&bad) = x.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    value: bad,
                });
            }
        }
        let y = x.map(|v| unary_value(op, v));
        Ok(self.push(y, Record::Unary { op, input }))
    }

    pub fn binary(&mut self, op: BinaryOp, lhs: Var, rhs: Var) -> Result<Var> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        let shape = broadcast_shape(binary_name(op), a, b)?;
        let n: usize = shape.iter().product();
        let (sa, sb) = (a.len() == 1 && n != 1, b.len() == 1 && n != 1);
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let x = a.data()[if sa { 0 } else { k }];
            let y = b.data()[if sb { 0 } else { k }];
            out.push(match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => {
                    if y == 0.0 {
                        return Err(Error::Domain {
                            op: "div",
                            value: y,
                        });
                    }
                    x / y
                }
            });
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Record::Binary { op, lhs, rhs }))
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

    // Unary ops that cannot fail.
    fn total(&mut self, op: UnaryOp, x: Var) -> Var {
        let y = self.value(x).map(|v| unary_value(op, v));
        self.push(y, Record::Unary { op, input: x })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.total(UnaryOp::Neg, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.total(UnaryOp::Relu, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.total(UnaryOp::Sigmoid, x)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.total(UnaryOp::Tanh, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.total(UnaryOp::Exp, x)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.total(UnaryOp::Abs, x)
    }
    pub fn clamp_max(&mut self, x: Var, c: f64) -> Var {
        self.total(UnaryOp::ClampMax(c), x)
    }
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.total(UnaryOp::Scale(s), x)
    }
    pub fn shift(&mut self, x: Var, s: f64) -> Var {
        self.total(UnaryOp::Shift(s), x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    /// `1 - x`, the Łukasiewicz complement.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.shift(n, 1.0)
    }

    pub fn reduce(&mut self, op: ReduceOp, input: Var, axis: Option<usize>) -> Result<Var> {
        let x = self.value(input);
        let (layout, out_shape) = match axis {
            None => (
                AxisLayout {
                    outer: 1,
                    len: x.len(),
                    inner: 1,
                },
                vec![],
            ),
            Some(ax) => {
                if ax >= x.rank() {
                    return Err(Error::InvalidAxis {
                        axis: ax,
                        rank: x.rank(),
                    });
                }
                let s = x.shape();
                let mut out = s.to_vec();
                out.remove(ax);
                (
                    AxisLayout {
                        outer: s[..ax].iter().product(),
                        len: s[ax],
                        inner: s[ax + 1..].iter().product(),
                    },
                    out,
                )
            }
        };
        if layout.len == 0 {
            return Err(Error::EmptyReduction);
        }
        let d = x.data();
        let mut out = Vec::with_capacity(layout.outer * layout.inner);
        let mut selected = Vec::new();
        for o in 0..layout.outer {
            for i in 0..layout.inner {
                let vals = (0..layout.len)
                    .map(|j| (layout.input_index(o, j, i), d[layout.input_index(o, j, i)]));
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s: f64 = vals.map(|(_, v)| v).sum();
                        out.push(if op == ReduceOp::Mean {
                            s / layout.len as f64
                        } else {
                            s
                        });
                    }
                    ReduceOp::Min | ReduceOp::Max => {
                        // Strict comparison keeps the lowest index on ties.
                        let mut best: Option<(usize, f64)> = None;
                        for (idx, v) in vals {
                            let better = match best {
                                None => true,
                                Some((_, b)) => {
                                    if op == ReduceOp::Min {
                                        v < b
                                    } else {
                                        v > b
                                    }
                                }
                            };
                            if better {
                                best = Some((idx, v));
                            }
                        }
                        let (idx, v) = best.expect("non-empty axis");
                        selected.push(idx);
                        out.push(v);
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Record::Reduce {
                op,
                input,
                layout,
                selected,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, None)
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, None)
    }
    pub fn min(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceOp::Min, x, axis)
    }
    pub fn max(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceOp::Max, x, axis)
    }

    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let out = matmul_raw(a.data(), b.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Record::MatMul { lhs, rhs }))
    }

    /// Softmax of a vector, stabilized by subtracting the maximum.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 1 || x.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let m = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.data().iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let value = Tensor::vector(e.into_iter().map(|v| v / z).collect());
        Ok(self.push(value, Record::Softmax { input }))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push(value, Record::Reshape { input }))
    }

    /// Selects rows of a matrix (repeats allowed); gradients scatter back.
    pub fn gather_rows(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::IndexOutOfRange { index: i, len: r });
            }
            out.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![indices.len(), c], out)?;
        Ok(self.push(
            value,
            Record::GatherRows {
                input,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Repeats a vector as `rows` identical rows.
    pub fn tile_rows(&mut self, input: Var, rows: usize) -> Result<Var> {
        let n = self.value(input).len();
        let row = self.reshape(input, vec![1, n])?;
        self.gather_rows(row, &vec![0; rows])
    }

    /// Element at a flat (row-major) position, as a rank-0 tensor.
    pub fn index(&mut self, input: Var, flat: usize) -> Result<Var> {
        let x = self.value(input);
        if flat >= x.len() {
            return Err(Error::IndexOutOfRange {
                index: flat,
                len: x.len(),
            });
        }
        let value = Tensor::scalar(x.data()[flat]);
        Ok(self.push(value, Record::Index { input, flat }))
    }

    /// Elementwise op with caller-supplied value and derivative.
    pub fn custom_unary(
        &mut self,
        input: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Var {
        let x = self.value(input);
        let value = x.map(&f);
        let local_grad = x.data().iter().map(|&v| df(v)).collect();
        self.push(value, Record::Custom { input, local_grad })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let accumulate =
            |grads: &mut [Option<Tensor>], var: Var, contrib: Tensor| match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            };
        match &node.record {
            Record::Leaf => {}
            Record::Unary { op, input } => {
                let x = self.value(*input);
                let y = &node.value;
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * unary_deriv(*op, xv, yv))
                    .collect();
                accumulate(
                    grads,
                    *input,
                    Tensor::new(x.shape().to_vec(), data).expect("shape"),
                );
            }
            Record::Binary { op, lhs, rhs } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                let n = g.len();
                let (sa, sb) = (a.len() == 1 && n != 1, b.len() == 1 && n != 1);
                let mut ga = vec![0.0; a.len()];
                let mut gb = vec![0.0; b.len()];
                for k in 0..n {
                    let ia = if sa { 0 } else { k };
                    let ib = if sb { 0 } else { k };
                    let (x, y, gv) = (a.data()[ia], b.data()[ib], g.data()[k]);
                    let (da, db) = match op {
                        BinaryOp::Add => (1.0, 1.0),
                        BinaryOp::Sub => (1.0, -1.0),
                        BinaryOp::Mul => (y, x),
                        BinaryOp::Div => (1.0 / y, -x / (y * y)),
                    };
                    ga[ia] += gv * da;
                    gb[ib] += gv * db;
                }
                accumulate(
                    grads,
                    *lhs,
                    Tensor::new(a.shape().to_vec(), ga).expect("shape"),
                );
                accumulate(
                    grads,
                    *rhs,
                    Tensor::new(b.shape().to_vec(), gb).expect("shape"),
                );
            }
            Record::Reduce {
                op,
                input,
                layout,
                selected,
            } => {
                let x = self.value(*input);
                let mut gx = vec![0.0; x.len()];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s = if *op == ReduceOp::Mean {
                            1.0 / layout.len as f64
                        } else {
                            1.0
                        };
                        for o in 0..layout.outer {
                            for i in 0..layout.inner {
                                let gv = g.data()[o * layout.inner + i] * s;
                                for j in 0..layout.len {
                                    gx[layout.input_index(o, j, i)] += gv;
                                }
                            }
                        }
                    }
                    ReduceOp::Min | ReduceOp::Max => {
                        for (k, &idx) in selected.iter().enumerate() {
                            gx[idx] += g.data()[k];
                        }
                    }
                }
                accumulate(
                    grads,
                    *input,
                    Tensor::new(x.shape().to_vec(), gx).expect("shape"),
                );
            }
            Record::MatMul { lhs, rhs } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let bt = b.transpose();
                let at = a.transpose();
                let ga = matmul_raw(g.data(), bt.data(), m, n, k);
                let gb = matmul_raw(at.data(), g.data(), k, m, n);
                accumulate(grads, *lhs, Tensor::new(vec![m, k], ga).expect("shape"));
                accumulate(grads, *rhs, Tensor::new(vec![k, n], gb).expect("shape"));
            }
            Record::Softmax { input } => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let gx = y
                    .iter()
                    .zip(g.data())
                    .map(|(&yv, &gv)| yv * (gv - dot))
                    .collect();
                accumulate(grads, *input, Tensor::vector(gx));
            }
            Record::Reshape { input } => {
                let shape = self.shape(*input).to_vec();
                accumulate(grads, *input, g.reshaped(shape).expect("shape"));
            }
            Record::GatherRows { input, indices } => {
                let x = self.value(*input);
                let c = x.shape()[1];
                let mut gx = vec![0.0; x.len()];
                for (k, &row) in indices.iter().enumerate() {
                    for j in 0..c {
                        gx[row * c + j] += g.data()[k * c + j];
                    }
                }
                accumulate(
                    grads,
                    *input,
                    Tensor::new(x.shape().to_vec(), gx).expect("shape"),
                );
            }
            Record::Index { input, flat } => {
                let x = self.value(*input);
                let mut gx = Tensor::zeros_like(x);
                gx.data_mut()[*flat] = g.item();
                accumulate(grads, *input, gx);
            }
            Record::Custom { input, local_grad } => {
                let x = self.value(*input);
                let data = local_grad
                    .iter()
                    .zip(g.data())
                    .map(|(l, gv)| l * gv)
                    .collect();
                accumulate(
                    grads,
                    *input,
                    Tensor::new(x.shape().to_vec(), data).expect("shape"),
                );
            }
        }
    }
}
