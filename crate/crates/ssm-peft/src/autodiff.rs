//! Expression graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is a tape of immutable nodes. Values are computed eagerly when
//! a node is created and memoized on the node, so a forward pass is just
//! graph construction and [`Graph::backward`] replays the tape in reverse.
//! Node identifiers are creation-ordered, which makes the reverse id order a
//! valid reverse-topological order; cycles cannot be expressed.

use std::collections::BTreeMap;

use crate::tensor::{matmul, matmul_shape, Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Gradients keyed by parameter identifier. Every requested parameter appears
/// exactly once; parameters with no path to the loss map to zero tensors.
pub type GradientMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
enum Op {
    Param(String),
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Exp(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize, len: usize },
    Sum(NodeId),
    Mean(NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    /// Entrywise `(exp(x) - 1) / x` with the removable singularity filled in.
    /// This is the factor that turns `dt * b` into the zero-order-hold input
    /// coefficient, kept as one primitive so the value stays finite and
    /// differentiable across `x = 0`.
    ExpM1OverX(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Tape of expression nodes with eagerly memoized values.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `(exp(x) - 1) / x`, continued with its limit 1 at `x = 0`. A short series
/// takes over near zero where the direct quotient loses precision.
pub fn expm1_over_x(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0
    } else {
        x.exp_m1() / x
    }
}

/// Derivative of [`expm1_over_x`].
fn expm1_over_x_prime(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0
    } else {
        (x.exp() * (x - 1.0) + 1.0) / (x * x)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Constant => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Exp(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose(a)
            | Op::ExpM1OverX(a)
            | Op::Slice { input: a, .. } => self.nodes[a.0].needs_grad,
            Op::Concat { parts, .. } => parts.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad });
        id
    }

    /// Registers a trainable leaf. Parameter identifiers must be unique
    /// within a graph.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(TensorError::Invalid(format!(
                "parameter '{name}' registered twice"
            )));
        }
        let id = self.push(Op::Param(name.to_string()), value);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Memoized forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.iter().zip(tb.iter()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.iter().zip(tb.iter()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, |x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, softplus);
        self.push(Op::Softplus(a), value)
    }

    pub fn expm1_over_x(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, expm1_over_x);
        self.push(Op::ExpM1OverX(a), value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.map_unary(a, |x| x * factor);
        self.push(Op::Scale(a, factor), value)
    }

    /// `a - b`, expressed through add and scale.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let total: f64 = t.iter().sum();
        let value = Tensor::scalar(total / t.numel() as f64);
        self.push(Op::Mean(a), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transposed()?;
        Ok(self.push(Op::Transpose(a), value))
    }

    /// Concatenates matrices along `axis` (0 = stack rows, 1 = stack columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat of zero tensors".into()));
        }
        let first = self.value(parts[0]).dims2("concat")?;
        let fixed_axis = 1 - axis;
        let mut moving = 0usize;
        for &p in parts {
            let d = self.value(p).dims2("concat")?;
            let dims = [d.0, d.1];
            let fdims = [first.0, first.1];
            if dims[fixed_axis] != fdims[fixed_axis] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![first.0, first.1],
                    rhs: vec![d.0, d.1],
                });
            }
            moving += dims[axis];
        }
        let (rows, cols) = if axis == 0 { (moving, first.1) } else { (first.0, moving) };
        let mut out = Tensor::zeros(&[rows, cols]);
        let mut offset = 0usize;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = (t.shape()[0], t.shape()[1]);
            for i in 0..r {
                for j in 0..c {
                    let (oi, oj) = if axis == 0 { (offset + i, j) } else { (i, offset + j) };
                    out.set(oi, oj, t.at(i, j));
                }
            }
            offset += if axis == 0 { r } else { c };
        }
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, out))
    }

    /// Contiguous block of `len` rows (axis 0) or columns (axis 1) starting at
    /// `start`.
    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.value(input).dims2("slice")?;
        let extent = if axis == 0 { rows } else { cols };
        if start + len > extent {
            return Err(TensorError::SliceOutOfBounds { axis, start, len, extent });
        }
        let (or, oc) = if axis == 0 { (len, cols) } else { (rows, len) };
        let mut out = Tensor::zeros(&[or, oc]);
        let t = self.value(input);
        for i in 0..or {
            for j in 0..oc {
                let (si, sj) = if axis == 0 { (start + i, j) } else { (i, start + j) };
                out.set(i, j, t.at(si, sj));
            }
        }
        Ok(self.push(Op::Slice { input, axis, start, len }, out))
    }

    fn map_unary(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.iter().map(|&x| f(x)).collect();
        Tensor::from_vec(t.shape().to_vec(), data).expect("shape preserved")
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to the named
    /// parameters. Parameters detached from the loss get zero tensors.
    pub fn backward(&self, loss: NodeId, params: &[String]) -> Result<GradientMap> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(TensorError::NotScalar { shape: loss_value.shape().to_vec() });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            // Subtrees with no parameter leaves cannot influence any gradient.
            if !self.nodes[id].needs_grad {
                adjoints[id] = None;
                continue;
            }
            let grad = match adjoints[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Param(_) | Op::Constant => {
                    adjoints[id] = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let bt = self.value(*b).transposed()?;
                        let da = matmul(&grad, &bt)?;
                        self.accumulate(&mut adjoints, *a, da)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        let at = self.value(*a).transposed()?;
                        let db = matmul(&at, &grad)?;
                        self.accumulate(&mut adjoints, *b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        self.accumulate(&mut adjoints, *a, grad.clone())?;
                    }
                    if self.nodes[b.0].needs_grad {
                        self.accumulate(&mut adjoints, *b, grad)?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = elementwise(&grad, self.value(*b), |g, v| g * v)?;
                        self.accumulate(&mut adjoints, *a, da)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = elementwise(&grad, self.value(*a), |g, v| g * v)?;
                        self.accumulate(&mut adjoints, *b, db)?;
                    }
                }
                Op::Exp(a) => {
                    // d exp(x) = exp(x), reuse the memoized output.
                    let da = elementwise(&grad, &self.nodes[id].value, |g, y| g * y)?;
                    self.accumulate(&mut adjoints, *a, da)?;
                }
                Op::Relu(a) => {
                    let da = elementwise(&grad, self.value(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    })?;
                    self.accumulate(&mut adjoints, *a, da)?;
                }
                Op::Softplus(a) => {
                    let da = elementwise(&grad, self.value(*a), |g, x| g * sigmoid(x))?;
                    self.accumulate(&mut adjoints, *a, da)?;
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    let da = elementwise(&grad, &self.nodes[id].value, |g, _| g * f)?;
                    self.accumulate(&mut adjoints, *a, da)?;
                }
                Op::Sum(a) => {
                    let g = grad.scalar_value()?;
                    let da = Tensor::filled(self.value(*a).shape(), g);
                    self.accumulate(&mut adjoints, *a, da)?;
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel() as f64;
                    let g = grad.scalar_value()? / n;
                    let da = Tensor::filled(self.value(*a).shape(), g);
                    self.accumulate(&mut adjoints, *a, da)?;
                }
                Op::Transpose(a) => {
                    self.accumulate(&mut adjoints, *a, grad.transposed()?)?;
                }
                Op::ExpM1OverX(a) => {
                    let da = elementwise(&grad, self.value(*a), |g, x| g * expm1_over_x_prime(x))?;
                    self.accumulate(&mut adjoints, *a, da)?;
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0usize;
                    for &p in parts {
                        let d = self.value(p).dims2("concat")?;
                        let len = if *axis == 0 { d.0 } else { d.1 };
                        if self.nodes[p.0].needs_grad {
                            let dp = slice_tensor(&grad, *axis, offset, len);
                            self.accumulate(&mut adjoints, p, dp)?;
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start, len } => {
                    let shape = self.value(*input).shape().to_vec();
                    let mut dx = Tensor::zeros(&shape);
                    let (gr, gc) = grad.dims2("slice-grad")?;
                    for i in 0..gr {
                        for j in 0..gc {
                            let (si, sj) =
                                if *axis == 0 { (start + i, j) } else { (i, start + j) };
                            dx.set(si, sj, grad.at(i, j));
                        }
                    }
                    let _ = len;
                    self.accumulate(&mut adjoints, *input, dx)?;
                }
            }
        }

        let mut map = GradientMap::new();
        for name in params {
            let id = self.params.get(name).ok_or_else(|| {
                TensorError::Invalid(format!("parameter '{name}' is not in this graph"))
            })?;
            let grad = adjoints[id.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.value(*id).shape()));
            map.insert(name.clone(), grad);
        }
        Ok(map)
    }

    fn accumulate(
        &self,
        adjoints: &mut [Option<Tensor>],
        id: NodeId,
        grad: Tensor,
    ) -> Result<()> {
        match &mut adjoints[id.0] {
            Some(existing) => {
                if existing.shape() != grad.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "grad-accumulate",
                        lhs: existing.shape().to_vec(),
                        rhs: grad.shape().to_vec(),
                    });
                }
                for (e, g) in existing.data_mut().iter_mut().zip(grad.iter()) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad),
        }
        Ok(())
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "elementwise",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

fn slice_tensor(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let (or, oc) = if axis == 0 { (len, cols) } else { (rows, len) };
    let mut out = Tensor::zeros(&[or, oc]);
    for i in 0..or {
        for j in 0..oc {
            let (si, sj) = if axis == 0 { (start + i, j) } else { (i, start + j) };
            out.set(i, j, t.at(si, sj));
        }
    }
    out
}
