//! Dense 64-bit tensors and a reverse-mode autodiff graph.
//!
//! A [`Graph`] is built once as a list of operation records whose operands
//! always precede them, so node order is a topological order. Named inputs
//! are bound at evaluation time:
//!
//! ```
//! use idff::tensor::{Bindings, Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.input("x", true);
//! let y = g.square(x);
//! let loss = g.sum(y);
//!
//! let xv = Tensor::scalar(3.0);
//! let bind = Bindings::from([("x", &xv)]);
//! let out = g.eval(&bind, loss).unwrap();
//! assert_eq!(out.item(), 9.0);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get("x").unwrap().item(), 6.0);
//! ```
//!
//! Shapes are at most rank 2. Rank 0 and rank 1 tensors are viewed as
//! `1 x 1` and `1 x n` matrices by the ops.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl Tensor {
    /// Leaf constructor: checks the element count and rejects NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() || shape.len() > 2 {
            return Err(Error::BadShape {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLeaf);
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    /// Construction without the finiteness check, for op outputs.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrix view `(rows, cols)`.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

/// `c = a * b + beta * c` for row-major `c` (m x n); `a` and `b` are given by
/// explicit row/column strides so transposes cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (a_rs, a_cs): (usize, usize),
    b: &[f64],
    (b_rs, b_cs): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * a_rs + (k - 1) * a_cs < a.len());
    assert!((k - 1) * b_rs + (n - 1) * b_cs < b.len());
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input { name: String, requires_grad: bool },
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Tanh(NodeId),
    Silu(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>),
    Slice { input: NodeId, start: usize, len: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Silu(_) => "silu",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Constant(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Tanh(a) | Op::Silu(a) | Op::Square(a) | Op::Sum(a) | Op::Mean(a) => vec![*a],
            Op::Concat(xs) => xs.clone(),
            Op::Slice { input, .. } => vec![*input],
        }
    }
}

/// Named input bindings for [`Graph::forward`].
pub type Bindings<'a> = HashMap<&'a str, &'a Tensor>;

/// Gradients of a scalar output with respect to every `requires_grad` input.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor> {
        self.map.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

/// Operation records plus the activations saved by the last forward pass.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Option<Tensor>>,
    inputs: HashMap<String, NodeId>,
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sum a full `(r, c)` gradient down to the `(rt, ct)` shape it was
/// broadcast from.
fn reduce_to(g: &[f64], (r, c): (usize, usize), shape: &[usize], (rt, ct): (usize, usize)) -> Tensor {
    if (rt, ct) == (r, c) {
        return Tensor::raw(shape.to_vec(), g.to_vec());
    }
    let mut out = vec![0.0; rt * ct];
    for i in 0..r {
        for j in 0..c {
            out[(i % rt) * ct + (j % ct)] += g[i * c + j];
        }
    }
    Tensor::raw(shape.to_vec(), out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        for o in op.operands() {
            assert!(o.0 < self.ops.len(), "operand {o:?} is not in this graph");
        }
        self.ops.push(op);
        self.values.push(None);
        NodeId(self.ops.len() - 1)
    }

    /// Named placeholder. Panics if the name is already taken.
    pub fn input(&mut self, name: &str, requires_grad: bool) -> NodeId {
        assert!(!self.inputs.contains_key(name), "duplicate input `{name}`");
        let id = self.push(Op::Input {
            name: name.to_string(),
            requires_grad,
        });
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    /// Elementwise sum with row/column/scalar broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    /// Elementwise product with row/column/scalar broadcasting.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    /// `x @ w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Affine { x, w, b })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Silu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::Slice { input, start, len })
    }

    /// `a * c` for a constant scalar `c`.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant(Tensor::scalar(c));
        self.mul(a, k)
    }

    /// `a - b`, composed from `add` and `mul`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Value saved by the last forward pass, if that node was evaluated.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values[id.0].as_ref()
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0]
            .as_ref()
            .expect("operand evaluated before its consumer")
    }

    /// Evaluate every node the `outputs` depend on. Values from any earlier
    /// pass are discarded first.
    pub fn forward(&mut self, inputs: &Bindings<'_>, outputs: &[NodeId]) -> Result<()> {
        let mut needed = vec![false; self.ops.len()];
        for o in outputs {
            needed[o.0] = true;
        }
        for i in (0..self.ops.len()).rev() {
            if needed[i] {
                for o in self.ops[i].operands() {
                    needed[o.0] = true;
                }
            }
        }
        self.values.iter_mut().for_each(|v| *v = None);
        for (i, _) in needed.iter().enumerate().filter(|(_, n)| **n) {
            let out = self.eval_node(i, inputs)?;
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: self.ops[i].name(),
                });
            }
            self.values[i] = Some(out);
        }
        Ok(())
    }

    /// Forward pass returning a copy of one output.
    pub fn eval(&mut self, inputs: &Bindings<'_>, output: NodeId) -> Result<Tensor> {
        self.forward(inputs, &[output])?;
        Ok(self.val(output).clone())
    }

    fn mismatch(&self, i: usize, detail: String) -> Error {
        Error::ShapeMismatch {
            node: i,
            op: self.ops[i].name(),
            detail,
        }
    }

    fn eval_node(&self, i: usize, inputs: &Bindings<'_>) -> Result<Tensor> {
        Ok(match &self.ops[i] {
            Op::Input { name, .. } => {
                let t = inputs
                    .get(name.as_str())
                    .ok_or_else(|| Error::UnboundInput(name.clone()))?;
                (*t).clone()
            }
            Op::Constant(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let ((m, k), (k2, n)) = (a.dims2(), b.dims2());
                if k != k2 {
                    return Err(self.mismatch(i, format!("{:?} @ {:?}", a.shape(), b.shape())));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut out);
                Tensor::raw(vec![m, n], out)
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let is_add = matches!(self.ops[i], Op::Add(..));
                let (a, b) = (self.val(*a), self.val(*b));
                if a.shape() == b.shape() {
                    let data = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(x, y)| if is_add { x + y } else { x * y })
                        .collect();
                    Tensor::raw(a.shape().to_vec(), data)
                } else {
                    let (da, db) = (a.dims2(), b.dims2());
                    let (r, c) = broadcast_dims(da, db).ok_or_else(|| {
                        self.mismatch(i, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
                    })?;
                    let mut out = Vec::with_capacity(r * c);
                    for row in 0..r {
                        for col in 0..c {
                            let x = a.data()[(row % da.0) * da.1 + col % da.1];
                            let y = b.data()[(row % db.0) * db.1 + col % db.1];
                            out.push(if is_add { x + y } else { x * y });
                        }
                    }
                    Tensor::raw(vec![r, c], out)
                }
            }
            Op::Affine { x, w, b } => {
                let (x, w, b) = (self.val(*x), self.val(*w), self.val(*b));
                let ((m, k), (k2, n)) = (x.dims2(), w.dims2());
                if k != k2 || b.len() != n {
                    return Err(self.mismatch(
                        i,
                        format!("{:?} @ {:?} + {:?}", x.shape(), w.shape(), b.shape()),
                    ));
                }
                let mut out = Vec::with_capacity(m * n);
                for _ in 0..m {
                    out.extend_from_slice(b.data());
                }
                gemm(m, k, n, x.data(), (k, 1), w.data(), (n, 1), 1.0, &mut out);
                Tensor::raw(vec![m, n], out)
            }
            Op::Tanh(a) => self.val(*a).map(f64::tanh),
            Op::Silu(a) => self.val(*a).map(|x| x * sigmoid(x)),
            Op::Square(a) => self.val(*a).map(|x| x * x),
            Op::Sum(a) => Tensor::scalar(self.val(*a).data().iter().sum()),
            Op::Mean(a) => {
                let a = self.val(*a);
                if a.is_empty() {
                    return Err(self.mismatch(i, "mean of empty tensor".into()));
                }
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            Op::Concat(parts) => {
                let tensors: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
                let rows = tensors.first().map_or(0, |t| t.rows());
                if tensors.iter().any(|t| t.rows() != rows) {
                    let shapes: Vec<_> = tensors.iter().map(|t| t.shape().to_vec()).collect();
                    return Err(self.mismatch(i, format!("row counts differ: {shapes:?}")));
                }
                let cols: usize = tensors.iter().map(|t| t.cols()).sum();
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for t in &tensors {
                        out.extend_from_slice(t.row(r));
                    }
                }
                Tensor::raw(vec![rows, cols], out)
            }
            Op::Slice { input, start, len } => {
                let a = self.val(*input);
                let (rows, cols) = a.dims2();
                if start + len > cols {
                    return Err(self.mismatch(
                        i,
                        format!("columns {start}..{} of {:?}", start + len, a.shape()),
                    ));
                }
                let mut out = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    out.extend_from_slice(&a.row(r)[*start..start + len]);
                }
                Tensor::raw(vec![rows, *len], out)
            }
        })
    }

    /// Reverse pass from a scalar `output` evaluated by the last forward.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = self.values[output.0]
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(output.0))?;
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }

        // Nodes whose value depends on some requires_grad input.
        let mut relevant = vec![false; self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            relevant[i] = match op {
                Op::Input { requires_grad, .. } => *requires_grad,
                op => op.operands().iter().any(|o| relevant[o.0]),
            };
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Input { .. } = self.ops[i] {
                grads[i] = Some(g);
                continue;
            }
            for (operand, contribution) in self.vjp(i, &g) {
                if !relevant[operand.0] {
                    continue;
                }
                match &mut grads[operand.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contribution),
                }
            }
        }

        let mut map = HashMap::new();
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Input {
                name,
                requires_grad: true,
            } = op
            {
                let Some(v) = &self.values[i] else { continue };
                let g = grads[i].take().unwrap_or_else(|| vec![0.0; v.len()]);
                map.insert(name.clone(), Tensor::raw(v.shape().to_vec(), g));
            }
        }
        Ok(Gradients { map })
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn vjp(&self, i: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        match &self.ops[i] {
            Op::Input { .. } | Op::Constant(_) => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let ((m, k), (_, n)) = (av.dims2(), bv.dims2());
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, (n, 1), bv.data(), (1, n), 0.0, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, av.data(), (1, k), g, (n, 1), 0.0, &mut gb);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let is_add = matches!(self.ops[i], Op::Add(..));
                let (av, bv) = (self.val(*a), self.val(*b));
                let out_dims = self.val(NodeId(i)).dims2();
                let (da, db) = (av.dims2(), bv.dims2());
                let (r, c) = out_dims;
                let full = |other: &Tensor, od: (usize, usize)| -> Vec<f64> {
                    if is_add {
                        return g.to_vec();
                    }
                    let mut v = Vec::with_capacity(r * c);
                    for row in 0..r {
                        for col in 0..c {
                            v.push(g[row * c + col] * other.data()[(row % od.0) * od.1 + col % od.1]);
                        }
                    }
                    v
                };
                let ga = full(bv, db);
                let gb = full(av, da);
                vec![
                    (*a, reduce_to(&ga, out_dims, av.shape(), da).into_data()),
                    (*b, reduce_to(&gb, out_dims, bv.shape(), db).into_data()),
                ]
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let ((m, k), (_, n)) = (xv.dims2(), wv.dims2());
                let mut gx = vec![0.0; m * k];
                gemm(m, n, k, g, (n, 1), wv.data(), (1, n), 0.0, &mut gx);
                let mut gw = vec![0.0; k * n];
                gemm(k, m, n, xv.data(), (1, k), g, (n, 1), 0.0, &mut gw);
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::Tanh(a) => {
                let y = self.val(NodeId(i));
                let v = g.iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                vec![(*a, v)]
            }
            Op::Silu(a) => {
                let x = self.val(*a);
                let v = g
                    .iter()
                    .zip(x.data())
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect();
                vec![(*a, v)]
            }
            Op::Square(a) => {
                let x = self.val(*a);
                vec![(*a, g.iter().zip(x.data()).map(|(g, x)| 2.0 * g * x).collect())]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.val(*a).len()])],
            Op::Mean(a) => {
                let n = self.val(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Concat(parts) => {
                let rows = self.val(NodeId(i)).rows();
                let total: usize = parts.iter().map(|p| self.val(*p).cols()).sum();
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let c = self.val(*p).cols();
                        let mut v = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            v.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        offset += c;
                        (*p, v)
                    })
                    .collect()
            }
            Op::Slice { input, start, len } => {
                let (rows, cols) = self.val(*input).dims2();
                let mut v = vec![0.0; rows * cols];
                for r in 0..rows {
                    v[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*input, v)]
            }
        }
    }
}
