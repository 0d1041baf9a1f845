//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape of operations; topological order is
//! insertion order. [`forward`] evaluates every node given bindings for the
//! input leaves, and [`backward`] replays the tape in strict reverse order,
//! accumulating gradients additively across fan-out. There is no pruning or
//! fusion: straight tape replay.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{matmul, transpose, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub enum Op {
    /// Leaf bound at forward time.
    Input,
    Const(Tensor),
    Add(NodeId, NodeId),
    /// `[m,n] + [n]`, broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[m,n] + [m]`, broadcast over columns.
    AddCol(NodeId, NodeId),
    AddScalar(NodeId, f64),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[m,n] * [n]` elementwise, broadcast over rows.
    MulRow(NodeId, NodeId),
    /// `[m,n] * [m]` elementwise, broadcast over columns.
    MulCol(NodeId, NodeId),
    /// Multiply by a compile-time scalar (scalar broadcast).
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Square(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Recip(NodeId),
    /// `|x|^p` elementwise.
    PowAbs(NodeId, f64),
    /// `max(x, lo)` elementwise; gradient is zero where clamped.
    ClampMin(NodeId, f64),
    /// Sum of all elements, to a scalar.
    SumAll(NodeId),
    /// `[m,n] -> [m]`, sum over each row.
    RowSum(NodeId),
    /// `[m,n] -> [m]`, max over each row; subgradient sends all mass to the
    /// first maximal index.
    RowMax(NodeId),
    /// Max over all elements; first maximal index wins ties.
    MaxAll(NodeId),
    /// Row-wise log-softmax, computed as `z - max(z) - ln(sum exp(z - max))`.
    LogSoftmax(NodeId),
    /// Mean negative log-likelihood of per-row log-probabilities at the
    /// given class indices.
    NllLoss(NodeId, Vec<usize>),
    /// `[m,n] -> [m, t*n]`, the column block repeated `t` times.
    Tile(NodeId, usize),
    /// `[n] -> [n*t]`, each element repeated `t` times.
    RepeatInterleave(NodeId, usize),
    /// Batched 1-D convolution: input `[m,n]`, kernels `[ch,k]`, output
    /// `[m, ch*out_len]` with channel-major column blocks. Window index is
    /// `i*stride + k*dilation`.
    Conv1d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
        dilation: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input | Const(_) => vec![],
            Add(a, b) | AddRow(a, b) | AddCol(a, b) | Sub(a, b) | Mul(a, b) | MulRow(a, b)
            | MulCol(a, b) | MatMul(a, b) => vec![*a, *b],
            Conv1d { input, kernels, .. } => vec![*input, *kernels],
            AddScalar(a, _) | Scale(a, _) | Transpose(a) | Square(a) | Exp(a) | Ln(a)
            | Tanh(a) | Relu(a) | Recip(a) | PowAbs(a, _) | ClampMin(a, _) | SumAll(a)
            | RowSum(a) | RowMax(a) | MaxAll(a) | LogSoftmax(a) | NllLoss(a, _) | Tile(a, _)
            | RepeatInterleave(a, _) => vec![*a],
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.ops[id.0]
    }

    pub fn push(&mut self, op: Op) -> NodeId {
        for inp in op.inputs() {
            assert!(inp.0 < self.ops.len(), "op input must precede the node");
        }
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    pub fn input(&mut self) -> NodeId {
        self.push(Op::Input)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const(t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::AddRow(a, b))
    }

    pub fn add_col(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::AddCol(a, b))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        self.push(Op::AddScalar(a, k))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MulRow(a, b))
    }

    pub fn mul_col(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MulCol(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.push(Op::Scale(a, k))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Ln(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Recip(a))
    }

    pub fn pow_abs(&mut self, a: NodeId, p: f64) -> NodeId {
        self.push(Op::PowAbs(a, p))
    }

    pub fn clamp_min(&mut self, a: NodeId, lo: f64) -> NodeId {
        self.push(Op::ClampMin(a, lo))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumAll(a))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowSum(a))
    }

    pub fn row_max(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowMax(a))
    }

    pub fn max_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MaxAll(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(a))
    }

    pub fn nll_loss(&mut self, a: NodeId, labels: Vec<usize>) -> NodeId {
        self.push(Op::NllLoss(a, labels))
    }

    pub fn tile(&mut self, a: NodeId, times: usize) -> NodeId {
        self.push(Op::Tile(a, times))
    }

    pub fn repeat_interleave(&mut self, a: NodeId, times: usize) -> NodeId {
        self.push(Op::RepeatInterleave(a, times))
    }

    pub fn conv1d(&mut self, input: NodeId, kernels: NodeId, stride: usize, dilation: usize) -> NodeId {
        self.push(Op::Conv1d {
            input,
            kernels,
            stride,
            dilation,
        })
    }
}

/// Per-node values produced by [`forward`].
#[derive(Debug)]
pub struct Evaluation {
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }
}

/// Per-leaf gradients produced by [`backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the seed with respect to this node; zero-filled if the
    /// node does not influence the seed.
    pub fn grad(&self, id: NodeId, eval: &Evaluation) -> Tensor {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(eval.value(id).shape()))
    }

    pub fn grad_opt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

fn shape_err(node: usize, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        node,
        detail: detail.into(),
    }
}

fn same_shape(node: usize, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        Err(shape_err(
            node,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    } else {
        Ok(())
    }
}

pub fn conv1d_out_len(n: usize, k: usize, stride: usize, dilation: usize) -> Option<usize> {
    let field = dilation * (k - 1) + 1;
    if n < field {
        return None;
    }
    Some((n - field) / stride + 1)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn eval_op(id: usize, op: &Op, values: &[Tensor], bindings: &HashMap<NodeId, Tensor>) -> Result<Tensor> {
    use Op::*;
    let v = |n: &NodeId| &values[n.0];
    Ok(match op {
        Input => bindings
            .get(&NodeId(id))
            .cloned()
            .ok_or(Error::UnboundInput { node: id })?,
        Const(t) => t.clone(),
        Add(a, b) => {
            same_shape(id, v(a), v(b))?;
            zip_map(v(a), v(b), |x, y| x + y)
        }
        Sub(a, b) => {
            same_shape(id, v(a), v(b))?;
            zip_map(v(a), v(b), |x, y| x - y)
        }
        Mul(a, b) => {
            same_shape(id, v(a), v(b))?;
            zip_map(v(a), v(b), |x, y| x * y)
        }
        AddRow(a, b) | MulRow(a, b) => {
            let (va, vb) = (v(a), v(b));
            let (m, n) = (va.rows(), va.cols());
            if vb.len() != n {
                return Err(shape_err(id, format!("row broadcast {:?} vs {:?}", va.shape(), vb.shape())));
            }
            let is_add = matches!(op, AddRow(_, _));
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                for (x, y) in va.row(i).iter().zip(vb.data()) {
                    data.push(if is_add { x + y } else { x * y });
                }
            }
            Tensor::new(va.shape().to_vec(), data)?
        }
        AddCol(a, b) | MulCol(a, b) => {
            let (va, vb) = (v(a), v(b));
            let (m, n) = (va.rows(), va.cols());
            if vb.len() != m {
                return Err(shape_err(id, format!("col broadcast {:?} vs {:?}", va.shape(), vb.shape())));
            }
            let is_add = matches!(op, AddCol(_, _));
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                let y = vb.data()[i];
                for &x in va.row(i) {
                    data.push(if is_add { x + y } else { x * y });
                }
            }
            Tensor::new(va.shape().to_vec(), data)?
        }
        AddScalar(a, k) => v(a).map(|x| x + k),
        Scale(a, k) => v(a).map(|x| x * k),
        MatMul(a, b) => {
            if v(a).cols() != v(b).rows() {
                return Err(shape_err(id, format!("matmul {:?} x {:?}", v(a).shape(), v(b).shape())));
            }
            matmul(v(a), v(b))?
        }
        Transpose(a) => transpose(v(a)),
        Square(a) => v(a).map(|x| x * x),
        Exp(a) => v(a).map(f64::exp),
        Ln(a) => v(a).map(f64::ln),
        Tanh(a) => v(a).map(f64::tanh),
        Relu(a) => v(a).map(|x| x.max(0.0)),
        Recip(a) => v(a).map(|x| 1.0 / x),
        PowAbs(a, p) => v(a).map(|x| x.abs().powf(*p)),
        ClampMin(a, lo) => v(a).map(|x| x.max(*lo)),
        SumAll(a) => Tensor::scalar(v(a).data().iter().sum()),
        RowSum(a) => {
            let va = v(a);
            let m = va.rows();
            Tensor::vector((0..m).map(|i| va.row(i).iter().sum()).collect())
        }
        RowMax(a) => {
            let va = v(a);
            let m = va.rows();
            Tensor::vector(
                (0..m)
                    .map(|i| va.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .collect(),
            )
        }
        MaxAll(a) => Tensor::scalar(
            v(a).data()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max),
        ),
        LogSoftmax(a) => {
            let va = v(a);
            let (m, n) = (va.rows(), va.cols());
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                let row = va.row(i);
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln();
                data.extend(row.iter().map(|&z| z - mx - lse));
            }
            Tensor::new(va.shape().to_vec(), data)?
        }
        NllLoss(a, labels) => {
            let va = v(a);
            let (m, n) = (va.rows(), va.cols());
            if labels.len() != m {
                return Err(shape_err(id, format!("nll: {} rows vs {} labels", m, labels.len())));
            }
            for &t in labels {
                if t >= n {
                    return Err(shape_err(id, format!("nll: label {} out of {} classes", t, n)));
                }
            }
            let total: f64 = labels.iter().enumerate().map(|(i, &t)| -va.at(i, t)).sum();
            Tensor::scalar(total / m as f64)
        }
        Tile(a, times) => {
            let va = v(a);
            let (m, n) = (va.rows(), va.cols());
            let mut data = Vec::with_capacity(m * n * times);
            for i in 0..m {
                for _ in 0..*times {
                    data.extend_from_slice(va.row(i));
                }
            }
            Tensor::new(vec![m, n * times], data)?
        }
        RepeatInterleave(a, times) => {
            let va = v(a);
            let mut data = Vec::with_capacity(va.len() * times);
            for &x in va.data() {
                for _ in 0..*times {
                    data.push(x);
                }
            }
            Tensor::vector(data)
        }
        Conv1d {
            input,
            kernels,
            stride,
            dilation,
        } => {
            let (x, k) = (v(input), v(kernels));
            let (m, n) = (x.rows(), x.cols());
            let (ch, kk) = (k.rows(), k.cols());
            let out_len = conv1d_out_len(n, kk, *stride, *dilation).ok_or_else(|| {
                shape_err(id, format!("input length {} shorter than receptive field {}", n, dilation * (kk - 1) + 1))
            })?;
            let mut data = vec![0.0; m * ch * out_len];
            for b in 0..m {
                let xr = x.row(b);
                for c in 0..ch {
                    let kr = k.row(c);
                    let orow = &mut data[(b * ch + c) * out_len..(b * ch + c + 1) * out_len];
                    for (i, o) in orow.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (j, &kv) in kr.iter().enumerate() {
                            acc += kv * xr[i * stride + j * dilation];
                        }
                        *o = acc;
                    }
                }
            }
            Tensor::new(vec![m, ch * out_len], data)?
        }
    })
}

/// Evaluate every node of the graph. Re-running with identical bindings is
/// bit-identical: evaluation is a pure left-to-right tape replay.
pub fn forward(graph: &Graph, bindings: &HashMap<NodeId, Tensor>) -> Result<Evaluation> {
    let mut values: Vec<Tensor> = Vec::with_capacity(graph.ops.len());
    for (id, op) in graph.ops.iter().enumerate() {
        let v = eval_op(id, op, &values, bindings)?;
        values.push(v);
    }
    Ok(Evaluation { values })
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        None => *slot = Some(contrib),
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
    }
}

/// Reverse pass from a scalar seed node. Visits nodes in strict reverse
/// insertion order; gradients accumulate additively across fan-out.
pub fn backward(graph: &Graph, eval: &Evaluation, seed: NodeId) -> Result<Gradients> {
    use Op::*;
    if !eval.value(seed).is_scalar() {
        return Err(Error::NonScalarSeed { node: seed.0 });
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; graph.ops.len()];
    grads[seed.0] = Some(Tensor::scalar(1.0));

    for id in (0..=seed.0).rev() {
        let up = match grads[id].take() {
            Some(g) => g,
            None => continue,
        };
        let op = &graph.ops[id];
        let val = |n: NodeId| eval.value(n);
        match op {
            Input | Const(_) => {}
            Add(a, b) => {
                accumulate(&mut grads[a.0], up.clone());
                accumulate(&mut grads[b.0], up.clone());
            }
            Sub(a, b) => {
                accumulate(&mut grads[a.0], up.clone());
                accumulate(&mut grads[b.0], up.map(|x| -x));
            }
            Mul(a, b) => {
                accumulate(&mut grads[a.0], zip_map(&up, val(*b), |u, y| u * y));
                accumulate(&mut grads[b.0], zip_map(&up, val(*a), |u, x| u * x));
            }
            AddRow(a, b) => {
                let (m, n) = (val(*a).rows(), val(*a).cols());
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for (j, dv) in db.iter_mut().enumerate() {
                        *dv += up.at(i, j);
                    }
                }
                accumulate(&mut grads[a.0], up.clone());
                accumulate(&mut grads[b.0], Tensor::new(val(*b).shape().to_vec(), db)?);
            }
            AddCol(a, b) => {
                let m = val(*a).rows();
                let db: Vec<f64> = (0..m).map(|i| up.row(i).iter().sum()).collect();
                accumulate(&mut grads[a.0], up.clone());
                accumulate(&mut grads[b.0], Tensor::new(val(*b).shape().to_vec(), db)?);
            }
            MulRow(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, n) = (va.rows(), va.cols());
                let mut da = Tensor::zeros(va.shape());
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        let u = up.at(i, j);
                        da.data_mut()[i * n + j] = u * vb.data()[j];
                        db[j] += u * va.at(i, j);
                    }
                }
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], Tensor::new(vb.shape().to_vec(), db)?);
            }
            MulCol(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, n) = (va.rows(), va.cols());
                let mut da = Tensor::zeros(va.shape());
                let mut db = vec![0.0; m];
                for i in 0..m {
                    let y = vb.data()[i];
                    for j in 0..n {
                        let u = up.at(i, j);
                        da.data_mut()[i * n + j] = u * y;
                        db[i] += u * va.at(i, j);
                    }
                }
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], Tensor::new(vb.shape().to_vec(), db)?);
            }
            AddScalar(a, _) => accumulate(&mut grads[a.0], up.clone()),
            Scale(a, k) => accumulate(&mut grads[a.0], up.map(|x| x * k)),
            MatMul(a, b) => {
                let bt = transpose(val(*b));
                let at = transpose(val(*a));
                accumulate(&mut grads[a.0], matmul(&up, &bt)?);
                accumulate(&mut grads[b.0], matmul(&at, &up)?);
            }
            Transpose(a) => accumulate(&mut grads[a.0], transpose(&up)),
            Square(a) => accumulate(&mut grads[a.0], zip_map(&up, val(*a), |u, x| u * 2.0 * x)),
            Exp(a) => accumulate(&mut grads[a.0], zip_map(&up, eval.value(NodeId(id)), |u, y| u * y)),
            Ln(a) => accumulate(&mut grads[a.0], zip_map(&up, val(*a), |u, x| u / x)),
            Tanh(a) => accumulate(
                &mut grads[a.0],
                zip_map(&up, eval.value(NodeId(id)), |u, y| u * (1.0 - y * y)),
            ),
            Relu(a) => accumulate(
                &mut grads[a.0],
                zip_map(&up, val(*a), |u, x| if x > 0.0 { u } else { 0.0 }),
            ),
            Recip(a) => accumulate(&mut grads[a.0], zip_map(&up, val(*a), |u, x| -u / (x * x))),
            PowAbs(a, p) => accumulate(
                &mut grads[a.0],
                zip_map(&up, val(*a), |u, x| {
                    u * p * x.abs().powf(p - 1.0) * x.signum()
                }),
            ),
            ClampMin(a, lo) => accumulate(
                &mut grads[a.0],
                zip_map(&up, val(*a), |u, x| if x > *lo { u } else { 0.0 }),
            ),
            SumAll(a) => {
                let u = up.scalar_value()?;
                accumulate(&mut grads[a.0], val(*a).map(|_| u));
            }
            RowSum(a) => {
                let va = val(*a);
                let (m, n) = (va.rows(), va.cols());
                let mut da = Tensor::zeros(va.shape());
                for i in 0..m {
                    let u = up.data()[i];
                    for j in 0..n {
                        da.data_mut()[i * n + j] = u;
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
            RowMax(a) => {
                let va = val(*a);
                let (m, n) = (va.rows(), va.cols());
                let mut da = Tensor::zeros(va.shape());
                for i in 0..m {
                    // lowest index wins ties, for determinism
                    let mut best = 0;
                    for j in 1..n {
                        if va.at(i, j) > va.at(i, best) {
                            best = j;
                        }
                    }
                    da.data_mut()[i * n + best] = up.data()[i];
                }
                accumulate(&mut grads[a.0], da);
            }
            MaxAll(a) => {
                let va = val(*a);
                let mut best = 0;
                for (j, &x) in va.data().iter().enumerate() {
                    if x > va.data()[best] {
                        best = j;
                    }
                }
                let mut da = Tensor::zeros(va.shape());
                da.data_mut()[best] = up.scalar_value()?;
                accumulate(&mut grads[a.0], da);
            }
            LogSoftmax(a) => {
                let y = eval.value(NodeId(id));
                let (m, n) = (y.rows(), y.cols());
                let mut da = Tensor::zeros(y.shape());
                for i in 0..m {
                    let urow_sum: f64 = up.row(i).iter().sum();
                    for j in 0..n {
                        da.data_mut()[i * n + j] = up.at(i, j) - y.at(i, j).exp() * urow_sum;
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
            NllLoss(a, labels) => {
                let va = val(*a);
                let (m, n) = (va.rows(), va.cols());
                let u = up.scalar_value()?;
                let mut da = Tensor::zeros(va.shape());
                for (i, &t) in labels.iter().enumerate() {
                    da.data_mut()[i * n + t] = -u / m as f64;
                }
                accumulate(&mut grads[a.0], da);
            }
            Tile(a, times) => {
                let va = val(*a);
                let (m, n) = (va.rows(), va.cols());
                let mut da = Tensor::zeros(va.shape());
                for i in 0..m {
                    for t in 0..*times {
                        for j in 0..n {
                            da.data_mut()[i * n + j] += up.at(i, t * n + j);
                        }
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
            RepeatInterleave(a, times) => {
                let va = val(*a);
                let mut da = Tensor::zeros(va.shape());
                for i in 0..va.len() {
                    for t in 0..*times {
                        da.data_mut()[i] += up.data()[i * times + t];
                    }
                }
                accumulate(&mut grads[a.0], da);
            }
            Conv1d {
                input,
                kernels,
                stride,
                dilation,
            } => {
                let (x, k) = (val(*input), val(*kernels));
                let (m, n) = (x.rows(), x.cols());
                let (ch, kk) = (k.rows(), k.cols());
                let out_len = conv1d_out_len(n, kk, *stride, *dilation).expect("checked in forward");
                let mut dx = Tensor::zeros(x.shape());
                let mut dk = Tensor::zeros(k.shape());
                for b in 0..m {
                    for c in 0..ch {
                        for i in 0..out_len {
                            let u = up.at(b, c * out_len + i);
                            if u == 0.0 {
                                continue;
                            }
                            for j in 0..kk {
                                let xi = i * stride + j * dilation;
                                dx.data_mut()[b * n + xi] += u * k.at(c, j);
                                dk.data_mut()[c * kk + j] += u * x.at(b, xi);
                            }
                        }
                    }
                }
                accumulate(&mut grads[input.0], dx);
                accumulate(&mut grads[kernels.0], dk);
            }
        }
        grads[id] = Some(up);
    }
    Ok(Gradients { grads })
}
