use super::tensor::{matmul_raw, Tensor};
use super::AutodiffError;

/// Index of a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Receives an entry in the gradient map.
    Param,
    Constant,
}

/// Primitive operations. Every variant has both a numeric vector-Jacobian
/// rule (see `backward`) and a graph-building gradient rule (see
/// `symbolic`), so any graph can be differentiated twice.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf(LeafKind),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// `[n, m] + [m]` broadcast over rows.
    AddBias(NodeId, NodeId),
    SumRows(NodeId),
    BroadcastRows { input: NodeId, rows: usize },
    SumCols(NodeId),
    BroadcastCols { input: NodeId, cols: usize },
    Sum(NodeId),
    Mean(NodeId),
    Expand { input: NodeId, shape: Vec<usize> },
    Affine { input: NodeId, scale: f64, shift: f64 },
    LeakyRelu { input: NodeId, slope: f64 },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Square(NodeId),
    /// `sqrt(x + eps)`.
    Sqrt { input: NodeId, eps: f64 },
    MaxConst { input: NodeId, floor: f64 },
    /// `1` where `x > threshold`, else `0`. Carries no gradient.
    Step { input: NodeId, threshold: f64 },
    SliceCols { input: NodeId, start: usize, len: usize },
    PadCols { input: NodeId, start: usize, total: usize },
    ConcatCols(NodeId, NodeId),
    Reshape { input: NodeId, shape: Vec<usize> },
    /// Mean over non-overlapping `k x k` blocks of a `[batch, W, H, C]` tensor.
    BlockMean { input: NodeId, k: usize },
    /// Adjoint of `BlockMean`: each block cell receives `y / k^2`.
    BlockSpread { input: NodeId, k: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddBias(..) => "add_bias",
            Op::SumRows(_) => "sum_rows",
            Op::BroadcastRows { .. } => "broadcast_rows",
            Op::SumCols(_) => "sum_cols",
            Op::BroadcastCols { .. } => "broadcast_cols",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Expand { .. } => "expand",
            Op::Affine { .. } => "affine",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sqrt { .. } => "sqrt",
            Op::MaxConst { .. } => "max_const",
            Op::Step { .. } => "step",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::Reshape { .. } => "reshape",
            Op::BlockMean { .. } => "block_mean",
            Op::BlockSpread { .. } => "block_spread",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddBias(a, b)
            | Op::ConcatCols(a, b) => vec![a, b],
            Op::Transpose(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Square(a) => vec![a],
            Op::BroadcastRows { input, .. }
            | Op::BroadcastCols { input, .. }
            | Op::Expand { input, .. }
            | Op::Affine { input, .. }
            | Op::LeakyRelu { input, .. }
            | Op::Sqrt { input, .. }
            | Op::MaxConst { input, .. }
            | Op::Step { input, .. }
            | Op::SliceCols { input, .. }
            | Op::PadCols { input, .. }
            | Op::Reshape { input, .. }
            | Op::BlockMean { input, .. }
            | Op::BlockSpread { input, .. } => vec![input],
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Tensor,
}

/// Append-only computation record. Values are evaluated eagerly when a node
/// is added, so node ids are topologically ordered by construction.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Cached value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn forward(&self, id: NodeId) -> Result<&Tensor, AutodiffError> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(AutodiffError::UnknownNode(id.0))
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf(LeafKind::Param))
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf(_))
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf(LeafKind::Param), value)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf(LeafKind::Constant), value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<(), AutodiffError> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownNode(id.0))
        }
    }

    /// Validate, evaluate and append an operation.
    pub fn apply(&mut self, op: Op) -> Result<NodeId, AutodiffError> {
        for id in op.inputs() {
            self.check(id)?;
        }
        let value = self.evaluate(&op)?;
        Ok(self.push(op, value))
    }

    fn matrix(&self, op: &'static str, id: NodeId) -> Result<(usize, usize), AutodiffError> {
        self.value(id).dims2().ok_or_else(|| AutodiffError::RankMismatch {
            op,
            expected: 2,
            shape: self.shape(id).to_vec(),
        })
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            })
        }
    }

    fn evaluate(&self, op: &Op) -> Result<Tensor, AutodiffError> {
        let name = op.name();
        let v = |id: NodeId| self.value(id);
        let out = match *op {
            Op::Leaf(_) => unreachable!("leaves are pushed directly"),
            Op::MatMul(a, b) => {
                let (_, k) = self.matrix(name, a)?;
                let (k2, _) = self.matrix(name, b)?;
                if k != k2 {
                    return Err(AutodiffError::ShapeMismatch {
                        op: name,
                        lhs: self.shape(a).to_vec(),
                        rhs: self.shape(b).to_vec(),
                    });
                }
                matmul_raw(v(a), v(b))
            }
            Op::Transpose(a) => {
                self.matrix(name, a)?;
                v(a).transpose2()
            }
            Op::Add(a, b) => {
                self.same_shape(name, a, b)?;
                v(a).zip_map(v(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                self.same_shape(name, a, b)?;
                v(a).zip_map(v(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                self.same_shape(name, a, b)?;
                v(a).zip_map(v(b), |x, y| x * y)
            }
            Op::Div(a, b) => {
                self.same_shape(name, a, b)?;
                if v(b).data().iter().any(|&d| d == 0.0) {
                    return Err(AutodiffError::Domain {
                        op: name,
                        msg: "division by zero".into(),
                    });
                }
                v(a).zip_map(v(b), |x, y| x / y)
            }
            Op::AddBias(a, b) => {
                let (n, m) = self.matrix(name, a)?;
                if self.shape(b) != [m] {
                    return Err(AutodiffError::ShapeMismatch {
                        op: name,
                        lhs: self.shape(a).to_vec(),
                        rhs: self.shape(b).to_vec(),
                    });
                }
                let bias = v(b).data();
                let mut data = v(a).data().to_vec();
                for row in data.chunks_mut(m) {
                    for (x, &bv) in row.iter_mut().zip(bias) {
                        *x += bv;
                    }
                }
                Tensor::from_parts(vec![n, m], data)
            }
            Op::SumRows(a) => {
                let (_, m) = self.matrix(name, a)?;
                let mut out = vec![0.0; m];
                for row in v(a).data().chunks(m) {
                    for (o, &x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                Tensor::from_parts(vec![m], out)
            }
            Op::BroadcastRows { input, rows } => {
                if self.value(input).rank() != 1 || rows == 0 {
                    return Err(AutodiffError::RankMismatch {
                        op: name,
                        expected: 1,
                        shape: self.shape(input).to_vec(),
                    });
                }
                let src = v(input).data();
                let mut data = Vec::with_capacity(rows * src.len());
                for _ in 0..rows {
                    data.extend_from_slice(src);
                }
                Tensor::from_parts(vec![rows, src.len()], data)
            }
            Op::SumCols(a) => {
                let (n, m) = self.matrix(name, a)?;
                let data = v(a).data().chunks(m).map(|r| r.iter().sum()).collect();
                Tensor::from_parts(vec![n, 1], data)
            }
            Op::BroadcastCols { input, cols } => {
                let (n, one) = self.matrix(name, input)?;
                if one != 1 || cols == 0 {
                    return Err(AutodiffError::InvalidArgument {
                        op: name,
                        msg: format!("expected [n, 1] input and cols > 0, got {:?}", self.shape(input)),
                    });
                }
                let mut data = Vec::with_capacity(n * cols);
                for &x in v(input).data() {
                    data.extend(std::iter::repeat_n(x, cols));
                }
                Tensor::from_parts(vec![n, cols], data)
            }
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::Mean(a) => Tensor::scalar(v(a).mean()),
            Op::Expand { input, ref shape } => {
                if v(input).len() != 1 || shape.is_empty() || shape.contains(&0) {
                    return Err(AutodiffError::InvalidArgument {
                        op: name,
                        msg: format!("cannot expand {:?} to {:?}", self.shape(input), shape),
                    });
                }
                Tensor::full(shape, v(input).item())
            }
            Op::Affine { input, scale, shift } => v(input).map(|x| scale * x + shift),
            Op::LeakyRelu { input, slope } => v(input).map(|x| if x > 0.0 { x } else { slope * x }),
            Op::Tanh(a) => v(a).map(f64::tanh),
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Log(a) => {
                if v(a).data().iter().any(|&x| x <= 0.0) {
                    return Err(AutodiffError::Domain {
                        op: name,
                        msg: "log of non-positive value".into(),
                    });
                }
                v(a).map(f64::ln)
            }
            Op::Square(a) => v(a).map(|x| x * x),
            Op::Sqrt { input, eps } => {
                if v(input).data().iter().any(|&x| x + eps < 0.0) {
                    return Err(AutodiffError::Domain {
                        op: name,
                        msg: "sqrt of negative value".into(),
                    });
                }
                v(input).map(|x| (x + eps).sqrt())
            }
            Op::MaxConst { input, floor } => v(input).map(|x| if x > floor { x } else { floor }),
            Op::Step { input, threshold } => {
                v(input).map(|x| if x > threshold { 1.0 } else { 0.0 })
            }
            Op::SliceCols { input, start, len } => {
                let (n, m) = self.matrix(name, input)?;
                if len == 0 || start + len > m {
                    return Err(AutodiffError::InvalidArgument {
                        op: name,
                        msg: format!("columns {start}..{} out of range for width {m}", start + len),
                    });
                }
                let mut data = Vec::with_capacity(n * len);
                for row in v(input).data().chunks(m) {
                    data.extend_from_slice(&row[start..start + len]);
                }
                Tensor::from_parts(vec![n, len], data)
            }
            Op::PadCols { input, start, total } => {
                let (n, m) = self.matrix(name, input)?;
                if start + m > total {
                    return Err(AutodiffError::InvalidArgument {
                        op: name,
                        msg: format!("cannot place width {m} at column {start} of {total}"),
                    });
                }
                let mut data = vec![0.0; n * total];
                for (dst, src) in data.chunks_mut(total).zip(v(input).data().chunks(m)) {
                    dst[start..start + m].copy_from_slice(src);
                }
                Tensor::from_parts(vec![n, total], data)
            }
            Op::ConcatCols(a, b) => {
                let (n, ma) = self.matrix(name, a)?;
                let (n2, mb) = self.matrix(name, b)?;
                if n != n2 {
                    return Err(AutodiffError::ShapeMismatch {
                        op: name,
                        lhs: self.shape(a).to_vec(),
                        rhs: self.shape(b).to_vec(),
                    });
                }
                let mut data = Vec::with_capacity(n * (ma + mb));
                for (ra, rb) in v(a).data().chunks(ma).zip(v(b).data().chunks(mb)) {
                    data.extend_from_slice(ra);
                    data.extend_from_slice(rb);
                }
                Tensor::from_parts(vec![n, ma + mb], data)
            }
            Op::Reshape { input, ref shape } => v(input).reshaped(shape.clone()).map_err(|_| {
                AutodiffError::InvalidArgument {
                    op: name,
                    msg: format!("cannot reshape {:?} to {:?}", self.shape(input), shape),
                }
            })?,
            Op::BlockMean { input, k } => {
                let dims = image_dims(name, self.shape(input), k, true)?;
                block_mean(v(input), dims, k)
            }
            Op::BlockSpread { input, k } => {
                let dims = image_dims(name, self.shape(input), k, false)?;
                block_spread(v(input), dims, k)
            }
        };
        Ok(out)
    }

    // ---- builders -------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Div(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::AddBias(a, bias))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SumRows(a))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::BroadcastRows { input: a, rows })
    }

    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SumCols(a))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::BroadcastCols { input: a, cols })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mean(a))
    }

    pub fn expand(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Expand {
            input: a,
            shape: shape.to_vec(),
        })
    }

    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Affine {
            input: a,
            scale,
            shift,
        })
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        self.affine(a, factor, 0.0)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.affine(a, -1.0, 0.0)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::LeakyRelu { input: a, slope })
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Log(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Square(a))
    }

    pub fn sqrt(&mut self, a: NodeId, eps: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sqrt { input: a, eps })
    }

    pub fn max_const(&mut self, a: NodeId, floor: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MaxConst { input: a, floor })
    }

    pub fn step(&mut self, a: NodeId, threshold: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Step {
            input: a,
            threshold,
        })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SliceCols {
            input: a,
            start,
            len,
        })
    }

    pub fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::PadCols {
            input: a,
            start,
            total,
        })
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::ConcatCols(a, b))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Reshape {
            input: a,
            shape: shape.to_vec(),
        })
    }

    pub fn block_mean(&mut self, a: NodeId, k: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::BlockMean { input: a, k })
    }

    pub fn block_spread(&mut self, a: NodeId, k: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::BlockSpread { input: a, k })
    }

    /// Per-row Euclidean norm `[n, m] -> [n, 1]`, guarded by `eps` under the
    /// square root.
    pub fn row_l2_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId, AutodiffError> {
        let sq = self.square(a)?;
        let s = self.sum_cols(sq)?;
        self.sqrt(s, eps)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[b, W, H, C]` of the fine-resolution side. `fine_input` is false when the
/// op input is the coarse side, as for `BlockSpread`.
fn image_dims(
    op: &'static str,
    shape: &[usize],
    k: usize,
    fine_input: bool,
) -> Result<[usize; 4], AutodiffError> {
    let &[b, w, h, c] = shape else {
        return Err(AutodiffError::RankMismatch {
            op,
            expected: 4,
            shape: shape.to_vec(),
        });
    };
    if k == 0 {
        return Err(AutodiffError::InvalidArgument {
            op,
            msg: "block size must be positive".into(),
        });
    }
    if fine_input {
        if w % k != 0 || h % k != 0 {
            return Err(AutodiffError::InvalidArgument {
                op,
                msg: format!("image {w}x{h} not divisible by block size {k}"),
            });
        }
        Ok([b, w, h, c])
    } else {
        Ok([b, w * k, h * k, c])
    }
}

pub(crate) fn block_mean(x: &Tensor, [b, w, h, c]: [usize; 4], k: usize) -> Tensor {
    let (wo, ho) = (w / k, h / k);
    let mut out = vec![0.0; b * wo * ho * c];
    let src = x.data();
    let norm = 1.0 / (k * k) as f64;
    for n in 0..b {
        for i in 0..w {
            for j in 0..h {
                let s = ((n * w + i) * h + j) * c;
                let d = ((n * wo + i / k) * ho + j / k) * c;
                for ch in 0..c {
                    out[d + ch] += src[s + ch];
                }
            }
        }
    }
    for o in &mut out {
        *o *= norm;
    }
    Tensor::from_parts(vec![b, wo, ho, c], out)
}

pub(crate) fn block_spread(y: &Tensor, [b, w, h, c]: [usize; 4], k: usize) -> Tensor {
    let (wo, ho) = (w / k, h / k);
    let mut out = vec![0.0; b * w * h * c];
    let src = y.data();
    let norm = 1.0 / (k * k) as f64;
    for n in 0..b {
        for i in 0..w {
            for j in 0..h {
                let d = ((n * w + i) * h + j) * c;
                let s = ((n * wo + i / k) * ho + j / k) * c;
                for ch in 0..c {
                    out[d + ch] = src[s + ch] * norm;
                }
            }
        }
    }
    Tensor::from_parts(vec![b, w, h, c], out)
}
