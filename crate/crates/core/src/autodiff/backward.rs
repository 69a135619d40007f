use std::collections::BTreeMap;

use super::graph::{block_mean, block_spread, Graph, LeafKind, NodeId, Op};
use super::tensor::{matmul_raw, Tensor};
use super::AutodiffError;

/// Gradients of a scalar with respect to every parameter leaf it depends on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<NodeId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn remove(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }
}

/// Whether gradient can flow from `node` back to a parameter leaf.
fn flow_mask(graph: &Graph, upto: usize) -> Vec<bool> {
    let mut flows = vec![false; upto + 1];
    for i in 0..=upto {
        flows[i] = match &graph.nodes[i].op {
            Op::Leaf(kind) => *kind == LeafKind::Param,
            Op::Step { .. } => false,
            op => op.inputs().iter().any(|p| flows[p.0]),
        };
    }
    flows
}

pub(crate) fn ancestors(graph: &Graph, root: NodeId) -> Vec<bool> {
    let mut needed = vec![false; root.0 + 1];
    needed[root.0] = true;
    for i in (0..=root.0).rev() {
        if needed[i] {
            for p in graph.nodes[i].op.inputs() {
                needed[p.0] = true;
            }
        }
    }
    needed
}

pub(crate) fn check_scalar_root(graph: &Graph, root: NodeId) -> Result<(), AutodiffError> {
    let value = graph.forward(root)?;
    if value.len() != 1 {
        return Err(AutodiffError::NonScalarRoot(value.shape().to_vec()));
    }
    Ok(())
}

/// Reverse sweep from a scalar node, returning `d root / d leaf` for every
/// parameter leaf among its ancestors.
pub fn backward(graph: &Graph, root: NodeId) -> Result<GradientMap, AutodiffError> {
    check_scalar_root(graph, root)?;
    let flows = flow_mask(graph, root.0);
    let needed = ancestors(graph, root);
    let mut adjoint: Vec<Option<Tensor>> = vec![None; root.0 + 1];
    adjoint[root.0] = Some(Tensor::full(graph.shape(root), 1.0));
    let mut grads = BTreeMap::new();

    for i in (0..=root.0).rev() {
        let Some(g) = adjoint[i].take() else { continue };
        let op = &graph.nodes[i].op;
        if let Op::Leaf(kind) = op {
            if *kind == LeafKind::Param {
                grads.insert(NodeId(i), g);
            }
            continue;
        }
        for (slot, input) in op.inputs().into_iter().enumerate() {
            if !flows[input.0] {
                continue;
            }
            let contrib = vjp(graph, NodeId(i), &g, slot);
            match &mut adjoint[input.0] {
                Some(acc) => acc.add_assign(&contrib),
                empty => *empty = Some(contrib),
            }
        }
    }

    for i in 0..=root.0 {
        if needed[i] && graph.is_param(NodeId(i)) {
            grads
                .entry(NodeId(i))
                .or_insert_with(|| Tensor::zeros(graph.shape(NodeId(i))));
        }
    }
    Ok(GradientMap { grads })
}

fn sum_rows(g: &Tensor) -> Tensor {
    let (_, m) = g.dims2().unwrap();
    let mut out = vec![0.0; m];
    for row in g.data().chunks(m) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::from_parts(vec![m], out)
}

fn broadcast_rows(g: &Tensor, rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * g.len());
    for _ in 0..rows {
        data.extend_from_slice(g.data());
    }
    Tensor::from_parts(vec![rows, g.len()], data)
}

fn slice_cols(g: &Tensor, start: usize, len: usize) -> Tensor {
    let (n, m) = g.dims2().unwrap();
    let mut data = Vec::with_capacity(n * len);
    for row in g.data().chunks(m) {
        data.extend_from_slice(&row[start..start + len]);
    }
    Tensor::from_parts(vec![n, len], data)
}

fn pad_cols(g: &Tensor, start: usize, total: usize) -> Tensor {
    let (n, m) = g.dims2().unwrap();
    let mut data = vec![0.0; n * total];
    for (dst, src) in data.chunks_mut(total).zip(g.data().chunks(m)) {
        dst[start..start + m].copy_from_slice(src);
    }
    Tensor::from_parts(vec![n, total], data)
}

fn image_shape(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}

/// Vector-Jacobian product of `node` for its `slot`-th input.
fn vjp(graph: &Graph, node: NodeId, g: &Tensor, slot: usize) -> Tensor {
    let val = |id: NodeId| graph.value(id);
    let out = graph.value(node);
    match *graph.op(node) {
        Op::Leaf(_) => unreachable!(),
        Op::MatMul(a, b) => {
            if slot == 0 {
                matmul_raw(g, &val(b).transpose2())
            } else {
                matmul_raw(&val(a).transpose2(), g)
            }
        }
        Op::Transpose(_) => g.transpose2(),
        Op::Add(..) => g.clone(),
        Op::Sub(..) => {
            if slot == 0 {
                g.clone()
            } else {
                g.map(|x| -x)
            }
        }
        Op::Mul(a, b) => g.zip_map(val(if slot == 0 { b } else { a }), |x, y| x * y),
        Op::Div(_, b) => {
            if slot == 0 {
                g.zip_map(val(b), |x, y| x / y)
            } else {
                let gy = g.zip_map(out, |x, y| x * y);
                gy.zip_map(val(b), |x, y| -(x / y))
            }
        }
        Op::AddBias(..) => {
            if slot == 0 {
                g.clone()
            } else {
                sum_rows(g)
            }
        }
        Op::SumRows(a) => broadcast_rows(g, val(a).shape()[0]),
        Op::BroadcastRows { .. } => sum_rows(g),
        Op::SumCols(a) => {
            let (n, m) = val(a).dims2().unwrap();
            let mut data = Vec::with_capacity(n * m);
            for &x in g.data() {
                data.extend(std::iter::repeat_n(x, m));
            }
            Tensor::from_parts(vec![n, m], data)
        }
        Op::BroadcastCols { cols, .. } => {
            let n = g.shape()[0];
            Tensor::from_parts(
                vec![n, 1],
                g.data().chunks(cols).map(|r| r.iter().sum()).collect(),
            )
        }
        Op::Sum(a) => Tensor::full(val(a).shape(), g.item()),
        Op::Mean(a) => {
            let n = val(a).len() as f64;
            Tensor::full(val(a).shape(), g.item() / n)
        }
        Op::Expand { .. } => Tensor::scalar(g.sum()),
        Op::Affine { scale, .. } => g.map(|x| scale * x),
        Op::LeakyRelu { input, slope } => {
            g.zip_map(val(input), |d, x| if x > 0.0 { d } else { slope * d })
        }
        Op::Tanh(_) => g.zip_map(out, |d, y| d * (1.0 - y * y)),
        Op::Sigmoid(_) => g.zip_map(out, |d, y| d * (y * (1.0 - y))),
        Op::Log(a) => g.zip_map(val(a), |d, x| d / x),
        Op::Square(a) => g.zip_map(val(a), |d, x| d * (2.0 * x)),
        Op::Sqrt { .. } => g.zip_map(out, |d, y| 0.5 * d / y),
        Op::MaxConst { input, floor } => {
            g.zip_map(val(input), |d, x| if x > floor { d } else { 0.0 })
        }
        Op::Step { .. } => unreachable!("step carries no gradient"),
        Op::SliceCols { input, start, .. } => pad_cols(g, start, val(input).shape()[1]),
        Op::PadCols { start, input, .. } => slice_cols(g, start, val(input).shape()[1]),
        Op::ConcatCols(a, b) => {
            let ma = val(a).shape()[1];
            if slot == 0 {
                slice_cols(g, 0, ma)
            } else {
                slice_cols(g, ma, val(b).shape()[1])
            }
        }
        Op::Reshape { input, .. } => Tensor::from_parts(val(input).shape().to_vec(), g.data().to_vec()),
        Op::BlockMean { input, k } => block_spread(g, image_shape(val(input)), k),
        Op::BlockSpread { k, .. } => block_mean(g, image_shape(out), k),
    }
}
