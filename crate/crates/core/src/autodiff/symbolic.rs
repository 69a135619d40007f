use super::backward::check_scalar_root;
use super::graph::{Graph, NodeId, Op};
use super::tensor::Tensor;
use super::AutodiffError;

/// Append nodes computing `d root / d wrt` to the graph and return the node
/// holding that gradient.
///
/// The gradient is assembled from the same primitive ops as the forward pass,
/// so `backward` can differentiate through it (double backprop). `wrt` may be
/// a parameter or a constant leaf; the result is zero if `root` does not
/// depend on it.
pub fn grad_as_graph(graph: &mut Graph, root: NodeId, wrt: NodeId) -> Result<NodeId, AutodiffError> {
    check_scalar_root(graph, root)?;
    graph.forward(wrt)?;
    if !graph.is_leaf(wrt) {
        return Err(AutodiffError::NotALeaf(wrt.0));
    }
    let wrt_shape = graph.shape(wrt).to_vec();
    if wrt.0 > root.0 {
        return Ok(graph.constant(Tensor::zeros(&wrt_shape)));
    }

    // Only nodes downstream of `wrt` carry a nonzero adjoint contribution.
    let mut depends = vec![false; root.0 + 1];
    depends[wrt.0] = true;
    for i in wrt.0 + 1..=root.0 {
        depends[i] = match &graph.nodes[i].op {
            Op::Leaf(_) | Op::Step { .. } => false,
            op => op.inputs().iter().any(|p| depends[p.0]),
        };
    }

    let mut adjoint: Vec<Option<NodeId>> = vec![None; root.0 + 1];
    if depends[root.0] {
        let seed = Tensor::full(graph.shape(root), 1.0);
        adjoint[root.0] = Some(graph.constant(seed));
    }

    for i in (wrt.0 + 1..=root.0).rev() {
        let Some(g) = adjoint[i].take() else { continue };
        let op = graph.nodes[i].op.clone();
        for (slot, input) in op.inputs().into_iter().enumerate() {
            if !depends[input.0] {
                continue;
            }
            let contrib = grad_rule(graph, &op, NodeId(i), g, slot)?;
            adjoint[input.0] = Some(match adjoint[input.0] {
                Some(acc) => graph.add(acc, contrib)?,
                None => contrib,
            });
        }
    }

    match adjoint[wrt.0] {
        Some(g) => Ok(g),
        None => Ok(graph.constant(Tensor::zeros(&wrt_shape))),
    }
}

/// Graph-building counterpart of the numeric vector-Jacobian product.
fn grad_rule(
    graph: &mut Graph,
    op: &Op,
    node: NodeId,
    g: NodeId,
    slot: usize,
) -> Result<NodeId, AutodiffError> {
    match *op {
        Op::Leaf(_) => unreachable!(),
        Op::MatMul(a, b) => {
            if slot == 0 {
                let bt = graph.transpose(b)?;
                graph.matmul(g, bt)
            } else {
                let at = graph.transpose(a)?;
                graph.matmul(at, g)
            }
        }
        Op::Transpose(_) => graph.transpose(g),
        Op::Add(..) => Ok(g),
        Op::Sub(..) => {
            if slot == 0 {
                Ok(g)
            } else {
                graph.neg(g)
            }
        }
        Op::Mul(a, b) => graph.mul(g, if slot == 0 { b } else { a }),
        Op::Div(_, b) => {
            if slot == 0 {
                graph.div(g, b)
            } else {
                let gy = graph.mul(g, node)?;
                let q = graph.div(gy, b)?;
                graph.neg(q)
            }
        }
        Op::AddBias(..) => {
            if slot == 0 {
                Ok(g)
            } else {
                graph.sum_rows(g)
            }
        }
        Op::SumRows(a) => {
            let rows = graph.shape(a)[0];
            graph.broadcast_rows(g, rows)
        }
        Op::BroadcastRows { .. } => graph.sum_rows(g),
        Op::SumCols(a) => {
            let cols = graph.shape(a)[1];
            graph.broadcast_cols(g, cols)
        }
        Op::BroadcastCols { .. } => graph.sum_cols(g),
        Op::Sum(a) => {
            let shape = graph.shape(a).to_vec();
            graph.expand(g, &shape)
        }
        Op::Mean(a) => {
            let shape = graph.shape(a).to_vec();
            let n = graph.value(a).len() as f64;
            let e = graph.expand(g, &shape)?;
            graph.scale(e, 1.0 / n)
        }
        Op::Expand { .. } => graph.sum(g),
        Op::Affine { scale, .. } => graph.scale(g, scale),
        Op::LeakyRelu { input, slope } => {
            let mask = graph.step(input, 0.0)?;
            let d = graph.affine(mask, 1.0 - slope, slope)?;
            graph.mul(g, d)
        }
        Op::Tanh(_) => {
            let sq = graph.square(node)?;
            let d = graph.affine(sq, -1.0, 1.0)?;
            graph.mul(g, d)
        }
        Op::Sigmoid(_) => {
            let one_minus = graph.affine(node, -1.0, 1.0)?;
            let d = graph.mul(node, one_minus)?;
            graph.mul(g, d)
        }
        Op::Log(a) => graph.div(g, a),
        Op::Square(a) => {
            let two_x = graph.scale(a, 2.0)?;
            graph.mul(g, two_x)
        }
        Op::Sqrt { .. } => {
            let half = graph.scale(g, 0.5)?;
            graph.div(half, node)
        }
        Op::MaxConst { input, floor } => {
            let mask = graph.step(input, floor)?;
            graph.mul(g, mask)
        }
        Op::Step { .. } => unreachable!("step carries no gradient"),
        Op::SliceCols { input, start, .. } => {
            let total = graph.shape(input)[1];
            graph.pad_cols(g, start, total)
        }
        Op::PadCols { input, start, .. } => {
            let len = graph.shape(input)[1];
            graph.slice_cols(g, start, len)
        }
        Op::ConcatCols(a, b) => {
            let ma = graph.shape(a)[1];
            if slot == 0 {
                graph.slice_cols(g, 0, ma)
            } else {
                let mb = graph.shape(b)[1];
                graph.slice_cols(g, ma, mb)
            }
        }
        Op::Reshape { input, .. } => {
            let shape = graph.shape(input).to_vec();
            graph.reshape(g, &shape)
        }
        Op::BlockMean { k, .. } => graph.block_spread(g, k),
        Op::BlockSpread { k, .. } => graph.block_mean(g, k),
    }
}
