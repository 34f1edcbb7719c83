use rand::Rng;

use super::{DiffError, Gradients, ParamId, Params, Tensor};

/// Index of a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
///
/// Binary elementwise ops broadcast a side whose row or column count is 1.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// `a (n x k) . b (k x m)`
    MatMul(NodeId, NodeId),
    /// `x (n x in) . w^T` for `w (out x in)`
    Linear(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Softsign(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Clamp(NodeId, f64, f64),
    /// Row lookup into a table: output row `i` is `table[ids[i]]`.
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    /// Input holds `batch * seq_len` rows of width `d`; output row
    /// `(b, p)` is the concatenation of rows `p .. p + width` of sequence `b`.
    Windows {
        x: NodeId,
        seq_len: usize,
        width: usize,
    },
    /// Column-wise max over each run of `group` consecutive rows.
    MaxPool {
        x: NodeId,
        group: usize,
    },
    /// Mean over consecutive row segments with the given lengths.
    SegmentMean {
        x: NodeId,
        lengths: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    SelectCols {
        x: NodeId,
        cols: Vec<usize>,
    },
    /// Row-wise.
    Softmax(NodeId),
    /// Row-wise.
    LogSoftmax(NodeId),
    /// Row-wise, producing an `n x 1` column.
    LogSumExp(NodeId),
    /// Sum of every element into a `1 x 1` scalar.
    Sum(NodeId),
    /// Elementwise product with a fixed mask (entries `0` or `1/(1-rate)`).
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Softsign(_) => "softsign",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Abs(_) => "abs",
            Op::Square(_) => "square",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Clamp(..) => "clamp",
            Op::Gather { .. } => "gather",
            Op::Windows { .. } => "windows",
            Op::MaxPool { .. } => "max_pool",
            Op::SegmentMean { .. } => "segment_mean",
            Op::ConcatCols(_) => "concat_cols",
            Op::SelectCols { .. } => "select_cols",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::Sum(_) => "sum",
            Op::Dropout { .. } => "dropout",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Linear(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b) => vec![*a, *b],
            Op::Relu(x)
            | Op::Softplus(x)
            | Op::Softsign(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Abs(x)
            | Op::Square(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x, _)
            | Op::Clamp(x, _, _)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::LogSumExp(x)
            | Op::Sum(x) => vec![*x],
            Op::Gather { table, .. } => vec![*table],
            Op::Windows { x, .. }
            | Op::MaxPool { x, .. }
            | Op::SegmentMean { x, .. }
            | Op::SelectCols { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
            Op::ConcatCols(xs) => xs.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    /// Winning row per output element for `MaxPool`.
    argmax: Vec<usize>,
    param: Option<ParamId>,
}

/// Tape of operations over tensors, evaluated eagerly as nodes are added.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_slots: usize,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, None)
    }

    /// Trainable leaf holding a copy of `params[id]`.
    pub fn param(&mut self, params: &Params, id: ParamId) -> NodeId {
        self.param_slots = self.param_slots.max(params.len()).max(id.0 + 1);
        self.push_leaf(params.get(id).clone(), Some(id))
    }

    fn push_leaf(&mut self, value: Tensor, param: Option<ParamId>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            argmax: Vec::new(),
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records `op` and evaluates it.
    pub fn apply(&mut self, op: Op) -> Result<NodeId, DiffError> {
        if matches!(op, Op::Leaf) {
            return Err(DiffError::Op {
                op: "leaf",
                detail: "use constant() or param() to create leaves".into(),
            });
        }
        for input in op.inputs() {
            if input.0 >= self.nodes.len() {
                return Err(DiffError::Op {
                    op: op.name(),
                    detail: format!("unknown input node {}", input.0),
                });
            }
        }
        let (value, argmax) = evaluate(&op, &self.nodes)?;
        self.nodes.push(Node {
            op,
            value,
            argmax,
            param: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::MatMul(a, b))
    }
    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Linear(x, w))
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Div(a, b))
    }
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Relu(x))
    }
    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Softplus(x))
    }
    pub fn softsign(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Softsign(x))
    }
    pub fn log(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Log(x))
    }
    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Exp(x))
    }
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Abs(x))
    }
    pub fn square(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Square(x))
    }
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, DiffError> {
        self.apply(Op::Scale(x, c))
    }
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId, DiffError> {
        self.apply(Op::AddScalar(x, c))
    }
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId, DiffError> {
        self.apply(Op::Clamp(x, lo, hi))
    }
    pub fn gather(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId, DiffError> {
        self.apply(Op::Gather { table, ids })
    }
    pub fn windows(
        &mut self,
        x: NodeId,
        seq_len: usize,
        width: usize,
    ) -> Result<NodeId, DiffError> {
        self.apply(Op::Windows { x, seq_len, width })
    }
    pub fn max_pool(&mut self, x: NodeId, group: usize) -> Result<NodeId, DiffError> {
        self.apply(Op::MaxPool { x, group })
    }
    pub fn segment_mean(&mut self, x: NodeId, lengths: Vec<usize>) -> Result<NodeId, DiffError> {
        self.apply(Op::SegmentMean { x, lengths })
    }
    pub fn concat_cols(&mut self, xs: Vec<NodeId>) -> Result<NodeId, DiffError> {
        self.apply(Op::ConcatCols(xs))
    }
    pub fn select_cols(&mut self, x: NodeId, cols: Vec<usize>) -> Result<NodeId, DiffError> {
        self.apply(Op::SelectCols { x, cols })
    }
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Softmax(x))
    }
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::LogSoftmax(x))
    }
    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::LogSumExp(x))
    }
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sum(x))
    }

    /// Inverted dropout. Identity (no node recorded) when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: NodeId,
        rate: f64,
        rng: &mut R,
    ) -> Result<NodeId, DiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DiffError::Op {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        self.apply(Op::Dropout { x, mask })
    }

    /// Re-evaluates every non-leaf node from the current leaf values.
    ///
    /// Dropout masks recorded at construction are reused.
    pub fn recompute(&mut self) -> Result<(), DiffError> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (value, argmax) = evaluate(&self.nodes[i].op, &self.nodes[..i])?;
            self.nodes[i].value = value;
            self.nodes[i].argmax = argmax;
        }
        Ok(())
    }

    pub(crate) fn trainable_leaves(&self) -> impl Iterator<Item = (NodeId, ParamId)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (NodeId(i), p)))
    }

    pub(crate) fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub(crate) fn argmax(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].argmax
    }

    pub(crate) fn leaf_value_mut(&mut self, id: NodeId) -> &mut Tensor {
        debug_assert!(matches!(self.nodes[id.0].op, Op::Leaf));
        &mut self.nodes[id.0].value
    }

    /// Reverse-mode pass from the scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, DiffError> {
        let node_grads = self.node_gradients(loss)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.param_slots];
        for (node, param) in self.trainable_leaves() {
            if let Some(g) = &node_grads[node.0] {
                match &mut grads[param.0] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        Ok(Gradients::new(grads))
    }

    /// Gradient of `loss` with respect to every node that influences it.
    pub(crate) fn node_gradients(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>, DiffError> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(DiffError::NotScalar {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(loss_value.shape().to_vec(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for (input, contribution) in self.backprop(node, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn backprop(&self, node: &Node, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k) = dims(av);
                let m = bv.cols();
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    let grow = &g.data()[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv.data()[p * m..(p + 1) * m];
                        ga[i * k + p] = dot(grow, brow);
                        let a_ip = av.data()[i * k + p];
                        axpy(a_ip, grow, &mut gb[p * m..(p + 1) * m]);
                    }
                }
                vec![(*a, shaped_like(av, ga)), (*b, shaped_like(bv, gb))]
            }
            Op::Linear(x, w) => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, din) = dims(xv);
                let dout = wv.rows();
                let mut gx = vec![0.0; n * din];
                let mut gw = vec![0.0; dout * din];
                for i in 0..n {
                    let xrow = &xv.data()[i * din..(i + 1) * din];
                    let gxrow = &mut gx[i * din..(i + 1) * din];
                    for o in 0..dout {
                        let go = g.data()[i * dout + o];
                        if go == 0.0 {
                            continue;
                        }
                        axpy(go, &wv.data()[o * din..(o + 1) * din], gxrow);
                        axpy(go, xrow, &mut gw[o * din..(o + 1) * din]);
                    }
                }
                vec![(*x, shaped_like(xv, gx)), (*w, shaped_like(wv, gw))]
            }
            Op::Add(a, b) => vec![(*a, reduce_to(g, val(*a))), (*b, reduce_to(g, val(*b)))],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(g, val(*a))),
                (*b, reduce_to(&g.map(|v| -v), val(*b))),
            ],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = broadcast_zip(g, bv, |gv, bv| gv * bv);
                let gb = broadcast_zip(g, av, |gv, av| gv * av);
                vec![(*a, reduce_to(&ga, av)), (*b, reduce_to(&gb, bv))]
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = broadcast_zip(g, bv, |gv, bv| gv / bv);
                // d(a/b)/db = -y / b
                let gy = zip_same(g, y, |gv, yv| -gv * yv);
                let gb = broadcast_zip(&gy, bv, |v, bv| v / bv);
                vec![(*a, reduce_to(&ga, av)), (*b, reduce_to(&gb, bv))]
            }
            Op::Relu(x) => vec![(
                *x,
                zip_same(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            )],
            Op::Softplus(x) => vec![(*x, zip_same(g, val(*x), |gv, xv| gv * sigmoid(xv)))],
            Op::Softsign(x) => vec![(
                *x,
                zip_same(g, val(*x), |gv, xv| {
                    gv / ((1.0 + xv.abs()) * (1.0 + xv.abs()))
                }),
            )],
            Op::Log(x) => vec![(*x, zip_same(g, val(*x), |gv, xv| gv / xv))],
            Op::Exp(x) => vec![(*x, zip_same(g, y, |gv, yv| gv * yv))],
            Op::Abs(x) => vec![(
                *x,
                zip_same(g, val(*x), |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            )],
            Op::Square(x) => vec![(*x, zip_same(g, val(*x), |gv, xv| 2.0 * xv * gv))],
            Op::Scale(x, c) => vec![(*x, g.map(|gv| gv * c))],
            Op::AddScalar(x, _) => vec![(*x, g.clone())],
            Op::Clamp(x, lo, hi) => vec![(
                *x,
                zip_same(
                    g,
                    val(*x),
                    |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 },
                ),
            )],
            Op::Gather { table, ids } => {
                let tv = val(*table);
                let d = tv.cols();
                let mut gt = vec![0.0; tv.len()];
                for (i, &id) in ids.iter().enumerate() {
                    axpy(
                        1.0,
                        &g.data()[i * d..(i + 1) * d],
                        &mut gt[id * d..(id + 1) * d],
                    );
                }
                vec![(*table, shaped_like(tv, gt))]
            }
            Op::Windows { x, seq_len, width } => {
                let xv = val(*x);
                let d = xv.cols();
                let batch = xv.rows() / seq_len;
                let positions = seq_len - width + 1;
                let out_cols = width * d;
                let mut gx = vec![0.0; xv.len()];
                for b in 0..batch {
                    for p in 0..positions {
                        let grow = &g.data()[(b * positions + p) * out_cols..][..out_cols];
                        let start = (b * seq_len + p) * d;
                        axpy(1.0, grow, &mut gx[start..start + out_cols]);
                    }
                }
                vec![(*x, shaped_like(xv, gx))]
            }
            Op::MaxPool { x, .. } => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                for (o, &row) in node.argmax.iter().enumerate() {
                    gx[row * cols + o % cols] += g.data()[o];
                }
                vec![(*x, shaped_like(xv, gx))]
            }
            Op::SegmentMean { x, lengths } => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                let mut start = 0;
                for (s, &len) in lengths.iter().enumerate() {
                    let grow = &g.data()[s * cols..(s + 1) * cols];
                    for r in start..start + len {
                        axpy(1.0 / len as f64, grow, &mut gx[r * cols..(r + 1) * cols]);
                    }
                    start += len;
                }
                vec![(*x, shaped_like(xv, gx))]
            }
            Op::ConcatCols(xs) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let xv = val(x);
                        let c = xv.cols();
                        let mut gx = Vec::with_capacity(xv.len());
                        for r in 0..rows {
                            gx.extend_from_slice(&g.data()[r * total + offset..][..c]);
                        }
                        offset += c;
                        (x, shaped_like(xv, gx))
                    })
                    .collect()
            }
            Op::SelectCols { x, cols } => {
                let xv = val(*x);
                let (rows, xc) = dims(xv);
                let mut gx = vec![0.0; xv.len()];
                for r in 0..rows {
                    for (j, &c) in cols.iter().enumerate() {
                        gx[r * xc + c] += g.data()[r * cols.len() + j];
                    }
                }
                vec![(*x, shaped_like(xv, gx))]
            }
            Op::Softmax(x) => {
                let (rows, c) = dims(y);
                let mut gx = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y.data()[r * c..(r + 1) * c];
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let inner = dot(gr, yr);
                    for j in 0..c {
                        gx[r * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                vec![(*x, shaped_like(val(*x), gx))]
            }
            Op::LogSoftmax(x) => {
                let (rows, c) = dims(y);
                let mut gx = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y.data()[r * c..(r + 1) * c];
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let total: f64 = gr.iter().sum();
                    for j in 0..c {
                        gx[r * c + j] = gr[j] - yr[j].exp() * total;
                    }
                }
                vec![(*x, shaped_like(val(*x), gx))]
            }
            Op::LogSumExp(x) => {
                let xv = val(*x);
                let (rows, c) = dims(xv);
                let mut gx = vec![0.0; xv.len()];
                for r in 0..rows {
                    let lse = y.data()[r];
                    let gr = g.data()[r];
                    for j in 0..c {
                        gx[r * c + j] = gr * (xv.data()[r * c + j] - lse).exp();
                    }
                }
                vec![(*x, shaped_like(xv, gx))]
            }
            Op::Sum(x) => {
                let xv = val(*x);
                let gv = g.data()[0];
                vec![(*x, xv.map(|_| gv))]
            }
            Op::Dropout { x, mask } => {
                let gx = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                vec![(*x, shaped_like(val(*x), gx))]
            }
        }
    }
}

fn evaluate(op: &Op, nodes: &[Node]) -> Result<(Tensor, Vec<usize>), DiffError> {
    let val = |id: NodeId| &nodes[id.0].value;
    let name = op.name();
    let matrix = |id: NodeId| -> Result<(usize, usize), DiffError> {
        val(id).dims2().ok_or_else(|| DiffError::Op {
            op: name,
            detail: format!("expected a matrix, got shape {:?}", val(id).shape()),
        })
    };
    let mismatch = |detail: String| DiffError::Op { op: name, detail };
    let no_aux = |t: Tensor| Ok((t, Vec::new()));

    match op {
        Op::Leaf => unreachable!("leaves are never evaluated"),
        Op::MatMul(a, b) => {
            let ((n, k), (k2, m)) = (matrix(*a)?, matrix(*b)?);
            if k != k2 {
                return Err(mismatch(format!("{n}x{k} . {k2}x{m}")));
            }
            let (av, bv) = (val(*a).data(), val(*b).data());
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let orow = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    axpy(av[i * k + p], &bv[p * m..(p + 1) * m], orow);
                }
            }
            no_aux(Tensor::matrix(n, m, out)?)
        }
        Op::Linear(x, w) => {
            let ((n, din), (dout, win)) = (matrix(*x)?, matrix(*w)?);
            if din != win {
                return Err(mismatch(format!(
                    "input {n}x{din} against weight {dout}x{win}"
                )));
            }
            let (xv, wv) = (val(*x).data(), val(*w).data());
            let mut out = vec![0.0; n * dout];
            for i in 0..n {
                let xrow = &xv[i * din..(i + 1) * din];
                for o in 0..dout {
                    out[i * dout + o] = dot(xrow, &wv[o * din..(o + 1) * din]);
                }
            }
            no_aux(Tensor::matrix(n, dout, out)?)
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
            let (sa, sb) = (matrix(*a)?, matrix(*b)?);
            let (rows, cols) = broadcast_dims(sa, sb)
                .ok_or_else(|| mismatch(format!("cannot broadcast {sa:?} with {sb:?}")))?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                Op::Mul(..) => |x, y| x * y,
                _ => |x, y| x / y,
            };
            let (av, bv) = (val(*a).data(), val(*b).data());
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(av[bidx(sa, r, c)], bv[bidx(sb, r, c)]));
                }
            }
            no_aux(Tensor::matrix(rows, cols, out)?)
        }
        Op::Relu(x) => no_aux(val(*x).map(|v| v.max(0.0))),
        Op::Softplus(x) => no_aux(val(*x).map(softplus)),
        Op::Softsign(x) => no_aux(val(*x).map(|v| v / (1.0 + v.abs()))),
        Op::Log(x) => no_aux(val(*x).map(f64::ln)),
        Op::Exp(x) => no_aux(val(*x).map(f64::exp)),
        Op::Abs(x) => no_aux(val(*x).map(f64::abs)),
        Op::Square(x) => no_aux(val(*x).map(|v| v * v)),
        Op::Scale(x, c) => no_aux(val(*x).map(|v| v * c)),
        Op::AddScalar(x, c) => no_aux(val(*x).map(|v| v + c)),
        Op::Clamp(x, lo, hi) => {
            if lo > hi {
                return Err(mismatch(format!("empty range [{lo}, {hi}]")));
            }
            no_aux(val(*x).map(|v| v.clamp(*lo, *hi)))
        }
        Op::Gather { table, ids } => {
            let (rows, d) = matrix(*table)?;
            if ids.is_empty() {
                return Err(mismatch("no indices".into()));
            }
            if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
                return Err(mismatch(format!(
                    "index {bad} out of range for {rows} rows"
                )));
            }
            let tv = val(*table).data();
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                out.extend_from_slice(&tv[id * d..(id + 1) * d]);
            }
            no_aux(Tensor::matrix(ids.len(), d, out)?)
        }
        Op::Windows { x, seq_len, width } => {
            let (rows, d) = matrix(*x)?;
            if *width == 0 || *seq_len < *width || rows % seq_len != 0 {
                return Err(mismatch(format!(
                    "{rows} rows cannot hold sequences of length {seq_len} with window {width}"
                )));
            }
            let batch = rows / seq_len;
            let positions = seq_len - width + 1;
            let xv = val(*x).data();
            let mut out = Vec::with_capacity(batch * positions * width * d);
            for b in 0..batch {
                for p in 0..positions {
                    let start = (b * seq_len + p) * d;
                    out.extend_from_slice(&xv[start..start + width * d]);
                }
            }
            no_aux(Tensor::matrix(batch * positions, width * d, out)?)
        }
        Op::MaxPool { x, group } => {
            let (rows, cols) = matrix(*x)?;
            if *group == 0 || rows % group != 0 {
                return Err(mismatch(format!(
                    "{rows} rows not divisible into groups of {group}"
                )));
            }
            let xv = val(*x).data();
            let groups = rows / group;
            let mut out = Vec::with_capacity(groups * cols);
            let mut argmax = Vec::with_capacity(groups * cols);
            for s in 0..groups {
                for c in 0..cols {
                    let mut best_row = s * group;
                    let mut best = xv[best_row * cols + c];
                    for r in s * group + 1..(s + 1) * group {
                        // strict comparison keeps the first maximal row
                        if xv[r * cols + c] > best {
                            best = xv[r * cols + c];
                            best_row = r;
                        }
                    }
                    out.push(best);
                    argmax.push(best_row);
                }
            }
            Ok((Tensor::matrix(groups, cols, out)?, argmax))
        }
        Op::SegmentMean { x, lengths } => {
            let (rows, cols) = matrix(*x)?;
            if lengths.is_empty() || lengths.contains(&0) || lengths.iter().sum::<usize>() != rows {
                return Err(mismatch(format!(
                    "segment lengths must be positive and sum to {rows}"
                )));
            }
            let xv = val(*x).data();
            let mut out = vec![0.0; lengths.len() * cols];
            let mut start = 0;
            for (s, &len) in lengths.iter().enumerate() {
                let orow = &mut out[s * cols..(s + 1) * cols];
                for r in start..start + len {
                    axpy(1.0 / len as f64, &xv[r * cols..(r + 1) * cols], orow);
                }
                start += len;
            }
            no_aux(Tensor::matrix(lengths.len(), cols, out)?)
        }
        Op::ConcatCols(xs) => {
            if xs.is_empty() {
                return Err(mismatch("nothing to concatenate".into()));
            }
            let shapes = xs
                .iter()
                .map(|&x| matrix(x))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = shapes[0].0;
            if shapes.iter().any(|s| s.0 != rows) {
                return Err(mismatch(format!("row counts differ: {shapes:?}")));
            }
            let total: usize = shapes.iter().map(|s| s.1).sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &x in xs {
                    out.extend_from_slice(val(x).row_slice(r));
                }
            }
            no_aux(Tensor::matrix(rows, total, out)?)
        }
        Op::SelectCols { x, cols } => {
            let (rows, xc) = matrix(*x)?;
            if cols.is_empty() || cols.iter().any(|&c| c >= xc) {
                return Err(mismatch(format!(
                    "column selection {cols:?} invalid for width {xc}"
                )));
            }
            let xv = val(*x).data();
            let mut out = Vec::with_capacity(rows * cols.len());
            for r in 0..rows {
                out.extend(cols.iter().map(|&c| xv[r * xc + c]));
            }
            no_aux(Tensor::matrix(rows, cols.len(), out)?)
        }
        Op::Softmax(x) | Op::LogSoftmax(x) => {
            let (rows, c) = matrix(*x)?;
            let xv = val(*x).data();
            let mut out = Vec::with_capacity(rows * c);
            for r in 0..rows {
                let row = &xv[r * c..(r + 1) * c];
                let lse = log_sum_exp(row);
                if matches!(op, Op::Softmax(_)) {
                    out.extend(row.iter().map(|v| (v - lse).exp()));
                } else {
                    out.extend(row.iter().map(|v| v - lse));
                }
            }
            no_aux(Tensor::matrix(rows, c, out)?)
        }
        Op::LogSumExp(x) => {
            let (rows, c) = matrix(*x)?;
            let xv = val(*x).data();
            let out = (0..rows)
                .map(|r| log_sum_exp(&xv[r * c..(r + 1) * c]))
                .collect();
            no_aux(Tensor::matrix(rows, 1, out)?)
        }
        Op::Sum(x) => no_aux(Tensor::scalar(val(*x).data().iter().sum())),
        Op::Dropout { x, mask } => {
            let xv = val(*x);
            if mask.len() != xv.len() {
                return Err(mismatch(format!(
                    "mask of {} for {} values",
                    mask.len(),
                    xv.len()
                )));
            }
            let out = xv.data().iter().zip(mask).map(|(v, m)| v * m).collect();
            no_aux(Tensor::new(xv.shape().to_vec(), out)?)
        }
    }
}

/// Numerically stable `ln(sum(exp(values)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    t.dims2().expect("validated during forward")
}

fn shaped_like(t: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(t.shape().to_vec(), data).expect("gradient matches its input shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let axis = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((axis(a.0, b.0)?, axis(a.1, b.1)?))
}

fn bidx(shape: (usize, usize), r: usize, c: usize) -> usize {
    let r = if shape.0 == 1 { 0 } else { r };
    let c = if shape.1 == 1 { 0 } else { c };
    r * shape.1 + c
}

/// Elementwise `f(g, other)` where `g` has the broadcast output shape.
fn broadcast_zip(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (rows, cols) = dims(g);
    let so = dims(other);
    let mut out = Vec::with_capacity(g.len());
    for r in 0..rows {
        for c in 0..cols {
            out.push(f(g.data()[r * cols + c], other.data()[bidx(so, r, c)]));
        }
    }
    Tensor::matrix(rows, cols, out).expect("broadcast shape")
}

fn zip_same(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let out = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), out).expect("same shape")
}

/// Sums a broadcast-shaped gradient back down to `target`'s shape.
fn reduce_to(g: &Tensor, target: &Tensor) -> Tensor {
    let (rows, cols) = dims(g);
    let st = dims(target);
    if st == (rows, cols) {
        return shaped_like(target, g.data().to_vec());
    }
    let mut out = vec![0.0; target.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[bidx(st, r, c)] += g.data()[r * cols + c];
        }
    }
    shaped_like(target, out)
}
