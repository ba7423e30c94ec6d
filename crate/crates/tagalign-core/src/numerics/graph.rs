//! Dense tensor graph with reverse-mode automatic differentiation.
//!
//! Operations are recorded into an append-only tape; `backward` walks the
//! tape in reverse and accumulates gradients into every leaf that requires
//! them. Storage is flat row-major with explicit shape metadata. Shapes are
//! 1-D `[n]` or 2-D `[r, c]`; scalars are `[1]`.

use crate::numerics::scalar::Scalar;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    /// a[r,c] + b[c] broadcast over rows (bias terms, additive masks).
    AddRowBroadcast { a: TensorId, b: TensorId },
    /// a[r,c] * b[r] broadcast over columns (row gating).
    MulColBroadcast { a: TensorId, b: TensorId },
    /// a * s where s is a `[1]` tensor (learnable scalar).
    MulScalarT { a: TensorId, s: TensorId },
    ScaleConst { a: TensorId, c: f64 },
    Neg { a: TensorId },
    Exp { a: TensorId },
    Gelu { a: TensorId },
    Transpose { a: TensorId },
    Concat { parts: Vec<TensorId>, axis: usize },
    SliceRows { a: TensorId, start: usize },
    SliceCols { a: TensorId, start: usize },
    GatherRows { a: TensorId, idx: Vec<usize> },
    MeanAxis { a: TensorId, axis: usize },
    MeanAll { a: TensorId },
    SumAll { a: TensorId },
    Softmax { a: TensorId, axis: usize },
    LogSoftmax { a: TensorId, axis: usize },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    L2NormRows { a: TensorId },
    Diag { a: TensorId },
    PickPerRow { a: TensorId, idx: Vec<usize> },
    Reshape { a: TensorId },
}

struct Node<S> {
    data: Vec<S>,
    shape: Vec<usize>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op,
}

/// Tape-building tensor arena. One graph per forward/backward pass.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    check_finite: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// View any shape as (rows, cols) with the last dim as cols.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("expected 1-D or 2-D shape, got {shape:?}"),
    }
}

fn require_2d(shape: &[usize], what: &str) -> (usize, usize) {
    assert!(shape.len() == 2, "{what} requires a 2-D tensor, got {shape:?}");
    (shape[0], shape[1])
}

pub(crate) fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw<S: Scalar>(a: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), check_finite: false }
    }

    /// Scan every op output for NaN/Inf. Slow; meant for tests and debugging.
    pub fn with_finite_checks() -> Self {
        Graph { nodes: Vec::new(), check_finite: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        assert_eq!(data.len(), numel(&shape), "data length must match shape {shape:?}");
        self.push_node(data, shape, requires_grad, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.leaf(vec![S::from_f64(v)], vec![1], false)
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: TensorId) -> S {
        assert_eq!(self.nodes[id.0].data.len(), 1, "value() expects a scalar tensor");
        self.nodes[id.0].data[0]
    }

    fn push_node(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        if self.check_finite {
            for (i, v) in data.iter().enumerate() {
                assert!(
                    v.is_finite(),
                    "non-finite value {v} at flat index {i} out of op {op:?}"
                );
            }
        }
        self.nodes.push(Node { data, shape, grad: None, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, data: Vec<S>, shape: Vec<usize>, op: Op, inputs: &[TensorId]) -> TensorId {
        let rg = inputs.iter().any(|t| self.nodes[t.0].requires_grad);
        self.push_node(data, shape, rg, op)
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = require_2d(self.shape(a), "matmul lhs");
        let (k2, n) = require_2d(self.shape(b), "matmul rhs");
        assert_eq!(k, k2, "matmul inner dims must match: [{m},{k}] x [{k2},{n}]");
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        self.push_op(data, vec![m, n], Op::Matmul { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let data: Vec<S> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let data: Vec<S> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let data: Vec<S> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::Mul { a, b }, &[a, b])
    }

    /// a[r,c] + b[c], b added to every row. Also used for additive attention masks.
    pub fn add_row_broadcast(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = rows_cols(self.shape(a));
        assert_eq!(numel(self.shape(b)), c, "row-broadcast rhs must have {c} elements");
        let bd = self.data(b).to_vec();
        let mut data = self.data(a).to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += bd[j];
            }
        }
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::AddRowBroadcast { a, b }, &[a, b])
    }

    /// a[r,c] * b[r], each row scaled by its gate. Used to zero padded rows.
    pub fn mul_col_broadcast(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = rows_cols(self.shape(a));
        assert_eq!(numel(self.shape(b)), r, "col-broadcast rhs must have {r} elements");
        let bd = self.data(b).to_vec();
        let mut data = self.data(a).to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] *= bd[i];
            }
        }
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::MulColBroadcast { a, b }, &[a, b])
    }

    pub fn mul_scalar_t(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(numel(self.shape(s)), 1, "mul_scalar_t scale must be a [1] tensor");
        let sv = self.data(s)[0];
        let data: Vec<S> = self.data(a).iter().map(|&x| x * sv).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::MulScalarT { a, s }, &[a, s])
    }

    pub fn scale_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let cv = S::from_f64(c);
        let data: Vec<S> = self.data(a).iter().map(|&x| x * cv).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::ScaleConst { a, c }, &[a])
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let data: Vec<S> = self.data(a).iter().map(|&x| -x).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::Neg { a }, &[a])
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let data: Vec<S> = self.data(a).iter().map(|&x| x.exp()).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::Exp { a }, &[a])
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<S> = self.data(a).iter().map(|&x| gelu_fwd(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::Gelu { a }, &[a])
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = require_2d(self.shape(a), "transpose");
        let data = transpose_raw(self.data(a), r, c);
        self.push_op(data, vec![c, r], Op::Transpose { a }, &[a])
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> TensorId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        assert!(axis < 2, "concat axis must be 0 or 1");
        let shapes: Vec<(usize, usize)> =
            parts.iter().map(|&p| rows_cols(self.shape(p))).collect();
        let (data, shape) = if axis == 0 {
            let c = shapes[0].1;
            assert!(shapes.iter().all(|&(_, pc)| pc == c), "concat axis 0: column mismatch");
            let r: usize = shapes.iter().map(|&(pr, _)| pr).sum();
            let mut data = Vec::with_capacity(r * c);
            for &p in parts {
                data.extend_from_slice(self.data(p));
            }
            (data, vec![r, c])
        } else {
            let r = shapes[0].0;
            assert!(shapes.iter().all(|&(pr, _)| pr == r), "concat axis 1: row mismatch");
            let c: usize = shapes.iter().map(|&(_, pc)| pc).sum();
            let mut data = vec![S::ZERO; r * c];
            let mut col = 0;
            for (pi, &p) in parts.iter().enumerate() {
                let (_, pc) = shapes[pi];
                let pd = self.data(p);
                for i in 0..r {
                    data[i * c + col..i * c + col + pc]
                        .copy_from_slice(&pd[i * pc..(i + 1) * pc]);
                }
                col += pc;
            }
            (data, vec![r, c])
        };
        self.push_op(data, shape, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let (r, c) = require_2d(self.shape(a), "slice_rows");
        assert!(start + len <= r, "slice_rows out of range: {start}+{len} > {r}");
        let data = self.data(a)[start * c..(start + len) * c].to_vec();
        self.push_op(data, vec![len, c], Op::SliceRows { a, start }, &[a])
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let (r, c) = require_2d(self.shape(a), "slice_cols");
        assert!(start + len <= c, "slice_cols out of range: {start}+{len} > {c}");
        let ad = self.data(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&ad[i * c + start..i * c + start + len]);
        }
        self.push_op(data, vec![r, len], Op::SliceCols { a, start }, &[a])
    }

    /// Rows of `a` selected by index; also the embedding-lookup primitive.
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> TensorId {
        let (r, c) = require_2d(self.shape(a), "gather_rows");
        assert!(idx.iter().all(|&i| i < r), "gather_rows index out of range (rows={r})");
        let ad = self.data(a);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&ad[i * c..(i + 1) * c]);
        }
        self.push_op(data, vec![idx.len(), c], Op::GatherRows { a, idx: idx.to_vec() }, &[a])
    }

    /// Mean over one axis of a 2-D tensor; keeps a 2-D `[1,c]` / `[r,1]` result.
    pub fn mean_axis(&mut self, a: TensorId, axis: usize) -> TensorId {
        let (r, c) = require_2d(self.shape(a), "mean_axis");
        assert!(axis < 2, "mean_axis axis must be 0 or 1");
        let ad = self.data(a);
        let (data, shape) = if axis == 0 {
            let mut out = vec![S::ZERO; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += ad[i * c + j];
                }
            }
            let inv = S::from_f64(1.0 / r as f64);
            for v in out.iter_mut() {
                *v *= inv;
            }
            (out, vec![1, c])
        } else {
            let inv = S::from_f64(1.0 / c as f64);
            let out: Vec<S> = (0..r)
                .map(|i| ad[i * c..(i + 1) * c].iter().copied().sum::<S>() * inv)
                .collect();
            (out, vec![r, 1])
        };
        self.push_op(data, shape, Op::MeanAxis { a, axis }, &[a])
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = numel(self.shape(a));
        let s: S = self.data(a).iter().copied().sum();
        let data = vec![s * S::from_f64(1.0 / n as f64)];
        self.push_op(data, vec![1], Op::MeanAll { a }, &[a])
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: S = self.data(a).iter().copied().sum();
        self.push_op(vec![s], vec![1], Op::SumAll { a }, &[a])
    }

    /// Numerically stabilized softmax along `axis` of a 2-D tensor.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> TensorId {
        let shape = self.shape(a).to_vec();
        let data = softmax_fwd(self.data(a), &shape, axis, false);
        self.push_op(data, shape, Op::Softmax { a, axis }, &[a])
    }

    /// log(softmax) computed as `x - max - ln(sum(exp(x - max)))`; never -inf.
    pub fn log_softmax(&mut self, a: TensorId, axis: usize) -> TensorId {
        let shape = self.shape(a).to_vec();
        let data = softmax_fwd(self.data(a), &shape, axis, true);
        self.push_op(data, shape, Op::LogSoftmax { a, axis }, &[a])
    }

    /// Layer normalization over the last dim with affine gain/bias.
    pub fn layer_norm(&mut self, a: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> TensorId {
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let (_, d) = rows_cols(self.shape(a));
        assert_eq!(numel(self.shape(gain)), d, "layer_norm gain must have {d} elements");
        assert_eq!(numel(self.shape(bias)), d, "layer_norm bias must have {d} elements");
        let ad = self.data(a);
        let gd = self.data(gain);
        let bd = self.data(bias);
        let mut data = vec![S::ZERO; ad.len()];
        let rows = ad.len() / d;
        let inv_d = S::from_f64(1.0 / d as f64);
        let eps_s = S::from_f64(eps);
        for i in 0..rows {
            let x = &ad[i * d..(i + 1) * d];
            let mean = x.iter().copied().sum::<S>() * inv_d;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let inv_std = S::ONE / (var + eps_s).sqrt();
            for j in 0..d {
                data[i * d + j] = (x[j] - mean) * inv_std * gd[j] + bd[j];
            }
        }
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::LayerNorm { a, gain, bias, eps }, &[a, gain, bias])
    }

    /// Every row scaled to unit L2 norm. Rows must be non-zero.
    pub fn l2_norm_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = rows_cols(self.shape(a));
        let ad = self.data(a);
        let mut data = vec![S::ZERO; ad.len()];
        for i in 0..r {
            let x = &ad[i * c..(i + 1) * c];
            let norm = x.iter().map(|&v| v * v).sum::<S>().sqrt();
            assert!(
                norm.to_f64() > 0.0,
                "l2_norm_rows: zero-norm row {i} cannot be normalized"
            );
            let inv = S::ONE / norm;
            for j in 0..c {
                data[i * c + j] = x[j] * inv;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push_op(data, shape, Op::L2NormRows { a }, &[a])
    }

    pub fn diag(&mut self, a: TensorId) -> TensorId {
        let (r, c) = require_2d(self.shape(a), "diag");
        assert_eq!(r, c, "diag requires a square matrix");
        let ad = self.data(a);
        let data: Vec<S> = (0..r).map(|i| ad[i * c + i]).collect();
        self.push_op(data, vec![r], Op::Diag { a }, &[a])
    }

    /// out[i] = a[i, idx[i]]. The cross-entropy gather.
    pub fn pick_per_row(&mut self, a: TensorId, idx: &[usize]) -> TensorId {
        let (r, c) = require_2d(self.shape(a), "pick_per_row");
        assert_eq!(idx.len(), r, "pick_per_row needs one index per row");
        assert!(idx.iter().all(|&j| j < c), "pick_per_row column index out of range");
        let ad = self.data(a);
        let data: Vec<S> = idx.iter().enumerate().map(|(i, &j)| ad[i * c + j]).collect();
        self.push_op(data, vec![r], Op::PickPerRow { a, idx: idx.to_vec() }, &[a])
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> TensorId {
        assert_eq!(numel(&shape), numel(self.shape(a)), "reshape numel mismatch");
        let data = self.data(a).to_vec();
        self.push_op(data, shape, Op::Reshape { a }, &[a])
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Panics if `loss` is not scalar.
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(
            numel(self.shape(loss)),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        assert!(
            self.nodes[loss.0].requires_grad,
            "backward on a tensor with no gradient path"
        );
        self.nodes[loss.0].grad = Some(vec![S::ONE]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].grad.take().unwrap();
            let op = self.nodes[i].op.clone();
            self.backprop_one(i, &grad, &op);
            self.nodes[i].grad = Some(grad);
        }
    }

    fn accum(&mut self, t: TensorId, delta: &[S]) {
        if !self.nodes[t.0].requires_grad {
            return;
        }
        let n = self.nodes[t.0].data.len();
        let g = self.nodes[t.0].grad.get_or_insert_with(|| vec![S::ZERO; n]);
        for (a, &b) in g.iter_mut().zip(delta) {
            *a += b;
        }
    }

    fn backprop_one(&mut self, out: usize, grad: &[S], op: &Op) {
        match op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let (m, k) = rows_cols(&self.nodes[a.0].shape);
                let (_, n) = rows_cols(&self.nodes[b.0].shape);
                if self.nodes[a.0].requires_grad {
                    let bt = transpose_raw(&self.nodes[b.0].data, k, n);
                    let da = matmul_raw(grad, &bt, m, n, k);
                    self.accum(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose_raw(&self.nodes[a.0].data, m, k);
                    let db = matmul_raw(&at, grad, k, m, n);
                    self.accum(*b, &db);
                }
            }

            Op::Add { a, b } => {
                self.accum(*a, grad);
                self.accum(*b, grad);
            }

            Op::Sub { a, b } => {
                self.accum(*a, grad);
                if self.nodes[b.0].requires_grad {
                    let neg: Vec<S> = grad.iter().map(|&g| -g).collect();
                    self.accum(*b, &neg);
                }
            }

            Op::Mul { a, b } => {
                if self.nodes[a.0].requires_grad {
                    let da: Vec<S> =
                        grad.iter().zip(&self.nodes[b.0].data).map(|(&g, &y)| g * y).collect();
                    self.accum(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let db: Vec<S> =
                        grad.iter().zip(&self.nodes[a.0].data).map(|(&g, &x)| g * x).collect();
                    self.accum(*b, &db);
                }
            }

            Op::AddRowBroadcast { a, b } => {
                self.accum(*a, grad);
                if self.nodes[b.0].requires_grad {
                    let (r, c) = rows_cols(&self.nodes[a.0].shape);
                    let mut db = vec![S::ZERO; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += grad[i * c + j];
                        }
                    }
                    self.accum(*b, &db);
                }
            }

            Op::MulColBroadcast { a, b } => {
                let (r, c) = rows_cols(&self.nodes[a.0].shape);
                if self.nodes[a.0].requires_grad {
                    let bd = &self.nodes[b.0].data;
                    let mut da = vec![S::ZERO; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = grad[i * c + j] * bd[i];
                        }
                    }
                    self.accum(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let ad = &self.nodes[a.0].data;
                    let mut db = vec![S::ZERO; r];
                    for i in 0..r {
                        for j in 0..c {
                            db[i] += grad[i * c + j] * ad[i * c + j];
                        }
                    }
                    self.accum(*b, &db);
                }
            }

            Op::MulScalarT { a, s } => {
                let sv = self.nodes[s.0].data[0];
                if self.nodes[a.0].requires_grad {
                    let da: Vec<S> = grad.iter().map(|&g| g * sv).collect();
                    self.accum(*a, &da);
                }
                if self.nodes[s.0].requires_grad {
                    let ds: S = grad
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(&g, &x)| g * x)
                        .sum();
                    self.accum(*s, &[ds]);
                }
            }

            Op::ScaleConst { a, c } => {
                let cv = S::from_f64(*c);
                let da: Vec<S> = grad.iter().map(|&g| g * cv).collect();
                self.accum(*a, &da);
            }

            Op::Neg { a } => {
                let da: Vec<S> = grad.iter().map(|&g| -g).collect();
                self.accum(*a, &da);
            }

            Op::Exp { a } => {
                let da: Vec<S> =
                    grad.iter().zip(&self.nodes[out].data).map(|(&g, &e)| g * e).collect();
                self.accum(*a, &da);
            }

            Op::Gelu { a } => {
                let da: Vec<S> = grad
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(&g, &x)| g * gelu_bwd(x))
                    .collect();
                self.accum(*a, &da);
            }

            Op::Transpose { a } => {
                let (r, c) = rows_cols(&self.nodes[out].shape);
                let da = transpose_raw(grad, r, c);
                self.accum(*a, &da);
            }

            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].data.len();
                        if self.nodes[p.0].requires_grad {
                            let dp = grad[off..off + n].to_vec();
                            self.accum(p, &dp);
                        }
                        off += n;
                    }
                } else {
                    let (r, c) = rows_cols(&self.nodes[out].shape);
                    let mut col = 0;
                    for &p in parts {
                        let (_, pc) = rows_cols(&self.nodes[p.0].shape);
                        if self.nodes[p.0].requires_grad {
                            let mut dp = vec![S::ZERO; r * pc];
                            for i in 0..r {
                                dp[i * pc..(i + 1) * pc]
                                    .copy_from_slice(&grad[i * c + col..i * c + col + pc]);
                            }
                            self.accum(p, &dp);
                        }
                        col += pc;
                    }
                }
            }

            Op::SliceRows { a, start } => {
                let (_, c) = rows_cols(&self.nodes[a.0].shape);
                let mut da = vec![S::ZERO; self.nodes[a.0].data.len()];
                da[start * c..start * c + grad.len()].copy_from_slice(grad);
                self.accum(*a, &da);
            }

            Op::SliceCols { a, start } => {
                let (r, c) = rows_cols(&self.nodes[a.0].shape);
                let (_, oc) = rows_cols(&self.nodes[out].shape);
                let mut da = vec![S::ZERO; r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + oc]
                        .copy_from_slice(&grad[i * oc..(i + 1) * oc]);
                }
                self.accum(*a, &da);
            }

            Op::GatherRows { a, idx } => {
                let (_, c) = rows_cols(&self.nodes[a.0].shape);
                let mut da = vec![S::ZERO; self.nodes[a.0].data.len()];
                for (o, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += grad[o * c + j];
                    }
                }
                self.accum(*a, &da);
            }

            Op::MeanAxis { a, axis } => {
                let (r, c) = rows_cols(&self.nodes[a.0].shape);
                let mut da = vec![S::ZERO; r * c];
                if *axis == 0 {
                    let inv = S::from_f64(1.0 / r as f64);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = grad[j] * inv;
                        }
                    }
                } else {
                    let inv = S::from_f64(1.0 / c as f64);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = grad[i] * inv;
                        }
                    }
                }
                self.accum(*a, &da);
            }

            Op::MeanAll { a } => {
                let n = self.nodes[a.0].data.len();
                let g = grad[0] * S::from_f64(1.0 / n as f64);
                let da = vec![g; n];
                self.accum(*a, &da);
            }

            Op::SumAll { a } => {
                let da = vec![grad[0]; self.nodes[a.0].data.len()];
                self.accum(*a, &da);
            }

            Op::Softmax { a, axis } => {
                // ds_i = s_i * (g_i - sum_j g_j s_j) along the softmax axis
                let s = &self.nodes[out].data;
                let (r, c) = rows_cols(&self.nodes[out].shape);
                let mut da = vec![S::ZERO; s.len()];
                for_each_lane(r, c, *axis, |lane: &[usize]| {
                    let dot: S = lane.iter().map(|&f| grad[f] * s[f]).sum();
                    for &f in lane {
                        da[f] = s[f] * (grad[f] - dot);
                    }
                });
                self.accum(*a, &da);
            }

            Op::LogSoftmax { a, axis } => {
                // dx_i = g_i - softmax_i * sum_j g_j
                let y = &self.nodes[out].data;
                let (r, c) = rows_cols(&self.nodes[out].shape);
                let mut da = vec![S::ZERO; y.len()];
                for_each_lane(r, c, *axis, |lane: &[usize]| {
                    let gsum: S = lane.iter().map(|&f| grad[f]).sum();
                    for &f in lane {
                        da[f] = grad[f] - y[f].exp() * gsum;
                    }
                });
                self.accum(*a, &da);
            }

            Op::LayerNorm { a, gain, bias, eps } => {
                let (_, d) = rows_cols(&self.nodes[a.0].shape);
                let rows = self.nodes[a.0].data.len() / d;
                let xd = self.nodes[a.0].data.clone();
                let gd = self.nodes[gain.0].data.clone();
                let inv_d = S::from_f64(1.0 / d as f64);
                let eps_s = S::from_f64(*eps);

                let mut dx = vec![S::ZERO; xd.len()];
                let mut dgain = vec![S::ZERO; d];
                let mut dbias = vec![S::ZERO; d];
                for i in 0..rows {
                    let x = &xd[i * d..(i + 1) * d];
                    let g = &grad[i * d..(i + 1) * d];
                    let mean = x.iter().copied().sum::<S>() * inv_d;
                    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
                    let inv_std = S::ONE / (var + eps_s).sqrt();
                    let xhat: Vec<S> = x.iter().map(|&v| (v - mean) * inv_std).collect();

                    let mut dxhat = vec![S::ZERO; d];
                    for j in 0..d {
                        dgain[j] += g[j] * xhat[j];
                        dbias[j] += g[j];
                        dxhat[j] = g[j] * gd[j];
                    }
                    let dxhat_sum: S = dxhat.iter().copied().sum();
                    let dxhat_dot: S =
                        dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        dx[i * d + j] = inv_std
                            * inv_d
                            * (S::from_f64(d as f64) * dxhat[j] - dxhat_sum - xhat[j] * dxhat_dot);
                    }
                }
                self.accum(*a, &dx);
                self.accum(*gain, &dgain);
                self.accum(*bias, &dbias);
            }

            Op::L2NormRows { a } => {
                // y = x / |x|; dx = g/|x| - x (x.g)/|x|^3
                let (r, c) = rows_cols(&self.nodes[a.0].shape);
                let xd = &self.nodes[a.0].data;
                let mut da = vec![S::ZERO; xd.len()];
                for i in 0..r {
                    let x = &xd[i * c..(i + 1) * c];
                    let g = &grad[i * c..(i + 1) * c];
                    let norm = x.iter().map(|&v| v * v).sum::<S>().sqrt();
                    let inv = S::ONE / norm;
                    let inv3 = inv * inv * inv;
                    let dot: S = x.iter().zip(g).map(|(&xv, &gv)| xv * gv).sum();
                    for j in 0..c {
                        da[i * c + j] = g[j] * inv - x[j] * dot * inv3;
                    }
                }
                self.accum(*a, &da);
            }

            Op::Diag { a } => {
                let (r, c) = rows_cols(&self.nodes[a.0].shape);
                let mut da = vec![S::ZERO; r * c];
                for i in 0..r {
                    da[i * c + i] = grad[i];
                }
                self.accum(*a, &da);
            }

            Op::PickPerRow { a, idx } => {
                let (_, c) = rows_cols(&self.nodes[a.0].shape);
                let mut da = vec![S::ZERO; self.nodes[a.0].data.len()];
                for (i, &j) in idx.iter().enumerate() {
                    da[i * c + j] = grad[i];
                }
                self.accum(*a, &da);
            }

            Op::Reshape { a } => {
                self.accum(*a, grad);
            }
        }
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Visit flat indices of each softmax lane: rows (axis 1) or columns (axis 0).
fn for_each_lane(r: usize, c: usize, axis: usize, mut f: impl FnMut(&[usize])) {
    let mut lane = Vec::new();
    if axis == 1 {
        for i in 0..r {
            lane.clear();
            lane.extend((0..c).map(|j| i * c + j));
            f(&lane);
        }
    } else {
        for j in 0..c {
            lane.clear();
            lane.extend((0..r).map(|i| i * c + j));
            f(&lane);
        }
    }
}

fn softmax_fwd<S: Scalar>(x: &[S], shape: &[usize], axis: usize, log: bool) -> Vec<S> {
    let (r, c) = rows_cols(shape);
    assert!(axis < 2, "softmax axis must be 0 or 1");
    let mut out = vec![S::ZERO; x.len()];
    for_each_lane(r, c, axis, |lane: &[usize]| {
        let mut max = x[lane[0]];
        for &f in lane {
            max = max.max(x[f]);
        }
        let mut sum = S::ZERO;
        for &f in lane {
            sum += (x[f] - max).exp();
        }
        if log {
            let lse = sum.ln();
            for &f in lane {
                out[f] = x[f] - max - lse;
            }
        } else {
            let inv = S::ONE / sum;
            for &f in lane {
                out[f] = (x[f] - max).exp() * inv;
            }
        }
    });
    out
}

fn gelu_fwd<S: Scalar>(x: S) -> S {
    // tanh approximation
    let c = S::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    half * x * (S::ONE + (c * (x + k * x.powi(3))).tanh())
}

fn gelu_bwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.7978845608028654);
    let k = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let inner = c * (x + k * x.powi(3));
    let t = inner.tanh();
    let sech2 = S::ONE - t * t;
    let d_inner = c * (S::ONE + three * k * x * x);
    half * (S::ONE + t) + half * x * sech2 * d_inner
}
