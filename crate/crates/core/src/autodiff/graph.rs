use super::tensor::{gemm, Tensor};
use crate::{Error, Result};

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Softplus(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    RowMean(NodeId),
    BroadcastCols(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize),
    GatherBlocks { x: NodeId, index: Vec<usize>, block: usize },
    GaussianLogDensity { x: NodeId, mean: NodeId, log_std: NodeId },
    QuantileHuber { pred: NodeId, target: Tensor, kappa: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape. Parents always precede children, so the
/// backward pass is a single reverse sweep over creation order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like `like` when nothing reached it.
    pub fn take_or_zeros(&mut self, id: NodeId, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(id.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

/// Quantile fraction of atom `j` out of `m`: `(2j + 1) / (2m)`.
pub(crate) fn fraction(j: usize, m: usize) -> f64 {
    (2 * j + 1) as f64 / (2 * m) as f64
}

pub(crate) fn huber(u: f64, kappa: f64) -> f64 {
    let a = u.abs();
    if a <= kappa {
        0.5 * u * u
    } else {
        kappa * (a - 0.5 * kappa)
    }
}

fn huber_grad(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        u
    } else {
        kappa * u.signum()
    }
}

/// Batch mean of the per-row quantile Huber loss `(1/(M·K)) Σ_j Σ_i |τ_j − 1{u<0}|·huber(u)`
/// with `u = target_i − pred_j`.
pub(crate) fn quantile_huber_value(pred: &Tensor, target: &Tensor, kappa: f64) -> f64 {
    let (n, m) = pred.shape();
    let k = target.cols();
    let mut total = 0.0;
    for b in 0..n {
        let (p, t) = (pred.row(b), target.row(b));
        for (j, &theta) in p.iter().enumerate() {
            let tau = fraction(j, m);
            for &y in t {
                let u = y - theta;
                let w = if u < 0.0 { 1.0 - tau } else { tau };
                total += w * huber(u, kappa);
            }
        }
    }
    total / (n * m * k) as f64
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.v(a).map(f);
        self.push(value, op, &[a])
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        assert_eq!(self.v(a).shape(), self.v(b).shape(), "elementwise shape mismatch");
        let value = self.v(a).zip_map(self.v(b), f);
        self.push(value, op, &[a, b])
    }

    /// `x·w + b` with `b` a `1×out` row broadcast over the batch.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (xv, wv, bv) = (self.v(x), self.v(w), self.v(b));
        assert_eq!(xv.cols(), wv.rows(), "linear: input width {} vs weight rows {}", xv.cols(), wv.rows());
        assert_eq!(bv.shape(), (1, wv.cols()), "linear: bias shape");
        let mut out = Tensor::zeros(xv.rows(), wv.cols());
        let cols = wv.cols();
        for r in 0..xv.rows() {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(bv.data());
        }
        gemm(xv, false, wv, false, &mut out, 1.0);
        self.push(out, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.v(a).matmul(self.v(b)).expect("matmul shape");
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.v(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.v(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let t = self.v(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::from_vec(t.rows(), 1, data).expect("row_sum");
        self.push(value, Op::RowSum(a), &[a])
    }

    pub fn row_mean(&mut self, a: NodeId) -> NodeId {
        let t = self.v(a);
        let c = t.cols() as f64;
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum::<f64>() / c).collect();
        let value = Tensor::from_vec(t.rows(), 1, data).expect("row_mean");
        self.push(value, Op::RowMean(a), &[a])
    }

    /// Repeats an `n×1` column `k` times.
    pub fn broadcast_cols(&mut self, a: NodeId, k: usize) -> NodeId {
        let t = self.v(a);
        assert_eq!(t.cols(), 1, "broadcast_cols expects a column");
        let data = t.data().iter().flat_map(|&x| std::iter::repeat(x).take(k)).collect();
        let value = Tensor::from_vec(t.rows(), k, data).expect("broadcast");
        self.push(value, Op::BroadcastCols(a), &[a])
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.v(a), self.v(b));
        assert_eq!(ta.rows(), tb.rows(), "concat_cols row mismatch");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let value = Tensor::from_vec(ta.rows(), ta.cols() + tb.cols(), data).expect("concat");
        self.push(value, Op::ConcatCols(a, b), &[a, b])
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let t = self.v(a);
        assert!(start < end && end <= t.cols(), "slice_cols range");
        let data = (0..t.rows()).flat_map(|r| t.row(r)[start..end].iter().copied()).collect();
        let value = Tensor::from_vec(t.rows(), end - start, data).expect("slice");
        self.push(value, Op::SliceCols(a, start), &[a])
    }

    /// Row `i` of the output is block `index[i]` (of width `block`) of row `i`.
    pub fn gather_blocks(&mut self, x: NodeId, index: &[usize], block: usize) -> NodeId {
        let t = self.v(x);
        assert_eq!(index.len(), t.rows(), "gather_blocks index length");
        let mut data = Vec::with_capacity(t.rows() * block);
        for (r, &k) in index.iter().enumerate() {
            assert!((k + 1) * block <= t.cols(), "gather_blocks index out of range");
            data.extend_from_slice(&t.row(r)[k * block..(k + 1) * block]);
        }
        let value = Tensor::from_vec(t.rows(), block, data).expect("gather");
        self.push(value, Op::GatherBlocks { x, index: index.to_vec(), block }, &[x])
    }

    /// Elementwise `log N(x; mean, exp(log_std)²)`.
    pub fn gaussian_log_density(&mut self, x: NodeId, mean: NodeId, log_std: NodeId) -> NodeId {
        let (tx, tm, ts) = (self.v(x), self.v(mean), self.v(log_std));
        assert_eq!(tx.shape(), tm.shape(), "gaussian_log_density shapes");
        assert_eq!(tx.shape(), ts.shape(), "gaussian_log_density shapes");
        let data = tx
            .data()
            .iter()
            .zip(tm.data())
            .zip(ts.data())
            .map(|((&x, &m), &ls)| {
                let z = (x - m) * (-ls).exp();
                -0.5 * z * z - ls - HALF_LN_TWO_PI
            })
            .collect();
        let value = Tensor::from_vec(tx.rows(), tx.cols(), data).expect("gaussian");
        self.push(value, Op::GaussianLogDensity { x, mean, log_std }, &[x, mean, log_std])
    }

    /// Batch mean of the quantile Huber loss of `pred` (`n×M` atoms at fractions
    /// `(2j+1)/(2M)`) against constant `target` samples (`n×K`).
    pub fn quantile_huber(&mut self, pred: NodeId, target: Tensor, kappa: f64) -> NodeId {
        let p = self.v(pred);
        assert_eq!(p.rows(), target.rows(), "quantile_huber batch mismatch");
        assert!(target.cols() > 0 && p.cols() > 0, "quantile_huber needs atoms and targets");
        let value = Tensor::scalar(quantile_huber_value(p, &target, kappa));
        self.push(value, Op::QuantileHuber { pred, target, kappa }, &[pred])
    }

    /// Reverse sweep from a `1×1` output. Gradients are kept for trainable leaves.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let (rows, cols) = self.v(output).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], id: NodeId) -> Option<&'a mut Tensor> {
        if !self.nodes[id.0].requires_grad {
            return None;
        }
        let (r, c) = self.nodes[id.0].value.shape();
        Some(grads[id.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, f: impl Fn(usize) -> f64) {
        if let Some(s) = self.slot(grads, id) {
            s.data_mut().iter_mut().enumerate().for_each(|(k, x)| *x += f(k));
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.v(*x), self.v(*w));
                if let Some(s) = self.slot(grads, *x) {
                    gemm(g, false, wv, true, s, 1.0);
                }
                if let Some(s) = self.slot(grads, *w) {
                    gemm(xv, true, g, false, s, 1.0);
                }
                if let Some(s) = self.slot(grads, *b) {
                    let cols = g.cols();
                    for r in 0..g.rows() {
                        s.data_mut().iter_mut().zip(&gd[r * cols..(r + 1) * cols]).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                if let Some(s) = self.slot(grads, *a) {
                    gemm(g, false, bv, true, s, 1.0);
                }
                if let Some(s) = self.slot(grads, *b) {
                    gemm(av, true, g, false, s, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |k| gd[k]);
                self.acc(grads, *b, |k| gd[k]);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |k| gd[k]);
                self.acc(grads, *b, |k| -gd[k]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.v(*a).data(), self.v(*b).data());
                self.acc(grads, *a, |k| gd[k] * bv[k]);
                self.acc(grads, *b, |k| gd[k] * av[k]);
            }
            Op::Scale(a, c) => self.acc(grads, *a, |k| c * gd[k]),
            Op::Shift(a) => self.acc(grads, *a, |k| gd[k]),
            Op::Relu(a) => self.acc(grads, *a, |k| if y[k] > 0.0 { gd[k] } else { 0.0 }),
            Op::Tanh(a) => self.acc(grads, *a, |k| gd[k] * (1.0 - y[k] * y[k])),
            Op::Exp(a) => self.acc(grads, *a, |k| gd[k] * y[k]),
            Op::Log(a) => {
                let av = self.v(*a).data();
                self.acc(grads, *a, |k| gd[k] / av[k]);
            }
            Op::Sqrt(a) => {
                self.acc(grads, *a, |k| if y[k] > 0.0 { gd[k] / (2.0 * y[k]) } else { 0.0 })
            }
            Op::Square(a) => {
                let av = self.v(*a).data();
                self.acc(grads, *a, |k| 2.0 * av[k] * gd[k]);
            }
            Op::Softplus(a) => {
                let av = self.v(*a).data();
                self.acc(grads, *a, |k| gd[k] * sigmoid(av[k]));
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.v(*a).data();
                self.acc(grads, *a, |k| if av[k] >= *lo && av[k] <= *hi { gd[k] } else { 0.0 });
            }
            Op::Sum(a) => self.acc(grads, *a, |_| gd[0]),
            Op::Mean(a) => {
                let n = self.v(*a).len() as f64;
                self.acc(grads, *a, |_| gd[0] / n);
            }
            Op::RowSum(a) => {
                let c = self.v(*a).cols();
                self.acc(grads, *a, |k| gd[k / c]);
            }
            Op::RowMean(a) => {
                let c = self.v(*a).cols();
                self.acc(grads, *a, |k| gd[k / c] / c as f64);
            }
            Op::BroadcastCols(a) => {
                let c = g.cols();
                self.acc(grads, *a, |r| gd[r * c..(r + 1) * c].iter().sum());
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.v(*a).cols(), self.v(*b).cols());
                let w = ca + cb;
                self.acc(grads, *a, |k| gd[(k / ca) * w + k % ca]);
                self.acc(grads, *b, |k| gd[(k / cb) * w + ca + k % cb]);
            }
            Op::SliceCols(a, start) => {
                let ca = self.v(*a).cols();
                let w = g.cols();
                let start = *start;
                self.acc(grads, *a, |k| {
                    let (r, c) = (k / ca, k % ca);
                    if c >= start && c < start + w {
                        gd[r * w + c - start]
                    } else {
                        0.0
                    }
                });
            }
            Op::GatherBlocks { x, index, block } => {
                let cx = self.v(*x).cols();
                if let Some(s) = self.slot(grads, *x) {
                    let sd = s.data_mut();
                    for (r, &k) in index.iter().enumerate() {
                        for j in 0..*block {
                            sd[r * cx + k * block + j] += gd[r * block + j];
                        }
                    }
                }
            }
            Op::GaussianLogDensity { x, mean, log_std } => {
                let (xv, mv, sv) = (self.v(*x).data(), self.v(*mean).data(), self.v(*log_std).data());
                // z = (x − μ)/σ: ∂/∂x = −z/σ, ∂/∂μ = z/σ, ∂/∂logσ = z² − 1
                let zs = |k: usize| {
                    let inv = (-sv[k]).exp();
                    ((xv[k] - mv[k]) * inv, inv)
                };
                self.acc(grads, *x, |k| {
                    let (z, inv) = zs(k);
                    -gd[k] * z * inv
                });
                self.acc(grads, *mean, |k| {
                    let (z, inv) = zs(k);
                    gd[k] * z * inv
                });
                self.acc(grads, *log_std, |k| {
                    let (z, _) = zs(k);
                    gd[k] * (z * z - 1.0)
                });
            }
            Op::QuantileHuber { pred, target, kappa } => {
                let p = self.v(*pred);
                let (n, m) = p.shape();
                let kk = target.cols();
                let scale = gd[0] / (n * m * kk) as f64;
                if let Some(s) = self.slot(grads, *pred) {
                    let sd = s.data_mut();
                    for b in 0..n {
                        let t = target.row(b);
                        for j in 0..m {
                            let theta = p.get(b, j);
                            let tau = fraction(j, m);
                            let mut acc = 0.0;
                            for &yv in t {
                                let u = yv - theta;
                                let w = if u < 0.0 { 1.0 - tau } else { tau };
                                acc -= w * huber_grad(u, *kappa);
                            }
                            sd[b * m + j] += scale * acc;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
