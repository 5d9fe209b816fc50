use super::conv::{self, ConvGeom};
use super::loss;
use super::norm::{self, BnSaved};
use super::pool;
use super::resize::{self, ResizePlan};
use super::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BmmDims {
    pub batch_a: usize,
    pub batch_b: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub ta: bool,
    pub tb: bool,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias { x: Var, bias: Var, axis: usize },
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    Bmm { a: Var, b: Var, dims: BmmDims },
    ScaleRows { x: Var, s: Var },
    SoftmaxRows(Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<Vec<T>>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Resize { x: Var, plan: ResizePlan },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
    },
    SoftIou {
        probs: Var,
        gt: Vec<T>,
        sums: Vec<(T, T)>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Option<Vec<T>>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
///
/// Only leaves keep their buffers; intermediate gradients are released as the
/// reverse sweep passes them.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        if cfg!(debug_assertions) && inputs.iter().all(|i| self.nodes[i.0].value.is_finite()) {
            assert!(
                data.iter().all(|v| v.is_finite()),
                "non-finite output from {} on finite inputs",
                op_name(&op)
            );
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            value: Tensor {
                shape,
                data,
                requires_grad: needs_grad,
                grad: None,
            },
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> (Vec<usize>, Vec<T>) {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        (va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (shape, data) = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(shape, data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (shape, data) = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(shape, data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (shape, data) = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(shape, data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * c).collect();
        let shape = v.shape().to_vec();
        self.push(shape, data, Op::Scale(a, c), &[a])
    }

    /// Adds `bias` (length `shape[axis]`) broadcast along every other axis.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.value(bias).numel() != shape[axis] {
            return Err(Error::shape("add_bias", &shape, self.shape(bias)));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let b = self.data(bias);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / inner) % extent])
            .collect();
        Ok(self.push(shape, data, Op::AddBias { x, bias, axis }, &[x, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(T::zero())).collect();
        let shape = v.shape().to_vec();
        self.push(shape, data, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| sigmoid(a)).collect();
        let shape = v.shape().to_vec();
        self.push(shape, data, Op::Sigmoid(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum::<T>() / T::lit(v.numel() as f64);
        self.push(vec![1], vec![s], Op::MeanAll(x), &[x])
    }

    /// Plain 2-D matrix product `A[m×k] · B[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        self.bmm(a, b, false, false)
    }

    /// Batched matrix product `op(A) · op(B)` over 2-D or 3-D operands, where
    /// `op` transposes the trailing two axes when the flag is set. A batch
    /// extent of one broadcasts against the other operand.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let split = |s: &[usize]| -> Option<(usize, usize, usize)> {
            match *s {
                [r, c] => Some((1, r, c)),
                [bt, r, c] => Some((bt, r, c)),
                _ => None,
            }
        };
        let ((ba, ra, ca), (bb, rb, cb)) = match (split(&sa), split(&sb)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::shape("bmm", &sa, &sb)),
        };
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        if k != k2 || (ba != bb && ba != 1 && bb != 1) {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let batch = ba.max(bb);
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for (i, c) in out.chunks_mut(m * n).enumerate() {
            let ai = if ba == 1 { 0 } else { i };
            let bi = if bb == 1 { 0 } else { i };
            gemm(
                m,
                k,
                n,
                &da[ai * m * k..(ai + 1) * m * k],
                ta,
                &db[bi * k * n..(bi + 1) * k * n],
                tb,
                c,
                false,
            );
        }
        let shape = if sa.len() == 3 || sb.len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let dims = BmmDims {
            batch_a: ba,
            batch_b: bb,
            m,
            k,
            n,
            ta,
            tb,
        };
        Ok(self.push(shape, out, Op::Bmm { a, b, dims }, &[a, b]))
    }

    /// `y[b,m,l] = x[b,m,l] · s[b,m]`: scales every row of a batch of matrices.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x).to_vec(), self.shape(s));
        let rows: usize = sx[..sx.len().saturating_sub(1)].iter().product();
        if sx.len() < 2 || self.value(s).numel() != rows {
            return Err(Error::shape("scale_rows", &sx, ss));
        }
        let cols = sx[sx.len() - 1];
        let sv = self.data(s);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv[i / cols])
            .collect();
        Ok(self.push(sx, data, Op::ScaleRows { x, s }, &[x, s]))
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().expect("tensor has at least one axis");
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        self.push(shape, data, Op::SoftmaxRows(x), &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    /// Which side of every piecewise branch (ReLU sign, max-pool winner) the
    /// recorded forward took. Two runs with equal signatures are locally the
    /// same smooth function.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => sig.extend(self.data(*x).iter().map(|&v| (v > T::zero()) as usize)),
                Op::MaxPool { argmax, .. } => sig.extend_from_slice(argmax),
                _ => {}
            }
        }
        sig
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(grads, v, self.value(v).numel(), |d| add_into(d, g));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.len(), |d| add_into(d, g));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.len(), |d| {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.data(*a), self.data(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, g.len(), |d| {
                        for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb) {
                            *d += g * y;
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.len(), |d| {
                        for ((d, &g), &x) in d.iter_mut().zip(g).zip(va) {
                            *d += g * x;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.len(), |d| {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c)
                    });
                }
            }
            Op::AddBias { x, bias, axis } => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |d| add_into(d, g));
                }
                if self.wants(*bias) {
                    let shape = self.shape(*x);
                    let inner: usize = shape[axis + 1..].iter().product();
                    let extent = shape[*axis];
                    accumulate(grads, *bias, extent, |d| {
                        for (i, &gv) in g.iter().enumerate() {
                            d[(i / inner) % extent] += gv;
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = self.data(*x);
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        if x > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y * (T::one() - y);
                    }
                });
            }
            Op::Reshape(x) => accumulate(grads, *x, g.len(), |d| add_into(d, g)),
            Op::SumAll(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, n, |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                let gv = g[0] / T::lit(n as f64);
                accumulate(grads, *x, n, |d| d.iter_mut().for_each(|d| *d += gv));
            }
            Op::Bmm { a, b, dims } => self.bmm_backward(*a, *b, *dims, g, grads),
            Op::ScaleRows { x, s } => {
                let cols = *self.shape(*x).last().unwrap();
                let (xv, sv) = (self.data(*x), self.data(*s));
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |d| {
                        for (i, (d, &g)) in d.iter_mut().zip(g).enumerate() {
                            *d += g * sv[i / cols];
                        }
                    });
                }
                if self.wants(*s) {
                    accumulate(grads, *s, sv.len(), |d| {
                        for (i, (&g, &x)) in g.iter().zip(xv).enumerate() {
                            d[i / cols] += g * x;
                        }
                    });
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap();
                accumulate(grads, *x, g.len(), |d| {
                    for ((d, g), y) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for ((d, &g), &y) in d.iter_mut().zip(g).zip(y) {
                            *d += y * (g - dot);
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols,
            } => conv::conv2d_backward(self, *x, *w, *bias, geom, cols, g, grads),
            Op::ConvTranspose2d { x, w, bias, geom } => {
                conv::conv_transpose2d_backward(self, *x, *w, *bias, geom, g, grads)
            }
            Op::MaxPool { x, argmax } => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, n, |d| {
                    for (&gi, &src) in g.iter().zip(argmax) {
                        d[src] += gi;
                    }
                });
            }
            Op::GlobalAvgPool(x) => pool::global_avg_pool_backward(self, *x, g, grads),
            Op::Resize { x, plan } => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, n, |d| resize::backward(plan, g, d));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => norm::batchnorm_backward(self, *x, *gamma, *beta, saved, g, grads),
            Op::SoftIou { probs, gt, sums } => {
                let n = self.value(*probs).numel();
                let p = self.data(*probs);
                accumulate(grads, *probs, n, |d| loss::soft_iou_backward(p, gt, sums, g, d));
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let shape = self.shape(*logits).to_vec();
                accumulate(grads, *logits, probs.len(), |d| {
                    loss::cross_entropy_backward(&shape, targets, weights.as_deref(), probs, g[0], d)
                });
            }
        }
    }

    fn bmm_backward(&self, a: Var, b: Var, dims: BmmDims, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let BmmDims {
            batch_a,
            batch_b,
            m,
            k,
            n,
            ta,
            tb,
        } = dims;
        let batch = batch_a.max(batch_b);
        let (da, db) = (self.data(a), self.data(b));
        if self.wants(a) {
            accumulate(grads, a, batch_a * m * k, |out| {
                for i in 0..batch {
                    let ai = if batch_a == 1 { 0 } else { i };
                    let bi = if batch_b == 1 { 0 } else { i };
                    let gc = &g[i * m * n..(i + 1) * m * n];
                    let bs = &db[bi * k * n..(bi + 1) * k * n];
                    let dst = &mut out[ai * m * k..(ai + 1) * m * k];
                    if ta {
                        gemm(k, n, m, bs, tb, gc, true, dst, true);
                    } else {
                        gemm(m, n, k, gc, false, bs, !tb, dst, true);
                    }
                }
            });
        }
        if self.wants(b) {
            accumulate(grads, b, batch_b * k * n, |out| {
                for i in 0..batch {
                    let ai = if batch_a == 1 { 0 } else { i };
                    let bi = if batch_b == 1 { 0 } else { i };
                    let gc = &g[i * m * n..(i + 1) * m * n];
                    let as_ = &da[ai * m * k..(ai + 1) * m * k];
                    let dst = &mut out[bi * k * n..(bi + 1) * k * n];
                    if tb {
                        gemm(n, m, k, gc, true, as_, ta, dst, true);
                    } else {
                        gemm(k, m, n, as_, !ta, gc, false, dst, true);
                    }
                }
            });
        }
    }
}

pub(crate) fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    v: Var,
    len: usize,
    f: impl FnOnce(&mut [T]),
) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

fn add_into<T: Scalar>(d: &mut [T], g: &[T]) {
    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
}

pub(crate) fn sigmoid<T: Scalar>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddBias { .. } => "add_bias",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Reshape(_) => "reshape",
        Op::SumAll(_) => "sum",
        Op::MeanAll(_) => "mean",
        Op::Bmm { .. } => "bmm",
        Op::ScaleRows { .. } => "scale_rows",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv_transpose2d",
        Op::MaxPool { .. } => "maxpool2d",
        Op::GlobalAvgPool(_) => "global_avg_pool",
        Op::Resize { .. } => "bilinear_resize",
        Op::BatchNorm { .. } => "batchnorm2d",
        Op::SoftIou { .. } => "soft_iou",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.data(out), &[3.0, 4.0, 5.0, 6.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(out), naive_matmul(&[1.0, 2.0], &[3.0, 4.0], 1, 2, 1).as_slice());
        assert_eq!(tape.data(out), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn bmm_transposes_match_naive() {
        let mut tape = Tape::<f64>::new();
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        // A stored 3×2, used transposed as 2×3; B stored 4×3 used transposed as 3×4.
        let av = tape.constant(t(&[3, 2], &a));
        let bv = tape.constant(t(&[4, 3], &b));
        let out = tape.bmm(av, bv, true, true).unwrap();
        let at: Vec<f64> = (0..2).flat_map(|i| (0..3).map(move |p| (i, p))).map(|(i, p)| a[p * 2 + i]).collect();
        let bt: Vec<f64> = (0..3).flat_map(|p| (0..4).map(move |j| (p, j))).map(|(p, j)| b[j * 3 + p]).collect();
        assert_eq!(tape.shape(out), &[2, 4]);
        let expect = naive_matmul(&at, &bt, 2, 3, 4);
        for (x, y) in tape.data(out).iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_and_softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.data(r), &[0.0, 0.0, 2.0]);

        let z = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let s = tape.softmax_rows(z);
        assert_eq!(tape.data(s), &[0.5, 0.5]);

        let big = tape.constant(t(&[1, 2], &[1000.0, 1000.0]));
        let s = tape.softmax_rows(big);
        assert_eq!(tape.data(s), &[0.5, 0.5]);
    }

    #[test]
    fn backward_of_sum_and_half_square() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]).with_grad());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 4]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]).with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_grad());
        let r = tape.relu(x);
        assert!(matches!(tape.backward(r), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn add_bias_broadcasts_over_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 2, 1]));
        let b = tape.constant(t(&[2], &[1.0, 2.0]));
        let y = tape.add_bias(x, b, 1).unwrap();
        assert_eq!(tape.data(y), &[1.0, 1.0, 2.0, 2.0]);
    }
}
