use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::kernels::{self, Broadcast, MatmulPlan};
use super::{ensure_finite, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(0);

struct Node<T> {
    tape: usize,
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Handle to a tensor that lives on a [`Tape`]. Cheap to clone.
pub struct Var<T>(Rc<Node<T>>);

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> usize {
        self.0.id
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

enum Op<T> {
    MatMul(Var<T>, Var<T>),
    Add(Var<T>, Var<T>, Broadcast),
    Sub(Var<T>, Var<T>, Broadcast),
    Mul(Var<T>, Var<T>, Broadcast),
    Scale(Var<T>, T),
    Square(Var<T>),
    Reshape(Var<T>),
    Permute(Var<T>, Vec<usize>),
    Concat(Vec<Var<T>>, usize),
    Slice {
        x: Var<T>,
        axis: usize,
        start: usize,
    },
    /// `index[o * n + r]` is the source row of output row `r` in batch `o`.
    GatherRows {
        x: Var<T>,
        index: Vec<usize>,
    },
    Sum(Var<T>),
    Mean(Var<T>),
    Softmax {
        x: Var<T>,
        y: Tensor<T>,
        axis: usize,
    },
    LayerNorm {
        x: Var<T>,
        gamma: Var<T>,
        beta: Var<T>,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var<T>),
    Sigmoid(Var<T>, Tensor<T>),
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<&Var<T>> {
        match self {
            Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) => {
                vec![a, b]
            }
            Op::Scale(x, _)
            | Op::Square(x)
            | Op::Reshape(x)
            | Op::Permute(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Gelu(x)
            | Op::Sigmoid(x, _) => vec![x],
            Op::Slice { x, .. } | Op::Softmax { x, .. } | Op::GatherRows { x, .. } => vec![x],
            Op::Concat(xs, _) => xs.iter().collect(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
        }
    }

    /// Gradient contribution to each input, in `inputs()` order. `None` for
    /// inputs that do not require gradients.
    fn backward(&self, g: &[T]) -> Vec<Option<Vec<T>>> {
        let want = |v: &Var<T>| v.requires_grad();
        match self {
            Op::MatMul(a, b) => {
                let plan = MatmulPlan::new(a.shape(), b.shape()).expect("validated in forward");
                let da = want(a).then(|| {
                    let mut da = vec![T::zero(); a.value().numel()];
                    plan.grad_a(g, b.value().data(), &mut da);
                    da
                });
                let db = want(b).then(|| {
                    let mut db = vec![T::zero(); b.value().numel()];
                    plan.grad_b(g, a.value().data(), &mut db);
                    db
                });
                vec![da, db]
            }
            Op::Add(a, b, rule) => vec![
                want(a).then(|| g.to_vec()),
                want(b).then(|| kernels::reduce_broadcast(g, *rule, b.value().numel())),
            ],
            Op::Sub(a, b, rule) => vec![
                want(a).then(|| g.to_vec()),
                want(b).then(|| {
                    kernels::reduce_broadcast(g, *rule, b.value().numel())
                        .into_iter()
                        .map(|v| -v)
                        .collect()
                }),
            ],
            Op::Mul(a, b, rule) => {
                let da = want(a).then(|| {
                    let scaled = kernels::zip_broadcast(g, b.value().data(), *rule, |x, y| x * y);
                    scaled
                });
                let db = want(b).then(|| {
                    let prod: Vec<T> = g
                        .iter()
                        .zip(a.value().data())
                        .map(|(&x, &y)| x * y)
                        .collect();
                    kernels::reduce_broadcast(&prod, *rule, b.value().numel())
                });
                vec![da, db]
            }
            Op::Scale(_, c) => vec![Some(g.iter().map(|&v| v * *c).collect())],
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                vec![Some(
                    g.iter()
                        .zip(x.value().data())
                        .map(|(&gv, &xv)| two * xv * gv)
                        .collect(),
                )]
            }
            Op::Reshape(_) => vec![Some(g.to_vec())],
            Op::Permute(x, perm) => {
                let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
                vec![Some(kernels::permute(
                    g,
                    &out_shape,
                    &kernels::inverse_permutation(perm),
                ))]
            }
            Op::Concat(xs, axis) => {
                let mut offset = 0;
                let total_axis: usize = xs.iter().map(|x| x.shape()[*axis]).sum();
                xs.iter()
                    .map(|x| {
                        let (outer, len, inner) = kernels::split_axis(x.shape(), *axis);
                        let start = offset;
                        offset += len;
                        want(x).then(|| {
                            let mut out = Vec::with_capacity(x.value().numel());
                            for o in 0..outer {
                                let base = o * total_axis * inner + start * inner;
                                out.extend_from_slice(&g[base..base + len * inner]);
                            }
                            out
                        })
                    })
                    .collect()
            }
            Op::GatherRows { x, index } => {
                let shape = x.shape();
                let (n, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                vec![want(x).then(|| {
                    let mut dx = vec![T::zero(); x.value().numel()];
                    for (dst, &src) in index.iter().enumerate() {
                        let base = (dst / n) * n;
                        let (from, to) = (dst * d, (base + src) * d);
                        for c in 0..d {
                            dx[to + c] += g[from + c];
                        }
                    }
                    dx
                })]
            }
            Op::Slice { x, axis, start } => {
                let (outer, len, inner) = kernels::split_axis(x.shape(), *axis);
                let taken = g.len() / (outer * inner).max(1);
                let mut out = vec![T::zero(); x.value().numel()];
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * taken * inner;
                    out[dst..dst + taken * inner].copy_from_slice(&g[src..src + taken * inner]);
                }
                vec![Some(out)]
            }
            Op::Sum(x) => vec![Some(vec![g[0]; x.value().numel()])],
            Op::Mean(x) => {
                let n = x.value().numel();
                vec![Some(vec![g[0] / T::from_f64(n as f64); n])]
            }
            Op::Softmax { x, y, axis } => vec![Some(kernels::softmax_backward(
                y.data(),
                g,
                x.shape(),
                *axis,
            ))],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *x.shape().last().expect("rank >= 1");
                let gam = gamma.value().data();
                let mut dx = vec![T::zero(); g.len()];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let nd = T::from_f64(d as f64);
                for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = grow[j] * gam[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hrow[j];
                        dgamma[j] += grow[j] * hrow[j];
                        dbeta[j] += grow[j];
                    }
                    let k = inv_std[r] / nd;
                    for j in 0..d {
                        let dh = grow[j] * gam[j];
                        dx[r * d + j] = k * (nd * dh - sum_dh - hrow[j] * sum_dh_h);
                    }
                }
                vec![
                    want(x).then_some(dx),
                    want(gamma).then_some(dgamma),
                    want(beta).then_some(dbeta),
                ]
            }
            Op::Gelu(x) => vec![Some(
                g.iter()
                    .zip(x.value().data())
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                    .collect(),
            )],
            Op::Sigmoid(_, y) => vec![Some(
                g.iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect(),
            )],
        }
    }
}

struct Record<T> {
    out: usize,
    op: Op<T>,
}

/// Records differentiable operations in execution order.
///
/// Ops are recorded only when at least one input requires a gradient, so a
/// tape driven purely by constants behaves as an inference context and frees
/// intermediates as soon as their handles drop.
pub struct Tape<T> {
    id: usize,
    next: Cell<usize>,
    records: RefCell<Vec<Record<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            next: Cell::new(0),
            records: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        let id = self.next.get();
        self.next.set(id + 1);
        Var(Rc::new(Node {
            tape: self.id,
            id,
            value,
            requires_grad,
        }))
    }

    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, false)
    }

    fn check(&self, vars: &[&Var<T>]) -> Result<()> {
        if vars.iter().all(|v| v.0.tape == self.id) {
            Ok(())
        } else {
            Err(Error::Contract(
                "variable belongs to a different tape".into(),
            ))
        }
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var<T>> {
        ensure_finite(name, value.data())?;
        let requires_grad = op.inputs().iter().any(|v| v.requires_grad());
        let out = self.leaf(value, requires_grad);
        if requires_grad {
            self.records.borrow_mut().push(Record { out: out.id(), op });
        }
        Ok(out)
    }

    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check(&[a, b])?;
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        let data = plan.forward(a.value().data(), b.value().data());
        let value = Tensor::new(plan.out_shape.clone(), data)?;
        self.push("matmul", value, Op::MatMul(a.clone(), b.clone()))
    }

    /// Elementwise sum. `b` may equal `a`'s shape, be a trailing suffix of it,
    /// or be a single element.
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check(&[a, b])?;
        let rule = kernels::broadcast_rule("add", a.shape(), b.shape())?;
        let data = kernels::zip_broadcast(a.value().data(), b.value().data(), rule, |x, y| x + y);
        let value = Tensor::new(a.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a.clone(), b.clone(), rule))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check(&[a, b])?;
        let rule = kernels::broadcast_rule("sub", a.shape(), b.shape())?;
        let data = kernels::zip_broadcast(a.value().data(), b.value().data(), rule, |x, y| x - y);
        let value = Tensor::new(a.shape().to_vec(), data)?;
        self.push("sub", value, Op::Sub(a.clone(), b.clone(), rule))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.check(&[a, b])?;
        let rule = kernels::broadcast_rule("mul", a.shape(), b.shape())?;
        let data = kernels::zip_broadcast(a.value().data(), b.value().data(), rule, |x, y| x * y);
        let value = Tensor::new(a.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a.clone(), b.clone(), rule))
    }

    pub fn scale(&self, x: &Var<T>, c: T) -> Result<Var<T>> {
        self.check(&[x])?;
        self.push("scale", x.value().map(|v| v * c), Op::Scale(x.clone(), c))
    }

    pub fn square(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check(&[x])?;
        self.push("square", x.value().map(|v| v * v), Op::Square(x.clone()))
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        self.check(&[x])?;
        let value = x.value().clone().reshaped(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x.clone()))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: &Var<T>, perm: &[usize]) -> Result<Var<T>> {
        self.check(&[x])?;
        let rank = x.shape().len();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm
                .iter()
                .all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::Dimension(format!(
                "invalid permutation {:?} for shape {:?}",
                perm,
                x.shape()
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
        let data = kernels::permute(x.value().data(), x.shape(), perm);
        let value = Tensor::new(out_shape, data)?;
        self.push("permute", value, Op::Permute(x.clone(), perm.to_vec()))
    }

    /// Swaps two axes.
    pub fn transpose(&self, x: &Var<T>, a: usize, b: usize) -> Result<Var<T>> {
        let rank = x.shape().len();
        if a >= rank || b >= rank {
            return Err(Error::Dimension(format!(
                "transpose axes ({a}, {b}) out of range for shape {:?}",
                x.shape()
            )));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    pub fn concat(&self, xs: &[Var<T>], axis: usize) -> Result<Var<T>> {
        let refs: Vec<&Var<T>> = xs.iter().collect();
        self.check(&refs)?;
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::Dimension(format!(
                "concat axis {axis} out of range for rank {rank}"
            )));
        }
        for x in xs {
            let compatible = x.shape().len() == rank
                && x.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
        let (outer, _, inner) = kernels::split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for x in xs {
                let chunk = x.shape()[axis] * inner;
                data.extend_from_slice(&x.value().data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        self.push("concat", value, Op::Concat(xs.to_vec(), axis))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&self, x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        self.check(&[x])?;
        let shape = x.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice {start}..{} on axis {axis} of shape {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = kernels::split_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&x.value().data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        self.push(
            "slice",
            value,
            Op::Slice {
                x: x.clone(),
                axis,
                start,
            },
        )
    }

    /// Reorders rows (second-to-last axis) independently in every batch
    /// slice: output row `r` of slice `o` is input row `index[o * n + r]`.
    pub fn gather_rows(&self, x: &Var<T>, index: Vec<usize>) -> Result<Var<T>> {
        self.check(&[x])?;
        let shape = x.shape();
        if shape.len() < 2 {
            return Err(Error::Dimension(format!(
                "gather_rows needs rank >= 2, got {shape:?}"
            )));
        }
        let (n, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let rows = x.value().numel().checked_div(d).unwrap_or(0);
        if index.len() != rows || index.iter().any(|&i| i >= n) {
            return Err(Error::Dimension(format!(
                "gather_rows index of length {} for shape {shape:?}",
                index.len()
            )));
        }
        let src = x.value().data();
        let mut data = Vec::with_capacity(src.len());
        for (dst, &i) in index.iter().enumerate() {
            let row = (dst / n) * n + i;
            data.extend_from_slice(&src[row * d..(row + 1) * d]);
        }
        let value = Tensor::new(shape.to_vec(), data)?;
        self.push(
            "gather_rows",
            value,
            Op::GatherRows {
                x: x.clone(),
                index,
            },
        )
    }

    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check(&[x])?;
        let total: T = x.value().data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x.clone()))
    }

    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check(&[x])?;
        let n = x.value().numel();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let total: T = x.value().data().iter().copied().sum();
        let value = Tensor::scalar(total / T::from_f64(n as f64));
        self.push("mean", value, Op::Mean(x.clone()))
    }

    /// Max-subtracted exponential normalisation along `axis`.
    pub fn softmax(&self, x: &Var<T>, axis: usize) -> Result<Var<T>> {
        self.check(&[x])?;
        if axis >= x.shape().len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} out of range for shape {:?}",
                x.shape()
            )));
        }
        let data = kernels::softmax(x.value().data(), x.shape(), axis);
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let op = Op::Softmax {
            x: x.clone(),
            y: value.clone(),
            axis,
        };
        self.push("softmax", value, op)
    }

    /// Normalises over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        eps: f64,
    ) -> Result<Var<T>> {
        self.check(&[x, gamma, beta])?;
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Config(format!(
                "layer norm eps must be > 0, got {eps}"
            )));
        }
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::Dimension("layer norm on a rank-0 tensor".into()))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let eps = T::from_f64(eps);
        let nd = T::from_f64(d as f64);
        let rows = x.value().numel() / d.max(1);
        let mut xhat = Vec::with_capacity(x.value().numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.value().numel());
        let (gam, bet) = (gamma.value().data(), beta.value().data());
        for row in x.value().data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / nd;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nd;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat.push(h);
                out.push(h * gam[j] + bet[j]);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
        };
        self.push("layer_norm", value, op)
    }

    /// Gaussian-error linear unit, exact erf form.
    pub fn gelu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check(&[x])?;
        self.push("gelu", x.value().map(kernels::gelu), Op::Gelu(x.clone()))
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        self.check(&[x])?;
        let value = x.value().map(kernels::sigmoid);
        let op = Op::Sigmoid(x.clone(), value.clone());
        self.push("sigmoid", value, op)
    }

    /// Reverse sweep from a scalar `loss`, visiting records in exact reverse
    /// recording order.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        self.check(&[loss])?;
        if loss.value().numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.next.get()];
        if loss.requires_grad() {
            grads[loss.id()] = Some(vec![T::one()]);
        }
        for record in self.records.borrow().iter().rev() {
            let Some(g) = grads[record.out].take() else {
                continue;
            };
            let inputs = record.op.inputs();
            let contributions = record.op.backward(&g);
            grads[record.out] = Some(g);
            for (input, contribution) in inputs.into_iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                if !input.requires_grad() {
                    continue;
                }
                match &mut grads[input.id()] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, v)| *a += *v),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one [`Tape::backward`] sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`, or `None` if the loss does not reach it.
    pub fn get(&self, var: &Var<T>) -> Option<Tensor<T>> {
        let data = self.grads.get(var.id())?.as_ref()?;
        Some(Tensor::new(var.shape().to_vec(), data.clone()).expect("gradient matches shape"))
    }

    /// Gradient of `var`, zeros if unreachable.
    pub fn wrt(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}
