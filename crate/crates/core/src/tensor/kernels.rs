//! Raw-buffer kernels shared by forward and backward rules.

use super::Scalar;
use crate::error::{Error, Result};

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Batched matrix product layout: `[.., m, k] x [.., k, n]` with the leading
/// batch dimensions broadcast from size 1 or from missing axes.
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    /// For every output batch entry, the matrix index into `a` and `b`.
    pub a_index: Vec<usize>,
    pub b_index: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || Error::Shape {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(err());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let a_batch = &a[..a.len() - 2];
        let b_batch = &b[..b.len() - 2];
        let rank = a_batch.len().max(b_batch.len());
        let pad = |batch: &[usize]| {
            let mut v = vec![1; rank - batch.len()];
            v.extend_from_slice(batch);
            v
        };
        let (pa, pb) = (pad(a_batch), pad(b_batch));
        let mut out_batch = Vec::with_capacity(rank);
        for (&da, &db) in pa.iter().zip(&pb) {
            let d = if da == db || db == 1 {
                da
            } else if da == 1 {
                db
            } else {
                return Err(err());
            };
            out_batch.push(d);
        }
        let total: usize = out_batch.iter().product();
        let sa = strides(&pa);
        let sb = strides(&pb);
        let so = strides(&out_batch);
        let mut a_index = Vec::with_capacity(total);
        let mut b_index = Vec::with_capacity(total);
        for flat in 0..total {
            let (mut ia, mut ib) = (0, 0);
            for d in 0..rank {
                let coord = (flat / so[d]) % out_batch[d];
                if pa[d] > 1 {
                    ia += coord * sa[d];
                }
                if pb[d] > 1 {
                    ib += coord * sb[d];
                }
            }
            a_index.push(ia);
            b_index.push(ib);
        }
        let mut out_shape = out_batch;
        out_shape.push(m);
        out_shape.push(n);
        Ok(MatmulPlan {
            m,
            k,
            n,
            out_shape,
            a_index,
            b_index,
        })
    }

    pub fn forward<T: Scalar>(&self, a: &[T], b: &[T]) -> Vec<T> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut out = vec![T::zero(); self.a_index.len() * m * n];
        if k == 0 {
            return out;
        }
        for (bi, (&ia, &ib)) in self.a_index.iter().zip(&self.b_index).enumerate() {
            let a_blk = &a[ia * m * k..(ia + 1) * m * k];
            let b_blk = &b[ib * k * n..(ib + 1) * k * n];
            let c_blk = &mut out[bi * m * n..(bi + 1) * m * n];
            // SAFETY: block slices have exactly the extents passed below.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    a_blk.as_ptr(),
                    k as isize,
                    1,
                    b_blk.as_ptr(),
                    n as isize,
                    1,
                    T::zero(),
                    c_blk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        out
    }

    /// Accumulates `dA += dC * B^T` per batch entry.
    pub fn grad_a<T: Scalar>(&self, dc: &[T], b: &[T], da: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if m * k == 0 || n == 0 {
            return;
        }
        for (bi, (&ia, &ib)) in self.a_index.iter().zip(&self.b_index).enumerate() {
            let dc_blk = &dc[bi * m * n..(bi + 1) * m * n];
            let b_blk = &b[ib * k * n..(ib + 1) * k * n];
            let da_blk = &mut da[ia * m * k..(ia + 1) * m * k];
            // SAFETY: B^T is read through swapped strides of a k*n block.
            unsafe {
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    dc_blk.as_ptr(),
                    n as isize,
                    1,
                    b_blk.as_ptr(),
                    1,
                    n as isize,
                    T::one(),
                    da_blk.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
        }
    }

    /// Accumulates `dB += A^T * dC` per batch entry.
    pub fn grad_b<T: Scalar>(&self, dc: &[T], a: &[T], db: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if k * n == 0 || m == 0 {
            return;
        }
        for (bi, (&ia, &ib)) in self.a_index.iter().zip(&self.b_index).enumerate() {
            let dc_blk = &dc[bi * m * n..(bi + 1) * m * n];
            let a_blk = &a[ia * m * k..(ia + 1) * m * k];
            let db_blk = &mut db[ib * k * n..(ib + 1) * k * n];
            // SAFETY: A^T is read through swapped strides of an m*k block.
            unsafe {
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    a_blk.as_ptr(),
                    1,
                    k as isize,
                    dc_blk.as_ptr(),
                    n as isize,
                    1,
                    T::one(),
                    db_blk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    }
}

/// How the right operand of a binary elementwise op maps onto the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand's shape is a suffix of the left's; it repeats every
    /// `period` elements.
    Suffix {
        period: usize,
    },
    Scalar,
}

pub(crate) fn broadcast_rule(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.is_empty() || (b.iter().product::<usize>() == 1 && b.iter().all(|&d| d == 1)) {
        return Ok(Broadcast::Scalar);
    }
    if b.len() < a.len() && a[a.len() - b.len()..] == *b {
        return Ok(Broadcast::Suffix {
            period: b.iter().product(),
        });
    }
    Err(Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

pub(crate) fn zip_broadcast<T: Scalar>(
    a: &[T],
    b: &[T],
    rule: Broadcast,
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    match rule {
        Broadcast::Same => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Scalar => {
            let y = b[0];
            a.iter().map(|&x| f(x, y)).collect()
        }
        Broadcast::Suffix { period } => a
            .chunks(period)
            .flat_map(|row| {
                row.iter()
                    .zip(b)
                    .map(|(&x, &y)| f(x, y))
                    .collect::<Vec<_>>()
            })
            .collect(),
    }
}

/// Sums a full-size gradient down to the right operand's shape.
pub(crate) fn reduce_broadcast<T: Scalar>(g: &[T], rule: Broadcast, out_len: usize) -> Vec<T> {
    match rule {
        Broadcast::Same => g.to_vec(),
        Broadcast::Scalar => {
            let mut out = vec![T::zero(); out_len];
            out[0] = g.iter().copied().sum();
            out
        }
        Broadcast::Suffix { period } => {
            let mut out = vec![T::zero(); period];
            for row in g.chunks(period) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out
        }
    }
}

/// Copies `src` (with `shape`) into a new buffer laid out as `shape` permuted
/// by `perm` (output axis `i` is input axis `perm[i]`).
pub(crate) fn permute<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    if rank == 0 || src.is_empty() {
        return src.to_vec();
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut coord = vec![0usize; rank];
    let last = rank - 1;
    let inner_len = out_shape[last];
    let inner_stride = mapped[last];
    loop {
        let base: usize = coord[..last]
            .iter()
            .zip(&mapped[..last])
            .map(|(c, s)| c * s)
            .sum();
        for j in 0..inner_len {
            out.push(src[base + j * inner_stride]);
        }
        // odometer over all axes but the last
        let mut d = last;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            coord[d] += 1;
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Splits `shape` around `axis` into (outer, axis_len, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[at(j)] /= total;
            }
        }
    }
    out
}

/// `dx = y * (dy - sum(dy * y))` along `axis`.
pub(crate) fn softmax_backward<T: Scalar>(
    y: &[T],
    dy: &[T],
    shape: &[usize],
    axis: usize,
) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot += dy[at(j)] * y[at(j)];
            }
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
    dx
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
