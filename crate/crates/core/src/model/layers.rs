//! Differentiable building blocks of the two-level transformer. Every function
//! works on arbitrary leading batch axes; attention always runs over the
//! second-to-last axis.

use super::params::{EncoderLayer, Linear, Norm};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

pub fn linear<T: Scalar>(tape: &Tape<T>, x: &Var<T>, l: &Linear<Var<T>>) -> Result<Var<T>> {
    let y = tape.matmul(x, &l.weight)?;
    tape.add(&y, &l.bias)
}

pub fn layer_norm<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    n: &Norm<Var<T>>,
    eps: f64,
) -> Result<Var<T>> {
    tape.layer_norm(x, &n.gamma, &n.beta, eps)
}

/// Projects raw patch rows and adds the patch positional embedding.
pub fn embed_patches<T: Scalar>(
    tape: &Tape<T>,
    raw: &Var<T>,
    projection: &Linear<Var<T>>,
    position: &Var<T>,
) -> Result<Var<T>> {
    let x = linear(tape, raw, projection)?;
    tape.add(&x, position)
}

/// Projects raw sub-patch rows and adds the sub-patch positional embedding,
/// shared across patches and indexed by position within the patch.
pub fn embed_subpatches<T: Scalar>(
    tape: &Tape<T>,
    raw: &Var<T>,
    projection: &Linear<Var<T>>,
    position: &Var<T>,
) -> Result<Var<T>> {
    let x = linear(tape, raw, projection)?;
    tape.add(&x, position)
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn self_attention<T: Scalar>(
    tape: &Tape<T>,
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
) -> Result<Var<T>> {
    let rank = q.shape().len();
    if rank < 2 || k.shape().len() != rank || v.shape().len() != rank {
        return Err(Error::Shape {
            op: "self_attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if q.shape()[rank - 1] != k.shape()[rank - 1] {
        return Err(Error::Shape {
            op: "self_attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if k.shape()[rank - 2] != v.shape()[rank - 2] {
        return Err(Error::Shape {
            op: "self_attention",
            lhs: k.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    if k.shape()[..rank - 2] != v.shape()[..rank - 2] {
        return Err(Error::Shape {
            op: "self_attention",
            lhs: k.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    let dk = q.shape()[rank - 1];
    // Keys and values enter every reduction in a canonical order, so
    // permuting the tokens permutes the output rows bit for bit.
    let order = canonical_order(k, v);
    let k = &tape.gather_rows(k, order.clone())?;
    let v = &tape.gather_rows(v, order)?;
    let kt = tape.transpose(k, rank - 2, rank - 1)?;
    let scores = tape.matmul(q, &kt)?;
    let scaled = tape.scale(&scores, T::from_f64(1.0 / (dk as f64).sqrt()))?;
    let weights = tape.softmax(&scaled, rank - 1)?;
    tape.matmul(&weights, v)
}

/// Per batch slice, the row order sorting `(k row, v row)` pairs by value.
fn canonical_order<T: Scalar>(k: &Var<T>, v: &Var<T>) -> Vec<usize> {
    let shape = k.shape();
    let n = shape[shape.len() - 2];
    let (dk, dv) = (shape[shape.len() - 1], v.shape()[v.shape().len() - 1]);
    let (kd, vd) = (k.value().data(), v.value().data());
    let slices = if n == 0 {
        0
    } else {
        k.value().numel() / (n * dk.max(1))
    };
    let cmp = |a: &[T], b: &[T]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    let mut index = Vec::with_capacity(slices * n);
    for s in 0..slices {
        let row_k = |i: usize| &kd[(s * n + i) * dk..(s * n + i + 1) * dk];
        let row_v = |i: usize| &vd[(s * n + i) * dv..(s * n + i + 1) * dv];
        let mut rows: Vec<usize> = (0..n).collect();
        rows.sort_by(|&a, &b| cmp(row_k(a), row_k(b)).then_with(|| cmp(row_v(a), row_v(b))));
        index.extend(rows);
    }
    index
}

/// `[.., n, heads*d] -> [.., heads, n, d]`
fn split_heads<T: Scalar>(tape: &Tape<T>, x: &Var<T>, heads: usize) -> Result<Var<T>> {
    let shape = x.shape();
    let r = shape.len();
    let dim = shape[r - 1];
    let mut split = shape[..r - 1].to_vec();
    split.push(heads);
    split.push(dim / heads);
    let x = tape.reshape(x, &split)?;
    tape.transpose(&x, r - 2, r - 1)
}

/// `[.., heads, n, d] -> [.., n, heads*d]`
fn merge_heads<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
    let r = x.shape().len();
    let x = tape.transpose(x, r - 3, r - 2)?;
    let shape = x.shape();
    let mut merged = shape[..r - 2].to_vec();
    merged.push(shape[r - 2] * shape[r - 1]);
    tape.reshape(&x, &merged)
}

/// Multi-head self-attention: `heads` parallel attention maps of width
/// `dim / heads`, concatenated and projected by `W_O`.
pub fn mpa<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    layer: &EncoderLayer<Var<T>>,
    heads: usize,
) -> Result<Var<T>> {
    let dim = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Dimension("attention input has rank 0".into()))?;
    if heads == 0 || dim % heads != 0 {
        return Err(Error::Config(format!(
            "dimension {dim} is not divisible by {heads} heads"
        )));
    }
    if x.shape().len() < 2 {
        return Err(Error::Dimension(format!(
            "attention input needs a token axis, got shape {:?}",
            x.shape()
        )));
    }
    let q = split_heads(tape, &tape.matmul(x, &layer.wq)?, heads)?;
    let k = split_heads(tape, &tape.matmul(x, &layer.wk)?, heads)?;
    let v = split_heads(tape, &tape.matmul(x, &layer.wv)?, heads)?;
    let attended = self_attention(tape, &q, &k, &v)?;
    let merged = merge_heads(tape, &attended)?;
    tape.matmul(&merged, &layer.wo)
}

/// Options shared by every encoder block of a model.
#[derive(Clone, Copy, Debug)]
pub struct BlockOptions {
    pub heads: usize,
    pub ln_eps: f64,
    pub attn_residual: bool,
}

/// `y = x + MPA(LN1(x)) W_l`, `out = y + MLP(LN2(y))`. With
/// `attn_residual` off the first residual is dropped.
pub fn encoder_block<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    layer: &EncoderLayer<Var<T>>,
    opts: BlockOptions,
) -> Result<Var<T>> {
    let h = layer_norm(tape, x, &layer.norm1, opts.ln_eps)?;
    let attended = mpa(tape, &h, layer, opts.heads)?;
    let projected = tape.matmul(&attended, &layer.wl)?;
    let y = if opts.attn_residual {
        tape.add(x, &projected)?
    } else {
        projected
    };
    let z = layer_norm(tape, &y, &layer.norm2, opts.ln_eps)?;
    let hidden = tape.gelu(&linear(tape, &z, &layer.fc1)?)?;
    let mlp = linear(tape, &hidden, &layer.fc2)?;
    tape.add(&y, &mlp)
}

pub fn encode_stack<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    layers: &[EncoderLayer<Var<T>>],
    opts: BlockOptions,
) -> Result<Var<T>> {
    let mut x = x.clone();
    for layer in layers {
        x = encoder_block(tape, &x, layer, opts)?;
    }
    Ok(x)
}

/// Global encoder over patch tokens `[.., n_patch, D]`.
pub fn global_encode<T: Scalar>(
    tape: &Tape<T>,
    patches: &Var<T>,
    layers: &[EncoderLayer<Var<T>>],
    opts: BlockOptions,
) -> Result<Var<T>> {
    encode_stack(tape, patches, layers, opts)
}

/// Local encoder over sub-patch tokens `[.., n_patch, n_sub, D']`. Attention
/// runs over the `n_sub` axis, so each patch's sub-patches only see each
/// other.
pub fn local_encode<T: Scalar>(
    tape: &Tape<T>,
    subpatches: &Var<T>,
    layers: &[EncoderLayer<Var<T>>],
    opts: BlockOptions,
) -> Result<Var<T>> {
    if subpatches.shape().len() < 3 {
        return Err(Error::Dimension(format!(
            "sub-patch tokens need [.., n_patch, n_sub, dim], got {:?}",
            subpatches.shape()
        )));
    }
    encode_stack(tape, subpatches, layers, opts)
}

/// `Y'_patch + LN(fusion(concat of each patch's sub-patch tokens))`.
pub fn fuse<T: Scalar>(
    tape: &Tape<T>,
    patch_tokens: &Var<T>,
    sub_tokens: &Var<T>,
    fusion: &Linear<Var<T>>,
    norm: &Norm<Var<T>>,
    eps: f64,
) -> Result<Var<T>> {
    let s = sub_tokens.shape();
    let r = s.len();
    if r < 3 || s[..r - 2] != patch_tokens.shape()[..patch_tokens.shape().len() - 1] {
        return Err(Error::Shape {
            op: "fuse",
            lhs: patch_tokens.shape().to_vec(),
            rhs: s.to_vec(),
        });
    }
    let mut flat = s[..r - 2].to_vec();
    flat.push(s[r - 2] * s[r - 1]);
    let grouped = tape.reshape(sub_tokens, &flat)?;
    let projected = linear(tape, &grouped, fusion)?;
    let normed = layer_norm(tape, &projected, norm, eps)?;
    tape.add(patch_tokens, &normed)
}

/// Decoder blocks, projection to `p*p` pixel values, logistic squashing.
pub fn decode<T: Scalar>(
    tape: &Tape<T>,
    encoded: &Var<T>,
    layers: &[EncoderLayer<Var<T>>],
    head: &Linear<Var<T>>,
    opts: BlockOptions,
) -> Result<Var<T>> {
    let y = encode_stack(tape, encoded, layers, opts)?;
    let logits = linear(tape, &y, head)?;
    tape.sigmoid(&logits)
}

/// Differentiable inverse of patchify for a batch: `[B, n_patch, p*p]` to
/// `[B, H, W]`.
pub fn stitch_batch<T: Scalar>(
    tape: &Tape<T>,
    pred: &Var<T>,
    height: usize,
    width: usize,
    p: usize,
) -> Result<Var<T>> {
    let s = pred.shape();
    let (gh, gw) = (height / p, width / p);
    if s.len() != 3
        || !height.is_multiple_of(p)
        || !width.is_multiple_of(p)
        || s[1] != gh * gw
        || s[2] != p * p
    {
        return Err(Error::Shape {
            op: "stitch",
            lhs: s.to_vec(),
            rhs: vec![height, width, p],
        });
    }
    let b = s[0];
    let grid = tape.reshape(pred, &[b, gh, gw, p, p])?;
    let rows = tape.permute(&grid, &[0, 1, 3, 2, 4])?;
    tape.reshape(&rows, &[b, height, width])
}
