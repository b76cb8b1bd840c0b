//! Forward and vector-Jacobian kernels for the closed primitive set.

use std::fmt;
use std::str::FromStr;

use super::{AutodiffError, Tensor};

/// The closed set of differentiable primitives. Anything else is composed
/// from these.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// 2-D matrix product with optional operand transposition.
    MatMul {
        trans_a: bool,
        trans_b: bool,
    },
    /// Elementwise sum; the second operand may be a 1-D row broadcast over
    /// the leading axes of the first.
    Add,
    Mul,
    Scale(f64),
    /// Softmax over the last axis.
    Softmax,
    /// Inputs: `x [.., d]`, `gain [d]`, `bias [d]`.
    LayerNorm {
        eps: f64,
    },
    /// Tanh approximation of GELU.
    Gelu,
    /// Input: `table [vocab, d]`; output `[ids.len(), d]`.
    Embedding {
        ids: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Sum,
    Mean,
    SquaredNorm,
    /// Input: probabilities `[rows, classes]`; output `sum -ln p[row, class]`.
    Nll {
        targets: Vec<(usize, usize)>,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Softmax => "softmax",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Gelu => "gelu",
            Primitive::Embedding { .. } => "embedding",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SquaredNorm => "squared_norm",
            Primitive::Nll { .. } => "nll",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul { .. } | Primitive::Add | Primitive::Mul => Some(2),
            Primitive::LayerNorm { .. } => Some(3),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Name-only view of a primitive, used where kinds arrive as text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    Add,
    Mul,
    Scale,
    Softmax,
    LayerNorm,
    Gelu,
    Embedding,
    Concat,
    Slice,
    Sum,
    Mean,
    SquaredNorm,
    Nll,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 14] = [
        PrimitiveKind::MatMul,
        PrimitiveKind::Add,
        PrimitiveKind::Mul,
        PrimitiveKind::Scale,
        PrimitiveKind::Softmax,
        PrimitiveKind::LayerNorm,
        PrimitiveKind::Gelu,
        PrimitiveKind::Embedding,
        PrimitiveKind::Concat,
        PrimitiveKind::Slice,
        PrimitiveKind::Sum,
        PrimitiveKind::Mean,
        PrimitiveKind::SquaredNorm,
        PrimitiveKind::Nll,
    ];
}

impl FromStr for PrimitiveKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "matmul" => PrimitiveKind::MatMul,
            "add" => PrimitiveKind::Add,
            "mul" | "elementwise_multiply" => PrimitiveKind::Mul,
            "scale" => PrimitiveKind::Scale,
            "softmax" => PrimitiveKind::Softmax,
            "layer_norm" => PrimitiveKind::LayerNorm,
            "gelu" => PrimitiveKind::Gelu,
            "embedding" => PrimitiveKind::Embedding,
            "concat" => PrimitiveKind::Concat,
            "slice" => PrimitiveKind::Slice,
            "sum" => PrimitiveKind::Sum,
            "mean" => PrimitiveKind::Mean,
            "squared_norm" => PrimitiveKind::SquaredNorm,
            "nll" => PrimitiveKind::Nll,
            other => return Err(AutodiffError::UnsupportedOp(other.to_string())),
        })
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// `c = op(a) * op(b) + beta * c` where `a` is stored row-major as `[m, k]`
/// (or `[k, m]` when `a_t`) and `b` as `[k, n]` (or `[n, k]` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every index dgemm touches given these
    // strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::Shape(msg)
}

fn matmul_dims(
    a: &Tensor,
    b: &Tensor,
    trans_a: bool,
    trans_b: bool,
) -> Result<(usize, usize, usize), AutodiffError> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(shape_err(format!(
            "matmul needs 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = if trans_a {
        (a.shape()[1], a.shape()[0])
    } else {
        (a.shape()[0], a.shape()[1])
    };
    let (k2, n) = if trans_b {
        (b.shape()[1], b.shape()[0])
    } else {
        (b.shape()[0], b.shape()[1])
    };
    if k != k2 {
        return Err(shape_err(format!(
            "matmul inner dimensions differ: {:?}{} x {:?}{}",
            a.shape(),
            if trans_a { "^T" } else { "" },
            b.shape(),
            if trans_b { "^T" } else { "" }
        )));
    }
    Ok((m, k, n))
}

/// Split `shape` around `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_arity(prim: &Primitive, n: usize) -> Result<(), AutodiffError> {
    match prim.arity() {
        Some(a) if a != n => Err(shape_err(format!(
            "{} takes {a} input(s), got {n}",
            prim.name()
        ))),
        None if n == 0 => Err(shape_err(format!(
            "{} needs at least one input",
            prim.name()
        ))),
        _ => Ok(()),
    }
}

pub(crate) fn forward(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    check_arity(prim, inputs.len())?;
    match prim {
        Primitive::MatMul { trans_a, trans_b } => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = matmul_dims(a, b, *trans_a, *trans_b)?;
            let mut out = vec![0.0; m * n];
            gemm(
                m,
                k,
                n,
                a.data(),
                *trans_a,
                b.data(),
                *trans_b,
                0.0,
                &mut out,
            );
            Ok(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                Ok(Tensor::from_parts(a.shape().to_vec(), out))
            } else if b.shape().len() == 1 && b.len() == a.last_dim() {
                let d = b.len();
                let bd = b.data();
                let out = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + bd[i % d])
                    .collect();
                Ok(Tensor::from_parts(a.shape().to_vec(), out))
            } else {
                Err(shape_err(format!(
                    "add cannot combine {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )))
            }
        }
        Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(format!(
                    "mul needs equal shapes, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Ok(Tensor::from_parts(a.shape().to_vec(), out))
        }
        Primitive::Scale(c) => {
            let a = inputs[0];
            Ok(Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().map(|x| x * c).collect(),
            ))
        }
        Primitive::Softmax => {
            let a = inputs[0];
            let d = a.last_dim();
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(d) {
                softmax_in_place(row);
            }
            Ok(Tensor::from_parts(a.shape().to_vec(), out))
        }
        Primitive::LayerNorm { eps } => {
            let (x, g, b) = (inputs[0], inputs[1], inputs[2]);
            let d = x.last_dim();
            if g.shape() != [d] || b.shape() != [d] {
                return Err(shape_err(format!(
                    "layer_norm over width {d} got gain {:?} and bias {:?}",
                    g.shape(),
                    b.shape()
                )));
            }
            let mut out = vec![0.0; x.len()];
            for (row, dst) in x.data().chunks(d).zip(out.chunks_mut(d)) {
                let (mean, rstd) = row_stats(row, *eps);
                for j in 0..d {
                    dst[j] = (row[j] - mean) * rstd * g.data()[j] + b.data()[j];
                }
            }
            Ok(Tensor::from_parts(x.shape().to_vec(), out))
        }
        Primitive::Gelu => {
            let a = inputs[0];
            let out = a
                .data()
                .iter()
                .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()))
                .collect();
            Ok(Tensor::from_parts(a.shape().to_vec(), out))
        }
        Primitive::Embedding { ids } => {
            let table = inputs[0];
            if table.shape().len() != 2 {
                return Err(shape_err(format!(
                    "embedding table must be 2-D, got {:?}",
                    table.shape()
                )));
            }
            if ids.is_empty() {
                return Err(shape_err("embedding lookup of zero ids".into()));
            }
            let (v, d) = (table.shape()[0], table.shape()[1]);
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= v {
                    return Err(shape_err(format!(
                        "embedding id {id} outside table of {v} rows"
                    )));
                }
                out.extend_from_slice(table.row(id));
            }
            Ok(Tensor::from_parts(vec![ids.len(), d], out))
        }
        Primitive::Concat { axis } => {
            let first = inputs[0];
            let rank = first.shape().len();
            if *axis >= rank {
                return Err(shape_err(format!("concat axis {axis} on rank {rank}")));
            }
            let mut out_shape = first.shape().to_vec();
            out_shape[*axis] = 0;
            for t in inputs {
                let s = t.shape();
                if s.len() != rank
                    || s.iter()
                        .zip(first.shape())
                        .enumerate()
                        .any(|(i, (x, y))| i != *axis && x != y)
                {
                    return Err(shape_err(format!(
                        "concat along axis {axis}: {:?} incompatible with {:?}",
                        s,
                        first.shape()
                    )));
                }
                out_shape[*axis] += s[*axis];
            }
            let (outer, _, inner) = axis_split(first.shape(), *axis);
            let mut out = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[*axis] * inner;
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Ok(Tensor::from_parts(out_shape, out))
        }
        Primitive::Slice { axis, start, len } => {
            let a = inputs[0];
            if *axis >= a.shape().len() || *len == 0 || start + len > a.shape()[*axis] {
                return Err(shape_err(format!(
                    "slice [{start}, {}) along axis {axis} of {:?}",
                    start + len,
                    a.shape()
                )));
            }
            let (outer, extent, inner) = axis_split(a.shape(), *axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * extent * inner + start * inner;
                out.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[*axis] = *len;
            Ok(Tensor::from_parts(shape, out))
        }
        Primitive::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
        Primitive::Mean => {
            let a = inputs[0];
            Ok(Tensor::scalar(
                a.data().iter().sum::<f64>() / a.len() as f64,
            ))
        }
        Primitive::SquaredNorm => Ok(Tensor::scalar(inputs[0].squared_norm())),
        Primitive::Nll { targets } => {
            let p = inputs[0];
            let c = p.last_dim();
            let rows = p.rows();
            if targets.is_empty() {
                return Err(shape_err("nll with no targets".into()));
            }
            let mut total = 0.0;
            for &(r, k) in targets {
                if r >= rows || k >= c {
                    return Err(shape_err(format!(
                        "nll target ({r}, {k}) outside probabilities {:?}",
                        p.shape()
                    )));
                }
                total -= p.data()[r * c + k].ln();
            }
            Ok(Tensor::scalar(total))
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Vector-Jacobian product: gradients w.r.t. each input for which `needs[i]`
/// is set, given the upstream gradient `g` of the output.
pub(crate) fn backward(
    prim: &Primitive,
    inputs: &[&Tensor],
    output: &Tensor,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    match prim {
        Primitive::MatMul { trans_a, trans_b } => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = matmul_dims(a, b, *trans_a, *trans_b).expect("validated in forward");
            if needs[0] {
                let mut da = vec![0.0; m * k];
                if *trans_a {
                    gemm(k, n, m, b.data(), *trans_b, g, true, 0.0, &mut da);
                } else {
                    gemm(m, n, k, g, false, b.data(), !*trans_b, 0.0, &mut da);
                }
                grads[0] = Some(da);
            }
            if needs[1] {
                let mut db = vec![0.0; k * n];
                if *trans_b {
                    gemm(n, m, k, g, true, a.data(), *trans_a, 0.0, &mut db);
                } else {
                    gemm(k, m, n, a.data(), !*trans_a, g, false, 0.0, &mut db);
                }
                grads[1] = Some(db);
            }
        }
        Primitive::Add => {
            if needs[0] {
                grads[0] = Some(g.to_vec());
            }
            if needs[1] {
                let b = inputs[1];
                if b.len() == g.len() {
                    grads[1] = Some(g.to_vec());
                } else {
                    let d = b.len();
                    let mut db = vec![0.0; d];
                    for row in g.chunks(d) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    grads[1] = Some(db);
                }
            }
        }
        Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if needs[0] {
                grads[0] = Some(g.iter().zip(b.data()).map(|(x, y)| x * y).collect());
            }
            if needs[1] {
                grads[1] = Some(g.iter().zip(a.data()).map(|(x, y)| x * y).collect());
            }
        }
        Primitive::Scale(c) => {
            if needs[0] {
                grads[0] = Some(g.iter().map(|x| x * c).collect());
            }
        }
        Primitive::Softmax => {
            if needs[0] {
                let d = output.last_dim();
                let mut dx = vec![0.0; g.len()];
                for ((y, gy), dst) in output
                    .data()
                    .chunks(d)
                    .zip(g.chunks(d))
                    .zip(dx.chunks_mut(d))
                {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dst[j] = y[j] * (gy[j] - dot);
                    }
                }
                grads[0] = Some(dx);
            }
        }
        Primitive::LayerNorm { eps } => {
            let (x, gain) = (inputs[0], inputs[1]);
            let d = x.last_dim();
            let mut dx = vec![0.0; x.len()];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            let mut xhat = vec![0.0; d];
            let mut dxhat = vec![0.0; d];
            for ((row, gy), dst) in x.data().chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                let (mean, rstd) = row_stats(row, *eps);
                for j in 0..d {
                    xhat[j] = (row[j] - mean) * rstd;
                    dxhat[j] = gy[j] * gain.data()[j];
                    dgain[j] += gy[j] * xhat[j];
                    dbias[j] += gy[j];
                }
                let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                let mean_dxhat_xhat =
                    dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    dst[j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
            if needs[0] {
                grads[0] = Some(dx);
            }
            if needs[1] {
                grads[1] = Some(dgain);
            }
            if needs[2] {
                grads[2] = Some(dbias);
            }
        }
        Primitive::Gelu => {
            if needs[0] {
                let dx = inputs[0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, gy)| {
                        let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        gy * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    })
                    .collect();
                grads[0] = Some(dx);
            }
        }
        Primitive::Embedding { ids } => {
            if needs[0] {
                let table = inputs[0];
                let d = table.shape()[1];
                let mut dt = vec![0.0; table.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[i * d + j];
                    }
                }
                grads[0] = Some(dt);
            }
        }
        Primitive::Concat { axis } => {
            let (outer, _, inner) = axis_split(output.shape(), *axis);
            let total = output.shape()[*axis] * inner;
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let chunk = t.shape()[*axis] * inner;
                if needs[i] {
                    let mut dt = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = o * total + offset;
                        dt.extend_from_slice(&g[base..base + chunk]);
                    }
                    grads[i] = Some(dt);
                }
                offset += chunk;
            }
        }
        Primitive::Slice { axis, start, len } => {
            if needs[0] {
                let a = inputs[0];
                let (outer, extent, inner) = axis_split(a.shape(), *axis);
                let mut da = vec![0.0; a.len()];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = o * extent * inner + start * inner;
                    da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                grads[0] = Some(da);
            }
        }
        Primitive::Sum => {
            if needs[0] {
                grads[0] = Some(vec![g[0]; inputs[0].len()]);
            }
        }
        Primitive::Mean => {
            if needs[0] {
                let n = inputs[0].len();
                grads[0] = Some(vec![g[0] / n as f64; n]);
            }
        }
        Primitive::SquaredNorm => {
            if needs[0] {
                grads[0] = Some(inputs[0].data().iter().map(|x| 2.0 * x * g[0]).collect());
            }
        }
        Primitive::Nll { targets } => {
            if needs[0] {
                let p = inputs[0];
                let c = p.last_dim();
                let mut dp = vec![0.0; p.len()];
                for &(r, k) in targets {
                    let idx = r * c + k;
                    dp[idx] -= g[0] / p.data()[idx];
                }
                grads[0] = Some(dp);
            }
        }
    }
    grads
}
