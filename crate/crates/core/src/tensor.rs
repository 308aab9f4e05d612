//! Dense row-major N-way tensors of `f64`.
//!
//! Everything else in the crate (SVD, tensor-train cores, layer weights and
//! feature maps) is stored as a [`Tensor`]. Operations are pure: they take
//! tensors by reference and return fresh values.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Dense N-way array, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return shape_err("tensor order must be at least 1");
    }
    if let Some(pos) = shape.iter().position(|&e| e == 0) {
        return shape_err(format!("extent {pos} of {shape:?} is zero"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Tensor whose element at flat (row-major) index `i` is `f(i)`.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        })
    }

    /// Entries drawn i.i.d. from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidArgument(format!("normal std {std}: {e}")))?;
        Self::from_fn(shape, |_| normal.sample(rng))
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(self.strides()).map(|(&i, s)| i * s).sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Same data viewed under `new_shape`; element counts must agree.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshaped(new_shape)
    }

    pub fn into_reshaped(self, new_shape: &[usize]) -> Result<Self> {
        let n = check_shape(new_shape)?;
        if n != self.data.len() {
            return shape_err(format!(
                "cannot reshape {:?} ({} elements) to {new_shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            ));
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    /// Regroup as a `[left_rows, total / left_rows]` matrix.
    pub fn unfold_step(&self, left_rows: usize) -> Result<Self> {
        let total = self.data.len();
        if left_rows == 0 || !total.is_multiple_of(left_rows) {
            return shape_err(format!(
                "left_rows {left_rows} does not divide element count {total}"
            ));
        }
        self.reshape(&[left_rows, total / left_rows])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!(
                "add_assign: shapes {:?} and {:?} differ",
                self.shape, other.shape
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return shape_err(format!(
                "dot: shapes {:?} and {:?} differ",
                self.shape, other.shape
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Bitwise equality of shape and every element.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn as_matrix(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => shape_err(format!("{op}: expected a 2-way tensor, got {s:?}")),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return shape_err(format!("matmul: inner dimensions {k} and {k2} differ"));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Self::new(vec![m, n], out)
    }

    /// Remove extents equal to 1; a tensor of all-1 extents becomes `[1]`.
    pub fn squeeze(&self) -> Self {
        let mut shape: Vec<usize> = self.shape.iter().copied().filter(|&e| e != 1).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Self {
            shape,
            data: self.data.clone(),
        }
    }
}

/// Contract the last mode of `a` `[p, m, q]` with the first mode of
/// `b` `[q, n, s]`, giving `[p, m, n, s]`.
pub fn mode1_contract(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (p, m, q) = match a.shape() {
        &[p, m, q] => (p, m, q),
        s => {
            return shape_err(format!(
                "mode1_contract: left operand must be 3-way, got {s:?}"
            ))
        }
    };
    let (q2, n, s) = match b.shape() {
        &[q2, n, s] => (q2, n, s),
        sh => {
            return shape_err(format!(
                "mode1_contract: right operand must be 3-way, got {sh:?}"
            ))
        }
    };
    if q != q2 {
        return shape_err(format!(
            "mode1_contract: rank mismatch, left has {q}, right has {q2}"
        ));
    }
    // [p*m, q] x [q, n*s]
    let left = a.reshape(&[p * m, q])?;
    let right = b.reshape(&[q, n * s])?;
    left.matmul(&right)?.into_reshaped(&[p, m, n, s])
}

/// Normalized view of a conv problem: weights `[co, ci, kh, kw]`, input
/// `[b, ci, h, w]`, stride applied on both spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        w_shape: &[usize],
        x_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return shape_err("conv: stride must be at least 1");
        }
        let (c_out, c_in, kh, kw, batch, xc, h, w, ph, pw) = match (w_shape, x_shape) {
            (&[co, ci, k], &[b, xc, l]) => (co, ci, 1, k, b, xc, 1, l, 0, padding),
            (&[co, ci, kh, kw], &[b, xc, h, w]) => (co, ci, kh, kw, b, xc, h, w, padding, padding),
            _ => {
                return shape_err(format!(
                    "conv: weight {w_shape:?} and input {x_shape:?} must be (3-way, 3-way) or (4-way, 4-way)"
                ))
            }
        };
        if xc != c_in {
            return shape_err(format!(
                "conv: weight expects {c_in} input channels, input has {xc}"
            ));
        }
        let out_extent = |n: usize, k: usize, p: usize| -> Result<usize> {
            if n + 2 * p < k {
                return shape_err(format!(
                    "conv: extent {n} with padding {p} is smaller than kernel {k}"
                ));
            }
            Ok((n + 2 * p - k) / stride + 1)
        };
        let oh = out_extent(h, kh, ph)?;
        let ow = out_extent(w, kw, pw)?;
        Ok(Self {
            batch,
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            ph,
            pw,
            stride,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self, is_1d: bool) -> Vec<usize> {
        if is_1d {
            vec![self.batch, self.c_out, self.ow]
        } else {
            vec![self.batch, self.c_out, self.oh, self.ow]
        }
    }

    /// Input coordinate touched by output `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, n: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
    }

    /// Output range along one axis whose source index stays in `[0, n)`.
    #[inline]
    fn valid_range(
        k: usize,
        stride: usize,
        pad: usize,
        n: usize,
        out: usize,
    ) -> std::ops::Range<usize> {
        let lo = (0..out).find(|&o| Self::src(o, k, stride, pad, n).is_some());
        match lo {
            None => 0..0,
            Some(lo) => {
                let hi = (lo..out)
                    .rev()
                    .find(|&o| Self::src(o, k, stride, pad, n).is_some())
                    .map_or(lo, |h| h + 1);
                lo..hi
            }
        }
    }
}

/// Cross-correlation of `x` with `w` (no kernel flip), zero padding.
///
/// 2D: `w [C_out, C_in, k, k]`, `x [batch, C_in, H, W]`.
/// 1D: `w [C_out, C_in, k]`, `x [batch, C_in, L]`.
pub fn conv_forward(w: &Tensor, x: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeom::new(w.shape(), x.shape(), stride, padding)?;
    let mut out = vec![0.0; g.batch * g.c_out * g.oh * g.ow];
    let wd = w.data();
    let xd = x.data();
    let s = g.stride;
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let ob = (b * g.c_out + co) * g.oh * g.ow;
            for ci in 0..g.c_in {
                let xb = (b * g.c_in + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    let rows = ConvGeom::valid_range(ki, s, g.ph, g.h, g.oh);
                    for kj in 0..g.kw {
                        let wv = wd[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                        let cols = ConvGeom::valid_range(kj, s, g.pw, g.w, g.ow);
                        for oi in rows.clone() {
                            let ih = oi * s + ki - g.ph;
                            let orow = ob + oi * g.ow;
                            let xrow = xb + ih * g.w;
                            for oj in cols.clone() {
                                let iw = oj * s + kj - g.pw;
                                out[orow + oj] += wv * xd[xrow + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(g.out_shape(w.order() == 3), out)
}

/// Gradient of the weights only; see [`conv_backward`].
pub fn conv_grad_weight(
    w_shape: &[usize],
    x: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(w_shape, x.shape(), stride, padding)?;
    check_grad_out(&g, w_shape.len() == 3, grad_out)?;
    let xd = x.data();
    let gd = grad_out.data();
    let s = g.stride;
    let mut gw = vec![0.0; g.c_out * g.c_in * g.kh * g.kw];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for ki in 0..g.kh {
                let rows = ConvGeom::valid_range(ki, s, g.ph, g.h, g.oh);
                for kj in 0..g.kw {
                    let cols = ConvGeom::valid_range(kj, s, g.pw, g.w, g.ow);
                    let mut acc = 0.0;
                    for b in 0..g.batch {
                        let ob = (b * g.c_out + co) * g.oh * g.ow;
                        let xb = (b * g.c_in + ci) * g.h * g.w;
                        for oi in rows.clone() {
                            let ih = oi * s + ki - g.ph;
                            for oj in cols.clone() {
                                let iw = oj * s + kj - g.pw;
                                acc += gd[ob + oi * g.ow + oj] * xd[xb + ih * g.w + iw];
                            }
                        }
                    }
                    gw[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj] = acc;
                }
            }
        }
    }
    Tensor::new(w_shape.to_vec(), gw)
}

/// Gradient of the input only; see [`conv_backward`].
pub fn conv_grad_input(
    w: &Tensor,
    x_shape: &[usize],
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(w.shape(), x_shape, stride, padding)?;
    check_grad_out(&g, w.order() == 3, grad_out)?;
    let wd = w.data();
    let gd = grad_out.data();
    let s = g.stride;
    let mut gx = vec![0.0; g.batch * g.c_in * g.h * g.w];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let ob = (b * g.c_out + co) * g.oh * g.ow;
            for ci in 0..g.c_in {
                let xb = (b * g.c_in + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    let rows = ConvGeom::valid_range(ki, s, g.ph, g.h, g.oh);
                    for kj in 0..g.kw {
                        let wv = wd[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                        let cols = ConvGeom::valid_range(kj, s, g.pw, g.w, g.ow);
                        for oi in rows.clone() {
                            let ih = oi * s + ki - g.ph;
                            for oj in cols.clone() {
                                let iw = oj * s + kj - g.pw;
                                gx[xb + ih * g.w + iw] += wv * gd[ob + oi * g.ow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), gx)
}

fn check_grad_out(g: &ConvGeom, is_1d: bool, grad_out: &Tensor) -> Result<()> {
    let expected = g.out_shape(is_1d);
    if grad_out.shape() != expected.as_slice() {
        return shape_err(format!(
            "conv backward: grad_out shape {:?} does not match forward output {expected:?}",
            grad_out.shape()
        ));
    }
    Ok(())
}

/// Gradients of `sum(grad_out ⊙ conv_forward(w, x))` with respect to `w` and `x`.
pub fn conv_backward(
    w: &Tensor,
    x: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor)> {
    let gw = conv_grad_weight(w.shape(), x, grad_out, stride, padding)?;
    let gx = conv_grad_input(w, x.shape(), grad_out, stride, padding)?;
    Ok((gw, gx))
}
