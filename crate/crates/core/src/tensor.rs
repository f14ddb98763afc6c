//! Dense row-major tensors.
//!
//! Broadcasting follows one rule: shapes are right-aligned, missing leading
//! axes count as extent 1, and an extent of 1 expands to match the other
//! operand. Nothing else is implicit.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::Real;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Result shape of broadcasting `a` against `b`, or `None` if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out_shape`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<Real>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: Real) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(value: Real) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Standard-normal fill from `rng`, in row-major order.
    pub fn randn(shape: impl Into<Vec<usize>>, rng: &mut Rng) -> Self {
        let shape = shape.into();
        let data = rng.normal_vec(numel(&shape));
        Tensor { shape, data }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> Real) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn at(&self, index: &[usize]) -> Real {
        debug_assert_eq!(index.len(), self.rank());
        let off: usize = index
            .iter()
            .zip(strides(&self.shape))
            .map(|(i, s)| i * s)
            .sum();
        self.data[off]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing signed zeros and NaN payloads.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: Real) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> Real {
        self.sum() / self.data.len() as Real
    }

    pub fn sq_norm(&self) -> Real {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel(&shape) != self.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub(crate) fn into_reshaped(mut self, shape: Vec<usize>) -> Tensor {
        debug_assert_eq!(numel(&shape), self.len());
        self.shape = shape;
        self
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::invalid(format!(
                "permutation {axes:?} invalid for rank {rank}"
            )));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..self.len() {
            data.push(self.data[off]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::invalid("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    fn zip_broadcast(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(Real, Real) -> Real,
    ) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)
            .ok_or_else(|| Error::shape(op, &self.shape, &other.shape))?;
        let n = numel(&out_shape);
        // Common case: other repeats as a contiguous block over leading axes.
        if out_shape == self.shape && is_suffix_block(&other.shape, &out_shape) {
            let m = other.len();
            let data = self
                .data
                .iter()
                .enumerate()
                .map(|(i, &a)| f(a, other.data[i % m]))
                .collect();
            return Ok(Tensor {
                shape: out_shape,
                data,
            });
        }
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let rank = out_shape.len();
        let mut idx = vec![0usize; rank];
        let (mut oa, mut ob) = (0usize, 0usize);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(self.data[oa], other.data[ob]));
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                oa += sa[ax];
                ob += sb[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                oa -= sa[ax] * out_shape[ax];
                ob -= sb[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "mul", |a, b| a * b)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sums broadcast axes away so the result has shape `target`.
    /// Inverse bookkeeping of broadcasting, used by the gradient engine.
    pub fn sum_to_shape(&self, target: &[usize]) -> Result<Tensor> {
        if self.shape == target {
            return Ok(self.clone());
        }
        match broadcast_shape(target, &self.shape) {
            Some(s) if s == self.shape => {}
            _ => return Err(Error::shape("sum_to_shape", &self.shape, target)),
        }
        let mut out = vec![0.0 as Real; numel(target)];
        if is_suffix_block(target, &self.shape) {
            let m = out.len();
            for (i, &v) in self.data.iter().enumerate() {
                out[i % m] += v;
            }
        } else {
            let st = broadcast_strides(target, &self.shape);
            let rank = self.rank();
            let mut idx = vec![0usize; rank];
            let mut ot = 0usize;
            for &v in &self.data {
                out[ot] += v;
                for ax in (0..rank).rev() {
                    idx[ax] += 1;
                    ot += st[ax];
                    if idx[ax] < self.shape[ax] {
                        break;
                    }
                    ot -= st[ax] * self.shape[ax];
                    idx[ax] = 0;
                }
            }
        }
        Ok(Tensor {
            shape: target.to_vec(),
            data: out,
        })
    }

    /// Batched matrix product over the two trailing axes; leading axes
    /// broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || rb < 2 || self.shape[ra - 1] != other.shape[rb - 2] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (p, q, r) = (self.shape[ra - 2], self.shape[ra - 1], other.shape[rb - 1]);
        if rb == 2 {
            // Flatten all leading axes of `self` into rows.
            let rows = self.len() / q;
            let data = gemm(&self.data, &other.data, rows, q, r);
            let mut shape = self.shape.clone();
            shape[ra - 1] = r;
            return Ok(Tensor { shape, data });
        }
        let batch_a = &self.shape[..ra - 2];
        let batch_b = &other.shape[..rb - 2];
        let batch = broadcast_shape(batch_a, batch_b)
            .ok_or_else(|| Error::shape("matmul", &self.shape, &other.shape))?;
        let sa = broadcast_strides(batch_a, &batch);
        let sb = broadcast_strides(batch_b, &batch);
        let nb = numel(&batch);
        let mut data = vec![0.0 as Real; nb * p * r];
        let mut idx = vec![0usize; batch.len()];
        let (mut oa, mut ob) = (0usize, 0usize);
        for bi in 0..nb {
            let a = &self.data[oa * p * q..(oa + 1) * p * q];
            let b = &other.data[ob * q * r..(ob + 1) * q * r];
            gemm_into(a, b, &mut data[bi * p * r..(bi + 1) * p * r], p, q, r);
            for ax in (0..batch.len()).rev() {
                idx[ax] += 1;
                oa += sa[ax];
                ob += sb[ax];
                if idx[ax] < batch[ax] {
                    break;
                }
                oa -= sa[ax] * batch[ax];
                ob -= sb[ax] * batch[ax];
                idx[ax] = 0;
            }
        }
        let mut shape = batch;
        shape.extend([p, r]);
        Ok(Tensor { shape, data })
    }

    /// Numerically stable softmax along `axis` (max subtracted first).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.split_axis(axis)?;
        let mut data = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut max = Real::NEG_INFINITY;
                for k in 0..n {
                    max = max.max(data[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..n {
                    let e = (data[base + k * inner] - max).exp();
                    data[base + k * inner] = e;
                    sum += e;
                }
                for k in 0..n {
                    data[base + k * inner] /= sum;
                }
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub(crate) fn split_axis(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        Ok((outer, self.shape[axis], inner))
    }

    /// Sum over `axes`, keeping them as extent-1 axes.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let mut target = self.shape.clone();
        for &a in axes {
            if a >= self.rank() {
                return Err(Error::invalid(format!("axis {a} out of range")));
            }
            target[a] = 1;
        }
        self.sum_to_shape(&target)
    }

    /// Mean over `axes`, keeping them as extent-1 axes.
    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let s = self.sum_axes(axes)?;
        let count = self.len() / s.len();
        Ok(s.scale(1.0 / count as Real))
    }

    fn spatial_dims(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        if self.rank() < 2 {
            return Err(Error::invalid(format!("{op} needs rank >= 2")));
        }
        let (h, w) = (self.shape[0], self.shape[1]);
        Ok((h, w, numel(&self.shape[2..])))
    }

    /// 2x2 average pooling over the two leading axes `[H, W, ...]`.
    pub fn avg_pool2x2(&self) -> Result<Tensor> {
        let (h, w, rest) = self.spatial_dims("avg_pool2x2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!(
                "avg_pool2x2 needs even spatial extents, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut data = vec![0.0 as Real; ho * wo * rest];
        for y in 0..ho {
            for x in 0..wo {
                let dst = &mut data[(y * wo + x) * rest..(y * wo + x + 1) * rest];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let s = ((2 * y + dy) * w + 2 * x + dx) * rest;
                    for (d, v) in dst.iter_mut().zip(&self.data[s..s + rest]) {
                        *d += v;
                    }
                }
                for d in dst.iter_mut() {
                    *d *= 0.25;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[0] = ho;
        shape[1] = wo;
        Ok(Tensor { shape, data })
    }

    /// Nearest-neighbour 2x upsampling over the two leading axes.
    pub fn upsample2x(&self) -> Result<Tensor> {
        let (h, w, rest) = self.spatial_dims("upsample2x")?;
        let (ho, wo) = (2 * h, 2 * w);
        let mut data = Vec::with_capacity(ho * wo * rest);
        for y in 0..ho {
            for x in 0..wo {
                let s = ((y / 2) * w + x / 2) * rest;
                data.extend_from_slice(&self.data[s..s + rest]);
            }
        }
        let mut shape = self.shape.clone();
        shape[0] = ho;
        shape[1] = wo;
        Ok(Tensor { shape, data })
    }

    fn check_depthwise(&self, k: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let (h, w, rest) = self.spatial_dims("depthwise_conv3x3")?;
        let c = *self.shape.last().expect("rank >= 2");
        if self.rank() < 3 || k.shape != [3, 3, c] {
            return Err(Error::shape("depthwise_conv3x3", &self.shape, &k.shape));
        }
        Ok((h, w, rest, c))
    }

    /// Zero-padded 3x3 convolution over the leading `[H, W]` axes, one
    /// kernel per channel of the last axis. `k` is `[3, 3, C]` and tap
    /// `k[i][j]` reads input offset `(i - 1, j - 1)`.
    pub fn depthwise_conv3x3(&self, k: &Tensor) -> Result<Tensor> {
        let (h, w, rest, c) = self.check_depthwise(k)?;
        let mut data = vec![0.0 as Real; self.len()];
        for y in 0..h {
            for x in 0..w {
                let dst = &mut data[(y * w + x) * rest..(y * w + x + 1) * rest];
                for i in 0..3 {
                    for j in 0..3 {
                        let (sy, sx) = (y as isize + i as isize - 1, x as isize + j as isize - 1);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let src = &self.data[(sy as usize * w + sx as usize) * rest..][..rest];
                        let taps = &k.data[(i * 3 + j) * c..][..c];
                        for (b, (d, v)) in dst.iter_mut().zip(src).enumerate() {
                            *d += taps[b % c] * v;
                        }
                    }
                }
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Gradient of `sum(g * depthwise_conv3x3(x, k))` with respect to `k`,
    /// where `self` is `x`.
    pub(crate) fn depthwise_kernel_grad(&self, g: &Tensor) -> Result<Tensor> {
        let k0 = Tensor::zeros([3, 3, *self.shape.last().unwrap_or(&1)]);
        let (h, w, rest, c) = self.check_depthwise(&k0)?;
        let mut out = k0.data;
        for y in 0..h {
            for x in 0..w {
                let gb = &g.data[(y * w + x) * rest..][..rest];
                for i in 0..3 {
                    for j in 0..3 {
                        let (sy, sx) = (y as isize + i as isize - 1, x as isize + j as isize - 1);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let src = &self.data[(sy as usize * w + sx as usize) * rest..][..rest];
                        let taps = &mut out[(i * 3 + j) * c..][..c];
                        for (b, (gv, v)) in gb.iter().zip(src).enumerate() {
                            taps[b % c] += gv * v;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![3, 3, c], out)
    }

    /// The kernel rotated by 180 degrees; convolving a gradient with it
    /// gives the input gradient.
    pub(crate) fn flip3x3(&self) -> Tensor {
        let c = self.shape[2];
        let mut data = vec![0.0 as Real; self.len()];
        for i in 0..3 {
            for j in 0..3 {
                data[(i * 3 + j) * c..][..c]
                    .copy_from_slice(&self.data[((2 - i) * 3 + 2 - j) * c..][..c]);
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }
}

/// True when `small` (rank-promoted) is all ones on a leading prefix and
/// equal to `big` afterwards, so element `i` of `big` maps to `i % len`.
fn is_suffix_block(small: &[usize], big: &[usize]) -> bool {
    let offset = big.len() - small.len();
    let mut in_suffix = false;
    for i in 0..big.len() {
        let d = if i < offset { 1 } else { small[i - offset] };
        if in_suffix {
            if d != big[i] {
                return false;
            }
        } else if d != 1 || big[i] == 1 {
            if d != big[i] {
                return false;
            }
            in_suffix = true;
        }
    }
    true
}

fn gemm(a: &[Real], b: &[Real], p: usize, q: usize, r: usize) -> Vec<Real> {
    let mut out = vec![0.0 as Real; p * r];
    gemm_into(a, b, &mut out, p, q, r);
    out
}

/// `out[p,r] += a[p,q] * b[q,r]`, i-k-j order.
fn gemm_into(a: &[Real], b: &[Real], out: &mut [Real], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}
