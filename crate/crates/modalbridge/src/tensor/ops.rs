//! Forward kernels and the differentiable operation surface of [`GradGraph`].
//!
//! Kernels are plain functions over slices. Parallel loops are always over
//! independent output elements, so enabling rayon never changes results.

use super::graph::{GradGraph, OpKind};
use super::{numel_of, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

pub(crate) const COSINE_EPS: f32 = 1e-8;

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

/// Numpy-style broadcast of two shapes (trailing dimensions aligned).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}")));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Row-major strides, with stride 0 on broadcast (size-1) dimensions after
/// left-padding `shape` to `rank` dimensions.
pub(crate) fn broadcast_strides_for(shape: &[usize], rank: usize) -> Vec<usize> {
    broadcast_strides(shape, rank)
}

fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let offset = rank - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn binary_broadcast(
    a: &[f32],
    a_shape: &[usize],
    b: &[f32],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f32, f32) -> f32 + Sync,
) -> Vec<f32> {
    let n = numel_of(out_shape);
    if a_shape == b_shape {
        let mut out = vec![0.0; n];
        parallel::fill_indexed(&mut out, |i| f(a[i], b[i]));
        return out;
    }
    let rank = out_shape.len();
    let sa = broadcast_strides(a_shape, rank);
    let sb = broadcast_strides(b_shape, rank);
    let dims = out_shape.to_vec();
    let mut out = vec![0.0; n];
    parallel::fill_indexed(&mut out, |flat| {
        let mut rem = flat;
        let mut ia = 0;
        let mut ib = 0;
        for d in (0..rank).rev() {
            let c = rem % dims[d];
            rem /= dims[d];
            ia += c * sa[d];
            ib += c * sb[d];
        }
        f(a[ia], b[ib])
    });
    out
}

/// Sum `grad` (of shape `grad_shape`) down to `target_shape` by reducing the
/// broadcast dimensions. Inverse of broadcasting in the backward pass.
pub(crate) fn reduce_to_shape(grad: &[f32], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f32> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let rank = grad_shape.len();
    let strides = broadcast_strides(target_shape, rank);
    let mut out = vec![0.0f32; numel_of(target_shape)];
    for (flat, &g) in grad.iter().enumerate() {
        let mut rem = flat;
        let mut it = 0;
        for d in (0..rank).rev() {
            let c = rem % grad_shape[d];
            rem /= grad_shape[d];
            it += c * strides[d];
        }
        out[it] += g;
    }
    out
}

// ---------------------------------------------------------------------------
// Matmul kernels
// ---------------------------------------------------------------------------

pub(crate) fn matmul_mat(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    parallel::for_each_chunk(&mut out, n, |i, row| {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    });
    out
}

pub(crate) fn matmul_vec(a: &[f32], v: &[f32], m: usize, k: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m];
    parallel::fill_indexed(&mut out, |i| {
        let row = &a[i * k..(i + 1) * k];
        row.iter().zip(v).map(|(&x, &y)| x * y).sum()
    });
    out
}

// ---------------------------------------------------------------------------
// Conv3d kernels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv3dDims {
    pub c_in: usize,
    pub input: [usize; 3],
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

pub(crate) fn conv3d_dims(
    op: &'static str,
    x_shape: &[usize],
    w_shape: &[usize],
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Conv3dDims> {
    if x_shape.len() != 4 {
        return Err(Error::shape(op, format!("input must be rank 4 [C,D,H,W], got {x_shape:?}")));
    }
    if w_shape.len() != 5 {
        return Err(Error::shape(op, format!("kernel must be rank 5 [Co,Ci,kd,kh,kw], got {w_shape:?}")));
    }
    if x_shape[0] != w_shape[1] {
        return Err(Error::shape(
            op,
            format!("input channels {} != kernel channels {} (input {x_shape:?}, kernel {w_shape:?})", x_shape[0], w_shape[1]),
        ));
    }
    if stride.iter().any(|&s| s == 0) {
        return Err(Error::shape(op, "stride must be positive".to_string()));
    }
    let mut output = [0usize; 3];
    for d in 0..3 {
        let padded = x_shape[1 + d] + 2 * padding[d];
        let k = w_shape[2 + d];
        if padded < k {
            return Err(Error::shape(
                op,
                format!("kernel {:?} larger than padded input (input {x_shape:?}, padding {padding:?})", &w_shape[2..]),
            ));
        }
        output[d] = (padded - k) / stride[d] + 1;
    }
    Ok(Conv3dDims {
        c_in: x_shape[0],
        input: [x_shape[1], x_shape[2], x_shape[3]],
        c_out: w_shape[0],
        kernel: [w_shape[2], w_shape[3], w_shape[4]],
        stride,
        padding,
        output,
    })
}

/// Output positions `o` with `0 <= o*stride + k - pad < extent`, as `lo..hi`.
fn valid_out_range(k: usize, pad: usize, stride: usize, extent: usize, out_extent: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k + stride - 1) / stride } else { 0 };
    let hi_num = extent + pad;
    if hi_num <= k {
        return (0, 0);
    }
    let hi = ((hi_num - 1 - k) / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

pub(crate) fn conv3d_forward(x: &[f32], w: &[f32], d: &Conv3dDims) -> Vec<f32> {
    let [id_, ih, iw] = d.input;
    let [od, oh, ow] = d.output;
    let [kd, kh, kw] = d.kernel;
    let [sd, sh, sw] = d.stride;
    let [pd, ph, pw] = d.padding;
    let out_per_ch = od * oh * ow;
    let in_per_ch = id_ * ih * iw;
    let w_per_co = d.c_in * kd * kh * kw;

    let mut out = vec![0.0f32; d.c_out * out_per_ch];
    parallel::for_each_chunk(&mut out, out_per_ch, |co, chunk| {
        for ci in 0..d.c_in {
            let xch = &x[ci * in_per_ch..(ci + 1) * in_per_ch];
            for zd in 0..kd {
                let (d_lo, d_hi) = valid_out_range(zd, pd, sd, id_, od);
                for zh in 0..kh {
                    let (h_lo, h_hi) = valid_out_range(zh, ph, sh, ih, oh);
                    for zw in 0..kw {
                        let (w_lo, w_hi) = valid_out_range(zw, pw, sw, iw, ow);
                        let wv = w[co * w_per_co + ci * kd * kh * kw + zd * kh * kw + zh * kw + zw];
                        for o_d in d_lo..d_hi {
                            let i_d = o_d * sd + zd - pd;
                            for o_h in h_lo..h_hi {
                                let i_h = o_h * sh + zh - ph;
                                let orow = (o_d * oh + o_h) * ow;
                                let irow = (i_d * ih + i_h) * iw;
                                for o_w in w_lo..w_hi {
                                    let i_w = o_w * sw + zw - pw;
                                    chunk[orow + o_w] += wv * xch[irow + i_w];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv3d_backward_input(gout: &[f32], w: &[f32], d: &Conv3dDims) -> Vec<f32> {
    let [id_, ih, iw] = d.input;
    let [od, oh, ow] = d.output;
    let [kd, kh, kw] = d.kernel;
    let [sd, sh, sw] = d.stride;
    let [pd, ph, pw] = d.padding;
    let out_per_ch = od * oh * ow;
    let in_per_ch = id_ * ih * iw;
    let w_per_co = d.c_in * kd * kh * kw;

    let mut gin = vec![0.0f32; d.c_in * in_per_ch];
    parallel::for_each_chunk(&mut gin, in_per_ch, |ci, chunk| {
        for co in 0..d.c_out {
            let gch = &gout[co * out_per_ch..(co + 1) * out_per_ch];
            for zd in 0..kd {
                let (d_lo, d_hi) = valid_out_range(zd, pd, sd, id_, od);
                for zh in 0..kh {
                    let (h_lo, h_hi) = valid_out_range(zh, ph, sh, ih, oh);
                    for zw in 0..kw {
                        let (w_lo, w_hi) = valid_out_range(zw, pw, sw, iw, ow);
                        let wv = w[co * w_per_co + ci * kd * kh * kw + zd * kh * kw + zh * kw + zw];
                        for o_d in d_lo..d_hi {
                            let i_d = o_d * sd + zd - pd;
                            for o_h in h_lo..h_hi {
                                let i_h = o_h * sh + zh - ph;
                                let grow = (o_d * oh + o_h) * ow;
                                let irow = (i_d * ih + i_h) * iw;
                                for o_w in w_lo..w_hi {
                                    let i_w = o_w * sw + zw - pw;
                                    chunk[irow + i_w] += wv * gch[grow + o_w];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gin
}

pub(crate) fn conv3d_backward_weight(gout: &[f32], x: &[f32], d: &Conv3dDims) -> Vec<f32> {
    let [id_, ih, iw] = d.input;
    let [od, oh, ow] = d.output;
    let [kd, kh, kw] = d.kernel;
    let [sd, sh, sw] = d.stride;
    let [pd, ph, pw] = d.padding;
    let out_per_ch = od * oh * ow;
    let in_per_ch = id_ * ih * iw;
    let w_per_co = d.c_in * kd * kh * kw;

    let mut gw = vec![0.0f32; d.c_out * w_per_co];
    parallel::for_each_chunk(&mut gw, w_per_co, |co, chunk| {
        let gch = &gout[co * out_per_ch..(co + 1) * out_per_ch];
        for ci in 0..d.c_in {
            let xch = &x[ci * in_per_ch..(ci + 1) * in_per_ch];
            for zd in 0..kd {
                let (d_lo, d_hi) = valid_out_range(zd, pd, sd, id_, od);
                for zh in 0..kh {
                    let (h_lo, h_hi) = valid_out_range(zh, ph, sh, ih, oh);
                    for zw in 0..kw {
                        let (w_lo, w_hi) = valid_out_range(zw, pw, sw, iw, ow);
                        let mut acc = 0.0f32;
                        for o_d in d_lo..d_hi {
                            let i_d = o_d * sd + zd - pd;
                            for o_h in h_lo..h_hi {
                                let i_h = o_h * sh + zh - ph;
                                let grow = (o_d * oh + o_h) * ow;
                                let irow = (i_d * ih + i_h) * iw;
                                for o_w in w_lo..w_hi {
                                    let i_w = o_w * sw + zw - pw;
                                    acc += gch[grow + o_w] * xch[irow + i_w];
                                }
                            }
                        }
                        chunk[ci * kd * kh * kw + zd * kh * kw + zh * kw + zw] = acc;
                    }
                }
            }
        }
    });
    gw
}

// ---------------------------------------------------------------------------
// Pooling kernels
// ---------------------------------------------------------------------------

pub(crate) fn maxpool3d_forward(x: &[f32], d: &Conv3dDims) -> (Vec<f32>, Vec<u32>) {
    let [id_, ih, iw] = d.input;
    let [od, oh, ow] = d.output;
    let [kd, kh, kw] = d.kernel;
    let [sd, sh, sw] = d.stride;
    let out_per_ch = od * oh * ow;
    let in_per_ch = id_ * ih * iw;
    let channels = d.c_in;

    let mut out = vec![0.0f32; channels * out_per_ch];
    let mut argmax = vec![0u32; channels * out_per_ch];
    // Pooling never pads; every window lies fully inside the input.
    for c in 0..channels {
        let xch = &x[c * in_per_ch..(c + 1) * in_per_ch];
        for o_d in 0..od {
            for o_h in 0..oh {
                for o_w in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for zd in 0..kd {
                        let i_d = o_d * sd + zd;
                        for zh in 0..kh {
                            let i_h = o_h * sh + zh;
                            for zw in 0..kw {
                                let i_w = o_w * sw + zw;
                                let idx = (i_d * ih + i_h) * iw + i_w;
                                let v = xch[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let oidx = c * out_per_ch + (o_d * oh + o_h) * ow + o_w;
                    out[oidx] = best;
                    argmax[oidx] = (c * in_per_ch + best_idx) as u32;
                }
            }
        }
    }
    (out, argmax)
}

// ---------------------------------------------------------------------------
// Softmax / reductions
// ---------------------------------------------------------------------------

/// Iterate (outer, inner) so that axis elements of a row-major tensor sit at
/// `base + j*inner_stride` for `j` in `0..axis_len`.
pub(crate) fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, axis_len, inner)
}

pub(crate) fn softmax_axis(x: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let mut out = vec![0.0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f32::NEG_INFINITY;
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = 0.0f32;
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                out[base + j * inner] /= sum;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// GradGraph operation surface
// ---------------------------------------------------------------------------

impl GradGraph {
    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        kind: OpKind,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f32, f32) -> f32 + Sync,
    ) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        let out_shape = broadcast_shape(op_name, &sa, &sb)?;
        let data = binary_broadcast(&a.data(), &sa, &b.data(), &sb, &out_shape, f);
        Ok(self.record(kind, &[a, b], out_shape, data))
    }

    /// Elementwise sum, with numpy-style broadcasting.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("add", OpKind::Add, a, b, |x, y| x + y)
    }

    /// Elementwise difference, with numpy-style broadcasting.
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("sub", OpKind::Sub, a, b, |x, y| x - y)
    }

    /// Elementwise product, with numpy-style broadcasting.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary_elementwise("mul", OpKind::Mul, a, b, |x, y| x * y)
    }

    /// Matrix product. `[m,k] x [k,n] -> [m,n]`, or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => {
                let data = matmul_mat(&a.data(), &b.data(), *m, *k, *n);
                Ok(self.record(OpKind::Matmul, &[a, b], vec![*m, *n], data))
            }
            ([m, k], [k2]) if k == k2 => {
                let data = matmul_vec(&a.data(), &b.data(), *m, *k);
                Ok(self.record(OpKind::Matmul, &[a, b], vec![*m], data))
            }
            _ => Err(Error::shape(
                "matmul",
                format!("cannot contract {sa:?} with {sb:?}"),
            )),
        }
    }

    /// 3D convolution over `[C,D,H,W]` input with `[Co,Ci,kd,kh,kw]` kernel,
    /// zero padding and per-dimension stride/padding.
    pub fn conv3d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Tensor> {
        let dims = conv3d_dims("conv3d", &x.shape(), &w.shape(), stride, padding)?;
        let data = conv3d_forward(&x.data(), &w.data(), &dims);
        let out_shape = vec![dims.c_out, dims.output[0], dims.output[1], dims.output[2]];
        Ok(self.record(OpKind::Conv3d { dims }, &[x, w], out_shape, data))
    }

    /// Rectified linear unit.
    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        let data: Vec<f32> = x.data().iter().map(|&v| v.max(0.0)).collect();
        Ok(self.record(OpKind::Relu, &[x], x.shape(), data))
    }

    /// Mean over one axis. The axis is removed; a rank-0 result becomes `[1]`.
    pub fn mean_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let shape = x.shape();
        check_axis("mean_axis", &shape, axis)?;
        let (out_shape, data) = reduce_axis(&x.data(), &shape, axis, true);
        Ok(self.record(OpKind::MeanAxis { axis }, &[x], out_shape, data))
    }

    /// Sum over one axis. The axis is removed; a rank-0 result becomes `[1]`.
    pub fn sum_axis(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let shape = x.shape();
        check_axis("sum_axis", &shape, axis)?;
        let (out_shape, data) = reduce_axis(&x.data(), &shape, axis, false);
        Ok(self.record(OpKind::SumAxis { axis }, &[x], out_shape, data))
    }

    /// Copying reshape to a new shape with the same element count.
    pub fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        if numel_of(&shape) != x.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} ({} values) into {:?}", x.shape(), x.numel(), shape),
            ));
        }
        let data = x.to_vec();
        Ok(self.record(OpKind::Reshape, &[x], shape, data))
    }

    /// Concatenate along `axis`. All other dimensions must agree.
    pub fn concat(&mut self, inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
        if inputs.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let first = inputs[0].shape();
        check_axis("concat", &first, axis)?;
        let mut axis_total = 0;
        for t in inputs {
            let s = t.shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::shape(
                    "concat",
                    format!("shape {s:?} incompatible with {first:?} along axis {axis}"),
                ));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(numel_of(&out_shape));
        for o in 0..outer {
            for t in inputs {
                let s_axis = t.shape()[axis];
                let block = s_axis * inner;
                let src = t.data();
                data.extend_from_slice(&src[o * block..(o + 1) * block]);
            }
        }
        Ok(self.record_multi(OpKind::Concat { axis }, inputs, out_shape, data))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let shape = x.shape();
        check_axis("softmax", &shape, axis)?;
        let data = softmax_axis(&x.data(), &shape, axis);
        Ok(self.record(OpKind::Softmax { axis }, &[x], shape, data))
    }

    /// Elementwise natural logarithm.
    pub fn log(&mut self, x: &Tensor) -> Result<Tensor> {
        let data: Vec<f32> = x.data().iter().map(|&v| v.ln()).collect();
        Ok(self.record(OpKind::Log, &[x], x.shape(), data))
    }

    /// Euclidean norm of the whole tensor, as a `[1]` scalar.
    pub fn l2_norm(&mut self, x: &Tensor) -> Result<Tensor> {
        let sum_sq: f32 = x.data().iter().map(|&v| v * v).sum();
        Ok(self.record(OpKind::L2Norm, &[x], vec![1], vec![sum_sq.sqrt()]))
    }

    /// Inner product of two equal-length rank-1 tensors, as a `[1]` scalar.
    pub fn dot(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 1 || sa != sb {
            return Err(Error::shape(
                "dot",
                format!("expects two equal rank-1 shapes, got {sa:?} and {sb:?}"),
            ));
        }
        let v: f32 = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).sum();
        Ok(self.record(OpKind::Dot, &[a, b], vec![1], vec![v]))
    }

    /// Max pooling over `[C,D,H,W]` input; windows never cross the boundary.
    pub fn max_pool3d(&mut self, x: &Tensor, kernel: [usize; 3], stride: [usize; 3]) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 {
            return Err(Error::shape(
                "max_pool3d",
                format!("input must be rank 4 [C,D,H,W], got {shape:?}"),
            ));
        }
        let mut dims = conv3d_dims(
            "max_pool3d",
            &shape,
            &[shape[0], shape[0], kernel[0], kernel[1], kernel[2]],
            stride,
            [0, 0, 0],
        )?;
        dims.c_out = shape[0];
        let (data, argmax) = maxpool3d_forward(&x.data(), &dims);
        let out_shape = vec![shape[0], dims.output[0], dims.output[1], dims.output[2]];
        Ok(self.record(OpKind::MaxPool3d { dims, argmax }, &[x], out_shape, data))
    }

    /// Mean over all spatial positions of a `[C,D,H,W]` tensor, yielding `[C]`.
    pub fn global_avg_pool(&mut self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("input must be rank 4 [C,D,H,W], got {shape:?}"),
            ));
        }
        let per_ch: usize = shape[1..].iter().product();
        let src = x.data();
        let mut data = vec![0.0f32; shape[0]];
        for (c, slot) in data.iter_mut().enumerate() {
            let s: f32 = src[c * per_ch..(c + 1) * per_ch].iter().sum();
            *slot = s / per_ch as f32;
        }
        drop(src);
        Ok(self.record(OpKind::GlobalAvgPool, &[x], vec![shape[0]], data))
    }

    /// Elementwise `scale * x + shift` with compile-time constants.
    pub fn affine(&mut self, x: &Tensor, scale: f32, shift: f32) -> Result<Tensor> {
        let data: Vec<f32> = x.data().iter().map(|&v| scale * v + shift).collect();
        Ok(self.record(OpKind::Affine { scale }, &[x], x.shape(), data))
    }

    /// Elementwise reciprocal.
    pub fn recip(&mut self, x: &Tensor) -> Result<Tensor> {
        let data: Vec<f32> = x.data().iter().map(|&v| 1.0 / v).collect();
        Ok(self.record(OpKind::Recip, &[x], x.shape(), data))
    }

    /// Cross-entropy of rank-1 logits against a class index, as `[1]`.
    /// Computed as `logsumexp(logits) - logits[target]`.
    pub fn cross_entropy(&mut self, logits: &Tensor, target: usize) -> Result<Tensor> {
        let shape = logits.shape();
        if shape.len() != 1 {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits must be rank 1, got {shape:?}"),
            ));
        }
        if target >= shape[0] {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {target} out of range for {} classes", shape[0]),
            ));
        }
        let data = logits.data();
        let max = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = data.iter().map(|&v| (v - max).exp()).sum();
        let loss = sum.ln() + max - data[target];
        drop(data);
        Ok(self.record(OpKind::CrossEntropy { target }, &[logits], vec![1], vec![loss]))
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

/// Reduce one axis by sum or mean. Returns (output shape, data).
fn reduce_axis(x: &[f32], shape: &[usize], axis: usize, mean: bool) -> (Vec<usize>, Vec<f32>) {
    let (outer, len, inner) = axis_geometry(shape, axis);
    let mut out = vec![0.0f32; outer * inner];
    for o in 0..outer {
        for j in 0..len {
            let base = (o * len + j) * inner;
            let dst = o * inner;
            for i in 0..inner {
                out[dst + i] += x[base + i];
            }
        }
    }
    if mean {
        let inv = 1.0 / len as f32;
        for v in &mut out {
            *v *= inv;
        }
    }
    let mut out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    (out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shape("t", &[3, 1], &[1, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        // grad of shape [2,3] reduced to [1,3] and to [2,1]
        let g = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[1, 3]), vec![11.0, 22.0, 33.0]);
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[2, 1]), vec![6.0, 60.0]);
    }

    #[test]
    fn valid_out_range_excludes_padding() {
        // extent 4, kernel tap 0 of size 2, pad 1, stride 1, out 5:
        // i = o - 1 must be in [0,4) -> o in [1,5)
        assert_eq!(valid_out_range(0, 1, 1, 4, 5), (1, 5));
        assert_eq!(valid_out_range(1, 1, 1, 4, 5), (0, 4));
    }
}
