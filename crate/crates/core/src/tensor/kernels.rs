//! Forward and backward kernels on plain tensors. The autodiff tape calls
//! these; they are also usable directly for inference.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest admissible convolution kernel extent.
pub const MAX_KERNEL: usize = 7;

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    /// Flat input index of the winning element for every output element.
    pub argmax: Vec<usize>,
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
#[inline]
fn out_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < in_len
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let limit = in_len + pad;
    let hi = if limit > k {
        ((limit - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_dims(
    input: &[usize],
    weight: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let [b, cin, h, w] = input[..] else {
        return Err(Error::shape(
            "conv2d",
            format!("input must be rank 4, got {input:?}"),
        ));
    };
    let [cout, wcin, kh, kw] = weight[..] else {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be rank 4, got {weight:?}"),
        ));
    };
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but weight {weight:?} expects {wcin}"),
        ));
    }
    if kh != kw || kh % 2 == 0 || kh > MAX_KERNEL {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square, odd and at most {MAX_KERNEL}, got {kh}x{kw}"),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh} larger than padded input {h}x{w} (pad {padding})"),
        ));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    Ok((b, cin, h, w, cout, kh, oh, ow))
}

/// Cross-correlation `[B,Cin,H,W] * [Cout,Cin,k,k] + bias[Cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (b, cin, h, w, cout, k, oh, ow) =
        conv_dims(input.shape(), weight.shape(), stride, padding)?;
    if let Some(bias) = bias {
        if bias.len() != cout {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} elements, expected {cout}", bias.len()),
            ));
        }
    }
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); b * cout * oh * ow];
    let in_plane = h * w;
    let out_plane = oh * ow;

    for bi in 0..b {
        for co in 0..cout {
            let dst = &mut out[(bi * cout + co) * out_plane..][..out_plane];
            if let Some(bias) = bias {
                dst.fill(bias.data()[co]);
            }
            for ci in 0..cin {
                let src = &x[(bi * cin + ci) * in_plane..][..in_plane];
                let kern = &wt[(co * cin + ci) * k * k..][..k * k];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = out_range(ky, padding, stride, h, oh);
                    for kx in 0..k {
                        let wv = kern[ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox_lo, ox_hi) = out_range(kx, padding, stride, w, ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let row = &src[iy * w..][..w];
                            let drow = &mut dst[oy * ow..][..ow];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - padding;
                                let n = ox_hi - ox_lo;
                                for (d, &s) in drow[ox_lo..ox_hi].iter_mut().zip(&row[ix0..ix0 + n])
                                {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    drow[ox] += wv * row[ox * stride + kx - padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, cout, oh, ow], out)
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
/// The input gradient is skipped when `need_input` is false.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (b, cin, h, w, cout, k, oh, ow) =
        conv_dims(input.shape(), weight.shape(), stride, padding)?;
    if grad_out.shape() != [b, cout, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "upstream gradient {:?} vs output [{b}, {cout}, {oh}, {ow}]",
                grad_out.shape()
            ),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let in_plane = h * w;
    let out_plane = oh * ow;
    let mut gx = if need_input {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); cout];

    for bi in 0..b {
        for co in 0..cout {
            let g = &go[(bi * cout + co) * out_plane..][..out_plane];
            gb[co] += g.iter().copied().sum::<T>();
            for ci in 0..cin {
                let src = &x[(bi * cin + ci) * in_plane..][..in_plane];
                let widx = (co * cin + ci) * k * k;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = out_range(ky, padding, stride, h, oh);
                    for kx in 0..k {
                        let (ox_lo, ox_hi) = out_range(kx, padding, stride, w, ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let wv = wt[widx + ky * k + kx];
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let grow = &g[oy * ow..][..ow];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - padding;
                                let n = ox_hi - ox_lo;
                                let row = &src[iy * w + ix0..][..n];
                                for (&gv, &s) in grow[ox_lo..ox_hi].iter().zip(row) {
                                    acc += gv * s;
                                }
                                if need_input {
                                    let dst =
                                        &mut gx[(bi * cin + ci) * in_plane + iy * w + ix0..][..n];
                                    for (d, &gv) in dst.iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                        *d += wv * gv;
                                    }
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * stride + kx - padding;
                                    acc += grow[ox] * src[iy * w + ix];
                                    if need_input {
                                        gx[(bi * cin + ci) * in_plane + iy * w + ix] +=
                                            wv * grow[ox];
                                    }
                                }
                            }
                        }
                        gw[widx + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input {
            Some(Tensor::new(input.shape().to_vec(), gx)?)
        } else {
            None
        },
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![cout], gb)?,
    })
}

/// Non-overlapping max pooling. Ties go to the first element in row-major
/// window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<MaxPoolOutput<T>> {
    let (b, c, h, w) = input.dims4()?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("extents {h}x{w} not divisible by window {window}"),
        ));
    }
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * window * w + ox * window;
                let mut best = x[best_idx];
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = base + (oy * window + dy) * w + ox * window + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new(vec![b, c, oh, ow], out)?,
        argmax,
    })
}

pub fn maxpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!(
                "{} upstream values for {} pooled outputs",
                grad_out.len(),
                argmax.len()
            ),
        ));
    }
    let mut gx = Tensor::zeros(input_shape);
    let dst = gx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        dst[idx] += g;
    }
    Ok(gx)
}

fn upsample_dims(input: &[usize], weight: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    let [b, cin, h, w] = input[..] else {
        return Err(Error::shape(
            "upsample2x",
            format!("input must be rank 4, got {input:?}"),
        ));
    };
    let [cout, wcin, 2, 2] = weight[..] else {
        return Err(Error::shape(
            "upsample2x",
            format!("weight must be [Cout, Cin, 2, 2], got {weight:?}"),
        ));
    };
    if wcin != cin {
        return Err(Error::shape(
            "upsample2x",
            format!("input has {cin} channels but weight {weight:?} expects {wcin}"),
        ));
    }
    Ok((b, cin, h, w, cout))
}

/// Stride-2, kernel-2 transposed convolution; weight is `[Cout, Cin, 2, 2]`.
/// Every input pixel scatters into its own 2x2 output block.
pub fn upsample2x<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (b, cin, h, w, cout) = upsample_dims(input.shape(), weight.shape())?;
    if let Some(bias) = bias {
        if bias.len() != cout {
            return Err(Error::shape(
                "upsample2x",
                format!("bias has {} elements, expected {cout}", bias.len()),
            ));
        }
    }
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            let dst = &mut out[(bi * cout + co) * oh * ow..][..oh * ow];
            if let Some(bias) = bias {
                dst.fill(bias.data()[co]);
            }
            for ci in 0..cin {
                let src = &x[(bi * cin + ci) * h * w..][..h * w];
                let kern = &wt[(co * cin + ci) * 4..][..4];
                for y in 0..h {
                    for ky in 0..2 {
                        let drow = &mut dst[(2 * y + ky) * ow..][..ow];
                        let (w0, w1) = (kern[ky * 2], kern[ky * 2 + 1]);
                        for (pair, &s) in drow.chunks_exact_mut(2).zip(&src[y * w..(y + 1) * w]) {
                            pair[0] += w0 * s;
                            pair[1] += w1 * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, cout, oh, ow], out)
}

pub fn upsample2x_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (b, cin, h, w, cout) = upsample_dims(input.shape(), weight.shape())?;
    let (oh, ow) = (2 * h, 2 * w);
    if grad_out.shape() != [b, cout, oh, ow] {
        return Err(Error::shape(
            "upsample2x_backward",
            format!(
                "upstream gradient {:?} vs output [{b}, {cout}, {oh}, {ow}]",
                grad_out.shape()
            ),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let mut gx = if need_input {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); cout];
    for bi in 0..b {
        for co in 0..cout {
            let g = &go[(bi * cout + co) * oh * ow..][..oh * ow];
            gb[co] += g.iter().copied().sum::<T>();
            for ci in 0..cin {
                let src = &x[(bi * cin + ci) * h * w..][..h * w];
                let widx = (co * cin + ci) * 4;
                for ky in 0..2 {
                    let (w0, w1) = (wt[widx + ky * 2], wt[widx + ky * 2 + 1]);
                    let mut acc0 = T::zero();
                    let mut acc1 = T::zero();
                    for y in 0..h {
                        let grow = &g[(2 * y + ky) * ow..][..ow];
                        for (x_i, pair) in grow.chunks_exact(2).enumerate() {
                            let s = src[y * w + x_i];
                            acc0 += pair[0] * s;
                            acc1 += pair[1] * s;
                            if need_input {
                                gx[(bi * cin + ci) * h * w + y * w + x_i] +=
                                    w0 * pair[0] + w1 * pair[1];
                            }
                        }
                    }
                    gw[widx + ky * 2] += acc0;
                    gw[widx + ky * 2 + 1] += acc1;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input {
            Some(Tensor::new(input.shape().to_vec(), gx)?)
        } else {
            None
        },
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![cout], gb)?,
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    a.zip_map(b, |x, y| x + y)
}

/// Concatenates two rank-4 tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, ca, ha, wa) = a.dims4()?;
    let (bb, cb, hb, wb) = b.dims4()?;
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!(
                "{:?} vs {:?} differ outside the channel axis",
                a.shape(),
                b.shape()
            ),
        ));
    }
    let na = ca * ha * wa;
    let nb = cb * hb * wb;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for bi in 0..ba {
        data.extend_from_slice(&a.data()[bi * na..(bi + 1) * na]);
        data.extend_from_slice(&b.data()[bi * nb..(bi + 1) * nb]);
    }
    Tensor::new(vec![ba, ca + cb, ha, wa], data)
}
