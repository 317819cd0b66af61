//! Forward and backward kernels on channel-major tensors.
//!
//! Convolutions go through an explicit im2col buffer of shape
//! `[cin * kh * kw, batch * out_h * out_w]` so that both passes reduce to GEMM.

use crate::error::{NnError, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

fn im2col<T: Scalar>(x: &Tensor<T>, geo: ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let [cin, n, h, w] = x.dims();
    let k = geo.kernel;
    let p = n * oh * ow;
    let mut cols = vec![T::zero(); cin * k * k * p];
    let src = x.data();
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cols[row * p..(row + 1) * p];
                for b in 0..n {
                    let plane = &src[(ci * n + b) * h * w..(ci * n + b + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut dst_row[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        if geo.stride == 1 {
                            // contiguous shifted copy, clipped at both ends
                            let shift = kx as isize - geo.padding as isize;
                            let ox_lo = (-shift).max(0) as usize;
                            let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                            if ox_lo < ox_hi {
                                let ix_lo = (ox_lo as isize + shift) as usize;
                                dst[ox_lo..ox_hi]
                                    .copy_from_slice(&src_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    dims: [usize; 4],
    geo: ConvGeometry,
    oh: usize,
    ow: usize,
) -> Tensor<T> {
    let [cin, n, h, w] = dims;
    let k = geo.kernel;
    let p = n * oh * ow;
    let mut out = Tensor::zeros(dims);
    let dst = out.data_mut();
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cols[row * p..(row + 1) * p];
                for b in 0..n {
                    let base = (ci * n + b) * h * w;
                    for oy in 0..oh {
                        let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &src_row[(b * oh + oy) * ow..(b * oh + oy + 1) * ow];
                        let out_row = &mut dst[base + iy as usize * w..base + (iy as usize + 1) * w];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                out_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_conv<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, geo: ConvGeometry) -> Result<(usize, usize)> {
    let [cin, _, h, w] = x.dims();
    let [_, wcin, kh, kw] = weight.dims();
    if wcin != cin || kh != geo.kernel || kw != geo.kernel {
        return Err(NnError::Shape(format!(
            "conv weight {:?} incompatible with input {:?}",
            weight.dims(),
            x.dims()
        )));
    }
    match (geo.output_size(h), geo.output_size(w)) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(NnError::Shape(format!("input {h}x{w} smaller than kernel {}", geo.kernel))),
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geo: ConvGeometry,
) -> Result<Tensor<T>> {
    let (oh, ow) = check_conv(x, weight, geo)?;
    let cout = weight.dims()[0];
    let n = x.batch();
    let kk = x.channels() * geo.kernel * geo.kernel;
    let p = n * oh * ow;
    let mut out = Tensor::zeros([cout, n, oh, ow]);
    if geo.kernel == 1 && geo.stride == 1 && geo.padding == 0 {
        gemm(cout, kk, p, weight.data(), false, x.data(), false, T::zero(), out.data_mut());
    } else {
        let cols = im2col(x, geo, oh, ow);
        gemm(cout, kk, p, weight.data(), false, &cols, false, T::zero(), out.data_mut());
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b);
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geo: ConvGeometry,
    need_input_grad: bool,
) -> ConvGrads<T> {
    let [cout, _, oh, ow] = grad_out.dims();
    let n = x.batch();
    let kk = x.channels() * geo.kernel * geo.kernel;
    let p = n * oh * ow;
    let pointwise = geo.kernel == 1 && geo.stride == 1 && geo.padding == 0;
    let cols_owned;
    let cols: &[T] = if pointwise {
        x.data()
    } else {
        cols_owned = im2col(x, geo, oh, ow);
        &cols_owned
    };
    let mut dw = Tensor::zeros(weight.dims());
    gemm(cout, p, kk, grad_out.data(), false, cols, true, T::zero(), dw.data_mut());
    let db = channel_sums(grad_out);
    let input = need_input_grad.then(|| {
        let mut dcols = vec![T::zero(); kk * p];
        gemm(kk, cout, p, weight.data(), true, grad_out.data(), false, T::zero(), &mut dcols);
        if pointwise {
            Tensor::from_vec(x.dims(), dcols).expect("pointwise dims")
        } else {
            col2im(&dcols, x.dims(), geo, oh, ow)
        }
    });
    ConvGrads { input, weight: dw, bias: db }
}

/// Transposed convolution with kernel 2 and stride 2 (non-overlapping 2x upsampling).
/// Weight dims `[cin, cout, 2, 2]`.
pub fn upconv2x2_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [cin, n, h, w] = x.dims();
    let [wcin, cout, kh, kw] = weight.dims();
    if wcin != cin || kh != 2 || kw != 2 {
        return Err(NnError::Shape(format!(
            "upconv weight {:?} incompatible with input {:?}",
            weight.dims(),
            x.dims()
        )));
    }
    let p = n * h * w;
    let mut blocks = vec![T::zero(); cout * 4 * p];
    gemm(cout * 4, cin, p, weight.data(), true, x.data(), false, T::zero(), &mut blocks);
    let mut out = Tensor::zeros([cout, n, 2 * h, 2 * w]);
    let (oh, ow) = (2 * h, 2 * w);
    let dst = out.data_mut();
    for co in 0..cout {
        for k in 0..4 {
            let (ky, kx) = (k / 2, k % 2);
            let src = &blocks[(co * 4 + k) * p..(co * 4 + k + 1) * p];
            for b in 0..n {
                for y in 0..h {
                    let row = &src[(b * h + y) * w..(b * h + y + 1) * w];
                    let out_base = ((co * n + b) * oh + 2 * y + ky) * ow + kx;
                    for (x_i, &v) in row.iter().enumerate() {
                        dst[out_base + 2 * x_i] = v;
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b);
    }
    Ok(out)
}

pub fn upconv2x2_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> ConvGrads<T> {
    let [cin, n, h, w] = x.dims();
    let cout = weight.dims()[1];
    let p = n * h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let g = grad_out.data();
    let mut blocks = vec![T::zero(); cout * 4 * p];
    for co in 0..cout {
        for k in 0..4 {
            let (ky, kx) = (k / 2, k % 2);
            let dst = &mut blocks[(co * 4 + k) * p..(co * 4 + k + 1) * p];
            for b in 0..n {
                for y in 0..h {
                    let row = &mut dst[(b * h + y) * w..(b * h + y + 1) * w];
                    let base = ((co * n + b) * oh + 2 * y + ky) * ow + kx;
                    for (x_i, d) in row.iter_mut().enumerate() {
                        *d = g[base + 2 * x_i];
                    }
                }
            }
        }
    }
    let mut dw = Tensor::zeros(weight.dims());
    gemm(cin, p, cout * 4, x.data(), false, &blocks, true, T::zero(), dw.data_mut());
    let db = channel_sums(grad_out);
    let input = need_input_grad.then(|| {
        let mut dx = Tensor::zeros(x.dims());
        gemm(cin, cout * 4, p, weight.data(), false, &blocks, false, T::zero(), dx.data_mut());
        dx
    });
    ConvGrads { input, weight: dw, bias: db }
}

/// 2x2 max-pool with stride 2. Returns pooled tensor and per-output argmax (0..4).
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u8>)> {
    let [c, n, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::Indivisible { height: h, width: w, divisor: 2 });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([c, n, oh, ow]);
    let mut arg = vec![0u8; c * n * oh * ow];
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..c * n {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = 2 * oy * w + 2 * ox;
                let cand = [s[i0], s[i0 + 1], s[i0 + w], s[i0 + w + 1]];
                let mut best = 0;
                for k in 1..4 {
                    if cand[k] > cand[best] {
                        best = k;
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                dst[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward<T: Scalar>(input_dims: [usize; 4], arg: &[u8], grad_out: &Tensor<T>) -> Tensor<T> {
    let [c, n, h, w] = input_dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(input_dims);
    let d = dx.data_mut();
    let g = grad_out.data();
    for plane in 0..c * n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = plane * oh * ow + oy * ow + ox;
                let k = arg[o] as usize;
                let idx = plane * h * w + (2 * oy + k / 2) * w + 2 * ox + k % 2;
                d[idx] += g[o];
            }
        }
    }
    dx
}

fn add_channel_bias<T: Scalar>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let plane = out.plane_len();
    let b = bias.data();
    for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let v = b[c];
        for o in chunk {
            *o += v;
        }
    }
}

fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let plane = t.plane_len();
    let sums = t.data().chunks(plane).map(|c| c.iter().copied().sum()).collect::<Vec<T>>();
    Tensor::from_vec([t.channels(), 1, 1, 1], sums).expect("bias dims")
}
