//! Direct convolution lowered to a matrix product per sample (im2col).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Resolved sizes of one `conv2d` call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [n, c, h, w] = input[..] else {
            return Err(Error::shape("conv2d", format!("input must be NCHW, got {input:?}")));
        };
        let [o, wc, kh, kw] = weight[..] else {
            return Err(Error::shape("conv2d", format!("weight must be OCkk, got {weight:?}")));
        };
        if wc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but weight expects {wc}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        let span_h = h + 2 * padding;
        let span_w = w + 2 * padding;
        if span_h < kh || span_w < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {span_h}x{span_w}"),
            ));
        }
        Ok(ConvGeometry {
            batch: n,
            in_channels: c,
            in_h: h,
            in_w: w,
            out_channels: o,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (span_h - kh) / stride + 1,
            out_w: (span_w - kw) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Rows of the lowered patch matrix.
    pub(crate) fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub(crate) fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub(crate) fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    /// 1×1, stride 1, no padding: the input already is the patch matrix.
    pub(crate) fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    /// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        // need 0 <= o*s + k - p < in_len
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = ((in_len as isize - 1 + p - k).div_euclid(s) + 1).clamp(0, out_len as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    /// Lower one sample `[C, H, W]` into `[C·kh·kw, out_h·out_w]`.
    pub(crate) fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let plane = self.out_plane();
        cols.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..self.in_channels {
            let src = &image[c * self.in_plane()..(c + 1) * self.in_plane()];
            for ky in 0..self.kernel_h {
                let (oy_lo, oy_hi) = self.valid_range(ky, self.in_h, self.out_h);
                for kx in 0..self.kernel_w {
                    let (ox_lo, ox_hi) = self.valid_range(kx, self.in_w, self.out_w);
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.padding;
                        let src_row = &src[iy * self.in_w..(iy + 1) * self.in_w];
                        let dst_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if self.stride == 1 {
                            let ix0 = ox_lo + kx - self.padding;
                            dst_row[ox_lo..ox_hi]
                                .copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst_row[ox] = src_row[ox * self.stride + kx - self.padding];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add patches back into `[C, H, W]`.
    pub(crate) fn col2im_add<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.in_channels {
            let base = c * self.in_plane();
            for ky in 0..self.kernel_h {
                let (oy_lo, oy_hi) = self.valid_range(ky, self.in_h, self.out_h);
                for kx in 0..self.kernel_w {
                    let (ox_lo, ox_hi) = self.valid_range(kx, self.in_w, self.out_w);
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.padding;
                        let dst_row = &mut image[base + iy * self.in_w..base + (iy + 1) * self.in_w];
                        let src_row = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * self.stride + kx - self.padding;
                            dst_row[ix] = dst_row[ix] + src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass. Returns the output and, unless pointwise, the lowered patches
/// of every sample for reuse in the backward pass.
pub(crate) fn conv_forward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> (Vec<T>, Vec<T>) {
    let (ck, plane, o) = (g.patch_len(), g.out_plane(), g.out_channels);
    let mut out = vec![T::zero(); g.batch * o * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.batch * ck * plane] };
    for n in 0..g.batch {
        let sample = &input[n * g.in_channels * g.in_plane()..(n + 1) * g.in_channels * g.in_plane()];
        let patches: &[T] = if g.is_pointwise() {
            sample
        } else {
            let chunk = &mut cols[n * ck * plane..(n + 1) * ck * plane];
            g.im2col(sample, chunk);
            chunk
        };
        let dst = &mut out[n * o * plane..(n + 1) * o * plane];
        if let Some(b) = bias {
            for (oc, row) in dst.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = b[oc]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(o, ck, plane, T::one(), weight, false, patches, false, beta, dst);
    }
    (out, cols)
}

/// Gradient of the weights: `Σ_n gout_n · patches_nᵀ`.
pub(crate) fn conv_weight_grad<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    cols: &[T],
    gout: &[T],
    dweight: &mut [T],
) {
    let (ck, plane, o) = (g.patch_len(), g.out_plane(), g.out_channels);
    for n in 0..g.batch {
        let patches = if g.is_pointwise() {
            &input[n * ck * plane..(n + 1) * ck * plane]
        } else {
            &cols[n * ck * plane..(n + 1) * ck * plane]
        };
        let go = &gout[n * o * plane..(n + 1) * o * plane];
        T::gemm(o, plane, ck, T::one(), go, false, patches, true, T::one(), dweight);
    }
}

pub(crate) fn conv_bias_grad<T: Scalar>(g: &ConvGeometry, gout: &[T], dbias: &mut [T]) {
    let plane = g.out_plane();
    for n in 0..g.batch {
        for oc in 0..g.out_channels {
            let start = (n * g.out_channels + oc) * plane;
            let s: T = gout[start..start + plane].iter().copied().sum();
            dbias[oc] = dbias[oc] + s;
        }
    }
}

/// Gradient of the input: `col2im(weightᵀ · gout_n)` per sample.
pub(crate) fn conv_input_grad<T: Scalar>(g: &ConvGeometry, weight: &[T], gout: &[T], dinput: &mut [T]) {
    let (ck, plane, o) = (g.patch_len(), g.out_plane(), g.out_channels);
    let sample_len = g.in_channels * g.in_plane();
    let mut dcols = vec![T::zero(); ck * plane];
    for n in 0..g.batch {
        let go = &gout[n * o * plane..(n + 1) * o * plane];
        let dst = &mut dinput[n * sample_len..(n + 1) * sample_len];
        if g.is_pointwise() {
            T::gemm(ck, o, plane, T::one(), weight, true, go, false, T::one(), dst);
        } else {
            T::gemm(ck, o, plane, T::one(), weight, true, go, false, T::zero(), &mut dcols);
            g.col2im_add(&dcols, dst);
        }
    }
}
