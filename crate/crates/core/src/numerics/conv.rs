//! Stride-2 convolution and its transpose, plus the 1x1 output head.
//!
//! Geometry is fixed: 4x4 kernels, stride 2, one pixel of zero padding on
//! every side. A convolution maps `H x W` to `H/2 x W/2` and the transposed
//! convolution maps `H x W` to `2H x 2W`. Both are computed as an unrolled
//! patch matrix times the weight matrix, with the batch folded into the
//! column dimension.

use super::gemm::{gemm, MatRef};
use super::{Real, Tensor};
use crate::{Error, Result};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
const TAPS: usize = KERNEL * KERNEL;

/// Gradients of `sum(upstream * layer(input))`.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Batch {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    unbatched: bool,
}

fn batch_dims<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<Batch> {
    match *t.shape() {
        [c, h, w] => Ok(Batch { n: 1, c, h, w, unbatched: true }),
        [n, c, h, w] => Ok(Batch { n, c, h, w, unbatched: false }),
        _ => Err(Error::shape(op, "[C, H, W] or [N, C, H, W]", format!("{:?}", t.shape()))),
    }
}

fn output_shape(b: &Batch, c: usize, h: usize, w: usize) -> Vec<usize> {
    if b.unbatched {
        vec![c, h, w]
    } else {
        vec![b.n, c, h, w]
    }
}

/// Unrolls the receptive fields of one `[c, h, w]` image into rows
/// `c * 16` of `cols`, columns `col0 .. col0 + (h/2)(w/2)`.
fn im2col<T: Real>(src: &[T], c: usize, h: usize, w: usize, cols: &mut [T], ld: usize, col0: usize) {
    let (ho, wo) = (h / STRIDE, w / STRIDE);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = ci * TAPS + ky * KERNEL + kx;
                let dst = &mut cols[row * ld + col0..row * ld + col0 + ho * wo];
                for oy in 0..ho {
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * STRIDE + ky) as isize - PADDING as isize;
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PADDING as isize;
                        *d = if ix >= 0 && ix < w as isize {
                            srow[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds patch columns into an image.
fn col2im<T: Real>(cols: &[T], ld: usize, col0: usize, c: usize, h: usize, w: usize, dst: &mut [T]) {
    let (ho, wo) = (h / STRIDE, w / STRIDE);
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = ci * TAPS + ky * KERNEL + kx;
                let src = &cols[row * ld + col0..row * ld + col0 + ho * wo];
                for oy in 0..ho {
                    let iy = (oy * STRIDE + ky) as isize - PADDING as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PADDING as isize;
                        if ix >= 0 && ix < w as isize {
                            prow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `[N, C, P]` -> `[C, N * P]`.
fn to_channel_major<T: Real>(src: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for s in 0..n {
        for ch in 0..c {
            out[ch * n * p + s * p..ch * n * p + (s + 1) * p]
                .copy_from_slice(&src[(s * c + ch) * p..(s * c + ch + 1) * p]);
        }
    }
    out
}

/// `[C, N * P]` -> `[N, C, P]`, adding a per-channel bias.
fn from_channel_major<T: Real>(src: &[T], n: usize, c: usize, p: usize, bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for s in 0..n {
        for ch in 0..c {
            let b = bias.map_or(T::zero(), |b| b[ch]);
            let dst = &mut out[(s * c + ch) * p..(s * c + ch + 1) * p];
            for (d, &v) in dst.iter_mut().zip(&src[ch * n * p + s * p..ch * n * p + (s + 1) * p]) {
                *d = v + b;
            }
        }
    }
    out
}

fn channel_sums<T: Real>(src: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); c];
    for s in 0..n {
        for (ch, sum) in sums.iter_mut().enumerate() {
            for &v in &src[(s * c + ch) * p..(s * c + ch + 1) * p] {
                *sum += v;
            }
        }
    }
    sums
}

fn check_even(op: &'static str, b: &Batch) -> Result<()> {
    if b.h % 2 != 0 || b.w % 2 != 0 || b.h == 0 || b.w == 0 {
        return Err(Error::shape(op, "even, nonzero spatial extents", format!("{}x{}", b.h, b.w)));
    }
    Ok(())
}

fn check_weights<T: Real>(op: &'static str, weights: &Tensor<T>, first: usize) -> Result<usize> {
    match *weights.shape() {
        [a, other, KERNEL, KERNEL] if a == first => Ok(other),
        _ => Err(Error::shape(
            op,
            format!("[{first}, _, {KERNEL}, {KERNEL}]"),
            format!("{:?}", weights.shape()),
        )),
    }
}

fn unroll<T: Real>(data: &[T], b: &Batch) -> (Vec<T>, usize) {
    let patches = (b.h / STRIDE) * (b.w / STRIDE);
    let ld = b.n * patches;
    let mut cols = vec![T::zero(); b.c * TAPS * ld];
    let img = b.c * b.h * b.w;
    for s in 0..b.n {
        im2col(&data[s * img..(s + 1) * img], b.c, b.h, b.w, &mut cols, ld, s * patches);
    }
    (cols, ld)
}

/// Stride-2 convolution. `input` is `[C_in, H, W]` or `[N, C_in, H, W]`,
/// `weights` is `[C_out, C_in, 4, 4]`, `bias` is `[C_out]`.
pub fn conv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    let b = batch_dims(OP, input)?;
    check_even(OP, &b)?;
    let c_out = weights.shape().first().copied().unwrap_or(0);
    let c_in = check_weights(OP, weights, c_out)?;
    if c_in != b.c {
        return Err(Error::shape(OP, format!("{c_in} input channels"), b.c));
    }
    bias.require_shape(OP, &[c_out])?;

    let (ho, wo) = (b.h / STRIDE, b.w / STRIDE);
    let (cols, ld) = unroll(input.data(), &b);
    let mut out = vec![T::zero(); c_out * ld];
    gemm(
        MatRef::row_major(weights.data(), c_out, c_in * TAPS),
        MatRef::row_major(&cols, c_in * TAPS, ld),
        T::zero(),
        &mut out,
    );
    let out = from_channel_major(&out, b.n, c_out, ho * wo, Some(bias.data()));
    Tensor::from_vec(&output_shape(&b, c_out, ho, wo), out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    const OP: &str = "conv2d_backward";
    let b = batch_dims(OP, input)?;
    check_even(OP, &b)?;
    let c_out = weights.shape().first().copied().unwrap_or(0);
    let c_in = check_weights(OP, weights, c_out)?;
    if c_in != b.c {
        return Err(Error::shape(OP, format!("{c_in} input channels"), b.c));
    }
    let (ho, wo) = (b.h / STRIDE, b.w / STRIDE);
    upstream.require_shape(OP, &output_shape(&b, c_out, ho, wo))?;

    let patches = ho * wo;
    let (cols, ld) = unroll(input.data(), &b);
    let up = to_channel_major(upstream.data(), b.n, c_out, patches);

    let mut grad_w = vec![T::zero(); c_out * c_in * TAPS];
    gemm(
        MatRef::row_major(&up, c_out, ld),
        MatRef::row_major(&cols, c_in * TAPS, ld).t(),
        T::zero(),
        &mut grad_w,
    );

    let mut grad_cols = vec![T::zero(); c_in * TAPS * ld];
    gemm(
        MatRef::row_major(weights.data(), c_out, c_in * TAPS).t(),
        MatRef::row_major(&up, c_out, ld),
        T::zero(),
        &mut grad_cols,
    );
    let img = b.c * b.h * b.w;
    let mut grad_in = vec![T::zero(); input.len()];
    for s in 0..b.n {
        col2im(&grad_cols, ld, s * patches, b.c, b.h, b.w, &mut grad_in[s * img..(s + 1) * img]);
    }

    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), grad_in)?,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: Tensor::from_vec(&[c_out], channel_sums(upstream.data(), b.n, c_out, patches))?,
    })
}

/// Transposed stride-2 convolution, the adjoint of [`conv2d`] with the same
/// weights. `input` is `[C_in, H, W]` or `[N, C_in, H, W]`, `weights` is
/// `[C_in, C_out, 4, 4]`, `bias` is `[C_out]`; output extents are doubled.
pub fn tconv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "tconv2d";
    let b = batch_dims(OP, input)?;
    let c_out = check_weights(OP, weights, b.c)?;
    bias.require_shape(OP, &[c_out])?;
    let (h2, w2) = (b.h * STRIDE, b.w * STRIDE);
    let patches = b.h * b.w;
    let ld = b.n * patches;

    let x = to_channel_major(input.data(), b.n, b.c, patches);
    let mut cols = vec![T::zero(); c_out * TAPS * ld];
    gemm(
        MatRef::row_major(weights.data(), b.c, c_out * TAPS).t(),
        MatRef::row_major(&x, b.c, ld),
        T::zero(),
        &mut cols,
    );
    let img = c_out * h2 * w2;
    let mut out = vec![T::zero(); b.n * img];
    for s in 0..b.n {
        let dst = &mut out[s * img..(s + 1) * img];
        col2im(&cols, ld, s * patches, c_out, h2, w2, dst);
        for (ch, plane) in dst.chunks_exact_mut(h2 * w2).enumerate() {
            let bv = bias.data()[ch];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::from_vec(&output_shape(&b, c_out, h2, w2), out)
}

pub fn tconv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    const OP: &str = "tconv2d_backward";
    let b = batch_dims(OP, input)?;
    let c_out = check_weights(OP, weights, b.c)?;
    let (h2, w2) = (b.h * STRIDE, b.w * STRIDE);
    upstream.require_shape(OP, &output_shape(&b, c_out, h2, w2))?;
    let patches = b.h * b.w;

    let ub = Batch { n: b.n, c: c_out, h: h2, w: w2, unbatched: b.unbatched };
    let (ucols, ld) = unroll(upstream.data(), &ub);
    let x = to_channel_major(input.data(), b.n, b.c, patches);

    let mut grad_x = vec![T::zero(); b.c * ld];
    gemm(
        MatRef::row_major(weights.data(), b.c, c_out * TAPS),
        MatRef::row_major(&ucols, c_out * TAPS, ld),
        T::zero(),
        &mut grad_x,
    );
    let mut grad_w = vec![T::zero(); weights.len()];
    gemm(
        MatRef::row_major(&x, b.c, ld),
        MatRef::row_major(&ucols, c_out * TAPS, ld).t(),
        T::zero(),
        &mut grad_w,
    );

    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), from_channel_major(&grad_x, b.n, b.c, patches, None))?,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: Tensor::from_vec(&[c_out], channel_sums(upstream.data(), b.n, c_out, h2 * w2))?,
    })
}

/// 1x1 convolution: `weights` is `[C_out, C_in]`.
pub fn pointwise_conv<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "pointwise_conv";
    let b = batch_dims(OP, input)?;
    weights.require_rank(OP, 2)?;
    let c_out = weights.dim(0);
    weights.require_shape(OP, &[c_out, b.c])?;
    bias.require_shape(OP, &[c_out])?;
    let p = b.h * b.w;
    let mut out = vec![T::zero(); b.n * c_out * p];
    for s in 0..b.n {
        let dst = &mut out[s * c_out * p..(s + 1) * c_out * p];
        for (ch, plane) in dst.chunks_exact_mut(p).enumerate() {
            plane.fill(bias.data()[ch]);
        }
        gemm(
            MatRef::row_major(weights.data(), c_out, b.c),
            MatRef::row_major(&input.data()[s * b.c * p..(s + 1) * b.c * p], b.c, p),
            T::one(),
            dst,
        );
    }
    Tensor::from_vec(&output_shape(&b, c_out, b.h, b.w), out)
}

pub fn pointwise_conv_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    const OP: &str = "pointwise_conv_backward";
    let b = batch_dims(OP, input)?;
    weights.require_rank(OP, 2)?;
    let c_out = weights.dim(0);
    weights.require_shape(OP, &[c_out, b.c])?;
    upstream.require_shape(OP, &output_shape(&b, c_out, b.h, b.w))?;
    let p = b.h * b.w;
    let mut grad_in = vec![T::zero(); input.len()];
    let mut grad_w = vec![T::zero(); weights.len()];
    for s in 0..b.n {
        let up = MatRef::row_major(&upstream.data()[s * c_out * p..(s + 1) * c_out * p], c_out, p);
        let x = MatRef::row_major(&input.data()[s * b.c * p..(s + 1) * b.c * p], b.c, p);
        gemm(up, x.t(), T::one(), &mut grad_w);
        gemm(
            MatRef::row_major(weights.data(), c_out, b.c).t(),
            up,
            T::zero(),
            &mut grad_in[s * b.c * p..(s + 1) * b.c * p],
        );
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), grad_in)?,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: Tensor::from_vec(&[c_out], channel_sums(upstream.data(), b.n, c_out, p))?,
    })
}
