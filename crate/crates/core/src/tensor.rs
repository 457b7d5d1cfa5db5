//! Dense row-major tensors and the handful of kernels the network needs.
//!
//! `conv2d` and `matmul` are straight loops with a fixed accumulation order
//! (used as verification references and anywhere bitwise reproducibility
//! matters); `conv2d_gemm` and the im2col helpers are the fast path used by
//! the layers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} were given", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        assert!(n > 0, "tensor extents must be positive: {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        assert!(n > 0, "tensor extents must be positive: {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    /// Converts element type, e.g. an `f64` verification net to `f32`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

/// Output extent of a sliding window, or `None` when the window does not fit.
pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    let padded = size + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry of one 2-D convolution applied to a single `C_in x H x W` sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [c_in, height, width] = input;
        let out = |size| conv_out_extent(size, kernel, stride, padding);
        match (out(height), out(width)) {
            (Some(out_h), Some(out_w)) if c_in > 0 && c_out > 0 => Ok(Self {
                c_in,
                height,
                width,
                c_out,
                kernel,
                stride,
                padding,
                out_h,
                out_w,
            }),
            _ => Err(Error::invalid(
                "conv2d",
                format!(
                    "no valid output for input {input:?}, kernel {kernel}, stride {stride}, padding {padding}"
                ),
            )),
        }
    }

    /// Row length of the weight matrix view: `C_in * K * K`.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_pixels()
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }

    /// Input coordinate hit by output `(oy, ox)` and kernel tap `(ky, kx)`, if inside the image.
    #[inline]
    pub fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
        if iy < 0 || ix < 0 || iy >= self.height as isize || ix >= self.width as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }
}

/// Cross-correlation of a `C_in x H x W` input with a `C_out x C_in x K x K` filter bank.
///
/// Each output is accumulated over `(c_in, ky, kx)` in ascending order
/// starting from zero; padded taps are skipped.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = geometry_for(input, weight, stride, padding)?;
    let x = input.data();
    let w = weight.data();
    let k = g.kernel;
    let mut out = vec![T::zero(); g.out_len()];
    for o in 0..g.c_out {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = T::zero();
                for c in 0..g.c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                                acc += x[(c * g.height + iy) * g.width + ix]
                                    * w[((o * g.c_in + c) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                out[(o * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
    Tensor::new(vec![g.c_out, g.out_h, g.out_w], out)
}

pub(crate) fn geometry_for<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 3 || ws.len() != 4 || is[0] != ws[1] || ws[2] != ws[3] {
        return Err(Error::shape("conv2d", is, ws));
    }
    ConvGeometry::new([is[0], is[1], is[2]], ws[0], ws[2], stride, padding)
}

/// Plain `M x N` by `N x P` product, accumulated in ascending inner index.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::shape("matmul", sa, sb));
    }
    let (m, n, p) = (sa[0], sa[1], sb[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        for j in 0..p {
            let mut acc = T::zero();
            for k in 0..n {
                acc += ad[i * n + k] * bd[k * p + j];
            }
            out[i * p + j] = acc;
        }
    }
    Tensor::new(vec![m, p], out)
}

/// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
#[inline]
fn valid_out_range(g: &ConvGeometry, kx: usize) -> (usize, usize) {
    let lo = g.padding.saturating_sub(kx).div_ceil(g.stride);
    let hi = (g.width + g.padding)
        .saturating_sub(kx)
        .div_ceil(g.stride)
        .min(g.out_w);
    (lo.min(hi), hi)
}

/// Unfolds one sample into a `(C_in*K*K) x (H_out*W_out)` column matrix; padded taps are zero.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let k = g.kernel;
    let p = g.out_pixels();
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert_eq!(col.len(), g.patch_len() * p);
    for c in 0..g.c_in {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = valid_out_range(g, kx);
                for (oy, d) in dst.chunks_mut(g.out_w).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        d.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    d[..lo].fill(T::zero());
                    d[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let first = lo * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        d[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (j, v) in d[lo..hi].iter_mut().enumerate() {
                            *v = src[first + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input, accumulating.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let k = g.kernel;
    let p = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = valid_out_range(g, kx);
                for (oy, s) in src.chunks(g.out_w).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    if lo == hi {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let first = lo * g.stride + kx - g.padding;
                    for (j, &v) in s[lo..hi].iter().enumerate() {
                        dst[first + j * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// GEMM-backed convolution of one sample; `w` is the `C_out x (C_in*K*K)` matrix view.
///
/// `col` is scratch of length `patch_len * out_pixels` and is left holding the
/// unfolded input.
pub fn conv2d_gemm<T: Scalar>(x: &[T], w: &[T], g: &ConvGeometry, col: &mut [T], out: &mut [T]) {
    im2col(x, g, col);
    T::gemm(
        g.c_out,
        g.patch_len(),
        g.out_pixels(),
        T::one(),
        w,
        false,
        col,
        false,
        T::zero(),
        out,
    );
}
