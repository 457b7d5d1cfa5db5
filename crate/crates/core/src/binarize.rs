//! Sign binarization, its backward estimators, bit packing and the
//! XNOR/popcount convolution.
//!
//! Bit layout: a [`PackedBinaryTensor`] packs elements in row-major order,
//! least-significant bit first, one bit per element (1 for +1, 0 for -1).
//! Every lane (run along the last axis) starts on a fresh 64-bit word so that
//! per-pixel channel vectors can be XORed word by word; unused bits at the end
//! of each lane are zero. For one-dimensional tensors this is the plain
//! contiguous packing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ConvGeometry, Tensor};

/// Lower bound kept on every diagonal entry of the scale matrix.
pub const EPS_A: f64 = 1e-8;

/// `+1` for `x >= 0`, `-1` otherwise.
#[inline]
pub fn sign<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

pub fn sign_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sign)
}

/// Backward rule substituted for the derivative of `sign`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Straight-through: passes the gradient where `|x| < 1`.
    #[default]
    Ste,
    /// Piecewise-linear: `2 + 2x` on `[-1, 0)`, `2 - 2x` on `[0, 1)`, zero elsewhere.
    ApproxSign,
}

impl Estimator {
    #[inline]
    pub fn factor<T: Scalar>(self, x: T) -> T {
        let one = T::one();
        let two = one + one;
        match self {
            Estimator::Ste => {
                if x.abs() < one {
                    one
                } else {
                    T::zero()
                }
            }
            Estimator::ApproxSign => {
                if x >= -one && x < T::zero() {
                    two + two * x
                } else if x >= T::zero() && x < one {
                    two - two * x
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn backward<T: Scalar>(self, grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        grad_out.zip_map(x, "estimator backward", |g, v| g * self.factor(v))
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ste" => Ok(Estimator::Ste),
            "approxsign" | "approx-sign" | "approx_sign" => Ok(Estimator::ApproxSign),
            other => Err(format!("unknown estimator {other:?} (expected ste or approxsign)")),
        }
    }
}

pub fn ste_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Estimator::Ste.backward(grad_out, x)
}

pub fn approxsign_backward<T: Scalar>(grad_out: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    Estimator::ApproxSign.backward(grad_out, a)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBinaryTensor {
    shape: Vec<usize>,
    lane_len: usize,
    words_per_lane: usize,
    words: Vec<u64>,
}

impl PackedBinaryTensor {
    fn with_shape(shape: Vec<usize>) -> Self {
        let lane_len = *shape.last().expect("non-empty shape");
        let lanes: usize = shape[..shape.len() - 1].iter().product();
        let words_per_lane = lane_len.div_ceil(64);
        Self {
            shape,
            lane_len,
            words_per_lane,
            words: vec![0; lanes * words_per_lane],
        }
    }

    #[inline]
    fn set(&mut self, index: usize) {
        let (lane, pos) = (index / self.lane_len, index % self.lane_len);
        self.words[lane * self.words_per_lane + pos / 64] |= 1u64 << (pos % 64);
    }

    #[inline]
    pub fn bit(&self, index: usize) -> bool {
        let (lane, pos) = (index / self.lane_len, index % self.lane_len);
        self.words[lane * self.words_per_lane + pos / 64] >> (pos % 64) & 1 == 1
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn valid_bits(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn lane_len(&self) -> usize {
        self.lane_len
    }

    pub fn words_per_lane(&self) -> usize {
        self.words_per_lane
    }

    /// Storage in bytes of the packed words.
    pub fn storage_bytes(&self) -> usize {
        self.words.len() * 8
    }

    pub fn unpack<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&self.shape, |i| if self.bit(i) { T::one() } else { -T::one() })
    }

    /// True when every bit past the end of each lane is zero.
    pub fn padding_is_canonical(&self) -> bool {
        let tail = self.lane_len % 64;
        if tail == 0 {
            return true;
        }
        let mask = !((1u64 << tail) - 1);
        self.words
            .chunks(self.words_per_lane)
            .all(|lane| lane[self.words_per_lane - 1] & mask == 0)
    }
}

/// Packs a tensor whose entries are exactly `-1` or `+1`.
pub fn pack_bits<T: Scalar>(x: &Tensor<T>) -> Result<PackedBinaryTensor> {
    let mut p = PackedBinaryTensor::with_shape(x.shape().to_vec());
    for (i, &v) in x.data().iter().enumerate() {
        if v == T::one() {
            p.set(i);
        } else if v != -T::one() {
            return Err(Error::NotBinary {
                index: i,
                value: v.to_f64_lossy(),
            });
        }
    }
    Ok(p)
}

/// Dot product of two packed `±1` vectors: `2 * popcount(xnor) - n` over the valid bits.
pub fn xnor_popcount_dot(a: &PackedBinaryTensor, b: &PackedBinaryTensor) -> Result<i64> {
    if a.valid_bits() != b.valid_bits() || a.lane_len != b.lane_len {
        return Err(Error::shape("xnor_popcount_dot", &a.shape, &b.shape));
    }
    let tail = a.lane_len % 64;
    let last_mask = if tail == 0 { u64::MAX } else { (1u64 << tail) - 1 };
    let mut agree = 0i64;
    for (la, lb) in a
        .words
        .chunks(a.words_per_lane)
        .zip(b.words.chunks(b.words_per_lane))
    {
        for (k, (&wa, &wb)) in la.iter().zip(lb).enumerate() {
            let mask = if k + 1 == a.words_per_lane { last_mask } else { u64::MAX };
            agree += (!(wa ^ wb) & mask).count_ones() as i64;
        }
    }
    Ok(2 * agree - a.valid_bits() as i64)
}

/// Signs of a `C x H x W` activation packed channel-last (`H x W x C`), one lane per pixel.
pub fn pack_activation<T: Scalar>(x: &[T], channels: usize, height: usize, width: usize) -> PackedBinaryTensor {
    assert_eq!(x.len(), channels * height * width, "pack_activation: length mismatch");
    let mut p = PackedBinaryTensor::with_shape(vec![height, width, channels]);
    let plane = height * width;
    let wpl = p.words_per_lane;
    for c in 0..channels {
        let (word, bit) = (c / 64, c % 64);
        let src = &x[c * plane..(c + 1) * plane];
        for (lane, &v) in p.words.chunks_mut(wpl).zip(src) {
            lane[word] |= u64::from(v >= T::zero()) << bit;
        }
    }
    p
}

/// Signs of a `C_out x C_in x K x K` filter bank packed as `C_out x K x K x C_in`.
pub fn pack_filters<T: Scalar>(w: &Tensor<T>) -> Result<PackedBinaryTensor> {
    let s = w.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(Error::invalid("pack_filters", format!("expected C_out x C_in x K x K, got {s:?}")));
    }
    let (co, ci, k) = (s[0], s[1], s[2]);
    let mut p = PackedBinaryTensor::with_shape(vec![co, k, k, ci]);
    let d = w.data();
    for o in 0..co {
        for c in 0..ci {
            for t in 0..k * k {
                if d[(o * ci + c) * k * k + t] >= T::zero() {
                    p.set((o * k * k + t) * ci + c);
                }
            }
        }
    }
    Ok(p)
}

fn packed_geometry(
    a: &PackedBinaryTensor,
    w: &PackedBinaryTensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (sa, sw) = (a.shape(), w.shape());
    if sa.len() != 3 || sw.len() != 4 || sw[1] != sw[2] || sa[2] != sw[3] {
        return Err(Error::shape("binary_conv_forward", sa, sw));
    }
    ConvGeometry::new([sa[2], sa[0], sa[1]], sw[0], sw[1], stride, padding)
}

/// Integer XNOR/popcount convolution; output is `C_out x H_out x W_out` in row-major order.
///
/// Taps falling in the zero padding contribute nothing, matching a float
/// convolution of the `±1` tensors with zero padding.
pub fn binary_conv_raw(
    a: &PackedBinaryTensor,
    w: &PackedBinaryTensor,
    stride: usize,
    padding: usize,
) -> Result<(ConvGeometry, Vec<i32>)> {
    let g = packed_geometry(a, w, stride, padding)?;
    let mut out = vec![0i32; g.out_len()];
    binary_conv_raw_into(a, w, &g, &mut out);
    Ok((g, out))
}

/// Output channels accumulated together in the interior loop.
const BLOCK: usize = 64;

/// Mismatch counts of one pixel's gathered words against `BLOCK` consecutive filters of the transposed bank.
#[inline(always)]
fn block_popcount(gathered: &[u64], wt: &[u64], c_out: usize, o0: usize) -> [u64; BLOCK] {
    let mut acc = [0u64; BLOCK];
    for (q, &av) in gathered.iter().enumerate() {
        let row: &[u64; BLOCK] = wt[q * c_out + o0..][..BLOCK].try_into().expect("full block");
        for (d, &fv) in acc.iter_mut().zip(row) {
            *d += u64::from((av ^ fv).count_ones());
        }
    }
    acc
}

pub(crate) fn binary_conv_raw_into(
    a: &PackedBinaryTensor,
    w: &PackedBinaryTensor,
    g: &ConvGeometry,
    out: &mut [i32],
) {
    let wpl = a.words_per_lane;
    let k = g.kernel;
    let taps = k * k;
    let filter_words = taps * wpl;
    let aw = &a.words;
    let ww = &w.words;
    let pixels = g.out_pixels();
    let full = (filter_words / wpl * g.c_in) as i32;
    // lane offset of each tap relative to the top-left tap
    let tap_offsets: Vec<usize> = (0..taps).map(|t| ((t / k) * g.width + t % k) * wpl).collect();

    // filter words transposed to `filter_word x C_out` so the interior loop runs across channels
    let mut wt = vec![0u64; filter_words * g.c_out];
    for (o, f) in ww.chunks(filter_words).enumerate() {
        for (q, &v) in f.iter().enumerate() {
            wt[q * g.c_out + o] = v;
        }
    }
    let blocks = g.c_out / BLOCK;
    let mut gathered = vec![0u64; filter_words];
    let mut tail = vec![0u64; g.c_out % BLOCK];
    let mut valid: Vec<(usize, usize)> = Vec::with_capacity(taps);
    for oy in 0..g.out_h {
        let y0 = (oy * g.stride) as isize - g.padding as isize;
        let rows_inside = y0 >= 0 && y0 as usize + k <= g.height;
        for ox in 0..g.out_w {
            let x0 = (ox * g.stride) as isize - g.padding as isize;
            let px = oy * g.out_w + ox;
            if rows_inside && x0 >= 0 && x0 as usize + k <= g.width {
                let origin = (y0 as usize * g.width + x0 as usize) * wpl;
                for (chunk, &off) in gathered.chunks_exact_mut(wpl).zip(&tap_offsets) {
                    chunk.copy_from_slice(&aw[origin + off..origin + off + wpl]);
                }
                for b in 0..blocks {
                    let acc = block_popcount(&gathered, &wt, g.c_out, b * BLOCK);
                    for (i, &d) in acc.iter().enumerate() {
                        out[(b * BLOCK + i) * pixels + px] = full - 2 * d as i32;
                    }
                }
                if !tail.is_empty() {
                    tail.fill(0);
                    for (q, &av) in gathered.iter().enumerate() {
                        let row = &wt[q * g.c_out + blocks * BLOCK..(q + 1) * g.c_out];
                        for (d, &fv) in tail.iter_mut().zip(row) {
                            *d += u64::from((av ^ fv).count_ones());
                        }
                    }
                    for (i, &d) in tail.iter().enumerate() {
                        out[(blocks * BLOCK + i) * pixels + px] = full - 2 * d as i32;
                    }
                }
                continue;
            }
            valid.clear();
            for ky in 0..k {
                for kx in 0..k {
                    if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                        valid.push(((iy * g.width + ix) * wpl, (ky * k + kx) * wpl));
                    }
                }
            }
            let n = (valid.len() * g.c_in) as i32;
            for (o, f) in ww.chunks(filter_words).enumerate() {
                let mut diff = 0u32;
                for &(src, tap) in &valid {
                    for j in 0..wpl {
                        diff += (aw[src + j] ^ f[tap + j]).count_ones();
                    }
                }
                out[o * pixels + px] = n - 2 * diff as i32;
            }
        }
    }
}

/// Binary convolution scaled per output channel by `alpha_i = 1 / inv_alpha_i`.
pub fn binary_conv_forward<T: Scalar>(
    a: &PackedBinaryTensor,
    w: &PackedBinaryTensor,
    scale: &ScaleDiag<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = packed_geometry(a, w, stride, padding)?;
    if scale.len() != g.c_out {
        return Err(Error::shape("binary_conv_forward", &[scale.len()], &[g.c_out]));
    }
    let mut raw = vec![0i32; g.out_len()];
    binary_conv_raw_into(a, w, &g, &mut raw);
    let pixels = g.out_pixels();
    let mut data = Vec::with_capacity(raw.len());
    for (o, plane) in raw.chunks(pixels).enumerate() {
        let alpha = scale.alpha(o);
        data.extend(plane.iter().map(|&r| T::from_i64_exact(r as i64) * alpha));
    }
    Tensor::new(vec![g.c_out, g.out_h, g.out_w], data)
}

/// The diagonal scale matrix `A = diag(1/alpha_1, ..., 1/alpha_N)`, stored as its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleDiag<T> {
    inv_alpha: Vec<T>,
}

impl<T: Scalar> ScaleDiag<T> {
    /// Wraps a diagonal, flooring every entry at [`EPS_A`].
    pub fn new(inv_alpha: Vec<T>) -> Result<Self> {
        if inv_alpha.is_empty() {
            return Err(Error::invalid("scale", "empty diagonal"));
        }
        if let Some(i) = inv_alpha.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::invalid(
                "scale",
                format!("entry {i} is {}, expected a finite positive value", inv_alpha[i]),
            ));
        }
        let eps = T::lit(EPS_A);
        Ok(Self {
            inv_alpha: inv_alpha.into_iter().map(|v| v.max(eps)).collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inv_alpha: vec![T::one(); n],
        }
    }

    /// `alpha_i = ||w_i||_1 / J`, so `inv_alpha_i = J / ||w_i||_1` (1 for an all-zero filter).
    pub fn from_weights(w: &Tensor<T>) -> Self {
        let rows = w.shape()[0];
        let cols = w.len() / rows;
        let j = T::from_usize(cols).expect("row length");
        let inv_alpha = w
            .data()
            .chunks(cols)
            .map(|row| {
                let l1: T = row.iter().map(|v| v.abs()).sum();
                if l1 > T::zero() {
                    (j / l1).max(T::lit(EPS_A))
                } else {
                    T::one()
                }
            })
            .collect();
        Self { inv_alpha }
    }

    pub fn len(&self) -> usize {
        self.inv_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_alpha.is_empty()
    }

    pub fn inv_alpha(&self) -> &[T] {
        &self.inv_alpha
    }

    #[inline]
    pub fn alpha(&self, i: usize) -> T {
        T::one() / self.inv_alpha[i]
    }

    pub fn alphas(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.alpha(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign_forward(&v(&[0.5, -0.3, 0.0, -0.0])).data(), &[1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn ste_window_is_open() {
        let g = v(&[2.0, 2.0, 3.0, 3.0]);
        let x = v(&[0.5, 1.5, -1.0, 1.0]);
        assert_eq!(ste_backward(&g, &x).unwrap().data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn approxsign_factors() {
        let f = |a: f64| Estimator::ApproxSign.factor(a);
        assert_eq!(f(-0.5), 1.0);
        assert_eq!(f(0.25), 1.5);
        assert_eq!(f(1.2), 0.0);
        assert_eq!(f(-1.0), 0.0);
        assert_eq!(f(0.0), 2.0);
        assert_eq!(f(-1e-300), 2.0);
        assert_eq!(f(1.0), 0.0);
        assert_eq!(f(-1.0000001), 0.0);
    }

    #[test]
    fn estimator_rejects_shape_mismatch() {
        assert!(ste_backward(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn packs_lsb_first() {
        let p = pack_bits(&v(&[1.0, -1.0, 1.0, 1.0])).unwrap();
        assert_eq!(p.words(), &[0b1101]);
        assert_eq!(p.valid_bits(), 4);
        assert!(p.padding_is_canonical());
    }

    #[test]
    fn all_negative_64_is_one_zero_word() {
        let p = pack_bits(&v(&[-1.0; 64])).unwrap();
        assert_eq!(p.words(), &[0]);
    }

    #[test]
    fn pack_rejects_non_binary() {
        let err = pack_bits(&v(&[1.0, 0.5])).unwrap_err();
        assert!(matches!(err, Error::NotBinary { index: 1, .. }));
    }

    #[test]
    fn dot_extremes() {
        let a = pack_bits(&v(&[1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0])).unwrap();
        let b = pack_bits(&v(&[-1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0])).unwrap();
        assert_eq!(xnor_popcount_dot(&a, &a).unwrap(), 8);
        assert_eq!(xnor_popcount_dot(&a, &b).unwrap(), -8);
        let c = pack_bits(&v(&[1.0; 9])).unwrap();
        assert!(xnor_popcount_dot(&a, &c).is_err());
    }

    #[test]
    fn lanes_start_on_word_boundaries() {
        let x = Tensor::<f64>::from_fn(&[3, 70], |i| if i % 3 == 0 { 1.0 } else { -1.0 });
        let p = pack_bits(&x).unwrap();
        assert_eq!(p.words_per_lane(), 2);
        assert_eq!(p.words().len(), 6);
        assert!(p.padding_is_canonical());
        assert_eq!(p.unpack::<f64>(), x);
    }

    #[test]
    fn identity_scale_gives_integer_sign_conv() {
        // 1x3x3 input, one 1x1x2x2 all-(+1) filter
        let x = [0.5, -0.1, 2.0, -3.0, 0.0, 1.0, -1.0, -2.0, 4.0];
        let a = pack_activation(&x, 1, 3, 3);
        let w = pack_filters(&Tensor::<f64>::filled(&[1, 1, 2, 2], 0.3)).unwrap();
        let y = binary_conv_forward(&a, &w, &ScaleDiag::<f64>::identity(1), 1, 0).unwrap();
        // signs: [+ - +; - + +; - - +]
        assert_eq!(y.data(), &[0.0, 2.0, -2.0, 2.0]);
    }

    #[test]
    fn scale_rejects_wrong_length_and_floors() {
        let a = pack_activation(&[1.0f64; 4], 1, 2, 2);
        let w = pack_filters(&Tensor::<f64>::filled(&[2, 1, 1, 1], 1.0)).unwrap();
        assert!(binary_conv_forward(&a, &w, &ScaleDiag::<f64>::identity(3), 1, 0).is_err());
        let s = ScaleDiag::new(vec![0.0f64, 2.0]).unwrap();
        assert_eq!(s.inv_alpha(), &[EPS_A, 2.0]);
        assert!(ScaleDiag::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn alpha_init_is_mean_abs_weight() {
        let w = Tensor::new(vec![2, 1, 1, 2], vec![0.5, -1.5, 0.25, 0.25]).unwrap();
        let s = ScaleDiag::<f64>::from_weights(&w);
        assert_eq!(s.alphas(), vec![1.0, 0.25]);
        assert_eq!(s.inv_alpha(), &[1.0, 4.0]);
    }
}
