//! Layer implementations. Activations are batched tensors `N x (sample shape)`.

use crate::binarize::{pack_activation, pack_filters, binary_conv_raw_into, sign, Estimator, ScaleDiag};
use crate::error::{Error, Result};
use crate::rbonn::BacktrackState;
use crate::scalar::Scalar;
use crate::tensor::{col2im, im2col, ConvGeometry, Tensor};

/// How binary layers map real values to `±1` in the training forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Binarizer {
    /// `sign` forward through the packed kernel, with the given backward estimator.
    Sign(Estimator),
    /// `tanh(k x)` forward with its exact derivative backward. Only used for gradient checks.
    Smooth(f64),
}

impl Binarizer {
    #[inline]
    fn forward<T: Scalar>(self, x: T) -> T {
        match self {
            Binarizer::Sign(_) => sign(x),
            Binarizer::Smooth(k) => (T::lit(k) * x).tanh(),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Binarizer::Sign(e) => e.factor(x),
            Binarizer::Smooth(k) => {
                let k = T::lit(k);
                let t = (k * x).tanh();
                k * (T::one() - t * t)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub geom: ConvGeometry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryConv<T> {
    pub weight: Tensor<T>,
    pub scale: ScaleDiag<T>,
    pub state: BacktrackState<T>,
    pub geom: ConvGeometry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
    /// Per-sample shape; channel is the leading axis.
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PRelu<T> {
    pub slope: Vec<T>,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxPool {
    pub size: usize,
    pub in_shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `out x in`.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    RealConv(Conv<T>),
    BinaryConv(BinaryConv<T>),
    BatchNorm(BatchNorm<T>),
    PRelu(PRelu<T>),
    MaxPool(MaxPool),
    Flatten { in_shape: Vec<usize> },
    Linear(Linear<T>),
}

/// Values saved by the training forward pass for the backward pass.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    Input(Tensor<T>),
    Binary {
        input: Tensor<T>,
        /// Pre-scale convolution of the binarized operands, `N x C_out x P`.
        raw: Vec<T>,
    },
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MaxPool {
        argmax: Vec<u32>,
    },
    None,
}

/// Parameter gradients of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad<T> {
    None,
    Conv { weight: Vec<T>, bias: Vec<T> },
    Binary {
        /// `dL_S/dw` through the estimator.
        weight: Vec<T>,
        /// `dL_S/d inv_alpha`.
        inv_alpha: Vec<T>,
    },
    BatchNorm { gamma: Vec<T>, beta: Vec<T> },
    PRelu { slope: Vec<T> },
    Linear { weight: Vec<T>, bias: Vec<T> },
}

fn batch_of<T: Scalar>(x: &Tensor<T>, sample: &[usize], op: &'static str) -> Result<usize> {
    let s = x.shape();
    if s.len() != sample.len() + 1 || &s[1..] != sample {
        let mut want = vec![0];
        want.extend_from_slice(sample);
        return Err(Error::shape(op, s, &want));
    }
    Ok(s[0])
}


impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::RealConv(_) => "real-conv",
            Layer::BinaryConv(_) => "binary-conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::PRelu(_) => "prelu",
            Layer::MaxPool(_) => "maxpool",
            Layer::Flatten { .. } => "flatten",
            Layer::Linear(_) => "real-linear",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Layer::RealConv(_) | Layer::BinaryConv(_) | Layer::Linear(_))
    }

    pub fn in_shape(&self) -> Vec<usize> {
        match self {
            Layer::RealConv(c) => vec![c.geom.c_in, c.geom.height, c.geom.width],
            Layer::BinaryConv(c) => vec![c.geom.c_in, c.geom.height, c.geom.width],
            Layer::BatchNorm(b) => b.shape.clone(),
            Layer::PRelu(p) => p.shape.clone(),
            Layer::MaxPool(m) => m.in_shape.to_vec(),
            Layer::Flatten { in_shape } => in_shape.clone(),
            Layer::Linear(l) => vec![l.weight.shape()[1]],
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        match self {
            Layer::RealConv(c) => vec![c.geom.c_out, c.geom.out_h, c.geom.out_w],
            Layer::BinaryConv(c) => vec![c.geom.c_out, c.geom.out_h, c.geom.out_w],
            Layer::BatchNorm(b) => b.shape.clone(),
            Layer::PRelu(p) => p.shape.clone(),
            Layer::MaxPool(m) => {
                let [c, h, w] = m.in_shape;
                vec![c, h / m.size, w / m.size]
            }
            Layer::Flatten { in_shape } => vec![in_shape.iter().product()],
            Layer::Linear(l) => vec![l.weight.shape()[0]],
        }
    }

    /// Inference forward: packed kernel for binary layers, running statistics for BN.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = batch_of(x, &self.in_shape(), self.kind())?;
        match self {
            Layer::BinaryConv(c) => {
                let g = &c.geom;
                let filters = pack_filters(&c.weight)?;
                let mut raw = vec![0i32; g.out_len()];
                let mut out = Vec::with_capacity(n * g.out_len());
                let pixels = g.out_pixels();
                for xs in x.data().chunks(g.in_len()) {
                    let a = pack_activation(xs, g.c_in, g.height, g.width);
                    binary_conv_raw_into(&a, &filters, g, &mut raw);
                    for (o, rs) in raw.chunks(pixels).enumerate() {
                        let alpha = c.scale.alpha(o);
                        out.extend(rs.iter().map(|&r| T::from_i64_exact(r as i64) * alpha));
                    }
                }
                Ok(batched_t(n, &self.out_shape(), out))
            }
            Layer::BatchNorm(b) => {
                let (chan, plane) = bn_dims(&b.shape);
                let mut out = x.data().to_vec();
                for s in out.chunks_mut(chan * plane) {
                    for c in 0..chan {
                        let inv = T::one() / (b.running_var[c] + b.eps).sqrt();
                        for v in &mut s[c * plane..(c + 1) * plane] {
                            *v = b.gamma[c] * (*v - b.running_mean[c]) * inv + b.beta[c];
                        }
                    }
                }
                Ok(batched_t(n, &b.shape, out))
            }
            _ => self.forward_shared(x, n, None),
        }
    }

    /// Training forward. Batch-norm layers use and update batch statistics.
    pub fn forward_train(&mut self, x: Tensor<T>, bin: Binarizer) -> Result<(Tensor<T>, Cache<T>)> {
        let n = batch_of(&x, &self.in_shape(), self.kind())?;
        let out_shape = self.out_shape();
        match self {
            Layer::BinaryConv(c) => {
                let g = c.geom;
                let mut raw_all = Vec::with_capacity(n * g.out_len());
                match bin {
                    Binarizer::Sign(_) => {
                        let filters = pack_filters(&c.weight)?;
                        let mut raw = vec![0i32; g.out_len()];
                        for xs in x.data().chunks(g.in_len()) {
                            let a = pack_activation(xs, g.c_in, g.height, g.width);
                            binary_conv_raw_into(&a, &filters, &g, &mut raw);
                            raw_all.extend(raw.iter().map(|&r| T::from_i64_exact(r as i64)));
                        }
                    }
                    Binarizer::Smooth(_) => {
                        let wb: Vec<T> = c.weight.data().iter().map(|&v| bin.forward(v)).collect();
                        let mut col = vec![T::zero(); g.patch_len() * g.out_pixels()];
                        let mut out = vec![T::zero(); g.out_len()];
                        for xs in x.data().chunks(g.in_len()) {
                            let s: Vec<T> = xs.iter().map(|&v| bin.forward(v)).collect();
                            crate::tensor::conv2d_gemm(&s, &wb, &g, &mut col, &mut out);
                            raw_all.extend_from_slice(&out);
                        }
                    }
                }
                let alphas = c.scale.alphas();
                let mut out = raw_all.clone();
                for (k, os) in out.chunks_mut(g.out_pixels()).enumerate() {
                    let alpha = alphas[k % g.c_out];
                    for v in os {
                        *v *= alpha;
                    }
                }
                Ok((
                    batched_t(n, &out_shape, out),
                    Cache::Binary {
                        input: x,
                        raw: raw_all,
                    },
                ))
            }
            Layer::BatchNorm(b) => {
                let (chan, plane) = bn_dims(&b.shape);
                let count = T::from_usize(n * plane).expect("count");
                let mut mean = vec![T::zero(); chan];
                let mut var = vec![T::zero(); chan];
                for (k, s) in x.data().chunks(plane).enumerate() {
                    mean[k % chan] += lane_sum(s);
                }
                for m in &mut mean {
                    *m /= count;
                }
                for (k, s) in x.data().chunks(plane).enumerate() {
                    let m = mean[k % chan];
                    var[k % chan] += lane_sum_by(s, |v| (v - m) * (v - m));
                }
                for v in &mut var {
                    *v /= count;
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + b.eps).sqrt()).collect();
                let mut xhat = x.into_data();
                let mut out = vec![T::zero(); xhat.len()];
                for (k, (sx, so)) in xhat.chunks_mut(plane).zip(out.chunks_mut(plane)).enumerate() {
                    let c = k % chan;
                    let (m, inv, ga, be) = (mean[c], inv_std[c], b.gamma[c], b.beta[c]);
                    for (xv, ov) in sx.iter_mut().zip(so) {
                        *xv = (*xv - m) * inv;
                        *ov = ga * *xv + be;
                    }
                }
                let unbias = if n * plane > 1 {
                    count / (count - T::one())
                } else {
                    T::one()
                };
                for c in 0..chan {
                    b.running_mean[c] = (T::one() - b.momentum) * b.running_mean[c] + b.momentum * mean[c];
                    b.running_var[c] = (T::one() - b.momentum) * b.running_var[c] + b.momentum * var[c] * unbias;
                }
                Ok((batched_t(n, &out_shape, out), Cache::BatchNorm { xhat, inv_std }))
            }
            Layer::Flatten { .. } => {
                let y = x.reshape(&[&[n][..], &out_shape[..]].concat())?;
                Ok((y, Cache::None))
            }
            _ => {
                let mut argmax = Vec::new();
                let y = self.forward_shared(&x, n, Some(&mut argmax))?;
                let cache = match self {
                    Layer::MaxPool(_) => Cache::MaxPool { argmax },
                    _ => Cache::Input(x),
                };
                Ok((y, cache))
            }
        }
    }

    /// Forward for layers whose train and eval behavior coincide; max-pool records its argmax when asked.
    fn forward_shared(&self, x: &Tensor<T>, n: usize, record: Option<&mut Vec<u32>>) -> Result<Tensor<T>> {
        let out_shape = self.out_shape();
        match self {
            Layer::RealConv(c) => {
                let g = &c.geom;
                let mut col = vec![T::zero(); g.patch_len() * g.out_pixels()];
                let mut out = vec![T::zero(); n * g.out_len()];
                let pixels = g.out_pixels();
                for (xs, os) in x.data().chunks(g.in_len()).zip(out.chunks_mut(g.out_len())) {
                    crate::tensor::conv2d_gemm(xs, c.weight.data(), g, &mut col, os);
                    for (o, ps) in os.chunks_mut(pixels).enumerate() {
                        for v in ps {
                            *v += c.bias[o];
                        }
                    }
                }
                Ok(batched_t(n, &out_shape, out))
            }
            Layer::PRelu(p) => {
                let (chan, plane) = bn_dims(&p.shape);
                let mut out = x.data().to_vec();
                for (k, s) in out.chunks_mut(plane).enumerate() {
                    let a = p.slope[k % chan];
                    for v in s {
                        *v = if *v < T::zero() { *v * a } else { *v };
                    }
                }
                Ok(batched_t(n, &out_shape, out))
            }
            Layer::MaxPool(m) => {
                let [c, h, w] = m.in_shape;
                let (oh, ow) = (h / m.size, w / m.size);
                let mut out = Vec::with_capacity(n * c * oh * ow);
                let mut argmax = record;
                if let Some(a) = argmax.as_deref_mut() {
                    a.clear();
                    a.reserve(n * c * oh * ow);
                }
                for s in x.data().chunks(c * h * w) {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = T::neg_infinity();
                                let mut arg = 0usize;
                                for dy in 0..m.size {
                                    for dx in 0..m.size {
                                        let idx = (ch * h + oy * m.size + dy) * w + ox * m.size + dx;
                                        if s[idx] > best {
                                            best = s[idx];
                                            arg = idx;
                                        }
                                    }
                                }
                                out.push(best);
                                if let Some(a) = argmax.as_deref_mut() {
                                    a.push(arg as u32);
                                }
                            }
                        }
                    }
                }
                Ok(batched_t(n, &out_shape, out))
            }
            Layer::Flatten { .. } => Ok(batched_t(n, &out_shape, x.data().to_vec())),
            Layer::Linear(l) => {
                let (o, i) = (l.weight.shape()[0], l.weight.shape()[1]);
                let mut out = vec![T::zero(); n * o];
                for row in out.chunks_mut(o) {
                    row.copy_from_slice(&l.bias);
                }
                T::gemm(n, i, o, T::one(), x.data(), false, l.weight.data(), true, T::one(), &mut out);
                Ok(batched_t(n, &out_shape, out))
            }
            Layer::BinaryConv(_) | Layer::BatchNorm(_) => unreachable!("handled by caller"),
        }
    }

    /// Backpropagates `grad_out`; returns the input gradient and this layer's parameter gradients.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
        bin: Binarizer,
    ) -> Result<(Tensor<T>, LayerGrad<T>)> {
        let in_shape = self.in_shape();
        let n = batch_of(grad_out, &self.out_shape(), self.kind())?;
        let gd = grad_out.data();
        match (self, cache) {
            (Layer::RealConv(c), Cache::Input(x)) => {
                let g = &c.geom;
                let (j, p) = (g.patch_len(), g.out_pixels());
                let mut col = vec![T::zero(); j * p];
                let mut gcol = vec![T::zero(); j * p];
                let mut gw = vec![T::zero(); c.weight.len()];
                let mut gb = vec![T::zero(); g.c_out];
                let mut dx = vec![T::zero(); n * g.in_len()];
                for ((xs, gs), dxs) in x
                    .data()
                    .chunks(g.in_len())
                    .zip(gd.chunks(g.out_len()))
                    .zip(dx.chunks_mut(g.in_len()))
                {
                    im2col(xs, g, &mut col);
                    T::gemm(g.c_out, p, j, T::one(), gs, false, &col, true, T::one(), &mut gw);
                    for (o, ps) in gs.chunks(p).enumerate() {
                        gb[o] += lane_sum(ps);
                    }
                    T::gemm(j, g.c_out, p, T::one(), c.weight.data(), true, gs, false, T::zero(), &mut gcol);
                    col2im(&gcol, g, dxs);
                }
                Ok((
                    batched_t(n, &in_shape, dx),
                    LayerGrad::Conv { weight: gw, bias: gb },
                ))
            }
            (Layer::BinaryConv(c), Cache::Binary { input, raw }) => {
                let g = &c.geom;
                let (j, p) = (g.patch_len(), g.out_pixels());
                let alphas = c.scale.alphas();
                let wb: Vec<T> = c.weight.data().iter().map(|&v| bin.forward(v)).collect();
                let mut wb_scaled = wb.clone();
                for (row, &a) in wb_scaled.chunks_mut(j).zip(&alphas) {
                    for v in row {
                        *v *= a;
                    }
                }
                let mut contraction = vec![T::zero(); g.c_out];
                for (k, (gs, rs)) in gd.chunks(p).zip(raw.chunks(p)).enumerate() {
                    contraction[k % g.c_out] += lane_dot(gs, rs);
                }
                let mut col = vec![T::zero(); j * p];
                let mut gcol = vec![T::zero(); j * p];
                let mut gwb = vec![T::zero(); c.weight.len()];
                let mut dx = vec![T::zero(); n * g.in_len()];
                let mut s = vec![T::zero(); g.in_len()];
                for ((xs, gs), dxs) in input
                    .data()
                    .chunks(g.in_len())
                    .zip(gd.chunks(g.out_len()))
                    .zip(dx.chunks_mut(g.in_len()))
                {
                    for (sv, &xv) in s.iter_mut().zip(xs) {
                        *sv = bin.forward(xv);
                    }
                    im2col(&s, g, &mut col);
                    T::gemm(g.c_out, p, j, T::one(), gs, false, &col, true, T::one(), &mut gwb);
                    T::gemm(j, g.c_out, p, T::one(), &wb_scaled, true, gs, false, T::zero(), &mut gcol);
                    col2im(&gcol, g, dxs);
                    for (d, &xv) in dxs.iter_mut().zip(xs) {
                        *d *= bin.derivative(xv);
                    }
                }
                let mut gw = gwb;
                for ((row, ws), &a) in gw.chunks_mut(j).zip(c.weight.data().chunks(j)).zip(&alphas) {
                    for (gv, &wv) in row.iter_mut().zip(ws) {
                        *gv = *gv * a * bin.derivative(wv);
                    }
                }
                let g_inv = crate::bilinear::task_grad_wrt_a(&contraction, &c.scale);
                Ok((
                    batched_t(n, &in_shape, dx),
                    LayerGrad::Binary {
                        weight: gw,
                        inv_alpha: g_inv,
                    },
                ))
            }
            (Layer::BatchNorm(b), Cache::BatchNorm { xhat, inv_std }) => {
                let (chan, plane) = bn_dims(&b.shape);
                let m = T::from_usize(n * plane).expect("count");
                let mut gbeta = vec![T::zero(); chan];
                let mut ggamma = vec![T::zero(); chan];
                for (k, (gs, xs)) in gd.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                    gbeta[k % chan] += lane_sum(gs);
                    ggamma[k % chan] += lane_dot(gs, xs);
                }
                let mut dx = vec![T::zero(); gd.len()];
                for (k, ((ds, gs), xs)) in dx
                    .chunks_mut(plane)
                    .zip(gd.chunks(plane))
                    .zip(xhat.chunks(plane))
                    .enumerate()
                {
                    let c = k % chan;
                    let ga = b.gamma[c];
                    let scale = inv_std[c] / m;
                    let (sum_d, sum_dx) = (gbeta[c] * ga, ggamma[c] * ga);
                    for ((d, &gv), &xv) in ds.iter_mut().zip(gs).zip(xs) {
                        *d = scale * (m * gv * ga - sum_d - xv * sum_dx);
                    }
                }
                Ok((
                    batched_t(n, &in_shape, dx),
                    LayerGrad::BatchNorm {
                        gamma: ggamma,
                        beta: gbeta,
                    },
                ))
            }
            (Layer::PRelu(pr), Cache::Input(x)) => {
                let (chan, plane) = bn_dims(&pr.shape);
                let mut gs = vec![T::zero(); chan];
                let mut dx = gd.to_vec();
                for (k, (ds, xs)) in dx.chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
                    let a = pr.slope[k % chan];
                    let mut acc = T::zero();
                    for (d, &xv) in ds.iter_mut().zip(xs) {
                        let neg = xv < T::zero();
                        acc += if neg { *d * xv } else { T::zero() };
                        *d = if neg { *d * a } else { *d };
                    }
                    gs[k % chan] += acc;
                }
                Ok((batched_t(n, &in_shape, dx), LayerGrad::PRelu { slope: gs }))
            }
            (Layer::MaxPool(m), Cache::MaxPool { argmax }) => {
                let in_len: usize = m.in_shape.iter().product();
                let out_len = gd.len() / n;
                let mut dx = vec![T::zero(); n * in_len];
                for (s, (ds, gs)) in dx.chunks_mut(in_len).zip(gd.chunks(out_len)).enumerate() {
                    for (k, &gv) in gs.iter().enumerate() {
                        ds[argmax[s * out_len + k] as usize] += gv;
                    }
                }
                Ok((batched_t(n, &in_shape, dx), LayerGrad::None))
            }
            (Layer::Flatten { .. }, _) => Ok((batched_t(n, &in_shape, gd.to_vec()), LayerGrad::None)),
            (Layer::Linear(l), Cache::Input(x)) => {
                let (o, i) = (l.weight.shape()[0], l.weight.shape()[1]);
                let mut gw = vec![T::zero(); o * i];
                T::gemm(o, n, i, T::one(), gd, true, x.data(), false, T::zero(), &mut gw);
                let mut gb = vec![T::zero(); o];
                for row in gd.chunks(o) {
                    for (b, &v) in gb.iter_mut().zip(row) {
                        *b += v;
                    }
                }
                let mut dx = vec![T::zero(); n * i];
                T::gemm(n, o, i, T::one(), gd, false, l.weight.data(), false, T::zero(), &mut dx);
                Ok((batched_t(n, &in_shape, dx), LayerGrad::Linear { weight: gw, bias: gb }))
            }
            _ => Err(Error::invalid("backward", format!("cache does not belong to a {} layer", self.kind()))),
        }
    }
}

/// Sum with eight interleaved accumulators (fixed order, so results are reproducible).
#[inline]
pub(crate) fn lane_sum_by<T: Scalar>(v: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); 8];
    let mut chunks = v.chunks_exact(8);
    for c in &mut chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += f(x);
        }
    }
    for (a, &x) in acc.iter_mut().zip(chunks.remainder()) {
        *a += f(x);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline]
pub(crate) fn lane_sum<T: Scalar>(v: &[T]) -> T {
    lane_sum_by(v, |x| x)
}

#[inline]
pub(crate) fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    for (k, (&x, &y)) in ra.iter().zip(rb).enumerate() {
        acc[k] += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// `(channels, elements per channel)` of a per-sample shape with the channel axis first.
fn bn_dims(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1..].iter().product())
}

fn batched_t<T: Scalar>(n: usize, sample: &[usize], data: Vec<T>) -> Tensor<T> {
    let mut shape = vec![n];
    shape.extend_from_slice(sample);
    Tensor::new(shape, data).expect("layer output shape")
}
