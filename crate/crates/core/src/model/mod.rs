//! Small convolutional networks with real first/last layers and 1-bit middle layers.

mod layers;
pub mod loss;

pub use layers::{BatchNorm, BinaryConv, Binarizer, Cache, Conv, Layer, LayerGrad, Linear, MaxPool, PRelu};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binarize::ScaleDiag;
use crate::error::{Error, Result};
use crate::rbonn::BacktrackState;
use crate::scalar::Scalar;
use crate::tensor::{ConvGeometry, Tensor};

/// Architecture description of one layer; geometry is inferred from the preceding layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    RealConv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BinaryConv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm,
    PRelu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Linear {
        features: usize,
    },
}

/// Initial slope of PReLU units.
pub const PRELU_INIT: f64 = 0.25;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// `real 3x3 conv (16) -> BN -> PReLU -> [binary 3x3 conv + BN + PReLU] x 2 (32, 64, maxpool between) -> linear`.
pub fn bincnn4_specs(classes: usize) -> Vec<LayerSpec> {
    let conv = |channels| LayerSpec::RealConv {
        channels,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let bconv = |channels| LayerSpec::BinaryConv {
        channels,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    vec![
        conv(16),
        LayerSpec::BatchNorm,
        LayerSpec::PRelu,
        bconv(32),
        LayerSpec::BatchNorm,
        LayerSpec::PRelu,
        LayerSpec::MaxPool { size: 2 },
        bconv(64),
        LayerSpec::BatchNorm,
        LayerSpec::PRelu,
        LayerSpec::Flatten,
        LayerSpec::Linear { features: classes },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes a network. Conv and linear weights are
    /// Kaiming-uniform; binary layers start with `alpha_i` equal to the mean
    /// absolute weight of filter `i` and `U = 0`.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match *spec {
                LayerSpec::RealConv {
                    channels,
                    kernel,
                    stride,
                    padding,
                }
                | LayerSpec::BinaryConv {
                    channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let chw: [usize; 3] = shape.as_slice().try_into().map_err(|_| {
                        Error::invalid("network", format!("convolution needs a C x H x W input, got {shape:?}"))
                    })?;
                    let geom = ConvGeometry::new(chw, channels, kernel, stride, padding)?;
                    let fan_in = geom.patch_len() as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    let weight = Tensor::new(
                        geom.weight_shape().to_vec(),
                        uniform(&mut rng, channels * geom.patch_len(), bound),
                    )?;
                    if matches!(spec, LayerSpec::RealConv { .. }) {
                        Layer::RealConv(Conv {
                            weight,
                            bias: vec![T::zero(); channels],
                            geom,
                        })
                    } else {
                        Layer::BinaryConv(BinaryConv {
                            scale: ScaleDiag::from_weights(&weight),
                            state: BacktrackState::new(channels, T::zero()),
                            weight,
                            geom,
                        })
                    }
                }
                LayerSpec::BatchNorm => {
                    let c = shape[0];
                    Layer::BatchNorm(BatchNorm {
                        gamma: vec![T::one(); c],
                        beta: vec![T::zero(); c],
                        running_mean: vec![T::zero(); c],
                        running_var: vec![T::one(); c],
                        momentum: T::lit(BN_MOMENTUM),
                        eps: T::lit(BN_EPS),
                        shape: shape.clone(),
                    })
                }
                LayerSpec::PRelu => Layer::PRelu(PRelu {
                    slope: vec![T::lit(PRELU_INIT); shape[0]],
                    shape: shape.clone(),
                }),
                LayerSpec::MaxPool { size } => {
                    let chw: [usize; 3] = shape.as_slice().try_into().map_err(|_| {
                        Error::invalid("network", format!("max-pool needs a C x H x W input, got {shape:?}"))
                    })?;
                    if size == 0 || chw[1] < size || chw[2] < size {
                        return Err(Error::invalid("network", format!("pool size {size} does not fit {shape:?}")));
                    }
                    Layer::MaxPool(MaxPool { size, in_shape: chw })
                }
                LayerSpec::Flatten => Layer::Flatten { in_shape: shape.clone() },
                LayerSpec::Linear { features } => {
                    if shape.len() != 1 {
                        return Err(Error::invalid("network", format!("linear layer needs a flat input, got {shape:?}")));
                    }
                    let bound = (6.0 / shape[0] as f64).sqrt();
                    Layer::Linear(Linear {
                        weight: Tensor::new(vec![features, shape[0]], uniform(&mut rng, features * shape[0], bound))?,
                        bias: vec![T::zero(); features],
                    })
                }
            };
            shape = layer.out_shape();
            layers.push(layer);
        }
        let net = Self {
            input_shape: input_shape.to_vec(),
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn bincnn4(input_shape: &[usize], classes: usize, seed: u64) -> Result<Self> {
        Self::new(input_shape, &bincnn4_specs(classes), seed)
    }

    /// Reassembles a network from layers (checkpoint loading); checks shape chaining and layout rules.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Self { input_shape, layers };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_shape() != shape {
                return Err(Error::invalid(
                    "network",
                    format!("layer {i} ({}) expects {:?} but receives {shape:?}", l.kind(), l.in_shape()),
                ));
            }
            shape = l.out_shape();
        }
        let trainable: Vec<&Layer<T>> = self.layers.iter().filter(|l| l.is_trainable()).collect();
        match (trainable.first(), trainable.last()) {
            (Some(first), Some(last))
                if !matches!(first, Layer::BinaryConv(_)) && !matches!(last, Layer::BinaryConv(_)) =>
            {
                Ok(())
            }
            (None, _) => Err(Error::invalid("network", "no trainable layer")),
            _ => Err(Error::invalid(
                "network",
                "first trainable layer and final classifier must be real-valued",
            )),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers.last().map(|l| l.out_shape()).unwrap_or_else(|| self.input_shape.clone())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// `(layer index, layer)` of every binary convolution.
    pub fn binary_layers(&self) -> impl Iterator<Item = (usize, &BinaryConv<T>)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::BinaryConv(b) => Some((i, b)),
            _ => None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::RealConv(c) => c.weight.len() + c.bias.len(),
                Layer::BinaryConv(b) => b.weight.len() + b.scale.len(),
                Layer::BatchNorm(b) => 2 * b.gamma.len(),
                Layer::PRelu(p) => p.slope.len(),
                Layer::Linear(l) => l.weight.len() + l.bias.len(),
                Layer::MaxPool(_) | Layer::Flatten { .. } => 0,
            })
            .sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            let mut want = vec![0];
            want.extend_from_slice(&self.input_shape);
            return Err(Error::shape("forward", s, &want));
        }
        Ok(())
    }

    /// Evaluation-mode logits for a batch `N x C x H x W`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward_eval(&h)?;
        }
        Ok(h)
    }

    /// Training-mode forward; returns logits and one cache per layer.
    pub fn forward_train(&mut self, x: &Tensor<T>, bin: Binarizer) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &mut self.layers {
            let (y, c) = l.forward_train(h, bin)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    /// Backpropagates logit gradients; returns per-layer parameter gradients and the input gradient.
    pub fn backward(
        &self,
        caches: &[Cache<T>],
        grad_logits: &Tensor<T>,
        bin: Binarizer,
    ) -> Result<(Vec<LayerGrad<T>>, Tensor<T>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::invalid("backward", "cache count does not match layer count"));
        }
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (dx, pg) = l.backward(&caches[i], &g, bin)?;
            grads[i] = pg;
            g = dx;
        }
        Ok((grads, g))
    }

    /// Calls `f` with every parameter vector in layer order, including batch-norm
    /// running statistics; `with_state` adds recurrent gains and snapshots.
    pub fn visit_params(&self, with_state: bool, f: &mut dyn FnMut(usize, &'static str, &[T])) {
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::RealConv(c) => {
                    f(i, "weight", c.weight.data());
                    f(i, "bias", &c.bias);
                }
                Layer::BinaryConv(b) => {
                    f(i, "weight", b.weight.data());
                    f(i, "inv_alpha", b.scale.inv_alpha());
                    if with_state {
                        f(i, "u", &b.state.u);
                        if let Some(w) = &b.state.w_prev {
                            f(i, "w_prev", w.data());
                        }
                        if let Some(a) = &b.state.a_prev {
                            f(i, "a_prev", a.inv_alpha());
                        }
                    }
                }
                Layer::BatchNorm(b) => {
                    f(i, "gamma", &b.gamma);
                    f(i, "beta", &b.beta);
                    f(i, "running_mean", &b.running_mean);
                    f(i, "running_var", &b.running_var);
                }
                Layer::PRelu(p) => f(i, "slope", &p.slope),
                Layer::Linear(l) => {
                    f(i, "weight", l.weight.data());
                    f(i, "bias", &l.bias);
                }
                Layer::MaxPool(_) | Layer::Flatten { .. } => {}
            }
        }
    }

    /// Bit patterns of all parameters, in [`Network::visit_params`] order.
    pub fn param_bits(&self, with_state: bool) -> Vec<u64> {
        let mut out = Vec::new();
        self.visit_params(with_state, &mut |_, _, v| out.extend(v.iter().map(|x| x.to_bits_u64())));
        out
    }

    /// First parameter (layer, name, offset) whose bits differ, if any.
    pub fn first_bit_difference(&self, other: &Self, with_state: bool) -> Option<(usize, &'static str, usize)> {
        let mut a = Vec::new();
        self.visit_params(with_state, &mut |i, n, v| a.push((i, n, v.iter().map(|x| x.to_bits_u64()).collect::<Vec<_>>())));
        let mut b = Vec::new();
        other.visit_params(with_state, &mut |i, n, v| b.push((i, n, v.iter().map(|x| x.to_bits_u64()).collect::<Vec<_>>())));
        if a.len() != b.len() {
            return Some((usize::MAX, "parameter count", 0));
        }
        for ((i, n, x), (_, _, y)) in a.iter().zip(&b) {
            if x.len() != y.len() {
                return Some((*i, n, x.len().min(y.len())));
            }
            if let Some(k) = x.iter().zip(y).position(|(p, q)| p != q) {
                return Some((*i, n, k));
            }
        }
        None
    }

    /// Element-type conversion (e.g. an `f64` copy for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let v = |x: &[T]| -> Vec<U> { x.iter().map(|&a| U::lit(a.to_f64_lossy())).collect() };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::RealConv(c) => Layer::RealConv(Conv {
                    weight: c.weight.cast(),
                    bias: v(&c.bias),
                    geom: c.geom,
                }),
                Layer::BinaryConv(b) => Layer::BinaryConv(BinaryConv {
                    weight: b.weight.cast(),
                    scale: ScaleDiag::new(v(b.scale.inv_alpha())).expect("valid scale"),
                    state: BacktrackState {
                        u: v(&b.state.u),
                        w_prev: b.state.w_prev.as_ref().map(|w| w.cast()),
                        a_prev: b
                            .state
                            .a_prev
                            .as_ref()
                            .map(|a| ScaleDiag::new(v(a.inv_alpha())).expect("valid scale")),
                    },
                    geom: b.geom,
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    gamma: v(&b.gamma),
                    beta: v(&b.beta),
                    running_mean: v(&b.running_mean),
                    running_var: v(&b.running_var),
                    momentum: U::lit(b.momentum.to_f64_lossy()),
                    eps: U::lit(b.eps.to_f64_lossy()),
                    shape: b.shape.clone(),
                }),
                Layer::PRelu(p) => Layer::PRelu(PRelu {
                    slope: v(&p.slope),
                    shape: p.shape.clone(),
                }),
                Layer::MaxPool(m) => Layer::MaxPool(m.clone()),
                Layer::Flatten { in_shape } => Layer::Flatten {
                    in_shape: in_shape.clone(),
                },
                Layer::Linear(l) => Layer::Linear(Linear {
                    weight: l.weight.cast(),
                    bias: v(&l.bias),
                }),
            })
            .collect();
        Network {
            input_shape: self.input_shape.clone(),
            layers,
        }
    }
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
