//! Training loop: task loss, bilinear penalty, and the recurrent scale/weight/gain updates.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bilinear::{grad_g_wrt_a, grad_g_wrt_w, objective_g, Regularizer, WeightMatrixView};
use crate::binarize::{Estimator, ScaleDiag, EPS_A};
use crate::data::{augment_flip_crop, Dataset};
use crate::error::{Error, Result};
use crate::model::loss::cross_entropy;
use crate::model::{argmax, Binarizer, Layer, LayerGrad, Network};
use crate::rbonn::{backtrack_w, density_mask, density_threshold, drelu, grad_u, update_a, update_u};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

impl std::str::FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(format!("unknown schedule {other:?} (expected constant or cosine)")),
        }
    }
}

/// Optimizer applied to the task gradient of weights (binary and real).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightStep {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for WeightStep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(WeightStep::Adam),
            "sgd" => Ok(WeightStep::Sgd),
            other => Err(format!("unknown optimizer {other:?} (expected adam or sgd)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    /// Scale learning rate.
    pub eta1: f64,
    /// Weight learning rate.
    pub eta2: f64,
    /// Recurrent gain learning rate (never annealed).
    pub eta3: f64,
    pub estimator: Estimator,
    pub regularizer: Regularizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Coupled L2 decay on real-valued conv and linear weights.
    pub weight_decay: f64,
    pub weight_step: WeightStep,
    /// `false` removes the bilinear penalty and the backtracking path entirely.
    pub recurrent: bool,
    /// Verify the DReLU and density structure on every step.
    pub check_invariants: bool,
    /// Random flip and padded crop on training batches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            tau: 0.6,
            eta1: 1e-3,
            eta2: 1e-3,
            eta3: 1e-4,
            estimator: Estimator::Ste,
            regularizer: Regularizer::L2,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            lr_schedule: LrSchedule::Cosine,
            weight_decay: 1e-5,
            weight_step: WeightStep::Adam,
            recurrent: true,
            check_invariants: false,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("config", reason));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a finite nonnegative number, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2), ("eta3", self.eta3)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        Ok(())
    }

    /// Config for the plain binary baseline: no penalty, no backtracking.
    pub fn baseline(&self) -> Self {
        Self {
            recurrent: false,
            ..self.clone()
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// Optimizer state: completed step count and moments per layer, per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub moments: Vec<Vec<Moments<T>>>,
}

/// Parameter-group sizes of a layer, in update order.
pub fn param_groups<T: Scalar>(layer: &Layer<T>) -> Vec<usize> {
    match layer {
        Layer::RealConv(c) => vec![c.weight.len(), c.bias.len()],
        Layer::BinaryConv(b) => vec![b.weight.len()],
        Layer::BatchNorm(b) => vec![b.gamma.len(), b.beta.len()],
        Layer::PRelu(p) => vec![p.slope.len()],
        Layer::Linear(l) => vec![l.weight.len(), l.bias.len()],
        Layer::MaxPool(_) | Layer::Flatten { .. } => vec![],
    }
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            step: 0,
            moments: net
                .layers()
                .iter()
                .map(|l| param_groups(l).into_iter().map(Moments::zeros).collect())
                .collect(),
        }
    }

    pub fn matches(&self, net: &Network<T>) -> bool {
        self.moments.len() == net.layers().len()
            && self.moments.iter().zip(net.layers()).all(|(ms, l)| {
                let sizes = param_groups(l);
                ms.len() == sizes.len() && ms.iter().zip(sizes).all(|(m, n)| m.m.len() == n && m.v.len() == n)
            })
    }
}

#[derive(Clone, Copy)]
struct StepRule {
    kind: WeightStep,
    lr: f64,
    /// 1-based step index used for bias correction.
    t: u64,
}

impl StepRule {
    fn apply<T: Scalar>(&self, p: &mut [T], g: &[T], decay: f64, mom: &mut Moments<T>) {
        let lr = T::lit(self.lr);
        let wd = T::lit(decay);
        match self.kind {
            WeightStep::Sgd => {
                for (pv, &gv) in p.iter_mut().zip(g) {
                    let gv = if decay != 0.0 { gv + wd * *pv } else { gv };
                    *pv -= lr * gv;
                }
            }
            WeightStep::Adam => {
                let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
                let c1 = T::one() - T::lit(ADAM_BETA1.powi(self.t as i32));
                let c2 = T::one() - T::lit(ADAM_BETA2.powi(self.t as i32));
                let eps = T::lit(ADAM_EPS);
                for (((pv, &gv), m), v) in p.iter_mut().zip(g).zip(mom.m.iter_mut()).zip(mom.v.iter_mut()) {
                    let gv = if decay != 0.0 { gv + wd * *pv } else { gv };
                    *m = b1 * *m + (T::one() - b1) * gv;
                    *v = b2 * *v + (T::one() - b2) * gv * gv;
                    *pv -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Per-step training metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Task loss `L_S`.
    pub loss_task: f64,
    /// Sum of the bilinear objective over binary layers.
    pub g_total: f64,
    /// `L_S + lambda * G_total`.
    pub loss: f64,
    /// Number of rows passed by DReLU in each binary layer (zero without backtracking).
    pub drelu_rows: Vec<usize>,
}

impl StepMetrics {
    /// `step  L_S  G_total  accuracy  rows...`, tab-separated; accuracy is `-` when absent.
    pub fn tsv(&self, accuracy: Option<f64>) -> String {
        let mut s = format!(
            "{}\t{:.6}\t{:.6}\t{}",
            self.step,
            self.loss_task,
            self.g_total,
            accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"))
        );
        for r in &self.drelu_rows {
            s.push('\t');
            s.push_str(&r.to_string());
        }
        s
    }
}

pub const METRICS_HEADER: &str = "step\tloss_task\tg_total\taccuracy\tdrelu_rows";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub test_accuracy: f64,
    pub last: StepMetrics,
}

pub struct Trainer<T> {
    pub net: Network<T>,
    pub cfg: TrainConfig,
    pub opt: OptimizerState<T>,
    total_steps: u64,
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> u64 {
    samples.div_ceil(batch_size) as u64
}

impl<T: Scalar> Trainer<T> {
    /// `train_len` fixes the cosine schedule horizon (`epochs * ceil(train_len / batch)`).
    pub fn new(net: Network<T>, cfg: TrainConfig, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        let opt = OptimizerState::new(&net);
        let total_steps = cfg.epochs as u64 * steps_per_epoch(train_len, cfg.batch_size);
        Ok(Self {
            net,
            cfg,
            opt,
            total_steps,
        })
    }

    /// Resumes from saved optimizer state.
    pub fn resume(net: Network<T>, cfg: TrainConfig, train_len: usize, opt: OptimizerState<T>) -> Result<Self> {
        if !opt.matches(&net) {
            return Err(Error::invalid("resume", "optimizer state does not match the network"));
        }
        let mut t = Self::new(net, cfg, train_len)?;
        t.opt = opt;
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.opt.step
    }

    /// Multiplier on `eta1` and `eta2` at the current step.
    pub fn lr_factor(&self) -> f64 {
        match self.cfg.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let frac = (self.opt.step as f64 / self.total_steps.max(1) as f64).min(1.0);
                0.5 * (1.0 + (PI * frac).cos())
            }
        }
    }

    fn binarizer(&self) -> Binarizer {
        Binarizer::Sign(self.cfg.estimator)
    }

    /// One iteration on a minibatch.
    ///
    /// All gradients are taken at the pre-update state; then, per binary
    /// layer, the scale step, the plain weight step, the backtracking term
    /// (from the pre-update weights and scales), the gain step and the
    /// snapshot are applied in that order.
    pub fn training_step(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<StepMetrics> {
        let bin = self.binarizer();
        let step = self.opt.step;
        let (logits, caches) = self.net.forward_train(x, bin)?;
        let (loss_task, glogits) = cross_entropy(&logits, labels)?;
        if !loss_task.is_finite() {
            return Err(self.non_finite(step, &logits));
        }
        let (grads, _) = self.net.backward(&caches, &glogits, bin)?;
        drop(caches);
        if let Some(li) = grads.iter().position(|g| !grad_finite(g)) {
            return Err(Error::NonFinite {
                step,
                layer: Some(li),
                detail: format!("gradient of layer {li} ({}) is not finite", self.net.layers()[li].kind()),
            });
        }

        let cfg = &self.cfg;
        let recurrent = cfg.recurrent;
        let penalized = recurrent && cfg.lambda != 0.0;
        let lambda = T::lit(cfg.lambda);
        let f = self.lr_factor();
        let eta1 = T::lit(cfg.eta1 * f);
        let eta2 = T::lit(cfg.eta2 * f);
        let eta3 = T::lit(cfg.eta3);
        let rule = StepRule {
            kind: cfg.weight_step,
            lr: cfg.eta2 * f,
            t: step + 1,
        };
        let mut g_total = 0.0;
        let mut drelu_rows = Vec::new();

        for (li, ((layer, grad), moms)) in self
            .net
            .layers_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.opt.moments.iter_mut())
            .enumerate()
        {
            match (layer, grad) {
                (Layer::RealConv(c), LayerGrad::Conv { weight, bias }) => {
                    rule.apply(c.weight.data_mut(), &weight, cfg.weight_decay, &mut moms[0]);
                    rule.apply(&mut c.bias, &bias, 0.0, &mut moms[1]);
                }
                (Layer::Linear(l), LayerGrad::Linear { weight, bias }) => {
                    rule.apply(l.weight.data_mut(), &weight, cfg.weight_decay, &mut moms[0]);
                    rule.apply(&mut l.bias, &bias, 0.0, &mut moms[1]);
                }
                (Layer::BatchNorm(b), LayerGrad::BatchNorm { gamma, beta }) => {
                    rule.apply(&mut b.gamma, &gamma, 0.0, &mut moms[0]);
                    rule.apply(&mut b.beta, &beta, 0.0, &mut moms[1]);
                }
                (Layer::PRelu(p), LayerGrad::PRelu { slope }) => {
                    rule.apply(&mut p.slope, &slope, 0.0, &mut moms[0]);
                }
                (Layer::BinaryConv(b), LayerGrad::Binary { weight, inv_alpha }) => {
                    let w_t = b.weight.clone();
                    let scale_t = b.scale.clone();
                    let view = WeightMatrixView::of(&w_t);
                    g_total += objective_g(view, &scale_t, cfg.regularizer)?.to_f64_lossy();

                    let mut ga = inv_alpha;
                    let mut penalty_w = None;
                    if penalized {
                        for (d, r) in ga.iter_mut().zip(grad_g_wrt_a(view, &scale_t)?) {
                            *d += lambda * r;
                        }
                        penalty_w = Some(grad_g_wrt_w(view, &scale_t, cfg.regularizer)?);
                    }
                    let gu = if recurrent {
                        Some(grad_u(&weight, &b.state, &scale_t, cfg.tau)?)
                    } else {
                        None
                    };

                    b.scale = update_a(&scale_t, &ga, eta1)?;
                    // Only the task gradient goes through the wrapped step; the penalty is a plain eta2 step.
                    rule.apply(b.weight.data_mut(), &weight, 0.0, &mut moms[0]);
                    if let Some(pw) = penalty_w {
                        for (w, r) in b.weight.data_mut().iter_mut().zip(pw) {
                            *w -= eta2 * lambda * r;
                        }
                    }

                    if let Some(gu) = gu {
                        let rows = crate::rbonn::drelu_rows(view, &scale_t, cfg.tau)?;
                        let vanilla = b.weight.clone();
                        b.weight = backtrack_w(&vanilla, &w_t, &scale_t, &b.state, cfg.tau)?;
                        if cfg.check_invariants {
                            check_structure(step, li, &w_t, &scale_t, &vanilla, &b.weight, &b.state.u, cfg.tau)?;
                        }
                        update_u(&mut b.state, &gu, eta3)?;
                        b.state.snapshot(&w_t, &scale_t);
                        if cfg.check_invariants {
                            check_floors(step, li, &b.scale, &b.state.u)?;
                        }
                        drelu_rows.push(rows.iter().filter(|&&r| r).count());
                    } else {
                        drelu_rows.push(0);
                    }
                }
                (_, LayerGrad::None) => {}
                (l, _) => {
                    return Err(Error::invalid(
                        "training_step",
                        format!("gradient kind does not match layer {li} ({})", l.kind()),
                    ))
                }
            }
        }
        self.opt.step += 1;
        let loss_task = loss_task.to_f64_lossy();
        let loss = if penalized {
            loss_task + cfg.lambda * g_total
        } else {
            loss_task
        };
        Ok(StepMetrics {
            step,
            loss_task,
            g_total,
            loss,
            drelu_rows,
        })
    }

    fn non_finite(&self, step: u64, logits: &Tensor<T>) -> Error {
        let bad_layer = self.net.layers().iter().position(|l| !layer_params_finite(l));
        let detail = match bad_layer {
            Some(i) => format!("parameters of layer {i} ({}) are not finite", self.net.layers()[i].kind()),
            None if !logits.all_finite() => "logits are not finite".to_string(),
            None => "cross-entropy overflowed".to_string(),
        };
        Error::NonFinite {
            step,
            layer: bad_layer,
            detail,
        }
    }

    /// One pass over `data` in a seed- and epoch-dependent order.
    pub fn train_epoch(
        &mut self,
        data: &Dataset<T>,
        epoch: usize,
        on_step: &mut dyn FnMut(&StepMetrics),
    ) -> Result<(f64, StepMetrics)> {
        if data.is_empty() {
            return Err(Error::invalid("train_epoch", "empty training set"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1 + epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut last = None;
        let batches = order.chunks(self.cfg.batch_size);
        let count = batches.len();
        for idx in batches {
            let (mut x, y) = data.batch(idx);
            if self.cfg.augment {
                augment_flip_crop(&mut x, &mut rng);
            }
            let m = self.training_step(&x, &y)?;
            on_step(&m);
            total += m.loss;
            last = Some(m);
        }
        Ok((total / count as f64, last.expect("at least one batch")))
    }

    /// Trains for `cfg.epochs` epochs starting after `start_epoch` completed ones, evaluating after each.
    pub fn fit(
        &mut self,
        train: &Dataset<T>,
        test: &Dataset<T>,
        start_epoch: usize,
        on_step: &mut dyn FnMut(&StepMetrics),
        on_epoch: &mut dyn FnMut(&EpochSummary, &Network<T>) -> Result<()>,
    ) -> Result<Vec<EpochSummary>> {
        let mut out = Vec::new();
        for epoch in start_epoch..self.cfg.epochs {
            let (mean_loss, last) = self.train_epoch(train, epoch, on_step)?;
            let test_accuracy = evaluate(&self.net, test)?;
            let s = EpochSummary {
                epoch,
                mean_loss,
                test_accuracy,
                last,
            };
            on_epoch(&s, &self.net)?;
            out.push(s);
        }
        Ok(out)
    }
}

fn layer_params_finite<T: Scalar>(l: &Layer<T>) -> bool {
    let ok = |v: &[T]| v.iter().all(|x| x.is_finite());
    match l {
        Layer::RealConv(c) => ok(c.weight.data()) && ok(&c.bias),
        Layer::BinaryConv(b) => ok(b.weight.data()) && ok(b.scale.inv_alpha()) && ok(&b.state.u),
        Layer::BatchNorm(b) => ok(&b.gamma) && ok(&b.beta) && ok(&b.running_mean) && ok(&b.running_var),
        Layer::PRelu(p) => ok(&p.slope),
        Layer::Linear(l) => ok(l.weight.data()) && ok(&l.bias),
        Layer::MaxPool(_) | Layer::Flatten { .. } => true,
    }
}

fn grad_finite<T: Scalar>(g: &LayerGrad<T>) -> bool {
    let ok = |v: &[T]| v.iter().all(|x| x.is_finite());
    match g {
        LayerGrad::None => true,
        LayerGrad::Conv { weight, bias } | LayerGrad::Linear { weight, bias } => ok(weight) && ok(bias),
        LayerGrad::Binary { weight, inv_alpha } => ok(weight) && ok(inv_alpha),
        LayerGrad::BatchNorm { gamma, beta } => ok(gamma) && ok(beta),
        LayerGrad::PRelu { slope } => ok(slope),
    }
}

fn pairwise_distinct<T: Scalar>(v: &[T]) -> bool {
    let mut s: Vec<T> = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    s.windows(2).all(|p| p[0] != p[1])
}

/// Recomputes the density masks and DReLU output independently and checks
/// that only the selected rows moved away from the plain weight step.
#[allow(clippy::too_many_arguments)]
fn check_structure<T: Scalar>(
    step: u64,
    layer: usize,
    w_t: &Tensor<T>,
    scale_t: &ScaleDiag<T>,
    vanilla: &Tensor<T>,
    next: &Tensor<T>,
    u: &[T],
    tau: f64,
) -> Result<()> {
    let fail = |detail: String| Err(Error::Invariant { step, layer, detail });
    let view = WeightMatrixView::of(w_t);
    let (rows, cols) = (view.rows(), view.cols());
    let norms = view.row_l1_norms();
    let dw = density_mask(&norms, tau)?;
    let da = density_mask(scale_t.inv_alpha(), tau)?;
    let expect = rows - density_threshold(rows, tau);
    for (name, values, mask) in [("weight norms", &norms[..], &dw), ("scales", scale_t.inv_alpha(), &da)] {
        if pairwise_distinct(values) && mask.count() != expect {
            return fail(format!("{name}: {} dense entries, expected {expect}", mask.count()));
        }
    }
    let out = drelu(view, scale_t, tau)?;
    for i in 0..rows {
        let selected = !dw.mask[i] && da.mask[i];
        let row = &out[i * cols..(i + 1) * cols];
        let nonzero = row.iter().any(|&v| v != T::zero());
        if nonzero && !selected {
            return fail(format!("row {i} passed DReLU but is not selected"));
        }
        if selected && row != view.row(i) {
            return fail(format!("row {i} is selected but DReLU did not copy it"));
        }
        let moved = next.data()[i * cols..(i + 1) * cols] != vanilla.data()[i * cols..(i + 1) * cols];
        if moved && !(selected && u[i] != T::zero()) {
            return fail(format!("row {i} was backtracked without being selected"));
        }
    }
    Ok(())
}

fn check_floors<T: Scalar>(step: u64, layer: usize, scale: &ScaleDiag<T>, u: &[T]) -> Result<()> {
    if scale.inv_alpha().iter().any(|&a| !(a >= T::lit(EPS_A))) {
        return Err(Error::Invariant {
            step,
            layer,
            detail: "scale entry below floor".into(),
        });
    }
    if u.iter().any(|&v| !(v >= T::zero())) {
        return Err(Error::Invariant {
            step,
            layer,
            detail: "negative recurrent gain".into(),
        });
    }
    Ok(())
}

pub const EVAL_BATCH: usize = 500;

/// Top-1 accuracy in evaluation mode.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<f64> {
    Ok(correct_count(net, data)? as f64 / data.len() as f64)
}

pub fn correct_count<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        let logits = net.predict(&x)?;
        let c = logits.shape()[1];
        correct += logits
            .data()
            .chunks(c)
            .zip(&y)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
    }
    Ok(correct)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda, c.tau, c.eta1, c.eta2, c.eta3), (1e-4, 0.6, 1e-3, 1e-3, 1e-4));
        assert_eq!(c.weight_decay, 1e-5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        for c in [
            TrainConfig { tau: 1.5, ..Default::default() },
            TrainConfig { lambda: -1.0, ..Default::default() },
            TrainConfig { eta3: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn metrics_line() {
        let m = StepMetrics {
            step: 3,
            loss_task: 0.5,
            g_total: 2.0,
            loss: 0.5002,
            drelu_rows: vec![1, 0],
        };
        assert_eq!(m.tsv(None), "3\t0.500000\t2.000000\t-\t1\t0");
        assert_eq!(m.tsv(Some(0.25)), "3\t0.500000\t2.000000\t0.2500\t1\t0");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let rule = StepRule {
            kind: WeightStep::Adam,
            lr: 0.01,
            t: 1,
        };
        let mut p = vec![1.0f64, -1.0];
        let mut m = Moments::zeros(2);
        rule.apply(&mut p, &[3.0, -0.5], 0.0, &mut m);
        assert!((p[0] - 0.99).abs() < 1e-9 && (p[1] + 0.99).abs() < 1e-9);
    }
}
