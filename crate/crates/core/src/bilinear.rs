//! The bilinear weight/scale objective `G(w, A) = ||b^w - A w||^2 + R(w)` and its gradients.
//!
//! Weights are viewed as an `I x J` matrix with `I = C_out` and
//! `J = C_in * K * K`; row `i` is filter `i` flattened row-major. Inside `G`
//! the sign pattern `b^w` is treated as a constant.

use serde::{Deserialize, Serialize};

use crate::binarize::{binary_conv_raw, sign, PackedBinaryTensor, ScaleDiag};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight regularizer `R(w)` inside the bilinear objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    None,
    L1,
    #[default]
    L2,
}

impl Regularizer {
    pub fn value<T: Scalar>(self, w: &[T]) -> T {
        match self {
            Regularizer::None => T::zero(),
            Regularizer::L1 => w.iter().map(|v| v.abs()).sum(),
            Regularizer::L2 => w.iter().map(|&v| v * v).sum(),
        }
    }

    /// Derivative of `R` at one entry; the `l1` subgradient at zero is zero.
    #[inline]
    pub fn grad<T: Scalar>(self, w: T) -> T {
        match self {
            Regularizer::None => T::zero(),
            Regularizer::L1 => {
                if w > T::zero() {
                    T::one()
                } else if w < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Regularizer::L2 => w + w,
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Regularizer::None),
            "l1" => Ok(Regularizer::L1),
            "l2" => Ok(Regularizer::L2),
            other => Err(format!("unknown regularizer {other:?} (expected none, l1 or l2)")),
        }
    }
}

/// Borrowed `I x J` view of a filter bank.
#[derive(Clone, Copy, Debug)]
pub struct WeightMatrixView<'a, T> {
    rows: usize,
    cols: usize,
    values: &'a [T],
}

impl<'a, T: Scalar> WeightMatrixView<'a, T> {
    pub fn new(rows: usize, cols: usize, values: &'a [T]) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != values.len() {
            return Err(Error::invalid(
                "weight view",
                format!("{rows} x {cols} does not cover {} values", values.len()),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    /// Views a `C_out x ...` tensor with one row per leading index.
    pub fn of(w: &'a Tensor<T>) -> Self {
        let rows = w.shape()[0];
        Self {
            rows,
            cols: w.len() / rows,
            values: w.data(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &'a [T] {
        self.values
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_l1_norms(&self) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum())
            .collect()
    }

    fn check_scale(&self, scale: &ScaleDiag<T>, op: &'static str) -> Result<()> {
        if scale.len() != self.rows {
            return Err(Error::shape(op, &[self.rows, self.cols], &[scale.len()]));
        }
        Ok(())
    }
}

/// `A w - b^w`, one row `g_i` per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearResidual<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> BilinearResidual<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn squared_norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }
}

pub fn bilinear_residual<T: Scalar>(
    w: WeightMatrixView<'_, T>,
    scale: &ScaleDiag<T>,
) -> Result<BilinearResidual<T>> {
    w.check_scale(scale, "bilinear_residual")?;
    let inv = scale.inv_alpha();
    let values = w
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| inv[k / w.cols] * v - sign(v))
        .collect();
    Ok(BilinearResidual {
        rows: w.rows,
        cols: w.cols,
        values,
    })
}

pub fn objective_g<T: Scalar>(
    w: WeightMatrixView<'_, T>,
    scale: &ScaleDiag<T>,
    reg: Regularizer,
) -> Result<T> {
    Ok(bilinear_residual(w, scale)?.squared_norm() + reg.value(w.values))
}

/// `dG/d inv_alpha_i = 2 <w_i, inv_alpha_i w_i - b^{w_i}>`.
pub fn grad_g_wrt_a<T: Scalar>(w: WeightMatrixView<'_, T>, scale: &ScaleDiag<T>) -> Result<Vec<T>> {
    let r = bilinear_residual(w, scale)?;
    let two = T::lit(2.0);
    Ok((0..w.rows)
        .map(|i| two * w.row(i).iter().zip(r.row(i)).map(|(&a, &b)| a * b).sum::<T>())
        .collect())
}

/// `dG/dw_ij = 2 inv_alpha_i (inv_alpha_i w_ij - b^w_ij) + R'(w_ij)`, flattened `I x J`.
pub fn grad_g_wrt_w<T: Scalar>(
    w: WeightMatrixView<'_, T>,
    scale: &ScaleDiag<T>,
    reg: Regularizer,
) -> Result<Vec<T>> {
    w.check_scale(scale, "grad_g_wrt_w")?;
    let inv = scale.inv_alpha();
    let two = T::lit(2.0);
    Ok(w
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let a = inv[k / w.cols];
            two * a * (a * v - sign(v)) + reg.grad(v)
        })
        .collect())
}

/// Task-loss gradient in `inv_alpha` from the per-channel contraction
/// `c_i = sum dL/da_out * (integer XNOR conv)`.
///
/// The output is `alpha_i * conv`, so `d/d inv_alpha_i = -c_i / inv_alpha_i^2`.
pub fn task_grad_wrt_a<T: Scalar>(contraction: &[T], scale: &ScaleDiag<T>) -> Vec<T> {
    contraction
        .iter()
        .zip(scale.inv_alpha())
        .map(|(&c, &a)| -c / (a * a))
        .collect()
}

/// Full `dL/dA` for one binary layer: task term through the packed forward plus `lambda * dG/dA`.
///
/// `task_grad_out` is `C_out x H_out x W_out` for a single sample or
/// `N x C_out x H_out x W_out` for a batch matching `inputs`.
#[allow(clippy::too_many_arguments)]
pub fn grad_l_wrt_a<T: Scalar>(
    task_grad_out: &Tensor<T>,
    inputs: &[PackedBinaryTensor],
    filters: &PackedBinaryTensor,
    scale: &ScaleDiag<T>,
    w: WeightMatrixView<'_, T>,
    lambda: T,
    stride: usize,
    padding: usize,
) -> Result<Vec<T>> {
    w.check_scale(scale, "grad_l_wrt_a")?;
    let batch = inputs.len();
    let mut contraction = vec![T::zero(); w.rows];
    let g = task_grad_out.data();
    let mut offset = 0;
    for a in inputs {
        let (geo, raw) = binary_conv_raw(a, filters, stride, padding)?;
        if geo.c_out != w.rows {
            return Err(Error::shape("grad_l_wrt_a", &[geo.c_out], &[w.rows]));
        }
        let len = geo.out_len();
        if offset + len > g.len() {
            return Err(Error::shape(
                "grad_l_wrt_a",
                task_grad_out.shape(),
                &[batch, geo.c_out, geo.out_h, geo.out_w],
            ));
        }
        let pixels = geo.out_pixels();
        for (k, &r) in raw.iter().enumerate() {
            contraction[k / pixels] += g[offset + k] * T::from_i64_exact(r as i64);
        }
        offset += len;
    }
    if offset != g.len() {
        return Err(Error::invalid(
            "grad_l_wrt_a",
            format!("gradient holds {} values, inputs produce {offset}", g.len()),
        ));
    }
    let mut grad = task_grad_wrt_a(&contraction, scale);
    if lambda != T::zero() {
        for (d, r) in grad.iter_mut().zip(grad_g_wrt_a(w, scale)?) {
            *d += lambda * r;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(rows: usize, cols: usize, v: &[f64]) -> WeightMatrixView<'_, f64> {
        WeightMatrixView::new(rows, cols, v).unwrap()
    }

    #[test]
    fn exact_fit_row_has_zero_residual() {
        let c = 0.4;
        let w = [c, -c, c];
        let s = ScaleDiag::new(vec![1.0 / c]).unwrap();
        let r = bilinear_residual(view(1, 3, &w), &s).unwrap();
        assert!(r.values().iter().all(|v| v.abs() < 1e-15));
        let r2 = bilinear_residual(view(1, 2, &[1.0, -1.0]), &ScaleDiag::identity(1)).unwrap();
        assert_eq!(r2.values(), &[0.0, 0.0]);
        assert_eq!(objective_g(view(1, 2, &[1.0, -1.0]), &ScaleDiag::identity(1), Regularizer::None).unwrap(), 0.0);
    }

    #[test]
    fn unit_weights_under_l2() {
        let w = [1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        let g = objective_g(view(2, 3, &w), &ScaleDiag::identity(2), Regularizer::L2).unwrap();
        assert_eq!(g, 6.0);
    }

    #[test]
    fn hand_arithmetic_gradients() {
        let s = ScaleDiag::identity(1);
        assert_eq!(grad_g_wrt_a(view(1, 1, &[2.0]), &s).unwrap(), vec![4.0]);
        assert_eq!(grad_g_wrt_w(view(1, 1, &[2.0]), &s, Regularizer::None).unwrap(), vec![2.0]);
        let c = 0.5;
        let exact = ScaleDiag::new(vec![2.0]).unwrap();
        assert_eq!(grad_g_wrt_a(view(1, 2, &[c, -c]), &exact).unwrap(), vec![0.0]);
        assert_eq!(
            grad_g_wrt_w(view(1, 2, &[c, -c]), &exact, Regularizer::None).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn scale_length_is_checked() {
        let w = [1.0, 2.0];
        assert!(bilinear_residual(view(2, 1, &w), &ScaleDiag::identity(3)).is_err());
        assert!(WeightMatrixView::new(3, 1, &w[..]).is_err());
    }

    #[test]
    fn task_term_isolation() {
        let w = Tensor::new(vec![1, 1, 2, 2], vec![0.3, -0.2, 0.1, 0.5]).unwrap();
        let s = ScaleDiag::<f64>::from_weights(&w);
        let filters = crate::binarize::pack_filters(&w).unwrap();
        let a = crate::binarize::pack_activation(&[1.0, -1.0, 0.5, 0.2, -0.3, 0.9, 1.0, 1.0, -2.0], 1, 3, 3);
        let zero = Tensor::<f64>::zeros(&[1, 2, 2]);
        let v = WeightMatrixView::of(&w);
        let none = grad_l_wrt_a(&zero, std::slice::from_ref(&a), &filters, &s, v, 0.0, 1, 0).unwrap();
        assert_eq!(none, vec![0.0]);
        let only_g = grad_l_wrt_a(&zero, &[a], &filters, &s, v, 1.0, 1, 0).unwrap();
        assert_eq!(only_g, grad_g_wrt_a(v, &s).unwrap());
    }
}
