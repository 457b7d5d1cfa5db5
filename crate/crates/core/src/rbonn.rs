//! Recurrent backtracking updates for coupled weights and scales.
//!
//! Per binary layer and iteration `t`:
//!
//! ```text
//! A^{t+1}  = max(|A^t - eta1 dL/dA^t|, EPS_A)
//! w^{t+1}  = vanilla(w^t, dL/dw^t) + U^t o DReLU(w^t, A^t)
//! U^{t+1}  = |U^t - eta3 dL/dU^t|,   dL/dU_i = sum_j (dL_S/dw^t)_ij DReLU(w^{t-1}, A^t)_ij
//! ```
//!
//! `DReLU` passes row `i` of `w` only when the row's l1 norm is in the
//! low-density group while the matching scale entry is in the high-density
//! group.

use crate::bilinear::{BilinearResidual, WeightMatrixView};
use crate::binarize::{ScaleDiag, EPS_A};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rank-threshold density indicator over one value per output channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DensityMask {
    pub mask: Vec<bool>,
    pub threshold: usize,
}

impl DensityMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `T = int(n * tau)`.
pub fn density_threshold(n: usize, tau: f64) -> usize {
    (n as f64 * tau).floor() as usize
}

/// Flags entries whose 1-indexed ascending rank exceeds `T = int(n * tau)`.
///
/// Ties rank by ascending index, so the `n - T` largest values are flagged.
pub fn density_mask<T: Scalar>(values: &[T], tau: f64) -> Result<DensityMask> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid("density_mask", format!("tau must lie in [0, 1], got {tau}")));
    }
    let threshold = density_threshold(values.len(), tau);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut mask = vec![false; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        mask[i] = pos + 1 > threshold;
    }
    Ok(DensityMask { mask, threshold })
}

/// Rows selected by `!D(||w_i||_1) & D(inv_alpha_i)`.
pub fn drelu_rows<T: Scalar>(w: WeightMatrixView<'_, T>, scale: &ScaleDiag<T>, tau: f64) -> Result<Vec<bool>> {
    if scale.len() != w.rows() {
        return Err(Error::shape("drelu", &[w.rows(), w.cols()], &[scale.len()]));
    }
    let dense_w = density_mask(&w.row_l1_norms(), tau)?;
    let dense_a = density_mask(scale.inv_alpha(), tau)?;
    Ok(dense_w
        .mask
        .iter()
        .zip(&dense_a.mask)
        .map(|(&dw, &da)| !dw && da)
        .collect())
}

/// Channel-wise DReLU: row `i` of `w` where selected, zero rows elsewhere (flattened `I x J`).
pub fn drelu<T: Scalar>(w: WeightMatrixView<'_, T>, scale: &ScaleDiag<T>, tau: f64) -> Result<Vec<T>> {
    let rows = drelu_rows(w, scale, tau)?;
    let mut out = vec![T::zero(); w.values().len()];
    for (i, _) in rows.iter().enumerate().filter(|(_, &on)| on) {
        out[i * w.cols()..(i + 1) * w.cols()].copy_from_slice(w.row(i));
    }
    Ok(out)
}

/// Absolute-value gradient step on the scale diagonal, floored at [`EPS_A`].
pub fn update_a<T: Scalar>(scale: &ScaleDiag<T>, grad: &[T], eta1: T) -> Result<ScaleDiag<T>> {
    if grad.len() != scale.len() {
        return Err(Error::shape("update_a", &[scale.len()], &[grad.len()]));
    }
    let eps = T::lit(EPS_A);
    let next = scale
        .inv_alpha()
        .iter()
        .zip(grad)
        .map(|(&a, &g)| (a - eta1 * g).abs().max(eps))
        .collect();
    ScaleDiag::new(next)
}

/// Recurrent weights and the previous-iteration snapshot for one binary layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BacktrackState<T> {
    pub u: Vec<T>,
    pub w_prev: Option<Tensor<T>>,
    pub a_prev: Option<ScaleDiag<T>>,
}

impl<T: Scalar> BacktrackState<T> {
    pub fn new(channels: usize, u_init: T) -> Self {
        Self {
            u: vec![u_init; channels],
            w_prev: None,
            a_prev: None,
        }
    }

    /// Records iteration-`t` quantities so the next step sees them as `w^{t-1}`, `A^{t-1}`.
    pub fn snapshot(&mut self, w: &Tensor<T>, scale: &ScaleDiag<T>) {
        self.w_prev = Some(w.clone());
        self.a_prev = Some(scale.clone());
    }
}

/// `w_vanilla_next + U o DReLU(w_t, A_t)`.
pub fn backtrack_w<T: Scalar>(
    w_vanilla_next: &Tensor<T>,
    w_t: &Tensor<T>,
    scale_t: &ScaleDiag<T>,
    state: &BacktrackState<T>,
    tau: f64,
) -> Result<Tensor<T>> {
    w_vanilla_next.expect_same_shape(w_t, "backtrack_w")?;
    let view = WeightMatrixView::of(w_t);
    if state.u.len() != view.rows() {
        return Err(Error::shape("backtrack_w", &[view.rows()], &[state.u.len()]));
    }
    let rows = drelu_rows(view, scale_t, tau)?;
    let cols = view.cols();
    let mut out = w_vanilla_next.clone();
    for (i, _) in rows.iter().enumerate().filter(|(_, &on)| on) {
        let u = state.u[i];
        for (o, &w) in out.data_mut()[i * cols..(i + 1) * cols]
            .iter_mut()
            .zip(view.row(i))
        {
            *o += u * w;
        }
    }
    Ok(out)
}

/// `dL/dU_i = sum_j (dL_S/dw^t)_ij * DReLU(w^{t-1}, A^t)_ij`; zero before any snapshot exists.
pub fn grad_u<T: Scalar>(
    task_grad_w: &[T],
    state: &BacktrackState<T>,
    scale_t: &ScaleDiag<T>,
    tau: f64,
) -> Result<Vec<T>> {
    let channels = state.u.len();
    let Some(w_prev) = &state.w_prev else {
        return Ok(vec![T::zero(); channels]);
    };
    if task_grad_w.len() != w_prev.len() {
        return Err(Error::shape("grad_u", &[task_grad_w.len()], w_prev.shape()));
    }
    let view = WeightMatrixView::of(w_prev);
    if view.rows() != channels {
        return Err(Error::shape("grad_u", &[view.rows()], &[channels]));
    }
    let rows = drelu_rows(view, scale_t, tau)?;
    let cols = view.cols();
    Ok((0..channels)
        .map(|i| {
            if rows[i] {
                task_grad_w[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(view.row(i))
                    .map(|(&g, &w)| g * w)
                    .sum()
            } else {
                T::zero()
            }
        })
        .collect())
}

/// `U <- |U - eta3 * grad|`.
pub fn update_u<T: Scalar>(state: &mut BacktrackState<T>, grad: &[T], eta3: T) -> Result<()> {
    if grad.len() != state.u.len() {
        return Err(Error::shape("update_u", &[state.u.len()], &[grad.len()]));
    }
    for (u, &g) in state.u.iter_mut().zip(grad) {
        *u = (*u - eta3 * g).abs();
    }
    Ok(())
}

/// Relative tolerance between the two trace computations.
pub const TRACE_TOLERANCE: f64 = 1e-10;

/// Both sides of the per-row trace identity, for reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceCheck<T> {
    /// `Tr[w G (dA/dw)_i]` from full matrix products.
    pub full: Vec<T>,
    /// `(w_i . g_i) * sum_j dA_ii/dw_ij`.
    pub closed: Vec<T>,
    /// `d = -closed`.
    pub d: Vec<T>,
    pub max_rel_err: f64,
}

/// `|a - b|` relative to the larger of `|a|`, `|b|` and the magnitude `floor` of the summed terms.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Evaluates the coupled trace term two ways and checks they agree.
///
/// `da_dw` is `I x J` with entry `(i, j) = dA_ii / dw_ij`. The full path
/// builds `M = w G^T` (`I x I`), `E_i` (`I x J`, only row `i` nonzero),
/// `P_i = M E_i`, and contracts `P_i` with the `J x I` selector whose
/// column `i` is all ones, then takes the matrix trace. The closed path uses
/// one row dot product. Fails if they differ by more than
/// [`TRACE_TOLERANCE`] relative to the larger side, or to the summed term
/// magnitude when the row's dot product cancels to near zero.
pub fn trace_backtrack_oracle<T: Scalar>(
    w: WeightMatrixView<'_, T>,
    residual: &BilinearResidual<T>,
    da_dw: &[T],
) -> Result<TraceCheck<T>> {
    let (rows, cols) = (w.rows(), w.cols());
    if residual.rows() != rows || residual.cols() != cols || da_dw.len() != rows * cols {
        return Err(Error::shape(
            "trace_backtrack_oracle",
            &[rows, cols],
            &[residual.rows(), residual.cols(), da_dw.len()],
        ));
    }
    let wm = Tensor::new(vec![rows, cols], w.values().to_vec())?;
    let g_cols = Tensor::from_fn(&[cols, rows], |k| residual.row(k % rows)[k / rows]);
    let m = crate::tensor::matmul(&wm, &g_cols)?;

    let mut full = Vec::with_capacity(rows);
    let mut closed = Vec::with_capacity(rows);
    let mut max_rel_err = 0.0f64;
    for i in 0..rows {
        let e_i = Tensor::from_fn(&[rows, cols], |k| {
            if k / cols == i {
                da_dw[k]
            } else {
                T::zero()
            }
        });
        let p_i = crate::tensor::matmul(&m, &e_i)?;
        let selector = Tensor::from_fn(&[cols, rows], |k| if k % rows == i { T::one() } else { T::zero() });
        let q = crate::tensor::matmul(&p_i, &selector)?;
        let trace: T = (0..rows).map(|k| q.data()[k * rows + k]).sum();

        let dot: T = w.row(i).iter().zip(residual.row(i)).map(|(&a, &b)| a * b).sum();
        let sum_da: T = da_dw[i * cols..(i + 1) * cols].iter().copied().sum();
        let cf = dot * sum_da;

        let magnitude: f64 = w
            .row(i)
            .iter()
            .zip(residual.row(i))
            .map(|(&a, &b)| (a * b).to_f64_lossy().abs())
            .sum::<f64>()
            * da_dw[i * cols..(i + 1) * cols]
                .iter()
                .map(|v| v.to_f64_lossy().abs())
                .sum::<f64>();
        let err = rel_err(trace.to_f64_lossy(), cf.to_f64_lossy(), magnitude);
        if !(err <= TRACE_TOLERANCE) {
            return Err(Error::DerivationMismatch {
                row: i,
                full: trace.to_f64_lossy(),
                closed: cf.to_f64_lossy(),
                rel_err: err,
            });
        }
        max_rel_err = max_rel_err.max(err);
        full.push(trace);
        closed.push(cf);
    }
    let d = closed.iter().map(|&c| -c).collect();
    Ok(TraceCheck {
        full,
        closed,
        d,
        max_rel_err,
    })
}

/// `dA_ii/dw_ij` for the mapping `A_ii = J / ||w_i||_1`: `-J sign(w_ij) / ||w_i||_1^2`.
pub fn l1_scale_jacobian<T: Scalar>(w: WeightMatrixView<'_, T>) -> Vec<T> {
    let j = T::from_usize(w.cols()).expect("row length");
    let norms = w.row_l1_norms();
    w.values()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let n = norms[k / w.cols()];
            let s = if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            -j * s / (n * n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::bilinear_residual;

    #[test]
    fn density_examples() {
        let vals: Vec<f64> = (1..=10).map(f64::from).collect();
        let m = density_mask(&vals, 0.6).unwrap();
        assert_eq!(m.threshold, 6);
        let on: Vec<f64> = vals.iter().zip(&m.mask).filter(|(_, &b)| b).map(|(&v, _)| v).collect();
        assert_eq!(on, vec![7.0, 8.0, 9.0, 10.0]);
        assert!(density_mask(&vals, 1.0).unwrap().mask.iter().all(|&b| !b));
        assert!(density_mask(&vals, 0.0).unwrap().mask.iter().all(|&b| b));
        assert!(density_mask(&vals, 1.5).is_err());
        assert!(density_mask(&vals, -0.1).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let m = density_mask(&[2.0f64, 2.0, 2.0, 2.0], 0.5).unwrap();
        assert_eq!(m.mask, vec![false, false, true, true]);
    }

    #[test]
    fn drelu_three_channel_example() {
        // ||w_i||_1 = [3, 1, 2], inv_alpha = [0.1, 5, 4], tau = 0.6 -> T = 1
        let w = [3.0, 0.0, -1.0, 0.0, 1.0, 1.0];
        let v = WeightMatrixView::new(3, 2, &w[..]).unwrap();
        let s = ScaleDiag::new(vec![0.1, 5.0, 4.0]).unwrap();
        assert_eq!(drelu_rows(v, &s, 0.6).unwrap(), vec![false, true, false]);
        assert_eq!(drelu(v, &s, 0.6).unwrap(), vec![0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        assert!(drelu(v, &s, 1.0).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn update_a_examples() {
        let s = ScaleDiag::new(vec![0.5f64, 0.1, 0.3]).unwrap();
        let out = update_a(&s, &[600.0, 100.0, 0.0], 1e-3).unwrap();
        assert!((out.inv_alpha()[0] - 0.1).abs() < 1e-15);
        assert_eq!(out.inv_alpha()[1], EPS_A);
        assert_eq!(out.inv_alpha()[2], 0.3);
    }

    #[test]
    fn update_u_examples() {
        let mut st = BacktrackState::new(3, 0.0f64);
        st.u = vec![0.2, 0.05, 0.7];
        update_u(&mut st, &[1000.0, 1000.0, 0.0], 1e-4).unwrap();
        assert!((st.u[0] - 0.1).abs() < 1e-15);
        assert!((st.u[1] - 0.05).abs() < 1e-15);
        assert_eq!(st.u[2], 0.7);
    }

    #[test]
    fn backtrack_hand_case() {
        // 2 x 3; row 0 has the small norm, row 1 the large one; scale inverse to norm.
        let wt = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.1, 1.0, -2.0, 3.0]).unwrap();
        let wv = Tensor::new(vec![2, 3], vec![0.5, 0.5, 0.5, 1.0, 1.0, 1.0]).unwrap();
        let s = ScaleDiag::<f64>::from_weights(&wt);
        let mut st = BacktrackState::new(2, 0.0);
        st.u = vec![0.5, 0.25];
        let out = backtrack_w(&wv, &wt, &s, &st, 0.5).unwrap();
        assert_eq!(out.data(), &[0.55, 0.4, 0.55, 1.0, 1.0, 1.0]);
        assert_eq!(backtrack_w(&wv, &wt, &s, &st, 1.0).unwrap(), wv);
        st.u = vec![0.0, 0.0];
        assert_eq!(backtrack_w(&wv, &wt, &s, &st, 0.5).unwrap(), wv);
    }

    #[test]
    fn grad_u_without_snapshot_is_zero() {
        let st = BacktrackState::new(2, 0.3f64);
        let g = grad_u(&[1.0; 6], &st, &ScaleDiag::identity(2), 0.0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn grad_u_single_channel_is_dot_product() {
        let mut st = BacktrackState::new(1, 0.0f64);
        let prev = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        st.snapshot(&prev, &ScaleDiag::identity(1));
        // tau = 0: every row dense by scale and by norm, so !D(w') is false; use a layout
        // where a single channel passes: T = int(1 * tau) with tau < 1 is 0 -> D(w') = true.
        let g = grad_u(&[1.0, 2.0, 3.0], &st, &ScaleDiag::identity(1), 0.0).unwrap();
        assert_eq!(g, vec![0.0]);
        // Two channels, tau = 0.5: row 0 small norm + large scale passes.
        let prev = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 5.0, 5.0, 5.0]).unwrap();
        let s = ScaleDiag::new(vec![3.0, 1.0]).unwrap();
        st.u = vec![0.0, 0.0];
        st.snapshot(&prev, &s);
        let g = grad_u(&[1.0, 2.0, 3.0, 9.0, 9.0, 9.0], &st, &s, 0.5).unwrap();
        assert_eq!(g, vec![0.5 - 2.0 + 6.0, 0.0]);
    }

    #[test]
    fn trace_oracle_hand_case() {
        let w = [2.0];
        let v = WeightMatrixView::new(1, 1, &w[..]).unwrap();
        let r = bilinear_residual(v, &ScaleDiag::identity(1)).unwrap();
        let chk = trace_backtrack_oracle(v, &r, &[-0.25]).unwrap();
        assert_eq!(chk.closed, vec![-0.5]);
        assert_eq!(chk.full, vec![-0.5]);
        assert_eq!(chk.d, vec![0.5]);
        assert_eq!(l1_scale_jacobian(v), vec![-0.25]);
    }

    #[test]
    fn trace_oracle_zero_jacobian() {
        let w = [0.3, -0.7, 1.1, 0.2];
        let v = WeightMatrixView::new(2, 2, &w[..]).unwrap();
        let r = bilinear_residual(v, &ScaleDiag::identity(2)).unwrap();
        let chk = trace_backtrack_oracle(v, &r, &[0.0; 4]).unwrap();
        assert!(chk.d.iter().all(|&x| x == 0.0));
    }
}
