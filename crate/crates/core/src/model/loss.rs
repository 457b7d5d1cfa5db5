use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy of `B x C` logits and its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("cross_entropy", s, &[labels.len()]));
    }
    let (b, c) = (s[0], s[1]);
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {l} at position {i} out of range for {c} classes"),
        ));
    }
    let inv_b = T::one() / T::from_usize(b).expect("batch");
    let mut total = T::zero();
    let mut grad = vec![T::zero(); b * c];
    for ((row, g), &label) in logits.data().chunks(c).zip(grad.chunks_mut(c)).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut denom = T::zero();
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - max).exp();
            denom += *gv;
        }
        total += denom.ln() - (row[label] - max);
        for gv in g.iter_mut() {
            *gv = *gv / denom * inv_b;
        }
        g[label] -= inv_b;
    }
    Ok((total * inv_b, Tensor::new(vec![b, c], grad)?))
}
