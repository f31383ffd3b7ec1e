//! Row-wise softmax with max subtraction for overflow safety.

use crate::tensor::{Scalar, Tensor};

use super::NnError;

/// `(batch, k)` logits to probabilities; each row sums to 1.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if logits.rank() != 2 {
        return Err(NnError::Shape {
            op: "softmax",
            detail: format!("expected (batch, k), got {:?}", logits.shape()),
        });
    }
    if !logits.all_finite() {
        return Err(NnError::NonFinite("softmax logits".into()));
    }
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let mut m = row[0];
        for &v in row.iter() {
            m = m.max_val(v);
        }
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}
