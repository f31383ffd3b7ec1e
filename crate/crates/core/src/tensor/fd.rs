//! Central finite-difference gradient oracle.
//!
//! Every hand-written backward pass in this crate is validated against
//! this function in the 64-bit profile. It stays deliberately independent
//! of the layer implementations: all it does is perturb one element at a
//! time and difference the scalar objective.

use super::{Tensor, TensorError};

/// Central-difference gradient of a scalar function at `x`:
/// `g[i] = (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)`.
///
/// `f` must be deterministic and finite at every probe point; a non-finite
/// value aborts with an error naming the offending element.
pub fn finite_difference_gradient<F>(
    f: F,
    x: &Tensor<f64>,
    epsilon: f64,
) -> Result<Tensor<f64>, TensorError>
where
    F: Fn(&Tensor<f64>) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - epsilon;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        let g = (plus - minus) / (2.0 * epsilon);
        if !g.is_finite() {
            return Err(TensorError::NonFinite {
                context: format!("finite difference at flat index {}", i),
            });
        }
        grad.data_mut()[i] = g;
    }
    Ok(grad)
}

/// Relative error between an analytic gradient and its finite-difference
/// estimate: `||a - b|| / (||a|| + ||b||)`, zero when both vanish.
pub fn gradient_rel_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&a, &b) in analytic.iter().zip(numeric.iter()) {
        diff += (a - b) * (a - b);
        na += a * a;
        nb += b * b;
    }
    let denom = na.sqrt() + nb.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}
