//! 2x2 max pooling with stride 2.
//!
//! Odd trailing rows/columns are dropped (floor semantics). Ties are
//! broken by the first element in row-major scan order of the window,
//! and the backward pass routes the incoming gradient to exactly that
//! element.

use crate::tensor::{Scalar, Tensor};

use super::NnError;

/// Argmax positions recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<u32>,
}

/// `(n, h, w, c) -> (n, h/2, w/2, c)` max pooling.
pub fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache), NnError> {
    if x.rank() != 4 {
        return Err(NnError::Shape {
            op: "maxpool2d",
            detail: format!("input must be (n, h, w, c), got {:?}", x.shape()),
        });
    }
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h < 2 || w < 2 {
        return Err(NnError::Shape {
            op: "maxpool2d",
            detail: format!("spatial dims must be >= 2 to pool, got {}x{}", h, w),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let mut argmax = vec![0u32; n * oh * ow * c];
    let src = x.data();
    for b in 0..n {
        for r in 0..oh {
            for col in 0..ow {
                for k in 0..c {
                    let mut best_idx = ((b * h + 2 * r) * w + 2 * col) * c + k;
                    let mut best = src[best_idx];
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let idx = ((b * h + 2 * r + dr) * w + 2 * col + dc) * c + k;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = ((b * oh + r) * ow + col) * c + k;
                    out.data_mut()[oidx] = best;
                    argmax[oidx] = u32::try_from(best_idx).expect("pool index fits u32");
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

/// Route the upstream gradient to the recorded argmax positions.
pub fn maxpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &PoolCache,
) -> Result<Tensor<T>, NnError> {
    if grad_out.len() != cache.argmax.len() {
        return Err(NnError::Shape {
            op: "maxpool2d_backward",
            detail: format!(
                "gradient has {} elements, cache expects {}",
                grad_out.len(),
                cache.argmax.len()
            ),
        });
    }
    let mut grad_x = Tensor::zeros(&cache.input_shape);
    for (i, &g) in grad_out.iter().enumerate() {
        grad_x.data_mut()[cache.argmax[i] as usize] += g;
    }
    Ok(grad_x)
}
