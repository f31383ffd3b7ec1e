//! Fully connected layer: `y = x W + b` on `(batch, features)` rows.

use crate::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};

use super::{sum_except_last, NnError};

pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if x.rank() != 2 || weight.rank() != 2 || x.shape()[1] != weight.shape()[0] {
        return Err(NnError::Shape {
            op: "dense",
            detail: format!(
                "input {:?} incompatible with weight {:?}",
                x.shape(),
                weight.shape()
            ),
        });
    }
    if bias.shape() != [weight.shape()[1]] {
        return Err(NnError::Shape {
            op: "dense",
            detail: format!(
                "bias {:?} does not match {} output units",
                bias.shape(),
                weight.shape()[1]
            ),
        });
    }
    let mut out = matmul(x, weight)?;
    let cols = weight.shape()[1];
    for row in out.data_mut().chunks_exact_mut(cols) {
        for (o, &b) in row.iter_mut().zip(bias.iter()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
#[allow(clippy::type_complexity)]
pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    if grad_out.shape() != [x.shape()[0], weight.shape()[1]] {
        return Err(NnError::Shape {
            op: "dense_backward",
            detail: format!(
                "grad {:?} does not match output ({}, {})",
                grad_out.shape(),
                x.shape()[0],
                weight.shape()[1]
            ),
        });
    }
    let grad_x = matmul_nt(grad_out, weight)?;
    let grad_w = matmul_tn(x, grad_out)?;
    let grad_b = sum_except_last(grad_out);
    Ok((grad_x, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_gradient, gradient_rel_error, SeededRng};

    #[test]
    fn identity_weight_zero_bias_is_passthrough() {
        let mut rng = SeededRng::new(10);
        let x = Tensor::<f64>::from_fn(&[3, 4], |_| rng.uniform(-1.0, 1.0));
        let w = Tensor::from_fn(&[4, 4], |i| if i[0] == i[1] { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[4]);
        let out = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn grad_bias_is_column_sum() {
        let mut rng = SeededRng::new(11);
        let x = Tensor::<f64>::from_fn(&[5, 3], |_| rng.uniform(-1.0, 1.0));
        let w = Tensor::from_fn(&[3, 2], |_| rng.uniform(-1.0, 1.0));
        let g = Tensor::from_fn(&[5, 2], |_| rng.uniform(-1.0, 1.0));
        let (_, _, gb) = dense_backward(&g, &x, &w).unwrap();
        for o in 0..2 {
            let want: f64 = (0..5).map(|i| g.at(&[i, o])).sum();
            assert!((gb.at(&[o]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(12);
        let x = Tensor::<f64>::from_fn(&[4, 5], |_| rng.uniform(-1.0, 1.0));
        let w = Tensor::from_fn(&[5, 3], |_| rng.uniform(-1.0, 1.0));
        let b = Tensor::from_fn(&[3], |_| rng.uniform(-1.0, 1.0));
        let mix = Tensor::from_fn(&[4, 3], |_| rng.uniform(-1.0, 1.0));
        let loss = |xx: &Tensor<f64>, ww: &Tensor<f64>, bb: &Tensor<f64>| {
            dense_forward(xx, ww, bb)
                .unwrap()
                .iter()
                .zip(mix.iter())
                .map(|(a, m)| a * m)
                .sum::<f64>()
        };
        let (gx, gw, gb) = dense_backward(&mix, &x, &w).unwrap();
        let fd_x = finite_difference_gradient(|t| loss(t, &w, &b), &x, 1e-6).unwrap();
        let fd_w = finite_difference_gradient(|t| loss(&x, t, &b), &w, 1e-6).unwrap();
        let fd_b = finite_difference_gradient(|t| loss(&x, &w, t), &b, 1e-6).unwrap();
        assert!(gradient_rel_error(&gx, &fd_x) < 1e-8);
        assert!(gradient_rel_error(&gw, &fd_w) < 1e-8);
        assert!(gradient_rel_error(&gb, &fd_b) < 1e-8);
    }
}
