//! 2D cross-correlation with stride 1 and same padding, via im2col.
//!
//! Layout: activations `(n, h, w, c_in)`, kernels `(kh, kw, c_in, c_out)`,
//! both row-major, so the flattened kernel doubles as the im2col weight
//! matrix without copying.

use crate::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};

use super::{sum_except_last, NnError};

fn check_conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(), NnError> {
    if x.rank() != 4 {
        return Err(NnError::Shape {
            op: "conv2d",
            detail: format!("input must be (n, h, w, c), got {:?}", x.shape()),
        });
    }
    if weight.rank() != 4 {
        return Err(NnError::Shape {
            op: "conv2d",
            detail: format!("weight must be (kh, kw, c_in, c_out), got {:?}", weight.shape()),
        });
    }
    let (kh, kw) = (weight.shape()[0], weight.shape()[1]);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(NnError::Shape {
            op: "conv2d",
            detail: format!("same padding needs odd kernels, got {}x{}", kh, kw),
        });
    }
    if weight.shape()[2] != x.shape()[3] {
        return Err(NnError::Shape {
            op: "conv2d",
            detail: format!(
                "input channels {} do not match kernel channels {}",
                x.shape()[3],
                weight.shape()[2]
            ),
        });
    }
    if bias.shape() != [weight.shape()[3]] {
        return Err(NnError::Shape {
            op: "conv2d",
            detail: format!(
                "bias shape {:?} does not match {} output channels",
                bias.shape(),
                weight.shape()[3]
            ),
        });
    }
    Ok(())
}

/// Gather padded patches into a `(n*h*w, kh*kw*c)` matrix.
fn im2col<T: Scalar>(x: &Tensor<T>, kh: usize, kw: usize) -> Tensor<T> {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let cols = kh * kw * c;
    let mut out = vec![T::ZERO; n * h * w * cols];
    let src = x.data();
    for b in 0..n {
        for r in 0..h {
            for col in 0..w {
                let row_base = ((b * h + r) * w + col) * cols;
                for dr in 0..kh {
                    let rr = r as isize + dr as isize - ph as isize;
                    if rr < 0 || rr >= h as isize {
                        continue; // zero padding
                    }
                    for dc in 0..kw {
                        let cc = col as isize + dc as isize - pw as isize;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let src_base = ((b * h + rr as usize) * w + cc as usize) * c;
                        let dst_base = row_base + (dr * kw + dc) * c;
                        out[dst_base..dst_base + c]
                            .copy_from_slice(&src[src_base..src_base + c]);
                    }
                }
            }
        }
    }
    Tensor::new(&[n * h * w, cols], out).expect("im2col shape")
}

/// Scatter-add a `(n*h*w, kh*kw*c)` gradient back onto the input grid.
fn col2im<T: Scalar>(col: &Tensor<T>, n: usize, h: usize, w: usize, c: usize, kh: usize, kw: usize) -> Tensor<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let cols = kh * kw * c;
    let mut out = Tensor::zeros(&[n, h, w, c]);
    let dst = out.data_mut();
    let src = col.data();
    for b in 0..n {
        for r in 0..h {
            for colx in 0..w {
                let row_base = ((b * h + r) * w + colx) * cols;
                for dr in 0..kh {
                    let rr = r as isize + dr as isize - ph as isize;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for dc in 0..kw {
                        let cc = colx as isize + dc as isize - pw as isize;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let dst_base = ((b * h + rr as usize) * w + cc as usize) * c;
                        let src_base = row_base + (dr * kw + dc) * c;
                        for k in 0..c {
                            dst[dst_base + k] += src[src_base + k];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Transpose a `(rows, cols)` matrix; used to put kernels in dot-product
/// friendly order for the forward pass.
fn transpose2<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[j * r + i] = m.data()[i * c + j];
        }
    }
    out
}

/// Cross-correlation plus bias: `(n, h, w, c_in) -> (n, h, w, c_out)`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    check_conv2d(x, weight, bias)?;
    let (n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, c_in, c_out) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let col = im2col(x, kh, kw);
    let wmat = weight.clone().reshape(&[kh * kw * c_in, c_out])?;
    let wmat_t = transpose2(&wmat);
    let mut out = matmul_nt(&col, &wmat_t)?;
    for row in out.data_mut().chunks_exact_mut(c_out) {
        for (o, &b) in row.iter_mut().zip(bias.iter()) {
            *o += b;
        }
    }
    Ok(out.reshape(&[n, h, w, c_out])?)
}

/// Gradients of the loss w.r.t. input, kernel, and bias.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, h, w, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, c_out) = (weight.shape()[0], weight.shape()[1], weight.shape()[3]);
    if grad_out.shape() != [n, h, w, c_out] {
        return Err(NnError::Shape {
            op: "conv2d_backward",
            detail: format!(
                "grad shape {:?} does not match output shape {:?}",
                grad_out.shape(),
                [n, h, w, c_out]
            ),
        });
    }
    let grad_bias = sum_except_last(grad_out);
    let gout_mat = grad_out.clone().reshape(&[n * h * w, c_out])?;
    let col = im2col(x, kh, kw);
    let grad_w = matmul_tn(&col, &gout_mat)?.reshape(&[kh, kw, c_in, c_out])?;
    let wmat = weight.clone().reshape(&[kh * kw * c_in, c_out])?;
    let wmat_t = transpose2(&wmat);
    let grad_col = matmul(&gout_mat, &wmat_t)?;
    let grad_x = col2im(&grad_col, n, h, w, c_in, kh, kw);
    Ok((grad_x, grad_w, grad_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_gradient, gradient_rel_error, SeededRng};

    fn rand_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    /// Six nested loops, no im2col; the independent oracle.
    fn conv2d_naive(x: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let (n, h, w, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw, c_out) = (weight.shape()[0], weight.shape()[1], weight.shape()[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        Tensor::from_fn(&[n, h, w, c_out], |i| {
            let (b, r, c, o) = (i[0], i[1], i[2], i[3]);
            let mut acc = bias.at(&[o]);
            for dr in 0..kh {
                for dc in 0..kw {
                    let rr = r as isize + dr as isize - ph as isize;
                    let cc = c as isize + dc as isize - pw as isize;
                    if rr < 0 || rr >= h as isize || cc < 0 || cc >= w as isize {
                        continue;
                    }
                    for ci in 0..c_in {
                        acc += x.at(&[b, rr as usize, cc as usize, ci])
                            * weight.at(&[dr, dc, ci, o]);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn one_by_one_identity_kernel_passes_input_through() {
        let mut rng = SeededRng::new(1);
        let x = rand_tensor(&mut rng, &[1, 4, 4, 1]);
        let weight = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::new(&[1], vec![0.25]).unwrap();
        let out = conv2d_forward(&x, &weight, &bias).unwrap();
        for (o, i) in out.iter().zip(x.iter()) {
            assert!((o - (i + 0.25)).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_input_reproduces_kernel_footprint() {
        // Cross-correlation of a centred impulse paints the kernel
        // flipped about the centre.
        let mut x = Tensor::<f64>::zeros(&[1, 5, 5, 1]);
        x.set(&[0, 2, 2, 0], 1.0);
        let weight = Tensor::from_fn(&[3, 3, 1, 1], |i| (i[0] * 3 + i[1]) as f64);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&x, &weight, &bias).unwrap();
        for dr in 0..3usize {
            for dc in 0..3usize {
                let r = 2 + 1 - dr;
                let c = 2 + 1 - dc;
                assert_eq!(out.at(&[0, r, c, 0]), weight.at(&[dr, dc, 0, 0]));
            }
        }
    }

    #[test]
    fn forward_matches_naive_six_loop_oracle() {
        let mut rng = SeededRng::new(2);
        let x = rand_tensor(&mut rng, &[2, 6, 5, 3]);
        let weight = rand_tensor(&mut rng, &[3, 3, 3, 4]);
        let bias = rand_tensor(&mut rng, &[4]);
        let got = conv2d_forward(&x, &weight, &bias).unwrap();
        let want = conv2d_naive(&x, &weight, &bias);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-10, "{} vs {}", g, w);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = SeededRng::new(3);
        let x = rand_tensor(&mut rng, &[1, 4, 4, 2]);
        let weight = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        let zero = Tensor::zeros(&[1, 4, 4, 3]);
        let (gx, gw, gb) = conv2d_backward(&zero, &x, &weight).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(gw.iter().all(|&v| v == 0.0));
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_bias_is_sum_over_non_channel_axes() {
        let mut rng = SeededRng::new(4);
        let x = rand_tensor(&mut rng, &[2, 3, 3, 2]);
        let weight = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        let gout = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let (_, _, gb) = conv2d_backward(&gout, &x, &weight).unwrap();
        for o in 0..3 {
            let mut want = 0.0;
            for b in 0..2 {
                for r in 0..3 {
                    for c in 0..3 {
                        want += gout.at(&[b, r, c, o]);
                    }
                }
            }
            assert!((gb.at(&[o]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(5);
        let x = rand_tensor(&mut rng, &[1, 5, 4, 2]);
        let weight = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        let bias = rand_tensor(&mut rng, &[3]);
        // Scalar objective: weighted sum of outputs, fixed weights.
        let mix = rand_tensor(&mut rng, &[1, 5, 4, 3]);
        let loss = |xx: &Tensor<f64>, ww: &Tensor<f64>, bb: &Tensor<f64>| {
            let out = conv2d_forward(xx, ww, bb).unwrap();
            out.iter().zip(mix.iter()).map(|(a, m)| a * m).sum::<f64>()
        };
        let (gx, gw, gb) = conv2d_backward(&mix, &x, &weight).unwrap();
        let fd_x = finite_difference_gradient(|t| loss(t, &weight, &bias), &x, 1e-6).unwrap();
        let fd_w = finite_difference_gradient(|t| loss(&x, t, &bias), &weight, 1e-6).unwrap();
        let fd_b = finite_difference_gradient(|t| loss(&x, &weight, t), &bias, 1e-6).unwrap();
        assert!(gradient_rel_error(&gx, &fd_x) < 1e-7);
        assert!(gradient_rel_error(&gw, &fd_w) < 1e-7);
        assert!(gradient_rel_error(&gb, &fd_b) < 1e-7);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 2]);
        let weight = Tensor::<f64>::zeros(&[3, 3, 3, 4]);
        let bias = Tensor::<f64>::zeros(&[4]);
        assert!(conv2d_forward(&x, &weight, &bias).is_err());
    }
}
