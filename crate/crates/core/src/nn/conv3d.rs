//! 3D cross-correlation over (time, height, width), stride 1, same
//! padding on all three axes. Same im2col strategy as the 2D case with a
//! temporal kernel axis in front.

use crate::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};

use super::{sum_except_last, NnError};

fn check_conv3d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(), NnError> {
    if x.rank() != 5 {
        return Err(NnError::Shape {
            op: "conv3d",
            detail: format!("input must be (n, t, h, w, c), got {:?}", x.shape()),
        });
    }
    if weight.rank() != 5 {
        return Err(NnError::Shape {
            op: "conv3d",
            detail: format!(
                "weight must be (kt, kh, kw, c_in, c_out), got {:?}",
                weight.shape()
            ),
        });
    }
    if weight.shape()[..3].iter().any(|k| k % 2 == 0) {
        return Err(NnError::Shape {
            op: "conv3d",
            detail: format!("same padding needs odd kernels, got {:?}", &weight.shape()[..3]),
        });
    }
    if weight.shape()[3] != x.shape()[4] {
        return Err(NnError::Shape {
            op: "conv3d",
            detail: format!(
                "input channels {} do not match kernel channels {}",
                x.shape()[4],
                weight.shape()[3]
            ),
        });
    }
    if bias.shape() != [weight.shape()[4]] {
        return Err(NnError::Shape {
            op: "conv3d",
            detail: format!("bias shape {:?} vs {} filters", bias.shape(), weight.shape()[4]),
        });
    }
    Ok(())
}

fn vol2col<T: Scalar>(x: &Tensor<T>, kt: usize, kh: usize, kw: usize) -> Tensor<T> {
    let (n, t, h, w, c) = (
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
        x.shape()[4],
    );
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let cols = kt * kh * kw * c;
    let mut out = vec![T::ZERO; n * t * h * w * cols];
    let src = x.data();
    for b in 0..n {
        for f in 0..t {
            for r in 0..h {
                for col in 0..w {
                    let row_base = (((b * t + f) * h + r) * w + col) * cols;
                    for df in 0..kt {
                        let ff = f as isize + df as isize - pt as isize;
                        if ff < 0 || ff >= t as isize {
                            continue;
                        }
                        for dr in 0..kh {
                            let rr = r as isize + dr as isize - ph as isize;
                            if rr < 0 || rr >= h as isize {
                                continue;
                            }
                            for dc in 0..kw {
                                let cc = col as isize + dc as isize - pw as isize;
                                if cc < 0 || cc >= w as isize {
                                    continue;
                                }
                                let src_base =
                                    (((b * t + ff as usize) * h + rr as usize) * w + cc as usize)
                                        * c;
                                let dst_base = row_base + ((df * kh + dr) * kw + dc) * c;
                                out[dst_base..dst_base + c]
                                    .copy_from_slice(&src[src_base..src_base + c]);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n * t * h * w, cols], out).expect("vol2col shape")
}

#[allow(clippy::too_many_arguments)]
fn col2vol<T: Scalar>(
    col: &Tensor<T>,
    n: usize,
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    kt: usize,
    kh: usize,
    kw: usize,
) -> Tensor<T> {
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let cols = kt * kh * kw * c;
    let mut out = Tensor::zeros(&[n, t, h, w, c]);
    let dst = out.data_mut();
    let src = col.data();
    for b in 0..n {
        for f in 0..t {
            for r in 0..h {
                for colx in 0..w {
                    let row_base = (((b * t + f) * h + r) * w + colx) * cols;
                    for df in 0..kt {
                        let ff = f as isize + df as isize - pt as isize;
                        if ff < 0 || ff >= t as isize {
                            continue;
                        }
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
                                let dst_base =
                                    (((b * t + ff as usize) * h + rr as usize) * w + cc as usize)
                                        * c;
                                let src_base = row_base + ((df * kh + dr) * kw + dc) * c;
                                for k in 0..c {
                                    dst[dst_base + k] += src[src_base + k];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

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

/// `(n, t, h, w, c_in) -> (n, t, h, w, c_out)` cross-correlation plus bias.
pub fn conv3d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    check_conv3d(x, weight, bias)?;
    let (n, t, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kt, kh, kw, c_in, c_out) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
        weight.shape()[4],
    );
    let col = vol2col(x, kt, kh, kw);
    let wmat = weight.clone().reshape(&[kt * kh * kw * c_in, c_out])?;
    let wmat_t = transpose2(&wmat);
    let mut out = matmul_nt(&col, &wmat_t)?;
    for row in out.data_mut().chunks_exact_mut(c_out) {
        for (o, &b) in row.iter_mut().zip(bias.iter()) {
            *o += b;
        }
    }
    Ok(out.reshape(&[n, t, h, w, c_out])?)
}

/// Gradients w.r.t. input, kernel, and bias.
#[allow(clippy::type_complexity)]
pub fn conv3d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, t, h, w, c_in) = (
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
        x.shape()[4],
    );
    let (kt, kh, kw, c_out) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[4],
    );
    if grad_out.shape() != [n, t, h, w, c_out] {
        return Err(NnError::Shape {
            op: "conv3d_backward",
            detail: format!(
                "grad shape {:?} does not match output {:?}",
                grad_out.shape(),
                [n, t, h, w, c_out]
            ),
        });
    }
    let grad_bias = sum_except_last(grad_out);
    let gout_mat = grad_out.clone().reshape(&[n * t * h * w, c_out])?;
    let col = vol2col(x, kt, kh, kw);
    let grad_w = matmul_tn(&col, &gout_mat)?.reshape(&[kt, kh, kw, c_in, c_out])?;
    let wmat = weight.clone().reshape(&[kt * kh * kw * c_in, c_out])?;
    let wmat_t = transpose2(&wmat);
    let grad_col = matmul(&gout_mat, &wmat_t)?;
    let grad_x = col2vol(&grad_col, n, t, h, w, c_in, kt, kh, kw);
    Ok((grad_x, grad_w, grad_bias))
}
