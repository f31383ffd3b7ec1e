//! Displacement estimation from polynomial-expansion coefficients and the
//! coarse-to-fine pyramid driver.
//!
//! Under a pure translation `d` the quadratic coefficients satisfy
//! `b2 = b1 - 2 A d`. With `A_bar = (A1 + A2)/2` and
//! `db = -(b2 - b1)/2 + A_bar * d_prior` (coefficients of frame 2 fetched
//! at the prior-displaced position), the per-pixel constraint is
//! `A_bar * d = db`, solved in least squares over a local averaging
//! window: `(sum w A^T A) d = sum w A^T db`.

use crate::tensor::{Scalar, Tensor};

use super::{bilinear_clamped, FlowError, FlowField, FlowParams, GrayImage, PolyExpansion};

use super::expansion::polynomial_expansion;

/// Regularization scale added to the normal matrix diagonal.
const DIAG_EPS: f64 = 1e-8;
/// Condition-number ceiling beyond which the prior flow is kept.
const COND_LIMIT: f64 = 1e8;

/// One refinement of the displacement field from two expansions.
///
/// Frame-2 coefficients are fetched at the prior-displaced pixel
/// (rounded, clamped to the image); near-singular systems keep the prior
/// value at that pixel.
pub fn estimate_flow<T: Scalar>(
    e1: &PolyExpansion<T>,
    e2: &PolyExpansion<T>,
    prior: &FlowField<T>,
    params: &FlowParams,
) -> Result<FlowField<T>, FlowError> {
    let (h, w) = (e1.height(), e1.width());
    if e2.height() != h || e2.width() != w {
        return Err(FlowError::DimMismatch(h, w, e2.height(), e2.width()));
    }
    if prior.height() != h || prior.width() != w {
        return Err(FlowError::DimMismatch(h, w, prior.height(), prior.width()));
    }

    // Per-pixel normal-equation entries G = A^T A (g11, g12, g22) and
    // right-hand side hv = A^T db (h1, h2).
    let mut g11 = vec![0.0f64; h * w];
    let mut g12 = vec![0.0f64; h * w];
    let mut g22 = vec![0.0f64; h * w];
    let mut h1 = vec![0.0f64; h * w];
    let mut h2 = vec![0.0f64; h * w];

    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            let px = prior.dx.data()[idx].to_f64();
            let py = prior.dy.data()[idx].to_f64();
            // Integer fetch position in frame 2, clamped to the image;
            // the displacement actually applied enters the identity below.
            let cc = ((c as f64 + px).round()).clamp(0.0, (w - 1) as f64) as usize;
            let rr = ((r as f64 + py).round()).clamp(0.0, (h - 1) as f64) as usize;
            let dx_used = cc as f64 - c as f64;
            let dy_used = rr as f64 - r as f64;
            let jdx = rr * w + cc;

            let a11 = 0.5 * (e1.a_xx.data()[idx].to_f64() + e2.a_xx.data()[jdx].to_f64());
            let a12 = 0.5 * (e1.a_xy.data()[idx].to_f64() + e2.a_xy.data()[jdx].to_f64());
            let a22 = 0.5 * (e1.a_yy.data()[idx].to_f64() + e2.a_yy.data()[jdx].to_f64());
            let db1 = -0.5 * (e2.b_x.data()[jdx].to_f64() - e1.b_x.data()[idx].to_f64())
                + a11 * dx_used
                + a12 * dy_used;
            let db2 = -0.5 * (e2.b_y.data()[jdx].to_f64() - e1.b_y.data()[idx].to_f64())
                + a12 * dx_used
                + a22 * dy_used;

            g11[idx] = a11 * a11 + a12 * a12;
            g12[idx] = a11 * a12 + a12 * a22;
            g22[idx] = a12 * a12 + a22 * a22;
            h1[idx] = a11 * db1 + a12 * db2;
            h2[idx] = a12 * db1 + a22 * db2;
        }
    }

    for buf in [&mut g11, &mut g12, &mut g22, &mut h1, &mut h2] {
        box_blur(buf, h, w, params.averaging_window);
    }

    let mut out_dx = Tensor::zeros(&[h, w]);
    let mut out_dy = Tensor::zeros(&[h, w]);
    for idx in 0..h * w {
        let lambda = DIAG_EPS * (g11[idx] + g22[idx]).abs();
        let m11 = g11[idx] + lambda;
        let m22 = g22[idx] + lambda;
        let m12 = g12[idx];
        let det = m11 * m22 - m12 * m12;
        let trace = m11 + m22;
        // Symmetric 2x2 eigenvalue ratio as the condition estimate.
        let disc = (trace * trace - 4.0 * det).max(0.0).sqrt();
        let lo = 0.5 * (trace - disc);
        let hi = 0.5 * (trace + disc);
        if det <= 0.0 || lo <= 0.0 || hi / lo > COND_LIMIT {
            out_dx.data_mut()[idx] = prior.dx.data()[idx];
            out_dy.data_mut()[idx] = prior.dy.data()[idx];
        } else {
            out_dx.data_mut()[idx] = T::of((m22 * h1[idx] - m12 * h2[idx]) / det);
            out_dy.data_mut()[idx] = T::of((m11 * h2[idx] - m12 * h1[idx]) / det);
        }
    }
    FlowField::new(out_dx, out_dy)
}

/// Normalized box filter with replicate padding, separable in place.
fn box_blur(buf: &mut [f64], h: usize, w: usize, window: usize) {
    let half = (window / 2) as isize;
    let norm = 1.0 / window as f64;
    let mut tmp = vec![0.0f64; h * w];
    // Horizontal.
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for k in -half..=half {
                let cc = (c as isize + k).clamp(0, w as isize - 1) as usize;
                acc += buf[r * w + cc];
            }
            tmp[r * w + c] = acc * norm;
        }
    }
    // Vertical.
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for k in -half..=half {
                let rr = (r as isize + k).clamp(0, h as isize - 1) as usize;
                acc += tmp[rr * w + c];
            }
            buf[r * w + c] = acc * norm;
        }
    }
}

/// Corner-aligned bilinear resize of an `(h, w)` plane.
pub(crate) fn resize_plane<T: Scalar>(plane: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    let ry = if out_h > 1 {
        (h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let rx = if out_w > 1 {
        (w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    Tensor::from_fn(&[out_h, out_w], |i| {
        bilinear_clamped(plane, i[0] as f64 * ry, i[1] as f64 * rx)
    })
}

/// Pyramid level sizes, finest first. Errors when the coarsest level
/// would not fit the expansion window.
fn pyramid_dims(h: usize, w: usize, params: &FlowParams) -> Result<Vec<(usize, usize)>, FlowError> {
    let mut dims = vec![(h, w)];
    for _ in 1..params.pyramid_levels {
        let (ph, pw) = *dims.last().unwrap();
        let nh = ((ph as f64) * params.pyramid_scale).round().max(1.0) as usize;
        let nw = ((pw as f64) * params.pyramid_scale).round().max(1.0) as usize;
        dims.push((nh, nw));
    }
    let (ch, cw) = *dims.last().unwrap();
    if ch < params.expansion_window || cw < params.expansion_window {
        return Err(FlowError::Config(format!(
            "degenerate pyramid: coarsest level {}x{} smaller than expansion window {}",
            ch, cw, params.expansion_window
        )));
    }
    Ok(dims)
}

/// Full coarse-to-fine dense flow between two frames.
pub fn farneback_flow<T: Scalar>(
    f1: &GrayImage<T>,
    f2: &GrayImage<T>,
    params: &FlowParams,
) -> Result<FlowField<T>, FlowError> {
    params.validate()?;
    if f1.height() != f2.height() || f1.width() != f2.width() {
        return Err(FlowError::DimMismatch(
            f1.height(),
            f1.width(),
            f2.height(),
            f2.width(),
        ));
    }
    let dims = pyramid_dims(f1.height(), f1.width(), params)?;

    // Build pyramids finest-to-coarsest by successive resampling. The
    // clamp guards against interpolation overshooting [0, 1] by an ulp,
    // which the level images must stay inside.
    let clamp01 = |t: Tensor<T>| t.map(|v| v.max_val(T::ZERO).min_val(T::ONE));
    let mut pyr1 = vec![f1.intensity().clone()];
    let mut pyr2 = vec![f2.intensity().clone()];
    for &(nh, nw) in dims.iter().skip(1) {
        pyr1.push(clamp01(resize_plane(pyr1.last().unwrap(), nh, nw)));
        pyr2.push(clamp01(resize_plane(pyr2.last().unwrap(), nh, nw)));
    }

    let mut flow: Option<FlowField<T>> = None;
    for level in (0..dims.len()).rev() {
        let (lh, lw) = dims[level];
        let prior = match flow.take() {
            None => FlowField::zeros(lh, lw),
            Some(coarse) => {
                // Upsample and rescale displacements to this level's grid.
                let sy = lh as f64 / coarse.height() as f64;
                let sx = lw as f64 / coarse.width() as f64;
                let dx = resize_plane(&coarse.dx, lh, lw).map(|v| v * T::of(sx));
                let dy = resize_plane(&coarse.dy, lh, lw).map(|v| v * T::of(sy));
                FlowField::new(dx, dy)?
            }
        };
        let g1 = GrayImage::new(pyr1[level].clone())?;
        let g2 = GrayImage::new(pyr2[level].clone())?;
        let e1 = polynomial_expansion(&g1, params)?;
        let e2 = polynomial_expansion(&g2, params)?;
        let mut current = prior;
        for _ in 0..params.iterations_per_level {
            current = estimate_flow(&e1, &e2, &current, params)?;
        }
        flow = Some(current);
    }
    Ok(flow.expect("at least one pyramid level"))
}
