//! Quadratic polynomial expansion of image neighborhoods.
//!
//! Each pixel's neighborhood is modeled as
//! `f(x, y) ~ c + bx*x + by*y + axx*x^2 + ayy*y^2 + axy*x*y`
//! fit by weighted least squares under a Gaussian applicability window.
//! Because the window is clamped at image borders (replicate padding),
//! the normal-equation matrix G is the same at every pixel and is
//! inverted once; the per-pixel projections reduce to separable 1-D
//! correlations.

use crate::tensor::{Scalar, Tensor};

use super::{FlowError, FlowParams, GrayImage};

/// Per-pixel quadratic coefficients `f(x) ~ x^T A x + b^T x + c` with
/// `A = [[a_xx, a_xy], [a_xy, a_yy]]` symmetric by construction.
#[derive(Debug, Clone)]
pub struct PolyExpansion<T: Scalar> {
    pub a_xx: Tensor<T>,
    pub a_xy: Tensor<T>,
    pub a_yy: Tensor<T>,
    pub b_x: Tensor<T>,
    pub b_y: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> PolyExpansion<T> {
    pub fn height(&self) -> usize {
        self.a_xx.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.a_xx.shape()[1]
    }
}

/// Solve a dense linear system in place by Gaussian elimination with
/// partial pivoting. `a` is n*n row-major, `b` is the right-hand side.
pub(crate) fn solve_linear(a: &mut [f64], b: &mut [f64], n: usize) -> Result<(), FlowError> {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(FlowError::Config("singular normal-equation matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}

/// Gaussian applicability samples at integer offsets `-half..=half`.
fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as isize;
    (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Invert the 6x6 normal-equation matrix of the quadratic basis
/// `{1, x, y, x^2, y^2, xy}` under the separable Gaussian weights.
fn basis_gram_inverse(kernel: &[f64]) -> Result<[[f64; 6]; 6], FlowError> {
    let half = (kernel.len() / 2) as isize;
    let mut g = [[0.0f64; 6]; 6];
    for (ky, &wy) in kernel.iter().enumerate() {
        let y = ky as isize - half;
        for (kx, &wx) in kernel.iter().enumerate() {
            let x = kx as isize - half;
            let w = wx * wy;
            let phi = [
                1.0,
                x as f64,
                y as f64,
                (x * x) as f64,
                (y * y) as f64,
                (x * y) as f64,
            ];
            for i in 0..6 {
                for j in 0..6 {
                    g[i][j] += w * phi[i] * phi[j];
                }
            }
        }
    }
    let mut inv = [[0.0f64; 6]; 6];
    for col in 0..6 {
        let mut a: Vec<f64> = g.iter().flatten().copied().collect();
        let mut e = [0.0f64; 6];
        e[col] = 1.0;
        solve_linear(&mut a, &mut e, 6)?;
        for row in 0..6 {
            inv[row][col] = e[row];
        }
    }
    Ok(inv)
}

/// Fit the quadratic basis at every pixel of `img`.
///
/// Windows are clamped at image edges (replicate padding), so border
/// coefficients are biased; callers that need crisp statistics exclude a
/// border of `expansion_window` pixels.
pub fn polynomial_expansion<T: Scalar>(
    img: &GrayImage<T>,
    params: &FlowParams,
) -> Result<PolyExpansion<T>, FlowError> {
    params.validate()?;
    let (h, w) = (img.height(), img.width());
    let win = params.expansion_window;
    if h < win || w < win {
        return Err(FlowError::Config(format!(
            "image {}x{} smaller than expansion window {}",
            h, w, win
        )));
    }
    let kernel = gaussian_kernel(win, params.window_sigma);
    let ginv = basis_gram_inverse(&kernel)?;
    let half = (win / 2) as isize;

    let src = img.intensity().data();
    // Horizontal pass: weighted sums of f, f*x, f*x^2 along each row.
    let mut s0 = vec![0.0f64; h * w];
    let mut s1 = vec![0.0f64; h * w];
    let mut s2 = vec![0.0f64; h * w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
            for (k, &wk) in kernel.iter().enumerate() {
                let x = k as isize - half;
                let cc = (c as isize + x).clamp(0, w as isize - 1) as usize;
                let v = wk * row[cc].to_f64();
                a0 += v;
                a1 += v * x as f64;
                a2 += v * (x * x) as f64;
            }
            let idx = r * w + c;
            s0[idx] = a0;
            s1[idx] = a1;
            s2[idx] = a2;
        }
    }

    // Vertical pass completes the six basis projections.
    let mut a_xx = Tensor::zeros(&[h, w]);
    let mut a_xy = Tensor::zeros(&[h, w]);
    let mut a_yy = Tensor::zeros(&[h, w]);
    let mut b_x = Tensor::zeros(&[h, w]);
    let mut b_y = Tensor::zeros(&[h, w]);
    let mut c_out = Tensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            let (mut v1, mut vx, mut vy, mut vxx, mut vyy, mut vxy) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for (k, &wk) in kernel.iter().enumerate() {
                let y = k as isize - half;
                let rr = (r as isize + y).clamp(0, h as isize - 1) as usize;
                let idx = rr * w + c;
                let yf = y as f64;
                v1 += wk * s0[idx];
                vx += wk * s1[idx];
                vy += wk * yf * s0[idx];
                vxx += wk * s2[idx];
                vyy += wk * yf * yf * s0[idx];
                vxy += wk * yf * s1[idx];
            }
            let v = [v1, vx, vy, vxx, vyy, vxy];
            let mut coef = [0.0f64; 6];
            for (i, ci) in coef.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..6 {
                    acc += ginv[i][j] * v[j];
                }
                *ci = acc;
            }
            let idx = r * w + c;
            c_out.data_mut()[idx] = T::of(coef[0]);
            b_x.data_mut()[idx] = T::of(coef[1]);
            b_y.data_mut()[idx] = T::of(coef[2]);
            a_xx.data_mut()[idx] = T::of(coef[3]);
            a_yy.data_mut()[idx] = T::of(coef[4]);
            // The fitted xy coefficient is the FULL cross term; the
            // symmetric matrix entry is half of it.
            a_xy.data_mut()[idx] = T::of(coef[5] / 2.0);
        }
    }

    Ok(PolyExpansion {
        a_xx,
        a_xy,
        a_yy,
        b_x,
        b_y,
        c: c_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::GrayImage;

    fn interior(h: usize, w: usize, margin: usize) -> impl Iterator<Item = (usize, usize)> {
        (margin..h - margin).flat_map(move |r| (margin..w - margin).map(move |c| (r, c)))
    }

    #[test]
    fn constant_image_fits_exactly() {
        let img = GrayImage::new(Tensor::<f64>::full(&[24, 24], 0.42)).unwrap();
        let params = FlowParams::default();
        let exp = polynomial_expansion(&img, &params).unwrap();
        // Replicate padding keeps a constant image constant, so the fit
        // is exact everywhere, not just in the interior.
        for r in 0..24 {
            for c in 0..24 {
                assert!(exp.a_xx.at(&[r, c]).abs() < 1e-10);
                assert!(exp.a_xy.at(&[r, c]).abs() < 1e-10);
                assert!(exp.a_yy.at(&[r, c]).abs() < 1e-10);
                assert!(exp.b_x.at(&[r, c]).abs() < 1e-10);
                assert!(exp.b_y.at(&[r, c]).abs() < 1e-10);
                assert!((exp.c.at(&[r, c]) - 0.42).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_ramp_recovers_gradient() {
        let img =
            GrayImage::new(Tensor::<f64>::from_fn(&[24, 24], |i| 0.01 * i[1] as f64)).unwrap();
        let params = FlowParams::default();
        let exp = polynomial_expansion(&img, &params).unwrap();
        let m = params.expansion_window;
        for (r, c) in interior(24, 24, m) {
            assert!(exp.a_xx.at(&[r, c]).abs() < 1e-6, "A must vanish on a ramp");
            assert!(exp.a_xy.at(&[r, c]).abs() < 1e-6);
            assert!(exp.a_yy.at(&[r, c]).abs() < 1e-6);
            assert!(
                (exp.b_x.at(&[r, c]) - 0.01).abs() < 1e-6,
                "horizontal slope, got {}",
                exp.b_x.at(&[r, c])
            );
            assert!(exp.b_y.at(&[r, c]).abs() < 1e-6);
            assert!((exp.c.at(&[r, c]) - 0.01 * c as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn pure_quadratic_recovers_curvature() {
        // f = 0.001 * x^2 about the window centre; interior fit is exact.
        let img = GrayImage::new(Tensor::<f64>::from_fn(&[32, 32], |i| {
            let x = i[1] as f64 - 16.0;
            (0.001 * x * x).min(1.0)
        }))
        .unwrap();
        let params = FlowParams::default();
        let exp = polynomial_expansion(&img, &params).unwrap();
        let m = params.expansion_window;
        // Fit in window coordinates: f(x0 + u) = 0.001 (x0 - 16 + u)^2, so
        // a_xx = 0.001 and b_x = 0.002 (x0 - 16).
        for (r, c) in interior(32, 32, m) {
            if (0.001 * (c as f64 - 16.0).powi(2)) >= 1.0 {
                continue; // clipped by the [0,1] range guard
            }
            assert!((exp.a_xx.at(&[r, c]) - 0.001).abs() < 1e-8);
            assert!((exp.b_x.at(&[r, c]) - 0.002 * (c as f64 - 16.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn random_image_matches_direct_normal_equation_solve() {
        // Independent oracle: at each sampled pixel, assemble the full
        // 6x6 weighted normal equations by direct summation over the
        // clamped window and solve them with nalgebra, no separable
        // passes and no shared inverse.
        use crate::tensor::SeededRng;
        let mut rng = SeededRng::new(71);
        let img_t = Tensor::<f64>::from_fn(&[40, 40], |_| rng.uniform(0.0, 1.0));
        let img = GrayImage::new(img_t.clone()).unwrap();
        let params = FlowParams::default();
        let exp = polynomial_expansion(&img, &params).unwrap();

        let half = (params.expansion_window / 2) as isize;
        let sigma = params.window_sigma;
        let mut pick = SeededRng::new(72);
        for _ in 0..20 {
            let r = pick.below(40);
            let c = pick.below(40);
            let mut g = nalgebra::SMatrix::<f64, 6, 6>::zeros();
            let mut v = nalgebra::SVector::<f64, 6>::zeros();
            for dy in -half..=half {
                for dx in -half..=half {
                    let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                    let rr = (r as isize + dy).clamp(0, 39) as usize;
                    let cc = (c as isize + dx).clamp(0, 39) as usize;
                    let f = img_t.at(&[rr, cc]);
                    let phi = nalgebra::SVector::<f64, 6>::from([
                        1.0,
                        dx as f64,
                        dy as f64,
                        (dx * dx) as f64,
                        (dy * dy) as f64,
                        (dx * dy) as f64,
                    ]);
                    g += w * phi * phi.transpose();
                    v += w * f * phi;
                }
            }
            let coef = g.lu().solve(&v).expect("well-conditioned window");
            let checks = [
                (exp.c.at(&[r, c]), coef[0], "c"),
                (exp.b_x.at(&[r, c]), coef[1], "b_x"),
                (exp.b_y.at(&[r, c]), coef[2], "b_y"),
                (exp.a_xx.at(&[r, c]), coef[3], "a_xx"),
                (exp.a_yy.at(&[r, c]), coef[4], "a_yy"),
                (exp.a_xy.at(&[r, c]), coef[5] / 2.0, "a_xy"),
            ];
            for (got, want, name) in checks {
                assert!(
                    (got - want).abs() < 1e-9,
                    "pixel ({}, {}) {}: {} vs oracle {}",
                    r,
                    c,
                    name,
                    got,
                    want
                );
            }
        }
    }

    #[test]
    fn rejects_images_smaller_than_window() {
        let img = GrayImage::new(Tensor::<f64>::zeros(&[8, 8])).unwrap();
        assert!(polynomial_expansion(&img, &FlowParams::default()).is_err());
    }

    #[test]
    fn solve_linear_matches_hand_system() {
        // 2x + y = 5; x - y = 1  =>  x = 2, y = 1
        let mut a = vec![2.0, 1.0, 1.0, -1.0];
        let mut b = vec![5.0, 1.0];
        solve_linear(&mut a, &mut b, 2).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12);
        assert!((b[1] - 1.0).abs() < 1e-12);
    }
}
