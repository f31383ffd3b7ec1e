//! Behavioral invariants of the dense flow estimator on synthetic
//! translation cases.

use vidflow_core::flow::{farneback_flow, FlowParams, GrayImage};
use vidflow_core::tensor::{SeededRng, Tensor};

/// Band-limited random texture, values in [0.05, 0.95].
fn smooth_texture(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = SeededRng::new(seed);
    let mut buf: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.0, 1.0)).collect();
    for win in [5usize, 3] {
        let half = (win / 2) as isize;
        let mut tmp = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for k in -half..=half {
                    let cc = (c as isize + k).clamp(0, w as isize - 1) as usize;
                    acc += buf[r * w + cc];
                }
                tmp[r * w + c] = acc / win as f64;
            }
        }
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for k in -half..=half {
                    let rr = (r as isize + k).clamp(0, h as isize - 1) as usize;
                    acc += tmp[rr * w + c];
                }
                buf[r * w + c] = acc / win as f64;
            }
        }
    }
    let lo = buf.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    Tensor::new(
        &[h, w],
        buf.iter().map(|v| 0.05 + 0.9 * (v - lo) / span).collect(),
    )
    .unwrap()
}

fn translated_pair(seed: u64, size: usize, tx: i64, ty: i64) -> (GrayImage<f64>, GrayImage<f64>) {
    let pad = 8usize;
    let big = smooth_texture(seed, size + 2 * pad, size + 2 * pad);
    let f1 = Tensor::from_fn(&[size, size], |i| big.at(&[i[0] + pad, i[1] + pad]));
    let f2 = Tensor::from_fn(&[size, size], |i| {
        let r = (i[0] as i64 + pad as i64 - ty) as usize;
        let c = (i[1] as i64 + pad as i64 - tx) as usize;
        big.at(&[r, c])
    });
    (GrayImage::new(f1).unwrap(), GrayImage::new(f2).unwrap())
}

fn interior_median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn zero_motion_for_textured_and_degenerate_images() {
    let params = FlowParams::default();
    // Textured image.
    let img = GrayImage::new(smooth_texture(1, 96, 96)).unwrap();
    let flow = farneback_flow(&img, &img, &params).unwrap();
    assert!(flow.max_magnitude() < 1e-3, "textured: {}", flow.max_magnitude());
    // Constant image: every local system is singular and must fall back
    // to the zero prior rather than blowing up.
    let flat = GrayImage::new(Tensor::full(&[96, 96], 0.5)).unwrap();
    let flow = farneback_flow(&flat, &flat, &params).unwrap();
    assert!(flow.max_magnitude() < 1e-3, "constant: {}", flow.max_magnitude());
}

#[test]
fn shift_equivariance_up_to_four_pixels() {
    let params = FlowParams::default();
    let margin = params.expansion_window;
    for (case, (tx, ty)) in [(1i64, 0i64), (-3, 1), (4, 0), (0, -4), (2, 2)]
        .into_iter()
        .enumerate()
    {
        let (f1, f2) = translated_pair(100 + case as u64, 96, tx, ty);
        let flow = farneback_flow(&f1, &f2, &params).unwrap();
        let med_dx = interior_median(
            (margin..96 - margin)
                .flat_map(|r| (margin..96 - margin).map(move |c| (r, c)))
                .map(|(r, c)| flow.dx.at(&[r, c])),
        );
        let med_dy = interior_median(
            (margin..96 - margin)
                .flat_map(|r| (margin..96 - margin).map(move |c| (r, c)))
                .map(|(r, c)| flow.dy.at(&[r, c])),
        );
        assert!(
            (med_dx - tx as f64).abs() < 0.5 && (med_dy - ty as f64).abs() < 0.5,
            "shift ({}, {}): recovered medians ({:.2}, {:.2})",
            tx,
            ty,
            med_dx,
            med_dy
        );
    }
}

#[test]
fn forward_and_backward_flow_approximately_cancel() {
    let params = FlowParams::default();
    let margin = params.expansion_window;
    for (case, (tx, ty)) in [(2i64, 1i64), (-3, 0), (0, 3)].into_iter().enumerate() {
        let (f1, f2) = translated_pair(200 + case as u64, 96, tx, ty);
        let fwd = farneback_flow(&f1, &f2, &params).unwrap();
        let bwd = farneback_flow(&f2, &f1, &params).unwrap();
        let med_sum = interior_median(
            (margin..96 - margin)
                .flat_map(|r| (margin..96 - margin).map(move |c| (r, c)))
                .map(|(r, c)| {
                    let sx = fwd.dx.at(&[r, c]) + bwd.dx.at(&[r, c]);
                    let sy = fwd.dy.at(&[r, c]) + bwd.dy.at(&[r, c]);
                    (sx * sx + sy * sy).sqrt()
                }),
        );
        assert!(
            med_sum < 0.5,
            "translation ({}, {}): median |fwd + bwd| = {:.3}",
            tx,
            ty,
            med_sum
        );
    }
}
