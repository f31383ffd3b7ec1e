//! Dense two-frame motion estimation via polynomial expansion, plus the
//! flow-channel stacking and the 3-channel flow encoding used by the
//! model input assembly.
//!
//! The estimator follows the classic two-frame scheme: every image
//! neighborhood is approximated by a quadratic polynomial under a
//! Gaussian applicability window, and the displacement field is solved
//! from how those coefficients shift between frames, refined coarse to
//! fine over an image pyramid.

mod estimate;
mod expansion;

pub use estimate::{estimate_flow, farneback_flow};
pub use expansion::{polynomial_expansion, PolyExpansion};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Error)]
pub enum FlowError {
    #[error("image dimensions disagree: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("bad flow configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T: Scalar> {
    width: usize,
    height: usize,
    intensity: Tensor<T>,
}

impl<T: Scalar> GrayImage<T> {
    /// Wrap an `(h, w)` tensor, enforcing finite values in `[0, 1]`.
    pub fn new(intensity: Tensor<T>) -> Result<Self, FlowError> {
        if intensity.rank() != 2 {
            return Err(FlowError::Config(format!(
                "gray image must be rank 2, got shape {:?}",
                intensity.shape()
            )));
        }
        for &v in intensity.iter() {
            if !v.is_finite() || v < T::ZERO || v > T::ONE {
                return Err(FlowError::NonFinite("gray image intensities".into()));
            }
        }
        Ok(Self {
            height: intensity.shape()[0],
            width: intensity.shape()[1],
            intensity,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intensity(&self) -> &Tensor<T> {
        &self.intensity
    }
}

/// Per-pixel displacement field; `dx` is horizontal (columns), `dy`
/// vertical (rows), both in pixels of the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T: Scalar> {
    pub dx: Tensor<T>,
    pub dy: Tensor<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            dx: Tensor::zeros(&[height, width]),
            dy: Tensor::zeros(&[height, width]),
        }
    }

    pub fn new(dx: Tensor<T>, dy: Tensor<T>) -> Result<Self, FlowError> {
        if dx.shape() != dy.shape() || dx.rank() != 2 {
            return Err(FlowError::Tensor(TensorError::ShapeMismatch {
                op: "flow field",
                left: dx.shape().to_vec(),
                right: dy.shape().to_vec(),
            }));
        }
        Ok(Self { dx, dy })
    }

    pub fn height(&self) -> usize {
        self.dx.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.dx.shape()[1]
    }

    /// Largest displacement magnitude in the field.
    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(self.dy.iter())
            .map(|(&x, &y)| (x.to_f64().powi(2) + y.to_f64().powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Parameters of the pyramidal estimator.
///
/// The defaults suit 128x128 frames; smaller frames want fewer levels
/// and a tighter window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    pub window_sigma: f64,
    pub expansion_window: usize,
    pub iterations_per_level: usize,
    pub averaging_window: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window_sigma: 1.5,
            expansion_window: 11,
            iterations_per_level: 3,
            averaging_window: 15,
        }
    }
}

impl FlowParams {
    /// Scaled-down parameter set for small frames (e.g. 32x32).
    pub fn small_frames() -> Self {
        Self {
            pyramid_levels: 2,
            pyramid_scale: 0.5,
            window_sigma: 1.2,
            expansion_window: 9,
            iterations_per_level: 3,
            averaging_window: 11,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.pyramid_levels < 1 {
            return Err(FlowError::Config("pyramid_levels must be >= 1".into()));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(FlowError::Config(format!(
                "pyramid_scale must lie in (0,1), got {}",
                self.pyramid_scale
            )));
        }
        for (name, w) in [
            ("expansion_window", self.expansion_window),
            ("averaging_window", self.averaging_window),
        ] {
            if w < 3 || w % 2 == 0 {
                return Err(FlowError::Config(format!(
                    "{} must be odd and >= 3, got {}",
                    name, w
                )));
            }
        }
        if self.window_sigma <= 0.0 {
            return Err(FlowError::Config("window_sigma must be positive".into()));
        }
        if self.iterations_per_level < 1 {
            return Err(FlowError::Config("iterations_per_level must be >= 1".into()));
        }
        Ok(())
    }
}

/// Luma conversion `0.299 R + 0.587 G + 0.114 B`, clamped to `[0, 1]`.
pub fn to_grayscale<T: Scalar>(rgb: &Tensor<T>) -> Result<GrayImage<T>, FlowError> {
    if rgb.rank() != 3 || rgb.shape()[2] != 3 {
        return Err(FlowError::Config(format!(
            "expected (h, w, 3) image, got {:?}",
            rgb.shape()
        )));
    }
    let (h, w) = (rgb.shape()[0], rgb.shape()[1]);
    let src = rgb.data();
    let mut out = Vec::with_capacity(h * w);
    for px in 0..h * w {
        let r = src[px * 3];
        let g = src[px * 3 + 1];
        let b = src[px * 3 + 2];
        if !(r.is_finite() && g.is_finite() && b.is_finite()) {
            return Err(FlowError::NonFinite(format!("rgb pixel {}", px)));
        }
        let y = T::of(0.299) * r + T::of(0.587) * g + T::of(0.114) * b;
        out.push(y.max_val(T::ZERO).min_val(T::ONE));
    }
    GrayImage::new(Tensor::new(&[h, w], out)?)
}

/// Clamped bilinear lookup on an `(h, w)` plane; coordinates are
/// `(row, col)` and are clipped to the image rectangle first.
pub(crate) fn bilinear_clamped<T: Scalar>(plane: &Tensor<T>, row: f64, col: f64) -> T {
    let h = plane.shape()[0];
    let w = plane.shape()[1];
    let r = row.clamp(0.0, (h - 1) as f64);
    let c = col.clamp(0.0, (w - 1) as f64);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = T::of(r - r0 as f64);
    let fc = T::of(c - c0 as f64);
    let d = plane.data();
    let v00 = d[r0 * w + c0];
    let v01 = d[r0 * w + c1];
    let v10 = d[r1 * w + c0];
    let v11 = d[r1 * w + c1];
    let top = v00 + (v01 - v00) * fc;
    let bot = v10 + (v11 - v10) * fc;
    top + (bot - top) * fr
}

/// Warp residual of the brightness-constancy assumption with an
/// out-of-bounds validity mask.
#[derive(Debug, Clone)]
pub struct ResidualField<T: Scalar> {
    /// `f2(x + dx, y + dy) - f1(x, y)`; zero where invalid.
    pub residual: Tensor<T>,
    /// 1 where the warped sample fell inside the image, else 0.
    pub valid: Tensor<T>,
}

impl<T: Scalar> ResidualField<T> {
    /// Mean absolute residual over valid samples.
    pub fn mean_abs(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (&r, &v) in self.residual.iter().zip(self.valid.iter()) {
            if v > T::ZERO {
                sum += r.to_f64().abs();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v > T::ZERO).count()
    }
}

/// Residual of `f2` warped by `flow` against `f1`; samples landing
/// outside `f2` are marked invalid and excluded from statistics.
pub fn brightness_constancy_residual<T: Scalar>(
    f1: &GrayImage<T>,
    f2: &GrayImage<T>,
    flow: &FlowField<T>,
) -> Result<ResidualField<T>, FlowError> {
    if f1.height() != f2.height() || f1.width() != f2.width() {
        return Err(FlowError::DimMismatch(
            f1.height(),
            f1.width(),
            f2.height(),
            f2.width(),
        ));
    }
    if flow.height() != f1.height() || flow.width() != f1.width() {
        return Err(FlowError::DimMismatch(
            flow.height(),
            flow.width(),
            f1.height(),
            f1.width(),
        ));
    }
    let (h, w) = (f1.height(), f1.width());
    let mut residual = Tensor::zeros(&[h, w]);
    let mut valid = Tensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            let x = c as f64 + flow.dx.data()[r * w + c].to_f64();
            let y = r as f64 + flow.dy.data()[r * w + c].to_f64();
            if x >= 0.0 && x <= (w - 1) as f64 && y >= 0.0 && y <= (h - 1) as f64 {
                let warped = bilinear_clamped(f2.intensity(), y, x);
                let diff = warped - f1.intensity().data()[r * w + c];
                residual.data_mut()[r * w + c] = diff;
                valid.data_mut()[r * w + c] = T::ONE;
            }
        }
    }
    Ok(ResidualField { residual, valid })
}

/// Interleave `L` flow fields into a `(h, w, 2L)` tensor: channel `2k`
/// holds `dx` of flow `k`, channel `2k+1` holds `dy` (zero-based; this is
/// the dx/dy interleaving contract of the stacked-flow input encoding).
pub fn stack_flow<T: Scalar>(flows: &[FlowField<T>]) -> Result<Tensor<T>, FlowError> {
    let first = flows
        .first()
        .ok_or_else(|| FlowError::Config("stack_flow needs at least one field".into()))?;
    let (h, w) = (first.height(), first.width());
    for f in flows {
        if f.height() != h || f.width() != w {
            return Err(FlowError::DimMismatch(h, w, f.height(), f.width()));
        }
    }
    let channels = 2 * flows.len();
    let mut out = Tensor::zeros(&[h, w, channels]);
    let data = out.data_mut();
    for (k, f) in flows.iter().enumerate() {
        for px in 0..h * w {
            data[px * channels + 2 * k] = f.dx.data()[px];
            data[px * channels + 2 * k + 1] = f.dy.data()[px];
        }
    }
    Ok(out)
}

/// Encode a flow field as a 3-channel image in `[0, 1]`:
/// channel 0 = dx, channel 1 = dy (both mapped from `[-max_mag, max_mag]`
/// to `[0, 1]` with 0.5 at rest), channel 2 = normalized magnitude.
pub fn flow_to_rgb<T: Scalar>(flow: &FlowField<T>, max_mag: f64) -> Result<Tensor<T>, FlowError> {
    if max_mag <= 0.0 {
        return Err(FlowError::Config(format!(
            "max_mag must be positive, got {}",
            max_mag
        )));
    }
    let (h, w) = (flow.height(), flow.width());
    let mut out = Tensor::zeros(&[h, w, 3]);
    let data = out.data_mut();
    for px in 0..h * w {
        let dx = flow.dx.data()[px].to_f64();
        let dy = flow.dy.data()[px].to_f64();
        let mag = (dx * dx + dy * dy).sqrt();
        data[px * 3] = T::of((dx / max_mag).clamp(-1.0, 1.0) / 2.0 + 0.5);
        data[px * 3 + 1] = T::of((dy / max_mag).clamp(-1.0, 1.0) / 2.0 + 0.5);
        data[px * 3 + 2] = T::of((mag / max_mag).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Invert the first two channels of [`flow_to_rgb`].
pub fn rgb_to_flow<T: Scalar>(encoded: &Tensor<T>, max_mag: f64) -> Result<FlowField<T>, FlowError> {
    if encoded.rank() != 3 || encoded.shape()[2] != 3 {
        return Err(FlowError::Config(format!(
            "expected (h, w, 3), got {:?}",
            encoded.shape()
        )));
    }
    let (h, w) = (encoded.shape()[0], encoded.shape()[1]);
    let mut dx = Tensor::zeros(&[h, w]);
    let mut dy = Tensor::zeros(&[h, w]);
    for px in 0..h * w {
        dx.data_mut()[px] = T::of((encoded.data()[px * 3].to_f64() - 0.5) * 2.0 * max_mag);
        dy.data_mut()[px] = T::of((encoded.data()[px * 3 + 1].to_f64() - 0.5) * 2.0 * max_mag);
    }
    FlowField::new(dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    #[test]
    fn grayscale_of_zeros_is_zero() {
        let img = Tensor::<f64>::zeros(&[4, 5, 3]);
        let gray = to_grayscale(&img).unwrap();
        assert!(gray.intensity().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grayscale_of_white_is_one() {
        let img = Tensor::<f64>::full(&[3, 3, 3], 1.0);
        let gray = to_grayscale(&img).unwrap();
        for &v in gray.intensity().iter() {
            assert!((v - 1.0).abs() < 1e-12, "weights must sum to 1, got {}", v);
        }
    }

    #[test]
    fn grayscale_matches_per_pixel_oracle() {
        let mut rng = SeededRng::new(17);
        let img = Tensor::<f64>::from_fn(&[6, 7, 3], |_| rng.uniform(0.0, 1.0));
        let gray = to_grayscale(&img).unwrap();
        for r in 0..6 {
            for c in 0..7 {
                let want = 0.299 * img.at(&[r, c, 0]) + 0.587 * img.at(&[r, c, 1])
                    + 0.114 * img.at(&[r, c, 2]);
                let got = gray.intensity().at(&[r, c]);
                assert!((got - want.clamp(0.0, 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grayscale_rejects_non_finite() {
        let mut img = Tensor::<f64>::zeros(&[2, 2, 3]);
        img.data_mut()[4] = f64::NAN;
        assert!(to_grayscale(&img).is_err());
    }

    #[test]
    fn stack_single_flow_two_channels() {
        let dx = Tensor::<f64>::full(&[2, 3], 1.5);
        let dy = Tensor::<f64>::full(&[2, 3], -0.5);
        let f = FlowField::new(dx, dy).unwrap();
        let stacked = stack_flow(std::slice::from_ref(&f)).unwrap();
        assert_eq!(stacked.shape(), &[2, 3, 2]);
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(stacked.at(&[r, c, 0]), 1.5);
                assert_eq!(stacked.at(&[r, c, 1]), -0.5);
            }
        }
    }

    #[test]
    fn stack_three_flows_exhaustive_index_oracle() {
        let fields: Vec<FlowField<f64>> = (0..3)
            .map(|k| {
                FlowField::new(
                    Tensor::full(&[4, 5], 10.0 + k as f64),
                    Tensor::full(&[4, 5], 20.0 + k as f64),
                )
                .unwrap()
            })
            .collect();
        let stacked = stack_flow(&fields).unwrap();
        assert_eq!(stacked.shape(), &[4, 5, 6]);
        for u in 0..4 {
            for v in 0..5 {
                for (k, field) in fields.iter().enumerate() {
                    assert_eq!(stacked.at(&[u, v, 2 * k]), field.dx.at(&[u, v]));
                    assert_eq!(stacked.at(&[u, v, 2 * k + 1]), field.dy.at(&[u, v]));
                }
            }
        }
    }

    #[test]
    fn stack_zero_flows_all_zero() {
        let fields: Vec<FlowField<f32>> = (0..4).map(|_| FlowField::zeros(3, 3)).collect();
        let stacked = stack_flow(&fields).unwrap();
        assert_eq!(stacked.shape(), &[3, 3, 8]);
        assert!(stacked.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stack_then_deinterleave_is_identity() {
        let mut rng = SeededRng::new(31);
        let fields: Vec<FlowField<f64>> = (0..5)
            .map(|_| {
                FlowField::new(
                    Tensor::from_fn(&[6, 4], |_| rng.uniform(-3.0, 3.0)),
                    Tensor::from_fn(&[6, 4], |_| rng.uniform(-3.0, 3.0)),
                )
                .unwrap()
            })
            .collect();
        let stacked = stack_flow(&fields).unwrap();
        for (k, f) in fields.iter().enumerate() {
            let dx = stacked.index_axis(2, 2 * k).unwrap();
            let dy = stacked.index_axis(2, 2 * k + 1).unwrap();
            assert_eq!(dx, f.dx, "dx channel {} must round-trip bit-exactly", k);
            assert_eq!(dy, f.dy, "dy channel {} must round-trip bit-exactly", k);
        }
    }

    #[test]
    fn flow_rgb_zero_flow_is_midpoint() {
        let f = FlowField::<f64>::zeros(2, 2);
        let rgb = flow_to_rgb(&f, 4.0).unwrap();
        for px in 0..4 {
            assert_eq!(rgb.data()[px * 3], 0.5);
            assert_eq!(rgb.data()[px * 3 + 1], 0.5);
            assert_eq!(rgb.data()[px * 3 + 2], 0.0);
        }
    }

    #[test]
    fn flow_rgb_saturates_at_max_mag() {
        let f = FlowField::new(
            Tensor::<f64>::full(&[1, 1], 4.0),
            Tensor::<f64>::zeros(&[1, 1]),
        )
        .unwrap();
        let rgb = flow_to_rgb(&f, 4.0).unwrap();
        assert_eq!(rgb.data(), &[1.0, 0.5, 1.0]);
    }

    #[test]
    fn flow_rgb_roundtrip_within_range() {
        let mut rng = SeededRng::new(44);
        let f = FlowField::new(
            Tensor::<f64>::from_fn(&[5, 5], |_| rng.uniform(-3.9, 3.9)),
            Tensor::<f64>::from_fn(&[5, 5], |_| rng.uniform(-3.9, 3.9)),
        )
        .unwrap();
        let back = rgb_to_flow(&flow_to_rgb(&f, 4.0).unwrap(), 4.0).unwrap();
        for px in 0..25 {
            assert!((back.dx.data()[px] - f.dx.data()[px]).abs() < 1e-9);
            assert!((back.dy.data()[px] - f.dy.data()[px]).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_zero_for_identical_frames_zero_flow() {
        let mut rng = SeededRng::new(3);
        let img = GrayImage::new(Tensor::<f64>::from_fn(&[8, 8], |_| rng.uniform(0.0, 1.0)))
            .unwrap();
        let res =
            brightness_constancy_residual(&img, &img, &FlowField::zeros(8, 8)).unwrap();
        assert_eq!(res.valid_count(), 64);
        assert!(res.mean_abs() == 0.0);
    }

    #[test]
    fn residual_zero_under_exact_integer_translation() {
        let mut rng = SeededRng::new(4);
        let big = Tensor::<f64>::from_fn(&[16, 16], |_| rng.uniform(0.0, 1.0));
        // f2(r, c) = f1(r - 1, c - 2), i.e. content moves by (dx=2, dy=1)
        let f1 = GrayImage::new(Tensor::from_fn(&[10, 10], |i| big.at(&[i[0] + 2, i[1] + 2])))
            .unwrap();
        let f2 = GrayImage::new(Tensor::from_fn(&[10, 10], |i| big.at(&[i[0] + 1, i[1]])))
            .unwrap();
        let flow = FlowField::new(
            Tensor::full(&[10, 10], 2.0),
            Tensor::full(&[10, 10], 1.0),
        )
        .unwrap();
        let res = brightness_constancy_residual(&f1, &f2, &flow).unwrap();
        assert!(res.valid_count() > 0);
        assert!(
            res.mean_abs() < 1e-12,
            "perfect warp must null the residual, got {}",
            res.mean_abs()
        );
    }

    #[test]
    fn out_of_bounds_samples_are_masked() {
        let img = GrayImage::new(Tensor::<f64>::full(&[4, 4], 0.5)).unwrap();
        let flow = FlowField::new(
            Tensor::full(&[4, 4], 100.0),
            Tensor::zeros(&[4, 4]),
        )
        .unwrap();
        let res = brightness_constancy_residual(&img, &img, &flow).unwrap();
        assert_eq!(res.valid_count(), 0);
    }
}
