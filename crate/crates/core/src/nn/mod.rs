//! The classification network: a shared-weight 2D convolution stack
//! applied per time slice, a 3D convolution across time, a GRU over the
//! resulting sequence, and a dense head with softmax. Forward and
//! backward passes are written by hand and validated against the
//! finite-difference oracle in the 64-bit profile.

mod conv2d;
mod conv3d;
mod dense;
mod gru;
mod model;
mod pool;
mod softmax;

pub use conv2d::{conv2d_backward, conv2d_forward};
pub use conv3d::{conv3d_backward, conv3d_forward};
pub use dense::{dense_backward, dense_forward};
pub use gru::{gru_backward, gru_forward, GruCache, GruGrads, GruLayerParams, GruState};
pub use model::{init_params, model_backward, model_forward, model_forward_cached, ModelCache};
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolCache};
pub use softmax::softmax;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Error)]
pub enum NnError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("non-finite activation in {0}")]
    NonFinite(String),
    #[error("bad model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How the conv3d output volume is turned into the GRU input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialBridge {
    /// Global spatial average per timestep per channel (default).
    GlobalAvg,
    /// Flatten the full spatial map per timestep.
    Flatten,
}

/// Architecture hyperparameters.
///
/// `paper()` is the faithful profile (five conv layers with
/// 20/30/40/50/32 maps, one 50-filter conv3d, GRU, dense 200, two
/// classes on 20 slices of 128x128x3). `tiny()` exercises identical code
/// paths at gradient-checkable size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv2d_filters: Vec<usize>,
    pub conv2d_kernel: usize,
    pub conv3d_filters: usize,
    pub conv3d_kernel: (usize, usize, usize),
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub dense_units: usize,
    pub num_classes: usize,
    pub input_frames: usize,
    pub frame_size: usize,
    pub in_channels: usize,
    pub bridge: SpatialBridge,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            conv2d_filters: vec![20, 30, 40, 50, 32],
            conv2d_kernel: 3,
            conv3d_filters: 50,
            conv3d_kernel: (3, 3, 3),
            gru_hidden: 128,
            gru_layers: 1,
            dense_units: 200,
            num_classes: 2,
            input_frames: 20,
            frame_size: 128,
            in_channels: 3,
            bridge: SpatialBridge::GlobalAvg,
        }
    }

    /// Reduced-capacity profile for desk-scale experiments (e.g. 32x32
    /// frames): same topology, smaller filter counts.
    pub fn small(frame_size: usize, input_frames: usize) -> Self {
        Self {
            conv2d_filters: vec![8, 10, 12, 14, 8],
            conv2d_kernel: 3,
            conv3d_filters: 16,
            conv3d_kernel: (3, 3, 3),
            gru_hidden: 32,
            gru_layers: 1,
            dense_units: 64,
            num_classes: 2,
            input_frames,
            frame_size,
            in_channels: 3,
            bridge: SpatialBridge::GlobalAvg,
        }
    }

    /// Gradient-checkable profile: 8x8 frames, 4 slices, 2 maps per layer.
    pub fn tiny() -> Self {
        Self {
            conv2d_filters: vec![2, 2, 2, 2, 2],
            conv2d_kernel: 3,
            conv3d_filters: 2,
            conv3d_kernel: (3, 3, 3),
            gru_hidden: 4,
            gru_layers: 1,
            dense_units: 8,
            num_classes: 2,
            input_frames: 4,
            frame_size: 8,
            in_channels: 3,
            bridge: SpatialBridge::GlobalAvg,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.conv2d_filters.is_empty() {
            return Err(NnError::Config("conv2d_filters must be non-empty".into()));
        }
        if self.conv2d_kernel.is_multiple_of(2)
            || [self.conv3d_kernel.0, self.conv3d_kernel.1, self.conv3d_kernel.2]
                .iter()
                .any(|k| k.is_multiple_of(2))
        {
            return Err(NnError::Config(
                "kernel sizes must be odd for same padding".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(NnError::Config("num_classes must be >= 2".into()));
        }
        if self.gru_layers < 1 || self.gru_hidden < 1 || self.dense_units < 1 {
            return Err(NnError::Config("layer sizes must be >= 1".into()));
        }
        if self.input_frames < 1 || self.frame_size < 1 || self.in_channels < 1 {
            return Err(NnError::Config("input dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial side length after the conv/pool stack. A 2x2 pool follows
    /// every conv layer while the spatial side is at least 2 (floor
    /// division; a side of 1 is passed through unpooled).
    pub fn spatial_after_convs(&self) -> usize {
        let mut s = self.frame_size;
        for _ in &self.conv2d_filters {
            if s >= 2 {
                s /= 2;
            }
        }
        s
    }

    /// Width of the sequence elements fed into the first GRU layer.
    pub fn gru_input_dim(&self) -> usize {
        match self.bridge {
            SpatialBridge::GlobalAvg => self.conv3d_filters,
            SpatialBridge::Flatten => {
                let s = self.spatial_after_convs();
                s * s * self.conv3d_filters
            }
        }
    }
}

/// Named parameter tensors of one model instance.
///
/// Iteration order is the lexicographic name order, which fixes the
/// checkpoint layout and the optimizer's update order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Scalar> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ModelState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelState<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor<T>, NnError> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Fetch a parameter and check its shape, naming the parameter on error.
    pub fn expect_shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor<T>, NnError> {
        let t = self.expect(name)?;
        if t.shape() != shape {
            return Err(NnError::ParamShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.all_finite())
    }

    /// Accumulate `other` into `self` entry-wise (shared-shape gradients).
    pub fn add_assign(&mut self, other: &ModelState<T>) -> Result<(), NnError> {
        for (name, grad) in other.iter() {
            let slot = self
                .params
                .get_mut(name)
                .ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if slot.shape() != grad.shape() {
                return Err(NnError::ParamShape {
                    name: name.clone(),
                    expected: slot.shape().to_vec(),
                    found: grad.shape().to_vec(),
                });
            }
            for (s, &g) in slot.data_mut().iter_mut().zip(grad.iter()) {
                *s += g;
            }
        }
        Ok(())
    }

    /// Zero-valued clone with the same names and shapes.
    pub fn zeros_like(&self) -> ModelState<T> {
        let mut out = ModelState::new();
        for (name, t) in self.iter() {
            out.insert(name.clone(), Tensor::zeros(t.shape()));
        }
        out
    }
}

/// ReLU applied elementwise.
pub(crate) fn relu<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max_val(T::ZERO))
}

/// Gradient through ReLU given the forward *output* (mask is output > 0).
pub(crate) fn relu_backward<T: Scalar>(grad: &Tensor<T>, out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(grad.shape(), out.shape());
    let mut g = grad.clone();
    for (gv, &ov) in g.data_mut().iter_mut().zip(out.iter()) {
        if ov <= T::ZERO {
            *gv = T::ZERO;
        }
    }
    g
}

/// Sum over all axes except the last; used for bias gradients.
pub(crate) fn sum_except_last<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let ch = *t.shape().last().expect("rank >= 1");
    let mut out = Tensor::zeros(&[ch]);
    for chunk in t.data().chunks_exact(ch) {
        for (o, &v) in out.data_mut().iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}
