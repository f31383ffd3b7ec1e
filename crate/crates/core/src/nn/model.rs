//! The full model graph.
//!
//! Input `(batch, frames, s, s, 3)` runs through the shared-weight 2D
//! conv/pool stack one time slice at a time; the per-slice feature maps
//! are re-stacked along time, passed through a 3D convolution, bridged
//! into a `(t, batch, features)` sequence, consumed by the GRU, and the
//! last hidden state feeds dense + ReLU + dense + softmax.

use crate::tensor::{stack_axis, Scalar, SeededRng, Tensor};

use super::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, dense_backward,
    dense_forward, gru_backward, gru_forward, maxpool2d_backward, maxpool2d_forward, relu,
    relu_backward, softmax, GruCache, GruLayerParams, ModelConfig, ModelState, NnError,
    PoolCache, SpatialBridge,
};

/// Forward intermediates for one call, consumed by [`model_backward`].
pub struct ModelCache<T: Scalar> {
    conv_inputs: Vec<Vec<Tensor<T>>>,
    relu_outs: Vec<Vec<Tensor<T>>>,
    pool_caches: Vec<Vec<Option<PoolCache>>>,
    conv3d_input: Tensor<T>,
    conv3d_relu_out: Tensor<T>,
    gru_inputs: Vec<Tensor<T>>,
    gru_caches: Vec<GruCache<T>>,
    dense0_in: Tensor<T>,
    dense0_relu_out: Tensor<T>,
    probs: Tensor<T>,
}

impl<T: Scalar> ModelCache<T> {
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }
}

fn gru_param_names(layer: usize) -> [String; 6] {
    [
        format!("gru.{}.Wz", layer),
        format!("gru.{}.Wz.bias", layer),
        format!("gru.{}.Wr", layer),
        format!("gru.{}.Wr.bias", layer),
        format!("gru.{}.W", layer),
        format!("gru.{}.W.bias", layer),
    ]
}

/// Initialize all parameters: Glorot-uniform weights
/// (`s = sqrt(6 / (fan_in + fan_out))`), zero biases, and the GRU update
/// gate bias at -1 to bias early steps toward retaining state.
pub fn init_params<T: Scalar>(config: &ModelConfig, rng: &mut SeededRng) -> ModelState<T> {
    config.validate().expect("valid model config");
    let mut state = ModelState::new();
    let k = config.conv2d_kernel;
    let glorot = |rng: &mut SeededRng, shape: &[usize], fan_in: usize, fan_out: usize| {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::of(rng.uniform(-s, s)))
    };

    let mut c_in = config.in_channels;
    for (i, &c_out) in config.conv2d_filters.iter().enumerate() {
        let w = glorot(rng, &[k, k, c_in, c_out], k * k * c_in, k * k * c_out);
        state.insert(format!("conv2d.{}.weight", i), w);
        state.insert(format!("conv2d.{}.bias", i), Tensor::zeros(&[c_out]));
        c_in = c_out;
    }

    let (kt, kh, kw) = config.conv3d_kernel;
    let c3 = config.conv3d_filters;
    let w3 = glorot(
        rng,
        &[kt, kh, kw, c_in, c3],
        kt * kh * kw * c_in,
        kt * kh * kw * c3,
    );
    state.insert("conv3d.weight", w3);
    state.insert("conv3d.bias", Tensor::zeros(&[c3]));

    let mut in_dim = config.gru_input_dim();
    for l in 0..config.gru_layers {
        let hidden = config.gru_hidden;
        let rows = hidden + in_dim;
        let [wz, bz, wr, br, w, b] = gru_param_names(l);
        state.insert(wz, glorot(rng, &[rows, hidden], rows, hidden));
        state.insert(wr, glorot(rng, &[rows, hidden], rows, hidden));
        state.insert(w, glorot(rng, &[rows, hidden], rows, hidden));
        state.insert(bz, Tensor::full(&[hidden], T::of(-1.0)));
        state.insert(br, Tensor::zeros(&[hidden]));
        state.insert(b, Tensor::zeros(&[hidden]));
        in_dim = hidden;
    }

    let d0 = glorot(
        rng,
        &[config.gru_hidden, config.dense_units],
        config.gru_hidden,
        config.dense_units,
    );
    state.insert("dense.0.weight", d0);
    state.insert("dense.0.bias", Tensor::zeros(&[config.dense_units]));
    let d1 = glorot(
        rng,
        &[config.dense_units, config.num_classes],
        config.dense_units,
        config.num_classes,
    );
    state.insert("dense.1.weight", d1);
    state.insert("dense.1.bias", Tensor::zeros(&[config.num_classes]));
    state
}

fn check_input<T: Scalar>(input: &Tensor<T>, config: &ModelConfig) -> Result<usize, NnError> {
    let want = [
        config.input_frames,
        config.frame_size,
        config.frame_size,
        config.in_channels,
    ];
    if input.rank() != 5 || input.shape()[1..] != want {
        return Err(NnError::Shape {
            op: "model_forward",
            detail: format!(
                "input {:?} does not match (batch, {}, {}, {}, {})",
                input.shape(),
                want[0],
                want[1],
                want[2],
                want[3]
            ),
        });
    }
    Ok(input.shape()[0])
}

/// Forward pass keeping every intermediate needed for the backward pass.
pub fn model_forward_cached<T: Scalar>(
    input: &Tensor<T>,
    state: &ModelState<T>,
    config: &ModelConfig,
) -> Result<ModelCache<T>, NnError> {
    config.validate()?;
    let batch = check_input(input, config)?;
    let frames = config.input_frames;
    let k = config.conv2d_kernel;

    // Shared-weight conv stack per time slice.
    let mut conv_inputs = Vec::with_capacity(frames);
    let mut relu_outs = Vec::with_capacity(frames);
    let mut pool_caches = Vec::with_capacity(frames);
    let mut slice_features = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut x = input.index_axis(1, t)?;
        let mut layer_inputs = Vec::with_capacity(config.conv2d_filters.len());
        let mut layer_relu = Vec::with_capacity(config.conv2d_filters.len());
        let mut layer_pool = Vec::with_capacity(config.conv2d_filters.len());
        let mut c_in = config.in_channels;
        for (i, &c_out) in config.conv2d_filters.iter().enumerate() {
            let w = state.expect_shaped(&format!("conv2d.{}.weight", i), &[k, k, c_in, c_out])?;
            let b = state.expect_shaped(&format!("conv2d.{}.bias", i), &[c_out])?;
            let conv = conv2d_forward(&x, w, b)?;
            let act = relu(&conv);
            let (h, wd) = (act.shape()[1], act.shape()[2]);
            let (next, pc) = if h >= 2 && wd >= 2 {
                let (p, pc) = maxpool2d_forward(&act)?;
                (p, Some(pc))
            } else {
                (act.clone(), None)
            };
            layer_inputs.push(x);
            layer_relu.push(act);
            layer_pool.push(pc);
            x = next;
            c_in = c_out;
        }
        conv_inputs.push(layer_inputs);
        relu_outs.push(layer_relu);
        pool_caches.push(layer_pool);
        slice_features.push(x);
    }

    // Join the per-slice maps in a new time axis.
    let refs: Vec<&Tensor<T>> = slice_features.iter().collect();
    let conv3d_input = stack_axis(&refs, 1)?;

    let (kt, kh, kw) = config.conv3d_kernel;
    let c5 = *config.conv2d_filters.last().unwrap();
    let w3 = state.expect_shaped("conv3d.weight", &[kt, kh, kw, c5, config.conv3d_filters])?;
    let b3 = state.expect_shaped("conv3d.bias", &[config.conv3d_filters])?;
    let conv3d_relu_out = relu(&conv3d_forward(&conv3d_input, w3, b3)?);

    // Bridge (batch, t, h, w, c) into a (t, batch, features) sequence.
    let s = config.spatial_after_convs();
    let c3 = config.conv3d_filters;
    let feat = config.gru_input_dim();
    let mut seq = Tensor::zeros(&[frames, batch, feat]);
    let area = s * s;
    let src = conv3d_relu_out.data();
    for b in 0..batch {
        for t in 0..frames {
            let base = ((b * frames + t) * area) * c3;
            match config.bridge {
                SpatialBridge::GlobalAvg => {
                    for c in 0..c3 {
                        let mut acc = T::ZERO;
                        for px in 0..area {
                            acc += src[base + px * c3 + c];
                        }
                        seq.data_mut()[(t * batch + b) * feat + c] =
                            acc / T::of(area as f64);
                    }
                }
                SpatialBridge::Flatten => {
                    let dst = (t * batch + b) * feat;
                    seq.data_mut()[dst..dst + feat]
                        .copy_from_slice(&src[base..base + feat]);
                }
            }
        }
    }

    // GRU stack.
    let mut gru_inputs = Vec::with_capacity(config.gru_layers);
    let mut gru_caches = Vec::with_capacity(config.gru_layers);
    let mut x_seq = seq;
    let mut in_dim = feat;
    for l in 0..config.gru_layers {
        let hidden = config.gru_hidden;
        let rows = hidden + in_dim;
        let [wz, bz, wr, br, w, b] = gru_param_names(l);
        let params = GruLayerParams {
            wz: state.expect_shaped(&wz, &[rows, hidden])?,
            bz: state.expect_shaped(&bz, &[hidden])?,
            wr: state.expect_shaped(&wr, &[rows, hidden])?,
            br: state.expect_shaped(&br, &[hidden])?,
            w: state.expect_shaped(&w, &[rows, hidden])?,
            b: state.expect_shaped(&b, &[hidden])?,
        };
        let (h_seq, _, cache) = gru_forward(&x_seq, &params)?;
        gru_inputs.push(x_seq);
        gru_caches.push(cache);
        x_seq = h_seq;
        in_dim = hidden;
    }

    // Classification head on the last hidden state.
    let dense0_in = x_seq.index_axis(0, frames - 1)?;
    let w0 = state.expect_shaped("dense.0.weight", &[config.gru_hidden, config.dense_units])?;
    let b0 = state.expect_shaped("dense.0.bias", &[config.dense_units])?;
    let dense0_relu_out = relu(&dense_forward(&dense0_in, w0, b0)?);
    let w1 = state.expect_shaped("dense.1.weight", &[config.dense_units, config.num_classes])?;
    let b1 = state.expect_shaped("dense.1.bias", &[config.num_classes])?;
    let logits = dense_forward(&dense0_relu_out, w1, b1)?;
    let probs = softmax(&logits)?;

    Ok(ModelCache {
        conv_inputs,
        relu_outs,
        pool_caches,
        conv3d_input,
        conv3d_relu_out,
        gru_inputs,
        gru_caches,
        dense0_in,
        dense0_relu_out,
        probs,
    })
}

/// Class probabilities for a batch: `(batch, frames, s, s, 3) -> (batch, k)`.
pub fn model_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &ModelState<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>, NnError> {
    Ok(model_forward_cached(input, state, config)?.probs)
}

/// Backward pass from the gradient w.r.t. the pre-softmax logits
/// (the fused softmax/cross-entropy convention). Returns gradients with
/// the same names and shapes as the parameter state.
pub fn model_backward<T: Scalar>(
    grad_logits: &Tensor<T>,
    state: &ModelState<T>,
    config: &ModelConfig,
    cache: &ModelCache<T>,
) -> Result<ModelState<T>, NnError> {
    let batch = cache.dense0_in.shape()[0];
    let frames = config.input_frames;
    let mut grads = ModelState::new();

    // Head.
    let w1 = state.expect("dense.1.weight")?;
    let (g_relu0, gw1, gb1) = dense_backward(grad_logits, &cache.dense0_relu_out, w1)?;
    grads.insert("dense.1.weight", gw1);
    grads.insert("dense.1.bias", gb1);
    let g_dense0_out = relu_backward(&g_relu0, &cache.dense0_relu_out);
    let w0 = state.expect("dense.0.weight")?;
    let (g_hidden, gw0, gb0) = dense_backward(&g_dense0_out, &cache.dense0_in, w0)?;
    grads.insert("dense.0.weight", gw0);
    grads.insert("dense.0.bias", gb0);

    // GRU stack, last layer first; the loss touches only the final step.
    let hidden = config.gru_hidden;
    let mut grad_h_seq = Tensor::zeros(&[frames, batch, hidden]);
    let base = (frames - 1) * batch * hidden;
    grad_h_seq.data_mut()[base..base + batch * hidden].copy_from_slice(g_hidden.data());
    for l in (0..config.gru_layers).rev() {
        let in_dim = cache.gru_inputs[l].shape()[2];
        let rows = hidden + in_dim;
        let [wz, bz, wr, br, w, b] = gru_param_names(l);
        let params = GruLayerParams {
            wz: state.expect_shaped(&wz, &[rows, hidden])?,
            bz: state.expect_shaped(&bz, &[hidden])?,
            wr: state.expect_shaped(&wr, &[rows, hidden])?,
            br: state.expect_shaped(&br, &[hidden])?,
            w: state.expect_shaped(&w, &[rows, hidden])?,
            b: state.expect_shaped(&b, &[hidden])?,
        };
        let (grad_x_seq, g) = gru_backward(&grad_h_seq, &params, &cache.gru_caches[l])?;
        grads.insert(wz, g.wz);
        grads.insert(bz, g.bz);
        grads.insert(wr, g.wr);
        grads.insert(br, g.br);
        grads.insert(w, g.w);
        grads.insert(b, g.b);
        grad_h_seq = grad_x_seq;
    }

    // Undo the bridge back onto the conv3d activation volume.
    let s = config.spatial_after_convs();
    let c3 = config.conv3d_filters;
    let area = s * s;
    let feat = config.gru_input_dim();
    let mut g_conv3d_out = Tensor::zeros(cache.conv3d_relu_out.shape());
    for b in 0..batch {
        for t in 0..frames {
            let vol_base = ((b * frames + t) * area) * c3;
            let seq_base = (t * batch + b) * feat;
            match config.bridge {
                SpatialBridge::GlobalAvg => {
                    let inv = T::ONE / T::of(area as f64);
                    for c in 0..c3 {
                        let g = grad_h_seq.data()[seq_base + c] * inv;
                        for px in 0..area {
                            g_conv3d_out.data_mut()[vol_base + px * c3 + c] = g;
                        }
                    }
                }
                SpatialBridge::Flatten => {
                    g_conv3d_out.data_mut()[vol_base..vol_base + feat]
                        .copy_from_slice(&grad_h_seq.data()[seq_base..seq_base + feat]);
                }
            }
        }
    }

    let g_conv3d = relu_backward(&g_conv3d_out, &cache.conv3d_relu_out);
    let w3 = state.expect("conv3d.weight")?;
    let (g_stack, gw3, gb3) = conv3d_backward(&g_conv3d, &cache.conv3d_input, w3)?;
    grads.insert("conv3d.weight", gw3);
    grads.insert("conv3d.bias", gb3);

    // Per-slice conv stack; shared weights accumulate over slices.
    let layers = config.conv2d_filters.len();
    let mut conv_w_grads: Vec<Option<Tensor<T>>> = vec![None; layers];
    let mut conv_b_grads: Vec<Option<Tensor<T>>> = vec![None; layers];
    for t in 0..frames {
        let mut g = g_stack.index_axis(1, t)?;
        for i in (0..layers).rev() {
            if let Some(pc) = &cache.pool_caches[t][i] {
                g = maxpool2d_backward(&g, pc)?;
            }
            g = relu_backward(&g, &cache.relu_outs[t][i]);
            let w = state.expect(&format!("conv2d.{}.weight", i))?;
            let (gx, gw, gb) = conv2d_backward(&g, &cache.conv_inputs[t][i], w)?;
            match &mut conv_w_grads[i] {
                Some(acc) => {
                    for (a, &v) in acc.data_mut().iter_mut().zip(gw.iter()) {
                        *a += v;
                    }
                    let accb = conv_b_grads[i].as_mut().unwrap();
                    for (a, &v) in accb.data_mut().iter_mut().zip(gb.iter()) {
                        *a += v;
                    }
                }
                None => {
                    conv_w_grads[i] = Some(gw);
                    conv_b_grads[i] = Some(gb);
                }
            }
            g = gx;
        }
    }
    for i in 0..layers {
        grads.insert(
            format!("conv2d.{}.weight", i),
            conv_w_grads[i].take().expect("accumulated"),
        );
        grads.insert(
            format!("conv2d.{}.bias", i),
            conv_b_grads[i].take().expect("accumulated"),
        );
    }
    Ok(grads)
}
