//! Gated recurrent unit over a `(t, batch, in)` sequence.
//!
//! Per step, with `[a, b]` denoting row-wise concatenation:
//!
//! ```text
//! z_t = sigmoid([h_{t-1}, x_t] Wz + bz)
//! r_t = sigmoid([h_{t-1}, x_t] Wr + br)
//! h~_t = tanh([r_t * h_{t-1}, x_t] W + b)
//! h_t = (1 - z_t) * h_{t-1} + z_t * h~_t
//! ```
//!
//! The hidden state starts at zero. There is no forget gate; the update
//! gate z interpolates directly between the previous state and the
//! candidate. The backward pass runs full backpropagation through time.

use crate::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};

use super::{sum_except_last, NnError};

/// Weights of one GRU layer. Matrices act on `[h, x]` rows, so their
/// shape is `(hidden + in, hidden)`; biases are `(hidden)`.
#[derive(Debug, Clone, Copy)]
pub struct GruLayerParams<'a, T: Scalar> {
    pub wz: &'a Tensor<T>,
    pub bz: &'a Tensor<T>,
    pub wr: &'a Tensor<T>,
    pub br: &'a Tensor<T>,
    pub w: &'a Tensor<T>,
    pub b: &'a Tensor<T>,
}

/// Hidden activation after the last processed step.
#[derive(Debug, Clone)]
pub struct GruState<T: Scalar> {
    pub h: Tensor<T>,
}

struct StepCache<T: Scalar> {
    /// `[h_prev, x_t]`, the gate matmul input.
    cat: Tensor<T>,
    /// `[r * h_prev, x_t]`, the candidate matmul input.
    cat2: Tensor<T>,
    z: Tensor<T>,
    r: Tensor<T>,
    hc: Tensor<T>,
}

/// Forward intermediates needed by [`gru_backward`].
pub struct GruCache<T: Scalar> {
    steps: Vec<StepCache<T>>,
    hidden: usize,
    in_dim: usize,
    batch: usize,
}

/// Gradients for one GRU layer's parameters.
#[derive(Debug, Clone)]
pub struct GruGrads<T: Scalar> {
    pub wz: Tensor<T>,
    pub bz: Tensor<T>,
    pub wr: Tensor<T>,
    pub br: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::ONE / (T::ONE + (-v).exp())
}

fn concat_rows<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, ca) = (a.shape()[0], a.shape()[1]);
    let cb = b.shape()[1];
    let mut out = Tensor::zeros(&[n, ca + cb]);
    for i in 0..n {
        out.data_mut()[i * (ca + cb)..i * (ca + cb) + ca]
            .copy_from_slice(&a.data()[i * ca..(i + 1) * ca]);
        out.data_mut()[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
            .copy_from_slice(&b.data()[i * cb..(i + 1) * cb]);
    }
    out
}

fn split_rows<T: Scalar>(m: &Tensor<T>, left: usize) -> (Tensor<T>, Tensor<T>) {
    let (n, cols) = (m.shape()[0], m.shape()[1]);
    let right = cols - left;
    let mut a = Tensor::zeros(&[n, left]);
    let mut b = Tensor::zeros(&[n, right]);
    for i in 0..n {
        a.data_mut()[i * left..(i + 1) * left]
            .copy_from_slice(&m.data()[i * cols..i * cols + left]);
        b.data_mut()[i * right..(i + 1) * right]
            .copy_from_slice(&m.data()[i * cols + left..(i + 1) * cols]);
    }
    (a, b)
}

fn check_params<T: Scalar>(p: &GruLayerParams<'_, T>, in_dim: usize) -> Result<usize, NnError> {
    let hidden = p.wz.shape().get(1).copied().unwrap_or(0);
    let rows = hidden + in_dim;
    for (name, m) in [("Wz", p.wz), ("Wr", p.wr), ("W", p.w)] {
        if m.shape() != [rows, hidden] {
            return Err(NnError::ParamShape {
                name: format!("gru.{}", name),
                expected: vec![rows, hidden],
                found: m.shape().to_vec(),
            });
        }
    }
    for (name, v) in [("Wz.bias", p.bz), ("Wr.bias", p.br), ("W.bias", p.b)] {
        if v.shape() != [hidden] {
            return Err(NnError::ParamShape {
                name: format!("gru.{}", name),
                expected: vec![hidden],
                found: v.shape().to_vec(),
            });
        }
    }
    Ok(hidden)
}

/// Run the cell over a `(t, batch, in)` sequence from `h_0 = 0`.
///
/// Returns the full `(t, batch, hidden)` hidden sequence, the final
/// state, and the cache the backward pass needs.
#[allow(clippy::type_complexity)]
pub fn gru_forward<T: Scalar>(
    x_seq: &Tensor<T>,
    params: &GruLayerParams<'_, T>,
) -> Result<(Tensor<T>, GruState<T>, GruCache<T>), NnError> {
    if x_seq.rank() != 3 {
        return Err(NnError::Shape {
            op: "gru_forward",
            detail: format!("expected (t, batch, in), got {:?}", x_seq.shape()),
        });
    }
    let (steps, batch, in_dim) = (x_seq.shape()[0], x_seq.shape()[1], x_seq.shape()[2]);
    let hidden = check_params(params, in_dim)?;

    let mut h = Tensor::zeros(&[batch, hidden]);
    let mut h_seq = Tensor::zeros(&[steps, batch, hidden]);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let x_t = x_seq.index_axis(0, t)?;
        let cat = concat_rows(&h, &x_t);

        let mut z = matmul(&cat, params.wz)?;
        add_bias_and_map(&mut z, params.bz, sigmoid);
        let mut r = matmul(&cat, params.wr)?;
        add_bias_and_map(&mut r, params.br, sigmoid);

        let mut rh = h.clone();
        for (v, &rv) in rh.data_mut().iter_mut().zip(r.iter()) {
            *v *= rv;
        }
        let cat2 = concat_rows(&rh, &x_t);
        let mut hc = matmul(&cat2, params.w)?;
        add_bias_and_map(&mut hc, params.b, |v| v.tanh());

        let mut h_next = Tensor::zeros(&[batch, hidden]);
        for i in 0..batch * hidden {
            let zv = z.data()[i];
            h_next.data_mut()[i] =
                (T::ONE - zv) * h.data()[i] + zv * hc.data()[i];
        }
        if !h_next.all_finite() {
            return Err(NnError::NonFinite(format!("gru hidden state at step {}", t)));
        }
        h_seq.data_mut()[t * batch * hidden..(t + 1) * batch * hidden]
            .copy_from_slice(h_next.data());
        caches.push(StepCache {
            cat,
            cat2,
            z,
            r,
            hc,
        });
        h = h_next;
    }
    Ok((
        h_seq,
        GruState { h },
        GruCache {
            steps: caches,
            hidden,
            in_dim,
            batch,
        },
    ))
}

fn add_bias_and_map<T: Scalar>(m: &mut Tensor<T>, bias: &Tensor<T>, f: impl Fn(T) -> T) {
    let cols = bias.len();
    for row in m.data_mut().chunks_exact_mut(cols) {
        for (v, &b) in row.iter_mut().zip(bias.iter()) {
            *v = f(*v + b);
        }
    }
}

/// Backpropagation through time.
///
/// `grad_h_seq` is the loss gradient w.r.t. every hidden state in the
/// sequence (zero rows for unused steps). Returns the gradient w.r.t. the
/// input sequence and all parameter gradients.
pub fn gru_backward<T: Scalar>(
    grad_h_seq: &Tensor<T>,
    params: &GruLayerParams<'_, T>,
    cache: &GruCache<T>,
) -> Result<(Tensor<T>, GruGrads<T>), NnError> {
    let (steps, batch, hidden, in_dim) =
        (cache.steps.len(), cache.batch, cache.hidden, cache.in_dim);
    if grad_h_seq.shape() != [steps, batch, hidden] {
        return Err(NnError::Shape {
            op: "gru_backward",
            detail: format!(
                "grad shape {:?} does not match cached sequence ({}, {}, {})",
                grad_h_seq.shape(),
                steps,
                batch,
                hidden
            ),
        });
    }
    let mut grads = GruGrads {
        wz: Tensor::zeros(params.wz.shape()),
        bz: Tensor::zeros(params.bz.shape()),
        wr: Tensor::zeros(params.wr.shape()),
        br: Tensor::zeros(params.br.shape()),
        w: Tensor::zeros(params.w.shape()),
        b: Tensor::zeros(params.b.shape()),
    };
    let mut grad_x_seq = Tensor::zeros(&[steps, batch, in_dim]);
    let mut dh_next = Tensor::zeros(&[batch, hidden]);

    for t in (0..steps).rev() {
        let sc = &cache.steps[t];
        let (h_prev, _) = split_rows(&sc.cat, hidden);

        // Total gradient reaching h_t.
        let mut dh = dh_next;
        for i in 0..batch * hidden {
            dh.data_mut()[i] += grad_h_seq.data()[t * batch * hidden + i];
        }

        // h = (1 - z) h_prev + z hc
        let mut dz = Tensor::zeros(&[batch, hidden]);
        let mut dhc = Tensor::zeros(&[batch, hidden]);
        let mut dh_prev = Tensor::zeros(&[batch, hidden]);
        for i in 0..batch * hidden {
            let dhv = dh.data()[i];
            let zv = sc.z.data()[i];
            dz.data_mut()[i] = dhv * (sc.hc.data()[i] - h_prev.data()[i]);
            dhc.data_mut()[i] = dhv * zv;
            dh_prev.data_mut()[i] = dhv * (T::ONE - zv);
        }

        // Candidate branch: hc = tanh(cat2 W + b)
        let mut dac = dhc;
        for (v, &hcv) in dac.data_mut().iter_mut().zip(sc.hc.iter()) {
            *v *= T::ONE - hcv * hcv;
        }
        grads.w.add_from(&matmul_tn(&sc.cat2, &dac)?);
        grads.b.add_from(&sum_except_last(&dac));
        let dcat2 = matmul_nt(&dac, params.w)?;
        let (drh, dx_c) = split_rows(&dcat2, hidden);
        let mut dr = Tensor::zeros(&[batch, hidden]);
        for i in 0..batch * hidden {
            dr.data_mut()[i] = drh.data()[i] * h_prev.data()[i];
            dh_prev.data_mut()[i] += drh.data()[i] * sc.r.data()[i];
        }

        // Reset gate: r = sigmoid(cat Wr + br)
        let mut dar = dr;
        for (v, &rv) in dar.data_mut().iter_mut().zip(sc.r.iter()) {
            *v *= rv * (T::ONE - rv);
        }
        grads.wr.add_from(&matmul_tn(&sc.cat, &dar)?);
        grads.br.add_from(&sum_except_last(&dar));
        let dcat_r = matmul_nt(&dar, params.wr)?;
        let (dh_r, dx_r) = split_rows(&dcat_r, hidden);
        dh_prev.add_from(&dh_r);

        // Update gate: z = sigmoid(cat Wz + bz)
        let mut daz = dz;
        for (v, &zv) in daz.data_mut().iter_mut().zip(sc.z.iter()) {
            *v *= zv * (T::ONE - zv);
        }
        grads.wz.add_from(&matmul_tn(&sc.cat, &daz)?);
        grads.bz.add_from(&sum_except_last(&daz));
        let dcat_z = matmul_nt(&daz, params.wz)?;
        let (dh_z, dx_z) = split_rows(&dcat_z, hidden);
        dh_prev.add_from(&dh_z);

        // Input gradient for this step.
        let base = t * batch * in_dim;
        for i in 0..batch * in_dim {
            grad_x_seq.data_mut()[base + i] =
                dx_c.data()[i] + dx_r.data()[i] + dx_z.data()[i];
        }
        dh_next = dh_prev;
    }
    Ok((grad_x_seq, grads))
}

trait AddFrom<T: Scalar> {
    fn add_from(&mut self, other: &Tensor<T>);
}

impl<T: Scalar> AddFrom<T> for Tensor<T> {
    fn add_from(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data_mut().iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}
