//! Dense row-major tensors, seeded randomness, the finite-difference
//! gradient oracle, and the `FTEN` binary interchange format.
//!
//! A [`Tensor`] is a shape plus a flat buffer; element `(i0, .., i_{n-1})`
//! lives at offset `sum(i_k * stride_k)` with strides derived from the
//! shape, innermost axis contiguous. Tensors are immutable values once
//! built; optimizer updates clone-and-replace or mutate through the single
//! owning context.

mod fd;
mod ften;
mod rng;

pub use fd::{finite_difference_gradient, gradient_rel_error};
pub use ften::{read_ften, read_ften_file, write_ften, write_ften_file, AnyTensor, Dtype, FtenError};
pub use rng::{derive_seed, SeededRng};

use thiserror::Error;

/// Errors from tensor construction and algebra.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
    #[error("empty tensor list passed to {op}")]
    EmptyList { op: &'static str },
}

/// Floating-point element type of a tensor.
///
/// Implemented for `f32` (training profile) and `f64` (verification
/// profile). The two profiles are never mixed within one graph.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Dtype code used by the FTEN format.
    const DTYPE: Dtype;
    /// Bytes of one element when serialized (little endian).
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn max_val(self, other: Self) -> Self;
    fn min_val(self, other: Self) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $bytes:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const DTYPE: Dtype = $dtype;
            const BYTES: usize = $bytes;

            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn max_val(self, other: Self) -> Self {
                self.max(other)
            }
            #[inline]
            fn min_val(self, other: Self) -> Self {
                self.min(other)
            }
            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("scalar byte width"))
            }
        }
    };
}

impl_scalar!(f32, Dtype::F32, 4);
impl_scalar!(f64, Dtype::F64, 8);

/// Dense n-dimensional array in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} elements]", self.data.len())
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "dimension sizes must be positive".into(),
            });
        }
        n = n.checked_mul(d).ok_or_else(|| TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows usize".into(),
        })?;
    }
    Ok(n)
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and a row-major buffer.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape wants {} elements, buffer has {}", n, data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![T::ZERO; n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Element-by-element construction in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let n = check_shape(shape).expect("valid shape");
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for ax in (0..self.shape.len().saturating_sub(1)).rev() {
            s[ax] = s[ax + 1] * self.shape[ax + 1];
        }
        s
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for ax in (0..self.shape.len()).rev() {
            debug_assert!(index[ax] < self.shape[ax]);
            off += index[ax] * stride;
            stride *= self.shape[ax];
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Reinterpret the buffer under a new shape with equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Take the `i`-th slice along `axis`, dropping that axis.
    pub fn index_axis(&self, axis: usize, i: usize) -> Result<Self, TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        assert!(i < self.shape[axis], "index {} out of bounds on axis {}", i, axis);
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let axis_len = self.shape[axis];
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * axis_len + i) * inner;
            data.extend_from_slice(&self.data[base..base + inner]);
        }
        let mut shape: Vec<usize> = self.shape[..axis].to_vec();
        shape.extend_from_slice(&self.shape[axis + 1..]);
        Tensor::new(&shape, data)
    }
}

/// Matrix product of two rank-2 tensors: `c[i][j] = sum_k a[i][k] * b[k][j]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], c)
}

/// `a^T * b` without materializing the transpose: `c[p][j] = sum_i a[i][p] * b[i][j]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut c = vec![T::ZERO; k * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let brow = &b.data[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    Tensor::new(&[k, n], c)
}

/// `a * b^T` without materializing the transpose: `c[i][j] = dot(a[i], b[j])`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[0];
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
    Tensor::new(&[m, n], c)
}

/// Concatenate tensors along an existing axis; slices keep argument order.
pub fn concat_axis<T: Scalar>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
    let first = tensors.first().ok_or(TensorError::EmptyList { op: "concat_axis" })?;
    if axis >= first.rank() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: first.rank(),
        });
    }
    for t in tensors {
        if t.rank() != first.rank() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_axis",
                left: first.shape.clone(),
                right: t.shape.clone(),
            });
        }
        for ax in 0..first.rank() {
            if ax != axis && t.shape[ax] != first.shape[ax] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_axis",
                    left: first.shape.clone(),
                    right: t.shape.clone(),
                });
            }
        }
    }
    let outer: usize = first.shape[..axis].iter().product();
    let inner: usize = first.shape[axis + 1..].iter().product();
    let total_axis: usize = tensors.iter().map(|t| t.shape[axis]).sum();
    let mut shape = first.shape.clone();
    shape[axis] = total_axis;
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for t in tensors {
            let block = t.shape[axis] * inner;
            data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(&shape, data)
}

/// Stack tensors along a fresh axis inserted at `axis`.
pub fn stack_axis<T: Scalar>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
    let first = tensors.first().ok_or(TensorError::EmptyList { op: "stack_axis" })?;
    if axis > first.rank() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: first.rank() + 1,
        });
    }
    let mut expanded = Vec::with_capacity(tensors.len());
    for t in tensors {
        if t.shape != first.shape {
            return Err(TensorError::ShapeMismatch {
                op: "stack_axis",
                left: first.shape.clone(),
                right: t.shape.clone(),
            });
        }
        let mut shape = t.shape.clone();
        shape.insert(axis, 1);
        expanded.push((*t).clone().reshape(&shape)?);
    }
    let refs: Vec<&Tensor<T>> = expanded.iter().collect();
    concat_axis(&refs, axis)
}
