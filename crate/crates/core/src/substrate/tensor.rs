//! Dense row-major tensors generic over the two supported float widths.
//!
//! 64-bit is used by the verification paths (gradient checking, oracle
//! comparisons), 32-bit by training. Everything downstream is generic over
//! [`Scalar`] so both modes share one implementation.

use std::fmt::{Debug, Display};

use super::SubstrateError;

/// Float widths the substrate computes in.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shape rendered as `[2 x 3 x 4]` for error messages.
pub fn fmt_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "[scalar]".to_string();
    }
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join(" x "))
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, SubstrateError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SubstrateError::Contract {
                op: "tensor",
                msg: format!(
                    "shape {} implies {} elements but {} were provided",
                    fmt_shape(&shape),
                    numel,
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds from a generator over multi-indices, iterating row-major.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..numel {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Row-major strides, in elements.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for ax in (0..self.shape.len()).rev() {
            debug_assert!(idx[ax] < self.shape[ax]);
            off += idx[ax] * stride;
            stride *= self.shape[ax];
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn at_mut(&mut self, idx: &[usize]) -> &mut T {
        let off = self.offset(idx);
        &mut self.data[off]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(Scalar::to_f64(v)))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{} {:?}", fmt_shape(&self.shape), self.data)
    }
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        strides[ax] = strides[ax + 1] * shape[ax + 1];
    }
    strides
}

/// Shape both operands broadcast to under the usual trailing-alignment rule,
/// or `None` if some axis pair disagrees with neither side being 1.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Per-axis element strides of `shape` viewed through `out_shape`: broadcast
/// axes (extent 1 against a larger extent, or missing leading axes) get
/// stride 0 so a multi-index in the output maps straight to a source offset.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let src = strides_of(shape);
    let rank = out_shape.len();
    let lead = rank - shape.len();
    let mut out = vec![0usize; rank];
    for i in 0..shape.len() {
        out[lead + i] = if shape[i] == out_shape[lead + i] && shape[i] != 0 {
            src[i]
        } else {
            0
        };
        if shape[i] == 1 {
            out[lead + i] = 0;
        }
    }
    out
}

/// Walks multi-indices of `shape` row-major while tracking source offsets for
/// any number of stride vectors. Amortized O(1) per step.
pub struct Odometer {
    shape: Vec<usize>,
    idx: Vec<usize>,
    strides: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    remaining: usize,
}

impl Odometer {
    pub fn new(shape: &[usize], strides: Vec<Vec<usize>>) -> Self {
        let remaining = shape.iter().product();
        let n = strides.len();
        Odometer {
            shape: shape.to_vec(),
            idx: vec![0; shape.len()],
            strides,
            offsets: vec![0; n],
            remaining,
        }
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Advances to the next multi-index; returns false once exhausted.
    pub fn step(&mut self) -> bool {
        if self.remaining <= 1 {
            self.remaining = 0;
            return false;
        }
        self.remaining -= 1;
        for ax in (0..self.shape.len()).rev() {
            self.idx[ax] += 1;
            if self.idx[ax] < self.shape[ax] {
                for (o, s) in self.offsets.iter_mut().zip(&self.strides) {
                    *o += s[ax];
                }
                return true;
            }
            for (o, s) in self.offsets.iter_mut().zip(&self.strides) {
                *o -= s[ax] * (self.shape[ax] - 1);
            }
            self.idx[ax] = 0;
        }
        false
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }
}

/// Sums `grad` (shaped `from_shape`) down to `to_shape`, undoing a broadcast.
/// Accumulation walks the gradient in row-major order, so the reduction order
/// is fixed.
pub fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, to_shape: &[usize]) -> Tensor<T> {
    if grad.shape() == to_shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(to_shape);
    let strides = broadcast_strides(to_shape, grad.shape());
    let mut odo = Odometer::new(grad.shape(), vec![strides]);
    if odo.is_empty() {
        return out;
    }
    let mut i = 0;
    loop {
        out.data_mut()[odo.offsets()[0]] += grad.data()[i];
        i += 1;
        if !odo.step() {
            break;
        }
    }
    out
}
