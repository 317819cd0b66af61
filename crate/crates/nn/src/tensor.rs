use crate::error::{NnError, Result};
use crate::scalar::Scalar;

/// Dense rank-4 tensor.
///
/// Activations use the channel-major layout `[channels, batch, height, width]`
/// so that a convolution is a single GEMM over every pixel of the batch and
/// channel concatenation is a plain append. Convolution weights use
/// `[out, in, kh, kw]`; transposed-convolution weights use `[in, out, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn full(dims: [usize; 4], value: T) -> Self {
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn scalar(value: T) -> Self {
        Self { dims: [1, 1, 1, 1], data: vec![value] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(NnError::Shape(format!(
                "data length {} does not match dims {:?} ({} elements)",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims[0]
    }

    pub fn batch(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Number of elements in one channel plane across the batch.
    pub fn plane_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Value of a `[1, 1, 1, 1]` tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor with dims {:?}", self.dims);
        self.data[0]
    }

    pub fn at(&self, c: usize, n: usize, y: usize, x: usize) -> T {
        let [_, nb, h, w] = self.dims;
        self.data[((c * nb + n) * h + y) * w + x]
    }

    pub fn set(&mut self, c: usize, n: usize, y: usize, x: usize, v: T) {
        let [_, nb, h, w] = self.dims;
        self.data[((c * nb + n) * h + y) * w + x] = v;
    }

    /// Channels `[start, start + len)` as a new tensor.
    pub fn channel_slice(&self, start: usize, len: usize) -> Self {
        let plane = self.plane_len();
        let data = self.data[start * plane..(start + len) * plane].to_vec();
        Self { dims: [len, self.dims[1], self.dims[2], self.dims[3]], data }
    }

    /// Single batch element `n` as a batch-of-one tensor.
    pub fn batch_item(&self, n: usize) -> Self {
        let [c, nb, h, w] = self.dims;
        let hw = h * w;
        let mut data = Vec::with_capacity(c * hw);
        for ch in 0..c {
            let base = (ch * nb + n) * hw;
            data.extend_from_slice(&self.data[base..base + hw]);
        }
        Self { dims: [c, 1, h, w], data }
    }

    /// Concatenate along the channel axis. All parts must share batch and spatial dims.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| NnError::Shape("concat of zero tensors".into()))?;
        let [_, n, h, w] = first.dims;
        let mut channels = 0;
        for p in parts {
            if p.dims[1..] != [n, h, w] {
                return Err(NnError::Shape(format!(
                    "concat mismatch: {:?} vs {:?}",
                    first.dims, p.dims
                )));
            }
            channels += p.dims[0];
        }
        let mut data = Vec::with_capacity(channels * n * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self { dims: [channels, n, h, w], data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.dims, other.dims, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert element type (e.g. `f32` weights into an `f64` gradient check).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}
