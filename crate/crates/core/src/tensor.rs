//! Dense row-major tensors.
//!
//! Layout conventions used across the crate:
//! - images and 2-D feature maps: `[batch, channels, height, width]`
//! - symbol sequences seen by 1-D convolutions: `[batch, channels, length]`
//! - dense activations: `[batch, features]`

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
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

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape to {shape:?}");
        self.shape = shape.to_vec();
        self
    }

    /// Contiguous slice of the `i`-th entry along axis 0.
    pub fn item(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a = *a + b);
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v = *v * factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Concatenate along axis 1 for tensors that agree on every other axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Self {
        let first = parts[0];
        let batch = first.shape[0];
        let inner: usize = first.shape[2..].iter().product();
        let channels: usize = parts.iter().map(|p| p.shape[1]).sum();
        for p in parts {
            assert_eq!(p.shape[0], batch, "concat batch mismatch");
            assert_eq!(&p.shape[2..], &first.shape[2..], "concat trailing shape mismatch");
        }
        let mut data = Vec::with_capacity(batch * channels * inner);
        for b in 0..batch {
            for p in parts {
                data.extend_from_slice(p.item(b));
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = channels;
        Tensor { shape, data }
    }

    /// Inverse of [`Tensor::concat_channels`]: the channel range `[start, start+count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Self {
        let batch = self.shape[0];
        let inner: usize = self.shape[2..].iter().product();
        let mut data = Vec::with_capacity(batch * count * inner);
        for b in 0..batch {
            let item = self.item(b);
            data.extend_from_slice(&item[start * inner..(start + count) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[1] = count;
        Tensor { shape, data }
    }

    /// Gather entries along axis 0.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.data.len() / self.shape[0].max(1));
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 1, 3], |i| -(i as f64));
        let c = Tensor::concat_channels(&[&a, &b]);
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.slice_channels(0, 2), a);
        assert_eq!(c.slice_channels(2, 1), b);
    }

    #[test]
    fn select_gathers_items() {
        let a = Tensor::<f32>::from_fn(&[3, 2], |i| i as f32);
        let s = a.select(&[2, 0]);
        assert_eq!(s.data(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
