//! Parameterized layers with hand-written forward and backward passes.
//!
//! Backward functions take the layer input saved during the forward pass,
//! the gradient w.r.t. the layer output, an optional pair of gradient
//! accumulators for `(weight, bias)`, and whether the input gradient is
//! wanted. Frozen layers pass `None`; the first layer of a receiver skips the
//! input gradient entirely.

use rand::Rng;

use super::im2col::{col2im_1d, col2im_2d, im2col_1d, im2col_2d, Geometry2d};
use crate::linalg::{gemm, MatMut, MatRef};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variance-scaled uniform initialization: `U(-sqrt(3/fan_in), sqrt(3/fan_in))`.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Stream) -> Tensor<T> {
    let limit = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-limit..limit)))
}

fn add_bias_rows<T: Scalar>(out: &mut [T], bias: &[T], cols: usize) {
    for (row, &b) in out.chunks_exact_mut(cols).zip(bias) {
        row.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn accumulate_row_sums<T: Scalar>(g: &[T], acc: &mut [T], cols: usize) {
    for (row, a) in g.chunks_exact(cols).zip(acc.iter_mut()) {
        *a = *a + row.iter().copied().sum::<T>();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>, // [out, in, k, k]
    pub bias: Tensor<T>,   // [out]
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(input: usize, output: usize, kernel: usize, stride: usize, rng: &mut Stream) -> Self {
        Conv2d {
            weight: fan_in_uniform(&[output, input, kernel, kernel], input * kernel * kernel, rng),
            bias: Tensor::zeros(&[output]),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    fn geometry(&self, x: &Tensor<T>) -> Geometry2d {
        Geometry2d::conv(x.dim(1), x.dim(2), x.dim(3), self.kernel(), self.stride, self.pad)
    }

    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let g = Geometry2d::conv(input[1], input[2], input[3], self.kernel(), self.stride, self.pad);
        vec![input[0], self.out_channels(), g.out_height, g.out_width]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.dim(1), self.in_channels(), "conv2d input channels");
        let g = self.geometry(x);
        let (co, p) = (self.out_channels(), g.positions());
        let mut out = Tensor::zeros(&[x.dim(0), co, g.out_height, g.out_width]);
        let mut col = vec![T::zero(); g.rows() * p];
        let w = MatRef::row_major(self.weight.data(), co, g.rows());
        for b in 0..x.dim(0) {
            im2col_2d(x.item(b), &g, &mut col);
            let o = out.item_mut(b);
            gemm(T::one(), w, MatRef::row_major(&col, g.rows(), p), T::zero(), MatMut::row_major(o, co, p));
            add_bias_rows(o, self.bias.data(), p);
        }
        out
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        mut grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let g = self.geometry(x);
        let (co, p, r) = (self.out_channels(), g.positions(), g.rows());
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        let mut col = vec![T::zero(); r * p];
        let w = MatRef::row_major(self.weight.data(), co, r);
        for b in 0..x.dim(0) {
            let gb = MatRef::row_major(grad_out.item(b), co, p);
            if let Some((dw, db)) = grads.as_mut() {
                im2col_2d(x.item(b), &g, &mut col);
                gemm(T::one(), gb, MatRef::row_major(&col, r, p).t(), T::one(), MatMut::row_major(dw.data_mut(), co, r));
                accumulate_row_sums(grad_out.item(b), db.data_mut(), p);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(T::one(), w.t(), gb, T::zero(), MatMut::row_major(&mut col, r, p));
                col2im_2d(&col, &g, dx.item_mut(b));
            }
        }
        dx
    }
}

/// Transposed 2-D convolution with weight layout `[in, out, k, k]`.
/// Output size: `(h - 1) * stride - 2 * pad + k + output_pad`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(input: usize, output: usize, kernel: usize, stride: usize, output_pad: usize, rng: &mut Stream) -> Self {
        assert!(output_pad < stride.max(1), "output padding must be smaller than the stride");
        ConvTranspose2d {
            weight: fan_in_uniform(&[input, output, kernel, kernel], input * kernel * kernel, rng),
            bias: Tensor::zeros(&[output]),
            stride,
            pad: kernel / 2,
            output_pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    fn out_size(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel() + self.output_pad - 2 * self.pad
    }

    /// The forward conv geometry whose adjoint this layer computes.
    fn geometry(&self, x: &Tensor<T>) -> Geometry2d {
        let (oh, ow) = (self.out_size(x.dim(2)), self.out_size(x.dim(3)));
        let g = Geometry2d::conv(self.out_channels(), oh, ow, self.kernel(), self.stride, self.pad);
        debug_assert_eq!((g.out_height, g.out_width), (x.dim(2), x.dim(3)));
        g
    }

    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        vec![input[0], self.out_channels(), self.out_size(input[2]), self.out_size(input[3])]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.dim(1), self.in_channels(), "conv_transpose2d input channels");
        let g = self.geometry(x);
        let (ci, r, p) = (self.in_channels(), g.rows(), g.positions());
        let mut out = Tensor::zeros(&[x.dim(0), g.channels, g.height, g.width]);
        let mut col = vec![T::zero(); r * p];
        let w = MatRef::row_major(self.weight.data(), ci, r);
        for b in 0..x.dim(0) {
            gemm(T::one(), w.t(), MatRef::row_major(x.item(b), ci, p), T::zero(), MatMut::row_major(&mut col, r, p));
            let o = out.item_mut(b);
            col2im_2d(&col, &g, o);
            add_bias_rows(o, self.bias.data(), g.height * g.width);
        }
        out
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        mut grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let g = self.geometry(x);
        let (ci, r, p) = (self.in_channels(), g.rows(), g.positions());
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        let mut col = vec![T::zero(); r * p];
        let w = MatRef::row_major(self.weight.data(), ci, r);
        for b in 0..x.dim(0) {
            im2col_2d(grad_out.item(b), &g, &mut col);
            let cg = MatRef::row_major(&col, r, p);
            if let Some((dw, db)) = grads.as_mut() {
                gemm(T::one(), MatRef::row_major(x.item(b), ci, p), cg.t(), T::one(), MatMut::row_major(dw.data_mut(), ci, r));
                accumulate_row_sums(grad_out.item(b), db.data_mut(), g.height * g.width);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(T::one(), w, cg, T::zero(), MatMut::row_major(dx.item_mut(b), ci, p));
            }
        }
        dx
    }
}

/// Same-padded, stride-1 1-D convolution over `[batch, channels, len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Tensor<T>, // [out, in, k]
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(input: usize, output: usize, kernel: usize, rng: &mut Stream) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Conv1d {
            weight: fan_in_uniform(&[output, input, kernel], input * kernel, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.dim(1), self.in_channels(), "conv1d input channels");
        let (ci, co, k, len) = (self.in_channels(), self.out_channels(), self.kernel(), x.dim(2));
        let mut out = Tensor::zeros(&[x.dim(0), co, len]);
        let mut col = vec![T::zero(); ci * k * len];
        let w = MatRef::row_major(self.weight.data(), co, ci * k);
        for b in 0..x.dim(0) {
            im2col_1d(x.item(b), ci, len, k, &mut col);
            let o = out.item_mut(b);
            gemm(T::one(), w, MatRef::row_major(&col, ci * k, len), T::zero(), MatMut::row_major(o, co, len));
            add_bias_rows(o, self.bias.data(), len);
        }
        out
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        mut grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (ci, co, k, len) = (self.in_channels(), self.out_channels(), self.kernel(), x.dim(2));
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        let mut col = vec![T::zero(); ci * k * len];
        let w = MatRef::row_major(self.weight.data(), co, ci * k);
        for b in 0..x.dim(0) {
            let gb = MatRef::row_major(grad_out.item(b), co, len);
            if let Some((dw, db)) = grads.as_mut() {
                im2col_1d(x.item(b), ci, len, k, &mut col);
                gemm(T::one(), gb, MatRef::row_major(&col, ci * k, len).t(), T::one(), MatMut::row_major(dw.data_mut(), co, ci * k));
                accumulate_row_sums(grad_out.item(b), db.data_mut(), len);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(T::one(), w.t(), gb, T::zero(), MatMut::row_major(&mut col, ci * k, len));
                col2im_1d(&col, ci, len, k, dx.item_mut(b));
            }
        }
        dx
    }
}

/// Fully connected layer on `[batch, features]`; any trailing axes are
/// flattened per item.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>, // [out, in]
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(input: usize, output: usize, rng: &mut Stream) -> Self {
        Dense { weight: fan_in_uniform(&[output, input], input, rng), bias: Tensor::zeros(&[output]) }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (batch, fi, fo) = (x.dim(0), self.in_features(), self.out_features());
        assert_eq!(x.len(), batch * fi, "dense input features");
        let mut out = Tensor::zeros(&[batch, fo]);
        gemm(
            T::one(),
            MatRef::row_major(x.data(), batch, fi),
            MatRef::row_major(self.weight.data(), fo, fi).t(),
            T::zero(),
            MatMut::row_major(out.data_mut(), batch, fo),
        );
        for row in out.data_mut().chunks_exact_mut(fo) {
            row.iter_mut().zip(self.bias.data()).for_each(|(v, &b)| *v = *v + b);
        }
        out
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: Option<(&mut Tensor<T>, &mut Tensor<T>)>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (batch, fi, fo) = (x.dim(0), self.in_features(), self.out_features());
        let g = MatRef::row_major(grad_out.data(), batch, fo);
        if let Some((dw, db)) = grads {
            gemm(T::one(), g.t(), MatRef::row_major(x.data(), batch, fi), T::one(), MatMut::row_major(dw.data_mut(), fo, fi));
            for row in grad_out.data().chunks_exact(fo) {
                db.data_mut().iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
            }
        }
        need_input_grad.then(|| {
            let mut dx = Tensor::zeros(x.shape());
            gemm(
                T::one(),
                g,
                MatRef::row_major(self.weight.data(), fo, fi),
                T::zero(),
                MatMut::row_major(dx.data_mut(), batch, fi),
            );
            dx
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn forward<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Elu => x.map(|v| if v > T::zero() { v } else { v.exp_m1() }),
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
        }
    }

    /// Input gradient computed from the saved *output* `y`.
    pub fn backward<T: Scalar>(self, y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let d: Vec<T> = y
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&y, &g)| match self {
                Activation::Elu => {
                    if y > T::zero() {
                        g
                    } else {
                        g * (y + T::one())
                    }
                }
                Activation::Relu => {
                    if y > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }
                Activation::Sigmoid => g * y * (T::one() - y),
            })
            .collect();
        Tensor::from_vec(y.shape(), d)
    }
}
