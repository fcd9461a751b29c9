//! Minimal feed-forward network substrate: convolution stacks with explicit
//! backpropagation, generic over the scalar type.

mod adam;
pub mod im2col;
mod layers;

pub use adam::Adam;
pub use layers::{fan_in_uniform, Activation, Conv1d, Conv2d, ConvTranspose2d, Dense};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    ConvTranspose2d(ConvTranspose2d<T>),
    Conv1d(Conv1d<T>),
    Dense(Dense<T>),
    Act(Activation),
}

impl<T: Scalar> Layer<T> {
    fn weights(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => Some((&l.weight, &l.bias)),
            Layer::ConvTranspose2d(l) => Some((&l.weight, &l.bias)),
            Layer::Conv1d(l) => Some((&l.weight, &l.bias)),
            Layer::Dense(l) => Some((&l.weight, &l.bias)),
            Layer::Act(_) => None,
        }
    }

    fn weights_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::ConvTranspose2d(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::Conv1d(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::Dense(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::Act(_) => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::ConvTranspose2d(_) => "conv_transpose2d",
            Layer::Conv1d(_) => "conv1d",
            Layer::Dense(_) => "dense",
            Layer::Act(a) => a.name(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::ConvTranspose2d(l) => l.forward(x),
            Layer::Conv1d(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Act(a) => a.forward(x),
        }
    }
}

/// Per-parameter gradient buffers, aligned with [`Sequential::params`].
pub type Grads<T> = Vec<Tensor<T>>;

/// Saved activations of one forward pass: `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    acts: Vec<Tensor<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.acts.pop().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.acts[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T> {
    name: String,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(name: impl Into<String>, layers: Vec<Layer<T>>) -> Self {
        Sequential { name: name.into(), layers }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().filter_map(Layer::weights).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().filter_map(Layer::weights_mut).flat_map(|(w, b)| [w, b]).collect()
    }

    /// Stable names such as `channel_encoder.2.weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights().is_some() {
                names.push(format!("{}.{i}.weight", self.name));
                names.push(format!("{}.{i}.bias", self.name));
            }
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn check(&self, layer: usize, out: &Tensor<T>) -> Result<()> {
        if out.is_finite() {
            Ok(())
        } else {
            Err(Error::NumericFault { network: self.name.clone(), layer, kind: self.layers[layer].kind() })
        }
    }

    /// Inference pass; nothing is retained.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur: Option<Tensor<T>> = None;
        for (i, l) in self.layers.iter().enumerate() {
            let next = l.forward(cur.as_ref().unwrap_or(x));
            self.check(i, &next)?;
            cur = Some(next);
        }
        Ok(cur.unwrap_or_else(|| x.clone()))
    }

    /// Training pass that keeps every intermediate activation for backprop.
    pub fn forward_trace(&self, x: Tensor<T>) -> Result<Trace<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (i, l) in self.layers.iter().enumerate() {
            let next = l.forward(acts.last().expect("non-empty"));
            self.check(i, &next)?;
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    /// Backpropagate `grad_out` through a saved trace.
    ///
    /// Parameter gradients are *added* into `grads` when given; a frozen
    /// network passes `None`. Returns the gradient w.r.t. the trace input when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        assert_eq!(trace.acts.len(), self.layers.len() + 1, "trace does not belong to this network");
        let mut slot = self.layers.iter().filter(|l| l.weights().is_some()).count() * 2;
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            // the first layer's input gradient is only needed when requested
            let want_dx = i > 0 || need_input_grad;
            let pair = if l.weights().is_some() {
                slot -= 2;
                grads.as_deref_mut().map(|gs| {
                    let (w, rest) = gs[slot..].split_at_mut(1);
                    (&mut w[0], &mut rest[0])
                })
            } else {
                None
            };
            let next = match l {
                Layer::Conv2d(c) => c.backward(x, &g, pair, want_dx),
                Layer::ConvTranspose2d(c) => c.backward(x, &g, pair, want_dx),
                Layer::Conv1d(c) => c.backward(x, &g, pair, want_dx),
                Layer::Dense(d) => d.backward(x, &g, pair, want_dx),
                Layer::Act(a) => want_dx.then(|| a.backward(&trace.acts[i + 1], &g)),
            };
            match next {
                Some(n) => g = n,
                None => return None,
            }
        }
        Some(g)
    }

    /// Flattened copy of every parameter, in `params()` order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests;
