use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adaptive-moment optimizer state for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Applies one bias-corrected update with learning rate `lr`.
    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "adam: parameter/gradient count mismatch");
        assert_eq!(params.len(), self.first_moment.len(), "adam: state does not match the network");
        self.step += 1;
        let t = self.step as i32;
        let lr_t = lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2, eps, lr_t) = (T::of(self.beta1), T::of(self.beta2), T::of(self.epsilon), T::of(lr_t));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first_moment).zip(&mut self.second_moment) {
            let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in iter {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - lr_t * *m / (v.sqrt() + eps);
            }
        }
    }
}
