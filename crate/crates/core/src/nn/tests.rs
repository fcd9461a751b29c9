use super::*;
use crate::rng::{stream, Purpose};

fn rand_tensor(shape: &[usize], salt: u64) -> Tensor<f64> {
    let mut rng = stream(99, Purpose::Probe, salt);
    Tensor::from_fn(shape, |_| crate::rng::normal(&mut rng))
}

// Direct definition: out[o,y,x] = b[o] + sum_{c,i,j} w[o,c,i,j] * in[c, y*s+i-p, x*s+j-p]
fn naive_conv2d(l: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let shape = l.output_shape(x.shape());
    let (k, s, p) = (l.kernel(), l.stride as isize, l.pad as isize);
    let (h, w) = (x.dim(2) as isize, x.dim(3) as isize);
    let mut out = Tensor::zeros(&shape);
    for b in 0..shape[0] {
        for o in 0..shape[1] {
            for y in 0..shape[2] {
                for xx in 0..shape[3] {
                    let mut acc = l.bias.data()[o];
                    for c in 0..l.in_channels() {
                        for i in 0..k {
                            for j in 0..k {
                                let iy = y as isize * s + i as isize - p;
                                let ix = xx as isize * s + j as isize - p;
                                if iy >= 0 && iy < h && ix >= 0 && ix < w {
                                    let xi = ((b * x.dim(1) + c) * x.dim(2) + iy as usize) * x.dim(3) + ix as usize;
                                    let wi = ((o * l.in_channels() + c) * k + i) * k + j;
                                    acc += l.weight.data()[wi] * x.data()[xi];
                                }
                            }
                        }
                    }
                    out.data_mut()[((b * shape[1] + o) * shape[2] + y) * shape[3] + xx] = acc;
                }
            }
        }
    }
    out
}

// Scatter definition: each input pixel (c,y,x) adds w[c,o,i,j]*in to out[o, y*s+i-p, x*s+j-p]
fn naive_conv_transpose2d(l: &ConvTranspose2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let shape = l.output_shape(x.shape());
    let (k, s, p) = (l.kernel(), l.stride as isize, l.pad as isize);
    let mut out = Tensor::zeros(&shape);
    for b in 0..shape[0] {
        for o in 0..shape[1] {
            for v in 0..shape[2] * shape[3] {
                out.data_mut()[(b * shape[1] + o) * shape[2] * shape[3] + v] = l.bias.data()[o];
            }
        }
        for c in 0..x.dim(1) {
            for y in 0..x.dim(2) {
                for xx in 0..x.dim(3) {
                    let val = x.data()[((b * x.dim(1) + c) * x.dim(2) + y) * x.dim(3) + xx];
                    for o in 0..shape[1] {
                        for i in 0..k {
                            for j in 0..k {
                                let oy = y as isize * s + i as isize - p;
                                let ox = xx as isize * s + j as isize - p;
                                if oy >= 0 && oy < shape[2] as isize && ox >= 0 && ox < shape[3] as isize {
                                    let wi = ((c * shape[1] + o) * k + i) * k + j;
                                    let oi = ((b * shape[1] + o) * shape[2] + oy as usize) * shape[3] + ox as usize;
                                    out.data_mut()[oi] += l.weight.data()[wi] * val;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn naive_conv1d(l: &Conv1d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let (co, ci, k, len) = (l.out_channels(), l.in_channels(), l.kernel(), x.dim(2));
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(&[x.dim(0), co, len]);
    for b in 0..x.dim(0) {
        for o in 0..co {
            for t in 0..len {
                let mut acc = l.bias.data()[o];
                for c in 0..ci {
                    for j in 0..k {
                        let src = t as isize + j as isize - pad;
                        if src >= 0 && src < len as isize {
                            acc += l.weight.data()[(o * ci + c) * k + j] * x.data()[(b * ci + c) * len + src as usize];
                        }
                    }
                }
                out.data_mut()[(b * co + o) * len + t] = acc;
            }
        }
    }
    out
}

fn randomize_bias<T: Scalar>(net: &mut Sequential<T>, salt: u64) {
    let mut rng = stream(5, Purpose::Probe, salt);
    for p in net.params_mut() {
        if p.shape().len() == 1 {
            for v in p.data_mut() {
                *v = T::of(0.1 * crate::rng::normal(&mut rng));
            }
        }
    }
}

#[test]
fn conv2d_matches_direct_convolution() {
    let mut rng = stream(1, Purpose::WeightInit, 0);
    for stride in [1, 2] {
        let mut l = Conv2d::<f64>::new(3, 4, 3, stride, &mut rng);
        l.bias = rand_tensor(&[4], 7);
        let x = rand_tensor(&[2, 3, 7, 6], stride as u64);
        let fast = l.forward(&x);
        assert!(fast.max_abs_diff(&naive_conv2d(&l, &x)) < 1e-12);
    }
}

#[test]
fn conv_transpose2d_matches_scatter_definition() {
    let mut rng = stream(1, Purpose::WeightInit, 1);
    for (stride, op, h) in [(1, 0, 4), (2, 0, 4), (2, 1, 7)] {
        let mut l = ConvTranspose2d::<f64>::new(3, 2, 3, stride, op, &mut rng);
        l.bias = rand_tensor(&[2], 8);
        let x = rand_tensor(&[2, 3, h, h], 11);
        let fast = l.forward(&x);
        assert!(fast.max_abs_diff(&naive_conv_transpose2d(&l, &x)) < 1e-12);
    }
}

#[test]
fn transposed_output_sizes_mirror_strided_convs() {
    let mut rng = stream(1, Purpose::WeightInit, 2);
    let up = ConvTranspose2d::<f32>::new(1, 1, 3, 2, 0, &mut rng);
    assert_eq!(up.output_shape(&[1, 1, 4, 4]), vec![1, 1, 7, 7]);
    let up = ConvTranspose2d::<f32>::new(1, 1, 3, 2, 1, &mut rng);
    assert_eq!(up.output_shape(&[1, 1, 7, 7]), vec![1, 1, 14, 14]);
    assert_eq!(up.output_shape(&[1, 1, 14, 14]), vec![1, 1, 28, 28]);
}

#[test]
fn conv1d_matches_direct_convolution() {
    let mut rng = stream(1, Purpose::WeightInit, 3);
    for k in [3, 5] {
        let mut l = Conv1d::<f64>::new(3, 4, k, &mut rng);
        l.bias = rand_tensor(&[4], 9);
        let x = rand_tensor(&[2, 3, 9], k as u64);
        assert!(l.forward(&x).max_abs_diff(&naive_conv1d(&l, &x)) < 1e-12);
    }
}

#[test]
fn dense_matches_dot_products() {
    let mut rng = stream(1, Purpose::WeightInit, 4);
    let l = Dense::<f64>::new(6, 3, &mut rng);
    let x = rand_tensor(&[2, 2, 3], 1);
    let y = l.forward(&x);
    for b in 0..2 {
        for o in 0..3 {
            let dot: f64 = (0..6).map(|i| l.weight.data()[o * 6 + i] * x.data()[b * 6 + i]).sum();
            assert!((y.data()[b * 3 + o] - dot).abs() < 1e-12);
        }
    }
}

#[test]
fn init_respects_fan_in_limit() {
    let mut rng = stream(3, Purpose::WeightInit, 0);
    let l = Conv2d::<f32>::new(16, 8, 3, 1, &mut rng);
    let limit = (3.0f32 / 144.0).sqrt();
    assert!(l.weight.data().iter().all(|v| v.abs() <= limit));
    assert!(l.bias.data().iter().all(|&v| v == 0.0));
}

/// Loss = sum(out * probe); its gradient w.r.t. out is `probe`.
fn check_gradients(net: &mut Sequential<f64>, x: &Tensor<f64>, tol: f64) {
    let trace = net.forward_trace(x.clone()).unwrap();
    let probe = rand_tensor(trace.output().shape(), 77);
    let loss = |net: &Sequential<f64>, x: &Tensor<f64>| -> f64 {
        net.forward(x).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let mut grads = net.zero_grads();
    let dx = net.backward(&trace, &probe, Some(&mut grads), true).unwrap();
    let h = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);

    let n_params = net.params().len();
    for pi in 0..n_params {
        let len = net.params()[pi].len();
        for ei in (0..len).step_by((len / 7).max(1)) {
            let orig = net.params()[pi].data()[ei];
            net.params_mut()[pi].data_mut()[ei] = orig + h;
            let up = loss(net, x);
            net.params_mut()[pi].data_mut()[ei] = orig - h;
            let down = loss(net, x);
            net.params_mut()[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[pi].data()[ei];
            assert!(rel(analytic, numeric) < tol, "param {pi}[{ei}]: {analytic} vs {numeric}");
        }
    }
    for ei in (0..x.len()).step_by((x.len() / 11).max(1)) {
        let mut xp = x.clone();
        xp.data_mut()[ei] += h;
        let up = loss(net, &xp);
        xp.data_mut()[ei] -= 2.0 * h;
        let down = loss(net, &xp);
        let numeric = (up - down) / (2.0 * h);
        assert!(rel(dx.data()[ei], numeric) < tol, "input[{ei}]: {} vs {numeric}", dx.data()[ei]);
    }
}

#[test]
fn conv_stack_gradients_match_finite_differences() {
    let mut rng = stream(2, Purpose::WeightInit, 0);
    let mut net = Sequential::new(
        "probe",
        vec![
            Layer::Conv2d(Conv2d::new(2, 3, 3, 2, &mut rng)),
            Layer::Act(Activation::Elu),
            Layer::ConvTranspose2d(ConvTranspose2d::new(3, 2, 3, 2, 1, &mut rng)),
            Layer::Act(Activation::Sigmoid),
        ],
    );
    randomize_bias(&mut net, 1);
    check_gradients(&mut net, &rand_tensor(&[2, 2, 6, 6], 3), 1e-5);
}

#[test]
fn sequence_stack_gradients_match_finite_differences() {
    let mut rng = stream(2, Purpose::WeightInit, 1);
    let mut net = Sequential::new(
        "probe1d",
        vec![
            Layer::Conv1d(Conv1d::new(3, 4, 5, &mut rng)),
            Layer::Act(Activation::Elu),
            Layer::Conv1d(Conv1d::new(4, 2, 3, &mut rng)),
            Layer::Act(Activation::Relu),
            Layer::Dense(Dense::new(2 * 7, 3, &mut rng)),
        ],
    );
    randomize_bias(&mut net, 2);
    check_gradients(&mut net, &rand_tensor(&[3, 3, 7], 4), 1e-5);
}

#[test]
fn frozen_backward_leaves_no_parameter_gradients_and_can_skip_input() {
    let mut rng = stream(2, Purpose::WeightInit, 2);
    let net = Sequential::new("n", vec![Layer::Conv1d(Conv1d::<f64>::new(2, 2, 3, &mut rng)), Layer::Act(Activation::Relu)]);
    let trace = net.forward_trace(rand_tensor(&[1, 2, 5], 1)).unwrap();
    let g = Tensor::full(&[1, 2, 5], 1.0);
    assert!(net.backward(&trace, &g, None, true).is_some());
    let mut grads = net.zero_grads();
    assert!(net.backward(&trace, &g, Some(&mut grads), false).is_none());
    assert!(grads.iter().any(|t| t.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn non_finite_activation_names_the_layer() {
    let mut rng = stream(2, Purpose::WeightInit, 3);
    let net = Sequential::new("semantic_encoder", vec![Layer::Conv2d(Conv2d::<f32>::new(1, 1, 3, 1, &mut rng))]);
    let mut x = Tensor::zeros(&[1, 1, 4, 4]);
    x.data_mut()[5] = f32::NAN;
    match net.forward(&x) {
        Err(Error::NumericFault { network, layer, .. }) => {
            assert_eq!(network, "semantic_encoder");
            assert_eq!(layer, 0);
        }
        other => panic!("expected a numeric fault, got {other:?}"),
    }
}
