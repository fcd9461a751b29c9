//! Conditional GAN channel surrogate.
//!
//! The generator maps `[pilot, z, snr]` (or `[z, snr]` when unconditioned) to
//! a fake received block; the discriminator scores `[pilot, candidate, snr]`.
//! Both are stacks of same-padded 1-D convolutions over the symbol axis, so
//! output symbol `i` stays aligned with pilot symbol `i`.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::config::LossMode;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Conv1d, Dense, Grads, Layer, Sequential, Trace};
use crate::rng::{normal, stream, Purpose, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transceiver::SymbolBlock;

/// Divisor applied to `snr_db` before it enters either network.
pub const SNR_FEATURE_SCALE: f64 = 10.0;

thread_local! {
    static GENERATE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Generator forward passes made on this thread so far.
pub fn generate_call_count() -> u64 {
    GENERATE_CALLS.with(|c| c.get())
}

fn count_generate() {
    GENERATE_CALLS.with(|c| c.set(c.get() + 1));
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateArch {
    pub generator_filters: Vec<usize>,
    pub generator_kernels: Vec<usize>,
    pub discriminator_filters: Vec<usize>,
    pub discriminator_kernels: Vec<usize>,
    pub dense_width: usize,
    pub noise_dim: usize,
    pub symbols: usize,
    pub conditioned: bool,
}

impl SurrogateArch {
    pub fn standard(symbols: usize, noise_dim: usize, conditioned: bool) -> Self {
        SurrogateArch {
            generator_filters: vec![256, 128, 64, 2],
            generator_kernels: vec![5, 3, 3, 3],
            discriminator_filters: vec![256, 128, 64, 16],
            discriminator_kernels: vec![5, 3, 3, 3],
            dense_width: 100,
            noise_dim,
            symbols,
            conditioned,
        }
    }

    /// Same topology with narrow layers.
    pub fn tiny(symbols: usize, noise_dim: usize, conditioned: bool) -> Self {
        SurrogateArch {
            generator_filters: vec![6, 4, 4, 2],
            generator_kernels: vec![5, 3, 3, 3],
            discriminator_filters: vec![6, 4, 4, 3],
            discriminator_kernels: vec![5, 3, 3, 3],
            dense_width: 5,
            noise_dim,
            symbols,
            conditioned,
        }
    }

    fn generator_inputs(&self) -> usize {
        if self.conditioned {
            2 + self.noise_dim + 1
        } else {
            self.noise_dim + 1
        }
    }

    fn discriminator_inputs(&self) -> usize {
        if self.conditioned {
            5
        } else {
            3
        }
    }

    fn validate(&self) -> Result<()> {
        if self.generator_filters.last() != Some(&2) {
            return Err(Error::Contract("generator must end with 2 channels (re, im)".into()));
        }
        if self.generator_filters.len() != self.generator_kernels.len()
            || self.discriminator_filters.len() != self.discriminator_kernels.len()
        {
            return Err(Error::Contract("filter and kernel lists differ in length".into()));
        }
        if self.generator_kernels.iter().chain(&self.discriminator_kernels).any(|k| k % 2 == 0) {
            return Err(Error::Contract("same padding needs odd kernels".into()));
        }
        Ok(())
    }
}

/// Generator input: pilot, fresh noise and the SNR.
#[derive(Clone, Debug)]
pub struct ConditionInput<T> {
    pub pilot: SymbolBlock<T>,
    /// `[batch, noise_dim, symbols]`
    pub z: Tensor<T>,
    pub snr_db: f64,
}

impl<T: Scalar> ConditionInput<T> {
    pub fn sample(pilot: SymbolBlock<T>, snr_db: f64, noise_dim: usize, rng: &mut Stream) -> Self {
        let z = Tensor::from_fn(&[pilot.batch(), noise_dim, pilot.symbols_per_item()], |_| T::of(normal(rng)));
        ConditionInput { pilot, z, snr_db }
    }
}

fn snr_plane<T: Scalar>(batch: usize, n: usize, snr_db: f64) -> Tensor<T> {
    Tensor::full(&[batch, 1, n], T::of(snr_db / SNR_FEATURE_SCALE))
}

/// Saved generator activations.
pub struct GeneratorTrace<T> {
    trace: Trace<T>,
    pub output: SymbolBlock<T>,
}

/// Losses of one surrogate update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanRecord {
    pub generator_loss: f64,
    pub discriminator_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSurrogate<T> {
    pub arch: SurrogateArch,
    pub loss_mode: LossMode,
    pub generator: Sequential<T>,
    pub discriminator: Sequential<T>,
    pub generator_opt: Adam<T>,
    pub discriminator_opt: Adam<T>,
    /// Completed `train_gan_step` calls.
    pub steps: u64,
}

fn conv_stack<T: Scalar>(
    input: usize,
    filters: &[usize],
    kernels: &[usize],
    linear_last: bool,
    rng: &mut Stream,
) -> Vec<Layer<T>> {
    let mut layers = Vec::new();
    let mut c = input;
    for (i, (&f, &k)) in filters.iter().zip(kernels).enumerate() {
        layers.push(Layer::Conv1d(Conv1d::new(c, f, k, rng)));
        if !(linear_last && i + 1 == filters.len()) {
            layers.push(Layer::Act(Activation::Relu));
        }
        c = f;
    }
    layers
}

impl<T: Scalar> ChannelSurrogate<T> {
    pub fn new(arch: SurrogateArch, loss_mode: LossMode, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream(seed, Purpose::WeightInit, 4);
        let generator = Sequential::new(
            "generator",
            conv_stack(arch.generator_inputs(), &arch.generator_filters, &arch.generator_kernels, true, &mut rng),
        );
        let mut rng = stream(seed, Purpose::WeightInit, 5);
        let mut layers = conv_stack(
            arch.discriminator_inputs(),
            &arch.discriminator_filters,
            &arch.discriminator_kernels,
            false,
            &mut rng,
        );
        let flat = arch.discriminator_filters.last().expect("non-empty") * arch.symbols;
        layers.push(Layer::Dense(Dense::new(flat, arch.dense_width, &mut rng)));
        layers.push(Layer::Act(Activation::Relu));
        layers.push(Layer::Dense(Dense::new(arch.dense_width, 1, &mut rng)));
        let discriminator = Sequential::new("discriminator", layers);
        let generator_opt = Adam::new(&generator.params());
        let discriminator_opt = Adam::new(&discriminator.params());
        Ok(ChannelSurrogate { arch, loss_mode, generator, discriminator, generator_opt, discriminator_opt, steps: 0 })
    }

    pub fn conditioned(&self) -> bool {
        self.arch.conditioned
    }

    fn check(&self, block: &SymbolBlock<T>) -> Result<()> {
        if block.symbols_per_item() != self.arch.symbols {
            return Err(Error::Contract(format!(
                "surrogate built for {} symbols, got {}",
                self.arch.symbols,
                block.symbols_per_item()
            )));
        }
        Ok(())
    }

    fn generator_input(&self, cond: &ConditionInput<T>) -> Result<Tensor<T>> {
        self.check(&cond.pilot)?;
        let (b, n) = (cond.pilot.batch(), cond.pilot.symbols_per_item());
        if cond.z.shape() != [b, self.arch.noise_dim, n] {
            return Err(Error::Contract(format!("noise tensor has shape {:?}", cond.z.shape())));
        }
        let snr = snr_plane(b, n, cond.snr_db);
        Ok(if self.arch.conditioned {
            Tensor::concat_channels(&[&cond.pilot.to_sequence(), &cond.z, &snr])
        } else {
            Tensor::concat_channels(&[&cond.z, &snr])
        })
    }

    fn discriminator_input(&self, pilot: &SymbolBlock<T>, candidate: &SymbolBlock<T>, snr_db: f64) -> Result<Tensor<T>> {
        self.check(candidate)?;
        if pilot.batch() != candidate.batch() || pilot.symbols_per_item() != candidate.symbols_per_item() {
            return Err(Error::Contract("candidate does not match the pilot".into()));
        }
        let snr = snr_plane(candidate.batch(), candidate.symbols_per_item(), snr_db);
        Ok(if self.arch.conditioned {
            Tensor::concat_channels(&[&pilot.to_sequence(), &candidate.to_sequence(), &snr])
        } else {
            Tensor::concat_channels(&[&candidate.to_sequence(), &snr])
        })
    }

    pub fn generate(&self, cond: &ConditionInput<T>) -> Result<SymbolBlock<T>> {
        count_generate();
        SymbolBlock::from_sequence(&self.generator.forward(&self.generator_input(cond)?)?)
    }

    pub fn generate_traced(&self, cond: &ConditionInput<T>) -> Result<GeneratorTrace<T>> {
        count_generate();
        let trace = self.generator.forward_trace(self.generator_input(cond)?)?;
        let output = SymbolBlock::from_sequence(trace.output())?;
        Ok(GeneratorTrace { trace, output })
    }

    /// Backprop `dL/dŷ` (`[batch, n, 2]`). Returns `dL/dpilot` in the same
    /// layout when requested and the surrogate is conditioned.
    pub fn generator_backward(
        &self,
        trace: &GeneratorTrace<T>,
        grad_output: &Tensor<T>,
        grads: Option<&mut Grads<T>>,
        need_pilot_grad: bool,
    ) -> Option<Tensor<T>> {
        let g = SymbolBlock::new(grad_output.clone()).expect("symbol layout").to_sequence();
        let want = need_pilot_grad && self.arch.conditioned;
        let dx = self.generator.backward(&trace.trace, &g, grads, want)?;
        Some(SymbolBlock::from_sequence(&dx.slice_channels(0, 2)).expect("2 channels").into_tensor())
    }

    /// One score per item.
    pub fn discriminate(&self, pilot: &SymbolBlock<T>, candidate: &SymbolBlock<T>, snr_db: f64) -> Result<Vec<T>> {
        Ok(self.discriminator.forward(&self.discriminator_input(pilot, candidate, snr_db)?)?.into_vec())
    }

    /// Generator hinge loss on a fresh fake block and its parameter gradients.
    pub fn generator_gradients(&self, cond: &ConditionInput<T>) -> Result<(f64, Grads<T>)> {
        let gt = self.generate_traced(cond)?;
        let dt = self.discriminator.forward_trace(self.discriminator_input(&cond.pilot, &gt.output, cond.snr_db)?)?;
        let scores = dt.output().data().to_vec();
        let (loss, dscore) = generator_loss_grad(&scores);
        let ds = Tensor::from_vec(&[scores.len(), 1], dscore);
        let d_in = self.discriminator.backward(&dt, &ds, None, true).expect("input gradient requested");
        let cand = if self.arch.conditioned { 2 } else { 0 };
        let d_fake = SymbolBlock::from_sequence(&d_in.slice_channels(cand, 2))?.into_tensor();
        let mut grads = self.generator.zero_grads();
        self.generator_backward(&gt, &d_fake, Some(&mut grads), false);
        Ok((loss, grads))
    }

    /// Discriminator loss on `(pilot, real)` against `fake` and its gradients.
    pub fn discriminator_gradients(
        &self,
        pilot: &SymbolBlock<T>,
        real: &SymbolBlock<T>,
        fake: &SymbolBlock<T>,
        snr_db: f64,
    ) -> Result<(f64, Grads<T>)> {
        let real_t = self.discriminator.forward_trace(self.discriminator_input(pilot, real, snr_db)?)?;
        let fake_t = self.discriminator.forward_trace(self.discriminator_input(pilot, fake, snr_db)?)?;
        let s_real = real_t.output().data().to_vec();
        let s_fake = fake_t.output().data().to_vec();
        let (loss, d_real, d_fake) = discriminator_loss_grad(&s_real, &s_fake, self.loss_mode);
        let b = s_real.len();
        let mut grads = self.discriminator.zero_grads();
        self.discriminator.backward(&real_t, &Tensor::from_vec(&[b, 1], d_real), Some(&mut grads), false);
        self.discriminator.backward(&fake_t, &Tensor::from_vec(&[b, 1], d_fake), Some(&mut grads), false);
        Ok((loss, grads))
    }

    /// Update the generator only; the discriminator is left untouched.
    pub fn generator_step(&mut self, pilot: &SymbolBlock<T>, snr_db: f64, rng: &mut Stream, lr: f64) -> Result<f64> {
        let cond = ConditionInput::sample(pilot.clone(), snr_db, self.arch.noise_dim, rng);
        let (loss, grads) = self.generator_gradients(&cond)?;
        if !loss.is_finite() {
            return Err(Error::TrainingFault { step: self.steps, message: "generator loss is not finite".into() });
        }
        if grads.iter().all(|g| g.is_finite()) {
            self.generator_opt.update(self.generator.params_mut(), &grads, lr);
        }
        Ok(loss)
    }

    /// Update the discriminator only against a freshly generated fake.
    pub fn discriminator_step(
        &mut self,
        pilot: &SymbolBlock<T>,
        y: &SymbolBlock<T>,
        snr_db: f64,
        rng: &mut Stream,
        lr: f64,
    ) -> Result<f64> {
        let cond = ConditionInput::sample(pilot.clone(), snr_db, self.arch.noise_dim, rng);
        let fake = self.generate(&cond)?;
        let (loss, grads) = self.discriminator_gradients(pilot, y, &fake, snr_db)?;
        if !loss.is_finite() {
            return Err(Error::TrainingFault { step: self.steps, message: "discriminator loss is not finite".into() });
        }
        if grads.iter().all(|g| g.is_finite()) {
            self.discriminator_opt.update(self.discriminator.params_mut(), &grads, lr);
        }
        Ok(loss)
    }

    /// One generator update, then one discriminator update, on the pair
    /// `(x, y)` observed over the real channel. Pilot gradients are never
    /// computed here.
    pub fn train_gan_step(
        &mut self,
        x: &SymbolBlock<T>,
        y: &SymbolBlock<T>,
        snr_db: f64,
        rng: &mut Stream,
        lr: f64,
    ) -> Result<GanRecord> {
        let pilot = SymbolBlock::new(x.tensor().clone())?;
        let generator_loss = self.generator_step(&pilot, snr_db, rng, lr)?;
        let discriminator_loss = self.discriminator_step(&pilot, y, snr_db, rng, lr)?;
        self.steps += 1;
        Ok(GanRecord { generator_loss, discriminator_loss })
    }

    pub fn all_finite(&self) -> bool {
        self.generator.all_finite() && self.discriminator.all_finite()
    }

    /// Residual moments of generated outputs over several pilot blocks.
    pub fn residual_stats(&self, pilots: &[SymbolBlock<T>], snr_db: f64, rng: &mut Stream) -> Result<ResidualStats> {
        let mut parts = Vec::with_capacity(pilots.len());
        for x in pilots {
            let cond = ConditionInput::sample(x.clone(), snr_db, self.arch.noise_dim, rng);
            parts.push(ResidualStats::of(x, &self.generate(&cond)?));
        }
        Ok(ResidualStats::pool(&parts))
    }
}

/// First and second moments of the complex residual `y_hat - x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean_re: f64,
    pub mean_im: f64,
    /// `E|r - E r|^2` over every symbol; equals the noise variance for AWGN.
    pub variance: f64,
    pub symbols: usize,
}

impl ResidualStats {
    pub fn mean_magnitude(&self) -> f64 {
        self.mean_re.hypot(self.mean_im)
    }

    /// Moments of `y - x` over every symbol of the two blocks.
    pub fn of(x: &SymbolBlock<impl Scalar>, y: &SymbolBlock<impl Scalar>) -> ResidualStats {
        assert_eq!(x.tensor().shape(), y.tensor().shape(), "residual of mismatched blocks");
        let r: Vec<(f64, f64)> = x
            .tensor()
            .data()
            .chunks_exact(2)
            .zip(y.tensor().data().chunks_exact(2))
            .map(|(a, b)| (b[0].as_f64() - a[0].as_f64(), b[1].as_f64() - a[1].as_f64()))
            .collect();
        let n = r.len() as f64;
        let mean_re = r.iter().map(|v| v.0).sum::<f64>() / n;
        let mean_im = r.iter().map(|v| v.1).sum::<f64>() / n;
        let variance = r.iter().map(|v| (v.0 - mean_re).powi(2) + (v.1 - mean_im).powi(2)).sum::<f64>() / n;
        ResidualStats { mean_re, mean_im, variance, symbols: r.len() }
    }

    /// Combine statistics of disjoint symbol sets.
    pub fn pool(parts: &[ResidualStats]) -> ResidualStats {
        let n: usize = parts.iter().map(|p| p.symbols).sum();
        let w = |p: &ResidualStats| p.symbols as f64 / n.max(1) as f64;
        let mean_re = parts.iter().map(|p| w(p) * p.mean_re).sum::<f64>();
        let mean_im = parts.iter().map(|p| w(p) * p.mean_im).sum::<f64>();
        let variance = parts
            .iter()
            .map(|p| w(p) * (p.variance + (p.mean_re - mean_re).powi(2) + (p.mean_im - mean_im).powi(2)))
            .sum::<f64>();
        ResidualStats { mean_re, mean_im, variance, symbols: n }
    }
}

/// `mean(max(1 - s, 0))`
pub fn generator_loss<T: Scalar>(scores_fake: &[T]) -> f64 {
    generator_loss_grad(scores_fake).0
}

fn generator_loss_grad<T: Scalar>(s: &[T]) -> (f64, Vec<T>) {
    let n = s.len() as f64;
    let loss = s.iter().map(|v| (1.0 - v.as_f64()).max(0.0)).sum::<f64>() / n;
    let grad = s.iter().map(|v| if v.as_f64() < 1.0 { T::of(-1.0 / n) } else { T::zero() }).collect();
    (loss, grad)
}

pub fn discriminator_loss<T: Scalar>(scores_real: &[T], scores_fake: &[T], mode: LossMode) -> f64 {
    discriminator_loss_grad(scores_real, scores_fake, mode).0
}

fn discriminator_loss_grad<T: Scalar>(r: &[T], f: &[T], mode: LossMode) -> (f64, Vec<T>, Vec<T>) {
    assert_eq!(r.len(), f.len(), "score lists differ in length");
    let n = r.len() as f64;
    let step = |cond: bool, v: f64| if cond { T::of(v / n) } else { T::zero() };
    match mode {
        LossMode::PaperLiteral => {
            let loss = r
                .iter()
                .zip(f)
                .map(|(a, b)| -a.as_f64() - (1.0 - b.as_f64()).max(0.0))
                .sum::<f64>()
                / n;
            let dr = r.iter().map(|_| T::of(-1.0 / n)).collect();
            let df = f.iter().map(|b| step(b.as_f64() < 1.0, 1.0)).collect();
            (loss, dr, df)
        }
        LossMode::StandardHinge => {
            let lr = r.iter().map(|a| (1.0 - a.as_f64()).max(0.0)).sum::<f64>() / n;
            let lf = f.iter().map(|b| (1.0 + b.as_f64()).max(0.0)).sum::<f64>() / n;
            let dr = r.iter().map(|a| step(a.as_f64() < 1.0, -1.0)).collect();
            let df = f.iter().map(|b| step(b.as_f64() > -1.0, 1.0)).collect();
            (lr + lf, dr, df)
        }
    }
}
