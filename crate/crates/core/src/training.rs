//! Two-stage training of the two-node system, plus the one-way end-to-end
//! and unconditioned-surrogate baselines.
//!
//! Per batch, stage 1 sends each node's symbols over the real link; the
//! receiving node fits its surrogate to the observed `(x, y)` pair and then
//! updates its receiver. Stage 2 then trains each node's transmitter against
//! its own surrogate and its own receiver, without touching the link.

use std::borrow::Cow;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_fading, fading_backward, Link, LinkAudit};
use crate::config::{ExperimentConfig, Execution, SystemKind};
use crate::data::{BatchSchedule, Dataset, ImageBatch};
use crate::error::{Error, Result};
use crate::metrics::{self, Direction};
use crate::rng::{stream, Purpose, Stream};
use crate::scalar::Scalar;
use crate::sp_cgan::{ChannelSurrogate, ConditionInput, GanRecord, SurrogateArch};
use crate::tensor::Tensor;
use crate::transceiver::{NodeId, NodeState, SymbolBlock, TransceiverArch};

/// Consecutive bad steps tolerated before a run is aborted.
pub const DIVERGENCE_PATIENCE: u32 = 50;
/// A loss above this multiple of the best seen so far counts as a bad step.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Inverse-time decay: `base / (1 + decay * t)`.
pub fn lr_at(base: f64, decay: f64, t: u64) -> f64 {
    base / (1.0 + decay * t as f64)
}

/// Mean squared error over all elements, accumulated in f64.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse of mismatched tensors");
    let se: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    se / a.len() as f64
}

fn mse_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    let k = T::of(2.0 / pred.len() as f64);
    Tensor::from_vec(
        pred.shape(),
        pred.data().iter().zip(target.data()).map(|(&p, &t)| k * (p - t)).collect(),
    )
}

/// Mean of the two link MSEs: reconstruction at A of B's images and at B
/// of A's images.
pub fn reciprocal_mse_objective<T: Scalar>(
    recon_at_a: &ImageBatch<T>,
    images_b: &ImageBatch<T>,
    recon_at_b: &ImageBatch<T>,
    images_a: &ImageBatch<T>,
) -> Result<f64> {
    for (x, y) in [(recon_at_a, images_b), (recon_at_b, images_a)] {
        if x.tensor().shape() != y.tensor().shape() {
            return Err(Error::Contract("reconstruction and reference differ in shape".into()));
        }
    }
    Ok(0.5 * (mse(recon_at_a.tensor(), images_b.tensor()) + mse(recon_at_b.tensor(), images_a.tensor())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Stage1,
    Stage2,
    GanGenerator,
    GanDiscriminator,
    Jscc,
    Eval,
}

impl StepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StepMode::Stage1 => "stage1",
            StepMode::Stage2 => "stage2",
            StepMode::GanGenerator => "gan_g",
            StepMode::GanDiscriminator => "gan_d",
            StepMode::Jscc => "jscc",
            StepMode::Eval => "eval",
        }
    }
}

impl fmt::Display for StepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const METRICS_HEADER: &str = "epoch,step,mode,direction,loss,psnr,ssim,snr_db,lr,forward_payload_count";

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub mode: StepMode,
    pub direction: Direction,
    pub loss: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub snr_db: f64,
    pub lr: f64,
    pub forward_payload_count: u64,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.8},{},{},{},{:e},{}",
            self.epoch,
            self.step,
            self.mode,
            self.direction,
            self.loss,
            opt(self.psnr),
            opt(self.ssim),
            self.snr_db,
            self.lr,
            self.forward_payload_count
        )
    }
}

/// Test-subset quality of one link at the end of an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkQuality {
    pub direction: Direction,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub eval_snr_db: f64,
    pub links: Vec<LinkQuality>,
    pub audits: LinkAudit,
}

impl EpochRecord {
    pub fn link(&self, direction: Direction) -> Option<&LinkQuality> {
        self.links.iter().find(|l| l.direction == direction)
    }
}

/// Hooks called while `train` runs.
pub trait Observer<T> {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _run: &TrainRun<T>, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

impl<T> Observer<T> for () {}

/// Aborts after too many consecutive non-finite or regressing steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceGuard {
    pub best: f64,
    pub consecutive: u32,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        DivergenceGuard { best: f64::INFINITY, consecutive: 0 }
    }
}

impl DivergenceGuard {
    pub fn observe(&mut self, step: u64, loss: f64) -> Result<()> {
        let bad = !loss.is_finite() || (self.best.is_finite() && loss > DIVERGENCE_FACTOR * self.best);
        if bad {
            self.consecutive += 1;
            if self.consecutive >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence { step, consecutive: self.consecutive });
            }
        } else {
            self.consecutive = 0;
            self.best = self.best.min(loss);
        }
        Ok(())
    }
}

/// Everything one node owns.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSide<T> {
    pub state: NodeState<T>,
    /// Absent for the one-way baseline.
    pub surrogate: Option<ChannelSurrogate<T>>,
    pub(crate) generator_noise: Stream,
}

/// Outcome of one node's part of a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeStep {
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub gan: Option<GanRecord>,
}

fn quality<T: Scalar>(out: &Tensor<T>, target: &ImageBatch<T>) -> (f64, f64) {
    match ImageBatch::new(out.clone()) {
        Ok(recon) => {
            let p = metrics::Psnr::mean(&metrics::psnr(target, &recon).unwrap_or_default());
            let s = metrics::ssim(target, &recon).map(|v| metrics::mean(&v)).unwrap_or(f64::NAN);
            (p.db().unwrap_or(f64::INFINITY), s)
        }
        Err(_) => (f64::NAN, f64::NAN),
    }
}

impl<T: Scalar> NodeSide<T> {
    /// Stage-1 work at the receiving node: fit the surrogate to the observed
    /// pair, then update the receiver against the remote node's images.
    fn stage1_local(
        &mut self,
        remote_images: &ImageBatch<T>,
        received: &SymbolBlock<T>,
        snr_db: f64,
        lr: f64,
        gan_lr: f64,
    ) -> Result<NodeStep> {
        let gan = match self.surrogate.as_mut() {
            Some(s) => {
                // the remote transmitter's symbols, recomputed from shared data and weights
                let replica = self.state.transceiver.transmit(remote_images)?;
                Some(s.train_gan_step(&replica, received, snr_db, &mut self.generator_noise, gan_lr)?)
            }
            None => None,
        };
        let tx = &self.state.transceiver;
        let trace = tx.receive_traced(received)?;
        let loss = mse(trace.output(), remote_images.tensor());
        let (psnr, ssim) = quality(trace.output(), remote_images);
        let g = mse_grad(trace.output(), remote_images.tensor());
        let mut grads = tx.rx_grads();
        tx.receive_backward(&trace, &g, Some(&mut grads), false);
        if grads.all_finite() {
            self.state.apply_rx(&grads, lr);
        }
        Ok(NodeStep { loss, psnr, ssim, gan })
    }

    /// Stage-2 work: transmitter -> own surrogate -> own receiver, updating
    /// only the transmitter.
    fn stage2_local(&mut self, images: &ImageBatch<T>, snr_db: f64, lr: f64) -> Result<NodeStep> {
        let surrogate = self
            .surrogate
            .as_ref()
            .ok_or_else(|| Error::Contract("stage 2 needs a channel surrogate".into()))?;
        let tx = &self.state.transceiver;
        let tt = tx.transmit_traced(images)?;
        let cond = ConditionInput::sample(tt.symbols.clone(), snr_db, surrogate.arch.noise_dim, &mut self.generator_noise);
        let gt = surrogate.generate_traced(&cond)?;
        let rt = tx.receive_traced(&gt.output)?;
        let loss = mse(rt.output(), images.tensor());
        let (psnr, ssim) = quality(rt.output(), images);
        let g = mse_grad(rt.output(), images.tensor());
        let d_fake = tx.receive_backward(&rt, &g, None, true).expect("symbol gradient requested");
        // an unconditioned surrogate gives the transmitter no gradient at all
        if let Some(d_pilot) = surrogate.generator_backward(&gt, &d_fake, None, true) {
            let mut grads = tx.tx_grads();
            tx.transmit_backward(&tt, &d_pilot, &mut grads);
            if grads.all_finite() {
                self.state.apply_tx(&grads, lr);
            }
        }
        Ok(NodeStep { loss, psnr, ssim, gan: None })
    }

    pub fn flat_weights(&self) -> Vec<T> {
        let mut w = self.state.transceiver.flat_params();
        if let Some(s) = &self.surrogate {
            w.extend(s.generator.flat_params());
            w.extend(s.discriminator.flat_params());
        }
        w
    }
}

/// Per-link outcome of a stage-1 step, indexed by the receiving node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Outcome {
    pub at: [NodeStep; 2],
}

/// State of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun<T> {
    pub config: ExperimentConfig,
    pub sides: [NodeSide<T>; 2],
    pub link: Link,
    /// Completed optimization steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub guard: DivergenceGuard,
    pub history: Vec<EpochRecord>,
    pub(crate) snr_schedule: Stream,
    pub(crate) baseline_noise: Stream,
}

impl<T: Scalar> TrainRun<T> {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let surrogate = SurrogateArch::standard(config.symbol_count, config.noise_dim, true);
        Self::with_arch(config, TransceiverArch::mnist(), surrogate)
    }

    /// `surrogate.conditioned` is overridden by the system kind.
    pub fn with_arch(config: ExperimentConfig, arch: TransceiverArch, mut surrogate: SurrogateArch) -> Result<Self> {
        config.validate()?;
        if arch.symbol_count() != config.symbol_count {
            return Err(Error::Validation {
                field: "symbol_count",
                message: format!("architecture produces {} symbols per image", arch.symbol_count()),
            });
        }
        surrogate.symbols = config.symbol_count;
        surrogate.noise_dim = config.noise_dim;
        surrogate.conditioned = config.system_kind != SystemKind::Gansc;
        let seed = config.seed;
        let make = |id: NodeId| -> Result<NodeSide<T>> {
            let state = NodeState::new(id, arch.clone(), seed)?;
            let surrogate = match config.system_kind {
                SystemKind::Jscc => None,
                _ => {
                    let mut s = ChannelSurrogate::new(surrogate.clone(), config.loss_mode, seed)?;
                    s.generator_opt.beta1 = config.gan_beta1;
                    s.discriminator_opt.beta1 = config.gan_beta1;
                    Some(s)
                }
            };
            // identical per node so twin nodes stay in lockstep
            Ok(NodeSide { state, surrogate, generator_noise: stream(seed, Purpose::GeneratorNoise, 0) })
        };
        let sides = [make(NodeId::A)?, make(NodeId::B)?];
        Ok(TrainRun {
            link: Link::training(config.channel_kind, seed),
            snr_schedule: stream(seed, Purpose::SnrSchedule, 0),
            baseline_noise: stream(seed, Purpose::ChannelNoise, 1),
            config,
            sides,
            step: 0,
            epoch: 0,
            guard: DivergenceGuard::default(),
            history: Vec::new(),
        })
    }

    pub fn node(&self, id: NodeId) -> &NodeSide<T> {
        &self.sides[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut NodeSide<T> {
        &mut self.sides[id.index()]
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.config.learning_rate, self.config.lr_decay, self.step)
    }

    pub fn gan_lr(&self) -> f64 {
        lr_at(self.config.gan_learning_rate, self.config.lr_decay, self.step)
    }

    /// Draw the training SNR for the next batch.
    pub fn next_snr(&mut self) -> f64 {
        let [lo, hi] = self.config.train_snr_range_db;
        if lo == hi {
            lo
        } else {
            self.snr_schedule.random_range(lo..hi)
        }
    }

    fn run_pair<R: Send>(
        &mut self,
        f: impl Fn(usize, &mut NodeSide<T>) -> Result<R> + Sync,
    ) -> Result<[R; 2]> {
        let [a, b] = &mut self.sides;
        match self.config.execution {
            Execution::Deterministic => Ok([f(0, a)?, f(1, b)?]),
            Execution::Threaded => {
                let (ra, rb) = std::thread::scope(|s| {
                    let h = s.spawn(|| f(1, b));
                    let ra = f(0, a);
                    (ra, h.join().expect("node thread panicked"))
                });
                Ok([ra?, rb?])
            }
        }
    }

    /// Stage 1: both nodes transmit over the real link, then each receiving
    /// node updates its surrogate and receiver. Transmitters are untouched.
    pub fn stage1_step(&mut self, batch_a: &ImageBatch<T>, batch_b: &ImageBatch<T>, snr_db: f64) -> Result<Stage1Outcome> {
        if self.config.system_kind == SystemKind::Jscc {
            return Err(Error::Contract("stage 1 belongs to the two-way systems".into()));
        }
        if batch_a.len() != batch_b.len() {
            return Err(Error::Contract("both nodes must send equally sized batches".into()));
        }
        let (lr, gan_lr) = (self.lr(), self.gan_lr());
        let x_a = self.sides[0].state.transceiver.transmit(batch_a)?;
        let x_b = self.sides[1].state.transceiver.transmit(batch_b)?;
        let (h_ab, h_ba) = self.link.realize(batch_a.len(), snr_db);
        let at_b = self.link.transmit(NodeId::A, NodeId::B, &x_a, &h_ab)?;
        let at_a = self.link.transmit(NodeId::B, NodeId::A, &x_b, &h_ba)?;
        let inputs = [(batch_b, &at_a.symbols), (batch_a, &at_b.symbols)];
        let at = self.run_pair(|i, side| side.stage1_local(inputs[i].0, inputs[i].1, snr_db, lr, gan_lr))?;
        Ok(Stage1Outcome { at })
    }

    /// Stage 2 at one node. Any link traffic during it is a fault.
    pub fn stage2_step(&mut self, batch: &ImageBatch<T>, node: NodeId, snr_db: f64) -> Result<NodeStep> {
        let before = self.link.audit().clone();
        let lr = self.lr();
        let out = self.sides[node.index()].stage2_local(batch, snr_db, lr)?;
        if *self.link.audit() != before {
            return Err(Error::UnexpectedLinkTraffic { node: node.to_string() });
        }
        Ok(out)
    }

    /// Stage 2 at both nodes (concurrently in threaded mode).
    pub fn stage2_both(&mut self, batch_a: &ImageBatch<T>, batch_b: &ImageBatch<T>, snr_db: f64) -> Result<[NodeStep; 2]> {
        let before = self.link.audit().clone();
        let lr = self.lr();
        let batches = [batch_a, batch_b];
        let out = self.run_pair(|i, side| side.stage2_local(batches[i], snr_db, lr))?;
        if *self.link.audit() != before {
            return Err(Error::UnexpectedLinkTraffic { node: "A/B".into() });
        }
        Ok(out)
    }

    /// One-way end-to-end step A -> B with the channel differentiated
    /// analytically; the link audit is not involved.
    pub fn jscc_step(&mut self, batch: &ImageBatch<T>, snr_db: f64) -> Result<NodeStep> {
        let lr = self.lr();
        let (real, _) = self.link.realize(batch.len(), snr_db);
        let [a, b] = &mut self.sides;
        let tt = a.state.transceiver.transmit_traced(batch)?;
        let y = apply_fading(&tt.symbols, &real, &mut self.baseline_noise)?;
        let rx = &b.state.transceiver;
        let rt = rx.receive_traced(&y)?;
        let loss = mse(rt.output(), batch.tensor());
        let (psnr, ssim) = quality(rt.output(), batch);
        let g = mse_grad(rt.output(), batch.tensor());
        let mut rx_grads = rx.rx_grads();
        let dy = rx.receive_backward(&rt, &g, Some(&mut rx_grads), true).expect("symbol gradient requested");
        let dx = fading_backward(&dy, &real);
        let mut tx_grads = a.state.transceiver.tx_grads();
        a.state.transceiver.transmit_backward(&tt, &dx, &mut tx_grads);
        if tx_grads.all_finite() && rx_grads.all_finite() {
            a.state.apply_tx(&tx_grads, lr);
            b.state.apply_rx(&rx_grads, lr);
        }
        Ok(NodeStep { loss, psnr, ssim, gan: None })
    }

    /// Max `|w_A - w_B|` over every transceiver and surrogate weight.
    pub fn weight_reciprocity_check(&self) -> f64 {
        let a = self.sides[0].flat_weights();
        let b = self.sides[1].flat_weights();
        assert_eq!(a.len(), b.len());
        a.iter().zip(&b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
    }

    /// One optimization step on `batch` (both nodes use the same images),
    /// emitting its records. Returns the loss watched by the divergence guard.
    pub fn train_step(&mut self, batch: &ImageBatch<T>, observer: &mut dyn Observer<T>) -> Result<f64> {
        let snr = self.next_snr();
        let lr = self.lr();
        let epoch = self.epoch + 1;
        let step = self.step;
        let outcome = self.step_inner(batch, snr);
        let outcome = match outcome {
            Err(Error::NumericFault { .. }) => None,
            other => Some(other?),
        };
        let loss = match &outcome {
            Some(records) => {
                let payloads = self.link.audit().forward_payload_count;
                let mut watched = Vec::new();
                for (mode, dir, r) in records {
                    if matches!(mode, StepMode::Stage1 | StepMode::Jscc) {
                        watched.push(r.loss);
                    }
                    let rec = |mode, loss, psnr, ssim| StepRecord {
                        epoch,
                        step,
                        mode,
                        direction: *dir,
                        loss,
                        psnr,
                        ssim,
                        snr_db: snr,
                        lr,
                        forward_payload_count: payloads,
                    };
                    observer.on_step(&rec(*mode, r.loss, Some(r.psnr), Some(r.ssim)))?;
                    if let Some(g) = r.gan {
                        observer.on_step(&rec(StepMode::GanGenerator, g.generator_loss, None, None))?;
                        observer.on_step(&rec(StepMode::GanDiscriminator, g.discriminator_loss, None, None))?;
                    }
                }
                metrics::mean(&watched)
            }
            None => f64::NAN,
        };
        self.step += 1;
        self.guard.observe(self.step, loss)?;
        Ok(loss)
    }

    fn step_inner(&mut self, batch: &ImageBatch<T>, snr: f64) -> Result<Vec<(StepMode, Direction, NodeStep)>> {
        Ok(match self.config.system_kind {
            SystemKind::Jscc => vec![(StepMode::Jscc, Direction::AToB, self.jscc_step(batch, snr)?)],
            SystemKind::Twsc | SystemKind::Gansc => {
                let s1 = self.stage1_step(batch, batch, snr)?;
                let s2 = self.stage2_both(batch, batch, snr)?;
                vec![
                    // the receiver at B decodes the A -> B link
                    (StepMode::Stage1, Direction::AToB, s1.at[1]),
                    (StepMode::Stage1, Direction::BToA, s1.at[0]),
                    (StepMode::Stage2, Direction::AToB, s2[0]),
                    (StepMode::Stage2, Direction::BToA, s2[1]),
                ]
            }
        })
    }

    /// Links evaluated for this system kind.
    pub fn directions(&self) -> Vec<Direction> {
        match self.config.system_kind {
            SystemKind::Jscc => vec![Direction::AToB],
            _ => vec![Direction::AToB, Direction::BToA],
        }
    }

    /// Quality of each link on the first `n` test images at `snr_db`.
    pub fn link_quality(&self, data: &Dataset, n: usize, snr_db: f64) -> Result<Vec<LinkQuality>> {
        let n = n.min(data.test.len());
        self.directions()
            .into_iter()
            .map(|d| {
                let q = metrics::evaluate_direction(self, d, &data.test, n, self.config.channel_kind, snr_db)?;
                Ok(LinkQuality { direction: d, mse: q.mse, psnr: q.mean_psnr(), ssim: q.mean_ssim() })
            })
            .collect()
    }

    /// One pass over the (possibly truncated) training set, followed by the
    /// per-epoch quality record.
    pub fn train_epoch(&mut self, data: &Dataset, observer: &mut dyn Observer<T>) -> Result<EpochRecord> {
        let train = if self.config.train_limit > 0 && self.config.train_limit < data.train.len() {
            Cow::Owned(data.train.truncated(self.config.train_limit))
        } else {
            Cow::Borrowed(&data.train)
        };
        let schedule = BatchSchedule::new(train.len(), self.config.batch_size, self.config.seed, self.epoch as u64);
        if schedule.is_empty() {
            return Err(Error::Validation { field: "batch_size", message: "larger than the training set".into() });
        }
        let mut losses = Vec::with_capacity(schedule.len());
        for b in 0..schedule.len() {
            let batch = schedule.batch::<T>(b, &train);
            losses.push(self.train_step(&batch, observer)?);
        }
        self.epoch += 1;
        let finite: Vec<f64> = losses.into_iter().filter(|l| l.is_finite()).collect();
        let links = self.link_quality(data, self.config.epoch_eval_images, self.config.epoch_eval_snr_db)?;
        let record = EpochRecord {
            epoch: self.epoch,
            steps: self.step,
            train_loss: metrics::mean(&finite),
            eval_snr_db: self.config.epoch_eval_snr_db,
            links,
            audits: self.link.audit().clone(),
        };
        for l in &record.links {
            observer.on_step(&StepRecord {
                epoch: self.epoch,
                step: self.step,
                mode: StepMode::Eval,
                direction: l.direction,
                loss: l.mse,
                psnr: Some(l.psnr),
                ssim: Some(l.ssim),
                snr_db: record.eval_snr_db,
                lr: self.lr(),
                forward_payload_count: record.audits.forward_payload_count,
            })?;
        }
        self.history.push(record.clone());
        observer.on_epoch(self, &record)?;
        Ok(record)
    }

    /// Train until `config.epochs` epochs are complete.
    pub fn train(&mut self, data: &Dataset, observer: &mut dyn Observer<T>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch(data, observer)?;
        }
        Ok(())
    }
}

/// Build a run for `cfg` and train it to completion.
pub fn train_system<T: Scalar>(cfg: ExperimentConfig, data: &Dataset, observer: &mut dyn Observer<T>) -> Result<TrainRun<T>> {
    let mut run = TrainRun::new(cfg)?;
    run.train(data, observer)?;
    Ok(run)
}

#[cfg(test)]
mod tests;
