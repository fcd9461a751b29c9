use super::*;
use crate::data::ImageSet;
use crate::rng::normal;
use crate::sp_cgan::SurrogateArch;
use proptest::prelude::*;
use rand::Rng;

/// Shrunken transceiver on 16x16 images: 4 symbols per image.
fn small_arch() -> TransceiverArch {
    TransceiverArch { image_size: 16, ..TransceiverArch::shrunken() }
}

fn small_config(kind: SystemKind) -> ExperimentConfig {
    ExperimentConfig {
        system_kind: kind,
        batch_size: 4,
        epochs: 2,
        symbol_count: 4,
        train_snr_range_db: [5.0, 15.0],
        epoch_eval_images: 8,
        test_limit: 8,
        ..ExperimentConfig::default()
    }
}

fn small_run(kind: SystemKind) -> TrainRun<f64> {
    let cfg = small_config(kind);
    TrainRun::with_arch(cfg, small_arch(), SurrogateArch::tiny(4, 2, true)).unwrap()
}

fn images(n: usize, salt: u64) -> ImageSet {
    let mut rng = stream(77, Purpose::Probe, salt);
    let pixels = (0..n * 256).map(|_| rng.random::<u8>()).collect();
    ImageSet::new(pixels, n, 16, 16).unwrap()
}

fn dataset() -> Dataset {
    Dataset { train: images(16, 0), test: images(8, 1), checksum: String::new() }
}

fn receiver_weights(side: &NodeSide<f64>) -> Vec<f64> {
    let [_, _, cd, sd] = side.state.transceiver.networks();
    cd.flat_params().into_iter().chain(sd.flat_params()).collect()
}

fn transmitter_weights(side: &NodeSide<f64>) -> Vec<f64> {
    let [se, ce, _, _] = side.state.transceiver.networks();
    se.flat_params().into_iter().chain(ce.flat_params()).collect()
}

fn surrogate_weights(side: &NodeSide<f64>) -> Vec<f64> {
    let s = side.surrogate.as_ref().unwrap();
    s.generator.flat_params().into_iter().chain(s.discriminator.flat_params()).collect()
}

#[test]
fn lr_schedule_examples() {
    assert_eq!(lr_at(1e-3, 1e-4, 0), 1e-3);
    assert!((lr_at(1e-3, 1e-4, 10_000) - 5e-4).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for t in [0, 1, 10, 1_000, 1_000_000, u32::MAX as u64] {
        let lr = lr_at(1e-3, 1e-4, t);
        assert!(lr < prev && lr > 0.0);
        prev = lr;
    }
    assert!(lr_at(1e-3, 1e-4, u64::MAX) < 1e-18);
}

fn batch_from(values: Vec<f64>, b: usize) -> ImageBatch<f64> {
    ImageBatch::new(Tensor::from_vec(&[b, 1, 3, 3], values)).unwrap()
}

#[test]
fn reciprocal_mse_examples() {
    let m = batch_from(vec![0.5; 18], 2);
    assert_eq!(reciprocal_mse_objective(&m, &m, &m, &m).unwrap(), 0.0);
    let shifted = batch_from(vec![0.6; 18], 2);
    let v = reciprocal_mse_objective(&shifted, &m, &shifted, &m).unwrap();
    assert!((v - 0.01).abs() < 1e-12);
    let odd = batch_from(vec![0.5; 9], 1);
    assert!(reciprocal_mse_objective(&odd, &m, &m, &m).is_err());
}

proptest! {
    #[test]
    fn reciprocal_mse_matches_pixel_loop(seed in 0u64..500, b in 1usize..4) {
        let mut rng = stream(seed, Purpose::Probe, 0);
        let mut draw = || batch_from((0..b * 9).map(|_| rng.random::<f64>()).collect(), b);
        let (ra, mb, rb, ma) = (draw(), draw(), draw(), draw());
        let got = reciprocal_mse_objective(&ra, &mb, &rb, &ma).unwrap();
        let link = |x: &ImageBatch<f64>, y: &ImageBatch<f64>| {
            let mut s = 0.0;
            for i in 0..b {
                for r in 0..3 {
                    for c in 0..3 {
                        let k = i * 9 + r * 3 + c;
                        s += (x.tensor().data()[k] - y.tensor().data()[k]).powi(2);
                    }
                }
            }
            s / (b * 9) as f64
        };
        let want = 0.5 * (link(&ra, &mb) + link(&rb, &ma));
        prop_assert!((got - want).abs() < 1e-7);
    }
}

#[test]
fn stage1_leaves_transmitters_untouched() {
    let mut run = small_run(SystemKind::Twsc);
    let (ba, bb) = (images(4, 3).range(0, 4), images(4, 4).range(0, 4));
    let tx = [transmitter_weights(&run.sides[0]), transmitter_weights(&run.sides[1])];
    let rx = receiver_weights(&run.sides[0]);
    let sur = surrogate_weights(&run.sides[0]);
    run.stage1_step(&ba, &bb, 10.0).unwrap();
    assert_eq!(tx[0], transmitter_weights(&run.sides[0]));
    assert_eq!(tx[1], transmitter_weights(&run.sides[1]));
    assert_ne!(rx, receiver_weights(&run.sides[0]));
    assert_ne!(sur, surrogate_weights(&run.sides[0]));
    let audit = run.link.audit();
    assert_eq!(audit.forward_payload_count, 2);
    assert_eq!(audit.backward_gradient_count, 0);
}

#[test]
fn stage1_twin_runs_are_bit_identical() {
    let (ba, bb) = (images(4, 3).range(0, 4), images(4, 4).range(0, 4));
    let go = || {
        let mut run = small_run(SystemKind::Twsc);
        let out = run.stage1_step(&ba, &bb, 7.5).unwrap();
        (out, receiver_weights(&run.sides[0]), receiver_weights(&run.sides[1]))
    };
    let (o1, a1, b1) = go();
    let (o2, a2, b2) = go();
    assert_eq!(o1, o2);
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
}

#[test]
fn stage1_rejected_for_one_way_baseline() {
    let mut run = small_run(SystemKind::Jscc);
    let b = images(4, 3).range(0, 4);
    assert!(matches!(run.stage1_step(&b, &b, 10.0), Err(Error::Contract(_))));
}

#[test]
fn stage2_is_local_and_updates_only_the_transmitter() {
    let mut run = small_run(SystemKind::Twsc);
    let b = images(4, 5).range(0, 4);
    run.stage1_step(&b, &b, 10.0).unwrap();
    let before = run.link.audit().clone();
    let rx = receiver_weights(&run.sides[0]);
    let sur = surrogate_weights(&run.sides[0]);
    let tx = transmitter_weights(&run.sides[0]);
    let other = run.sides[1].flat_weights();
    run.stage2_step(&b, NodeId::A, 10.0).unwrap();
    assert_eq!(*run.link.audit(), before);
    assert_eq!(rx, receiver_weights(&run.sides[0]));
    assert_eq!(sur, surrogate_weights(&run.sides[0]));
    assert_ne!(tx, transmitter_weights(&run.sides[0]));
    assert_eq!(other, run.sides[1].flat_weights());
}

#[test]
fn stage2_loss_matches_manual_composition() {
    let mut run = small_run(SystemKind::Twsc);
    let b = images(2, 6).range(0, 2);
    run.stage1_step(&b, &b, 10.0).unwrap();
    let side = run.sides[1].clone();
    let got = run.stage2_step(&b, NodeId::B, 12.0).unwrap();

    let tx = &side.state.transceiver;
    let s = side.surrogate.as_ref().unwrap();
    let mut noise = side.generator_noise.clone();
    let c = tx.semantic_encode(&b).unwrap();
    let x = tx.channel_encode(&c).unwrap();
    let cond = ConditionInput::sample(x, 12.0, s.arch.noise_dim, &mut noise);
    let y = s.generate(&cond).unwrap();
    let recon = tx.semantic_decode(&tx.channel_decode(&y).unwrap()).unwrap();
    let mut se = 0.0;
    for (p, q) in recon.tensor().data().iter().zip(b.tensor().data()) {
        se += (p - q) * (p - q);
    }
    let want = se / (2 * 256) as f64;
    assert!((got.loss - want).abs() < 1e-12, "{} vs {}", got.loss, want);
}

#[test]
fn stage2_without_surrogate_fails() {
    let mut run = small_run(SystemKind::Jscc);
    let b = images(4, 5).range(0, 4);
    assert!(run.stage2_step(&b, NodeId::A, 10.0).is_err());
}

#[test]
fn reciprocity_holds_bitwise_in_lockstep() {
    let mut run = small_run(SystemKind::Twsc);
    assert_eq!(run.weight_reciprocity_check(), 0.0);
    let data = images(16, 7);
    for epoch in 0..2 {
        let sched = BatchSchedule::new(16, 4, 0, epoch);
        for batch in sched.iter::<f64>(&data) {
            run.train_step(&batch, &mut ()).unwrap();
            assert_eq!(run.weight_reciprocity_check(), 0.0);
        }
    }
    assert_eq!(run.step, 8);
    assert_eq!(run.link.audit().forward_payload_count, 16);
}

#[test]
fn reciprocity_breaks_with_perturbed_data_order() {
    let mut run = small_run(SystemKind::Twsc);
    let data = images(16, 7);
    let a = BatchSchedule::new(16, 4, 0, 0);
    let b = BatchSchedule::new(16, 4, 1, 0);
    for i in 0..a.len() {
        let (ba, bb) = (a.batch::<f64>(i, &data), b.batch::<f64>(i, &data));
        run.stage1_step(&ba, &bb, 10.0).unwrap();
        run.stage2_both(&ba, &bb, 10.0).unwrap();
    }
    assert!(run.weight_reciprocity_check() > 0.0);
}

#[test]
fn threaded_matches_deterministic() {
    let data = images(16, 8);
    let go = |execution| {
        let cfg = ExperimentConfig { execution, ..small_config(SystemKind::Twsc) };
        let mut run: TrainRun<f64> =
            TrainRun::with_arch(cfg, small_arch(), SurrogateArch::tiny(4, 2, true)).unwrap();
        for batch in BatchSchedule::new(16, 4, 0, 0).iter::<f64>(&data) {
            run.train_step(&batch, &mut ()).unwrap();
        }
        run
    };
    let det = go(Execution::Deterministic);
    let thr = go(Execution::Threaded);
    assert!(thr.weight_reciprocity_check() <= 1e-5);
    let diff = det.sides[0]
        .flat_weights()
        .iter()
        .zip(thr.sides[0].flat_weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-5, "{diff}");
}

#[test]
fn unconditioned_surrogate_gives_no_transmitter_gradient() {
    let mut run = small_run(SystemKind::Gansc);
    assert!(!run.sides[0].surrogate.as_ref().unwrap().conditioned());
    let b = images(4, 9).range(0, 4);
    run.stage1_step(&b, &b, 10.0).unwrap();
    let tx = transmitter_weights(&run.sides[0]);
    run.stage2_step(&b, NodeId::A, 10.0).unwrap();
    assert_eq!(tx, transmitter_weights(&run.sides[0]));
}

#[test]
fn jscc_step_is_one_way_and_unaudited() {
    let mut run = small_run(SystemKind::Jscc);
    assert!(run.sides.iter().all(|s| s.surrogate.is_none()));
    let b = images(4, 10).range(0, 4);
    let (tx_a, rx_a) = (transmitter_weights(&run.sides[0]), receiver_weights(&run.sides[0]));
    let (tx_b, rx_b) = (transmitter_weights(&run.sides[1]), receiver_weights(&run.sides[1]));
    let out = run.jscc_step(&b, 10.0).unwrap();
    assert!(out.loss.is_finite());
    assert_ne!(tx_a, transmitter_weights(&run.sides[0]));
    assert_ne!(rx_b, receiver_weights(&run.sides[1]));
    assert_eq!(rx_a, receiver_weights(&run.sides[0]));
    assert_eq!(tx_b, transmitter_weights(&run.sides[1]));
    assert_eq!(*run.link.audit(), LinkAudit::default());
    assert_eq!(run.directions(), vec![Direction::AToB]);
}

#[test]
fn divergence_guard_trips_after_patience() {
    let mut g = DivergenceGuard::default();
    g.observe(1, 1.0).unwrap();
    for s in 0..DIVERGENCE_PATIENCE - 1 {
        g.observe(2 + s as u64, f64::NAN).unwrap();
    }
    g.observe(100, 0.5).unwrap();
    assert_eq!((g.consecutive, g.best), (0, 0.5));
    for s in 0..DIVERGENCE_PATIENCE - 1 {
        g.observe(200 + s as u64, 5.1).unwrap();
    }
    assert!(matches!(g.observe(999, f64::INFINITY), Err(Error::Divergence { step: 999, consecutive: 50 })));
}

#[test]
fn guard_accepts_moderate_regression() {
    let mut g = DivergenceGuard::default();
    g.observe(1, 0.1).unwrap();
    for s in 0..200 {
        g.observe(2 + s, 0.99).unwrap();
    }
    assert_eq!(g.consecutive, 0);
}

#[derive(Default)]
struct Collect {
    steps: Vec<StepRecord>,
    epochs: Vec<EpochRecord>,
}

impl Observer<f64> for Collect {
    fn on_step(&mut self, r: &StepRecord) -> Result<()> {
        self.steps.push(r.clone());
        Ok(())
    }

    fn on_epoch(&mut self, run: &TrainRun<f64>, r: &EpochRecord) -> Result<()> {
        assert_eq!(run.epoch, r.epoch);
        self.epochs.push(r.clone());
        Ok(())
    }
}

#[test]
fn train_emits_step_and_epoch_records() {
    let mut run = small_run(SystemKind::Twsc);
    let mut obs = Collect::default();
    run.train(&dataset(), &mut obs).unwrap();
    assert_eq!(run.epoch, 2);
    assert_eq!(run.step, 8);
    assert_eq!(obs.epochs.len(), 2);
    assert_eq!(run.history, obs.epochs);
    // per step: 2 stage-1, 2 gan_g, 2 gan_d, 2 stage-2; per epoch: 2 eval
    assert_eq!(obs.steps.len(), 8 * 8 + 2 * 2);
    let count = |m| obs.steps.iter().filter(|r| r.mode == m).count();
    assert_eq!(count(StepMode::Stage1), 16);
    assert_eq!(count(StepMode::Stage2), 16);
    assert_eq!(count(StepMode::GanGenerator), 16);
    assert_eq!(count(StepMode::Eval), 4);
    let last = obs.epochs.last().unwrap();
    assert_eq!(last.audits.forward_payload_count, 16);
    assert_eq!(last.audits.backward_gradient_count, 0);
    assert!(last.links.iter().all(|l| l.mse.is_finite() && l.ssim <= 1.0));
    for r in &obs.steps {
        assert_eq!(r.csv_line().split(',').count(), METRICS_HEADER.split(',').count());
    }
}

#[test]
fn train_limit_truncates_epoch() {
    let cfg = ExperimentConfig { train_limit: 8, epochs: 1, ..small_config(SystemKind::Jscc) };
    let mut run: TrainRun<f64> = TrainRun::with_arch(cfg, small_arch(), SurrogateArch::tiny(4, 2, true)).unwrap();
    run.train(&dataset(), &mut ()).unwrap();
    assert_eq!(run.step, 2);
}

#[test]
fn snr_schedule_stays_in_range() {
    let mut run = small_run(SystemKind::Twsc);
    for _ in 0..200 {
        let s = run.next_snr();
        assert!((5.0..15.0).contains(&s));
    }
    run.config.train_snr_range_db = [3.0, 3.0];
    assert_eq!(run.next_snr(), 3.0);
}

#[test]
fn symbol_count_must_match_architecture() {
    let cfg = ExperimentConfig { symbol_count: 5, ..small_config(SystemKind::Twsc) };
    assert!(TrainRun::<f64>::with_arch(cfg, small_arch(), SurrogateArch::tiny(5, 2, true)).is_err());
}

#[test]
fn mse_of_noise_matches_variance() {
    let mut rng = stream(3, Purpose::Probe, 0);
    let a = Tensor::from_fn(&[10_000], |_| normal(&mut rng));
    let z = Tensor::zeros(&[10_000]);
    assert!((mse(&a, &z) - 1.0).abs() < 0.05);
}
