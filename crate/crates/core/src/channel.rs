//! Physical channels and the audited link between the two nodes.
//!
//! `y = h x + n` with one complex `h` per image (`h = 1` for AWGN) and
//! circular Gaussian `n` of variance `10^(-snr/10)` per complex symbol,
//! measured against unit transmit power.

use serde::{Deserialize, Serialize};

use crate::config::ChannelKind;
use crate::error::{Error, Result};
use crate::rng::{normal, stream, Purpose, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transceiver::{NodeId, SymbolBlock};

/// Allowed deviation from unit average power for blocks entering the link.
pub const POWER_TOLERANCE: f64 = 1e-6;

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Minimal complex scalar for fading coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ONE: Complex = Complex { re: 1.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn conj(self) -> Self {
        Complex { re: self.re, im: -self.im }
    }

    pub fn mul(self, re: f64, im: f64) -> (f64, f64) {
        (self.re * re - self.im * im, self.re * im + self.im * re)
    }
}

/// One draw of the channel for a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// One coefficient per batch item.
    pub fading: Vec<Complex>,
    pub noise_var: f64,
    pub snr_db: f64,
}

impl ChannelRealization {
    pub fn awgn(batch: usize, snr_db: f64) -> Self {
        ChannelRealization { fading: vec![Complex::ONE; batch], noise_var: noise_variance(snr_db), snr_db }
    }

    pub fn batch(&self) -> usize {
        self.fading.len()
    }
}

fn add_noise<T: Scalar>(y: &mut [T], noise_var: f64, rng: &mut Stream) {
    if noise_var == 0.0 {
        return;
    }
    let sd = (noise_var / 2.0).sqrt();
    for v in y {
        *v = T::of(v.as_f64() + sd * normal(rng));
    }
}

/// `y = x + n`.
pub fn apply_awgn<T: Scalar>(x: &SymbolBlock<T>, snr_db: f64, rng: &mut Stream) -> SymbolBlock<T> {
    let mut y = SymbolBlock::new(x.tensor().clone()).expect("valid block");
    add_noise(y.tensor_mut().data_mut(), noise_variance(snr_db), rng);
    y
}

/// A single fading draw shared by both directions.
pub fn sample_reciprocal_rayleigh(
    rng: &mut Stream,
    batch: usize,
    snr_db: f64,
) -> (ChannelRealization, ChannelRealization) {
    assert!(batch >= 1, "empty batch");
    let fading = (0..batch).map(|_| rayleigh_coefficient(rng)).collect();
    let r = ChannelRealization { fading, noise_var: noise_variance(snr_db), snr_db };
    (r.clone(), r)
}

/// `y[b,i] = h[b] x[b,i] + n[b,i]`.
pub fn apply_fading<T: Scalar>(
    x: &SymbolBlock<T>,
    real: &ChannelRealization,
    rng: &mut Stream,
) -> Result<SymbolBlock<T>> {
    if real.batch() != x.batch() {
        return Err(Error::Contract(format!(
            "realization covers {} items, block has {}",
            real.batch(),
            x.batch()
        )));
    }
    let mut y = SymbolBlock::zeros(x.batch(), x.symbols_per_item());
    for (b, h) in real.fading.iter().enumerate() {
        fade_item(x.tensor().item(b), y.tensor_mut().item_mut(b), *h);
    }
    add_noise(y.tensor_mut().data_mut(), real.noise_var, rng);
    Ok(y)
}

fn fade_item<T: Scalar>(src: &[T], dst: &mut [T], h: Complex) {
    for (s, d) in src.chunks_exact(2).zip(dst.chunks_exact_mut(2)) {
        let (re, im) = h.mul(s[0].as_f64(), s[1].as_f64());
        d[0] = T::of(re);
        d[1] = T::of(im);
    }
}

/// Pass one item's interleaved symbols through `h` plus noise drawn from
/// its own stream.
pub fn apply_item<T: Scalar>(src: &[T], dst: &mut [T], h: Complex, noise_var: f64, rng: &mut Stream) {
    fade_item(src, dst, h);
    add_noise(dst, noise_var, rng);
}

/// One circularly-symmetric `CN(0, 1)` draw.
pub fn rayleigh_coefficient(rng: &mut Stream) -> Complex {
    let sd = 0.5f64.sqrt();
    Complex::new(sd * normal(rng), sd * normal(rng))
}

/// Gradient of `apply_fading` w.r.t. its input: `conj(h) * dL/dy`.
/// Used only by the one-way end-to-end baseline, never by the link.
pub fn fading_backward<T: Scalar>(grad_y: &Tensor<T>, real: &ChannelRealization) -> Tensor<T> {
    let mut out = grad_y.clone();
    for (b, h) in real.fading.iter().enumerate() {
        let hc = h.conj();
        for g in out.item_mut(b).chunks_exact_mut(2) {
            let (re, im) = hc.mul(g[0].as_f64(), g[1].as_f64());
            g[0] = T::of(re);
            g[1] = T::of(im);
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkAudit {
    pub forward_payload_count: u64,
    pub backward_gradient_count: u64,
    pub bytes_forward: u64,
}

/// Symbols delivered over the link. Carries no reference to the sender's
/// computation, so nothing downstream can differentiate through it.
#[derive(Clone, Debug, PartialEq)]
pub struct Received<T> {
    pub from: NodeId,
    pub to: NodeId,
    pub symbols: SymbolBlock<T>,
}

/// The physical medium between A and B with one noise stream per direction.
///
/// Both direction streams are seeded identically, so identical nodes
/// exchanging identical payloads receive identical signals.
#[derive(Clone, Debug)]
pub struct Link {
    kind: ChannelKind,
    noise: [Stream; 2],
    fading: Stream,
    audit: LinkAudit,
}

impl Link {
    pub fn new(kind: ChannelKind, seed: u64, noise: Purpose, fading: Purpose) -> Self {
        Link {
            kind,
            noise: [stream(seed, noise, 0), stream(seed, noise, 0)],
            fading: stream(seed, fading, 0),
            audit: LinkAudit::default(),
        }
    }

    pub fn training(kind: ChannelKind, seed: u64) -> Self {
        Link::new(kind, seed, Purpose::ChannelNoise, Purpose::Fading)
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn audit(&self) -> &LinkAudit {
        &self.audit
    }

    /// Word positions of the A, B noise streams and the fading stream.
    pub fn stream_positions(&self) -> [u128; 3] {
        [self.noise[0].get_word_pos(), self.noise[1].get_word_pos(), self.fading.get_word_pos()]
    }

    /// Resume a link from saved stream positions and audit totals.
    pub fn restore(&mut self, positions: [u128; 3], audit: LinkAudit) {
        self.noise[0].set_word_pos(positions[0]);
        self.noise[1].set_word_pos(positions[1]);
        self.fading.set_word_pos(positions[2]);
        self.audit = audit;
    }

    /// The pair `(H_AB, H_BA)` for the next batch.
    pub fn realize(&mut self, batch: usize, snr_db: f64) -> (ChannelRealization, ChannelRealization) {
        match self.kind {
            ChannelKind::Awgn => {
                let r = ChannelRealization::awgn(batch, snr_db);
                (r.clone(), r)
            }
            ChannelKind::Rayleigh => sample_reciprocal_rayleigh(&mut self.fading, batch, snr_db),
        }
    }

    pub fn transmit<T: Scalar>(
        &mut self,
        src: NodeId,
        dst: NodeId,
        x: &SymbolBlock<T>,
        real: &ChannelRealization,
    ) -> Result<Received<T>> {
        if src == dst {
            return Err(Error::Contract(format!("node {src} cannot transmit to itself")));
        }
        let p = x.power();
        if (p - 1.0).abs() > POWER_TOLERANCE {
            return Err(Error::Contract(format!("link payload has average power {p}, expected 1")));
        }
        let rng = &mut self.noise[src.index()];
        let symbols = match self.kind {
            ChannelKind::Awgn if real.fading.iter().all(|h| *h == Complex::ONE) => {
                if real.batch() != x.batch() {
                    return Err(Error::Contract("realization does not match the batch".into()));
                }
                let mut y = apply_awgn(x, real.snr_db, rng);
                y.scale = None;
                y
            }
            _ => apply_fading(x, real, rng)?,
        };
        self.audit.forward_payload_count += 1;
        self.audit.bytes_forward += (x.tensor().len() * T::BYTES) as u64;
        Ok(Received { from: src, to: dst, symbols })
    }

    /// The link has no reverse path for gradients; any attempt is a fault.
    pub fn backward<T>(&mut self, received: &Received<T>, _grad: &Tensor<T>) -> Result<()> {
        Err(Error::FeedbackViolation { link: format!("{}->{}", received.from, received.to) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_block(b: usize, n: usize, salt: u64) -> SymbolBlock<f64> {
        let mut rng = stream(3, Purpose::Probe, salt);
        let x = SymbolBlock::new(Tensor::from_fn(&[b, n, 2], |_| normal(&mut rng))).unwrap();
        crate::transceiver::normalize_power(&x).unwrap()
    }

    #[test]
    fn noiseless_limit_is_identity() {
        let x = unit_block(2, 8, 0);
        let mut rng = stream(0, Purpose::ChannelNoise, 0);
        let y = apply_awgn(&x, f64::INFINITY, &mut rng);
        assert_eq!(y.tensor(), x.tensor());
        assert_eq!(noise_variance(10.0), 0.1);
    }

    #[test]
    fn snr_calibration() {
        for snr in [0.0, 5.0, 10.0, 15.0, 20.0] {
            let x = unit_block(1, 100_000, 1);
            let mut rng = stream(1, Purpose::ChannelNoise, snr as u64);
            let y = apply_awgn(&x, snr, &mut rng);
            let var: f64 = y
                .tensor()
                .data()
                .iter()
                .zip(x.tensor().data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / 100_000.0;
            let target = noise_variance(snr);
            assert!((var / target - 1.0).abs() < 0.01, "snr {snr}: {var} vs {target}");
        }
    }

    #[test]
    fn awgn_is_deterministic_per_stream() {
        let x = unit_block(2, 16, 2);
        let a = apply_awgn(&x, 5.0, &mut stream(9, Purpose::ChannelNoise, 0));
        let b = apply_awgn(&x, 5.0, &mut stream(9, Purpose::ChannelNoise, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn rayleigh_is_reciprocal_with_unit_gain() {
        let mut rng = stream(4, Purpose::Fading, 0);
        let (ab, ba) = sample_reciprocal_rayleigh(&mut rng, 100_000, 10.0);
        assert_eq!(ab, ba);
        let gains: Vec<f64> = ab.fading.iter().map(|h| h.norm_sqr()).collect();
        let mean = gains.iter().sum::<f64>() / gains.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn rayleigh_gain_is_exponential() {
        let mut rng = stream(5, Purpose::Fading, 0);
        let (ab, _) = sample_reciprocal_rayleigh(&mut rng, 100_000, 10.0);
        let mut g: Vec<f64> = ab.fading.iter().map(|h| h.norm_sqr()).collect();
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = g.len() as f64;
        let ks = g
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let cdf = 1.0 - (-t).exp();
                (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn fading_examples() {
        let mut x = SymbolBlock::<f64>::zeros(1, 1);
        x.set(0, 0, (1.0, 0.0));
        let real = ChannelRealization { fading: vec![Complex::new(0.0, 2.0)], noise_var: 0.0, snr_db: f64::INFINITY };
        let mut rng = stream(0, Purpose::ChannelNoise, 0);
        assert_eq!(apply_fading(&x, &real, &mut rng).unwrap().get(0, 0), (0.0, 2.0));
        let id = ChannelRealization::awgn(1, f64::INFINITY);
        assert_eq!(apply_fading(&x, &id, &mut rng).unwrap(), SymbolBlock::new(x.tensor().clone()).unwrap());
        let two = ChannelRealization::awgn(2, 10.0);
        assert!(matches!(apply_fading(&x, &two, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn fading_matches_scalar_loop() {
        let x = unit_block(3, 10, 3);
        let (real, _) = sample_reciprocal_rayleigh(&mut stream(6, Purpose::Fading, 0), 3, 7.0);
        let y = apply_fading(&x, &real, &mut stream(6, Purpose::ChannelNoise, 0)).unwrap();
        // replay the noise stream in the same order
        let mut rng = stream(6, Purpose::ChannelNoise, 0);
        let sd = (real.noise_var / 2.0).sqrt();
        for b in 0..3 {
            let h = real.fading[b];
            for i in 0..10 {
                let (xr, xi) = x.get(b, i);
                let yr = h.re * xr - h.im * xi;
                let yi = h.re * xi + h.im * xr;
                let nr = sd * normal(&mut rng);
                let ni = sd * normal(&mut rng);
                let (gr, gi) = y.get(b, i);
                assert!((gr - (yr + nr)).abs() < 1e-7 && (gi - (yi + ni)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn fading_backward_matches_finite_differences() {
        let x = unit_block(2, 3, 4);
        let (real, _) = sample_reciprocal_rayleigh(&mut stream(7, Purpose::Fading, 0), 2, f64::INFINITY);
        let probe = unit_block(2, 3, 5).into_tensor();
        let loss = |x: &SymbolBlock<f64>| -> f64 {
            let y = apply_fading(x, &real, &mut stream(0, Purpose::Probe, 0)).unwrap();
            y.tensor().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let g = fading_backward(&probe, &real);
        for i in 0..x.tensor().len() {
            let mut up = x.clone();
            up.tensor_mut().data_mut()[i] += 1e-6;
            let mut down = x.clone();
            down.tensor_mut().data_mut()[i] -= 1e-6;
            let numeric = (loss(&up) - loss(&down)) / 2e-6;
            assert!((g.data()[i] - numeric).abs() < 1e-8);
        }
    }

    #[test]
    fn link_audits_forward_traffic_and_refuses_gradients() {
        let mut link = Link::training(ChannelKind::Rayleigh, 0);
        let x = unit_block(2, 4, 6);
        let (ab, ba) = link.realize(2, 10.0);
        let r = link.transmit(NodeId::A, NodeId::B, &x, &ab).unwrap();
        link.transmit(NodeId::B, NodeId::A, &x, &ba).unwrap();
        assert_eq!(link.audit().forward_payload_count, 2);
        assert_eq!(link.audit().bytes_forward, 2 * 16 * 8);
        let err = link.backward(&r, r.symbols.tensor()).unwrap_err();
        assert!(matches!(err, Error::FeedbackViolation { .. }));
        assert_eq!(link.audit().backward_gradient_count, 0);
        assert!(r.symbols.scale.is_none());
    }

    #[test]
    fn link_rejects_unnormalized_payloads_and_self_loops() {
        let mut link = Link::training(ChannelKind::Awgn, 0);
        let (ab, _) = link.realize(1, 10.0);
        let x = unit_block(1, 4, 7);
        assert!(link.transmit(NodeId::A, NodeId::A, &x, &ab).is_err());
        let loud = SymbolBlock::new(x.tensor().map(|v| v * 2.0)).unwrap();
        assert!(link.transmit(NodeId::A, NodeId::B, &loud, &ab).is_err());
        assert_eq!(link.audit().forward_payload_count, 0);
    }

    #[test]
    fn directions_are_order_independent() {
        let x = unit_block(2, 8, 8);
        let y = unit_block(2, 8, 9);
        let mut l1 = Link::training(ChannelKind::Rayleigh, 3);
        let mut l2 = Link::training(ChannelKind::Rayleigh, 3);
        let (ab, ba) = l1.realize(2, 5.0);
        l2.realize(2, 5.0);
        let r1 = l1.transmit(NodeId::A, NodeId::B, &x, &ab).unwrap();
        let s1 = l1.transmit(NodeId::B, NodeId::A, &y, &ba).unwrap();
        let s2 = l2.transmit(NodeId::B, NodeId::A, &y, &ba).unwrap();
        let r2 = l2.transmit(NodeId::A, NodeId::B, &x, &ab).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
    }
}
