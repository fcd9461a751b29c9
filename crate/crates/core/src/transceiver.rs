//! Per-node transceiver: semantic encoder -> channel encoder -> (channel) ->
//! channel decoder -> semantic decoder.
//!
//! The channel encoder's output channels are paired `(2k, 2k+1)` into
//! `(re, im)` of one complex symbol per spatial position and pair, then the
//! whole block is scaled to unit average power.

use serde::{Deserialize, Serialize};

use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Conv2d, ConvTranspose2d, Grads, Layer, Sequential, Trace};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Blocks whose average power falls below this cannot be normalized.
pub const MIN_BLOCK_POWER: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeId {
    A,
    B,
}

impl NodeId {
    pub fn peer(self) -> NodeId {
        match self {
            NodeId::A => NodeId::B,
            NodeId::B => NodeId::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeId::A => "A",
            NodeId::B => "B",
        }
    }

    pub fn index(self) -> usize {
        match self {
            NodeId::A => 0,
            NodeId::B => 1,
        }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Layer table of the four networks. Decoder strides mirror the encoders and
/// their output padding is chosen so every upsampling step lands exactly on
/// the matching encoder resolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransceiverArch {
    pub image_channels: usize,
    pub image_size: usize,
    pub kernel: usize,
    pub semantic_filters: Vec<usize>,
    pub semantic_strides: Vec<usize>,
    pub channel_filters: Vec<usize>,
    pub channel_strides: Vec<usize>,
    pub channel_decoder_filters: Vec<usize>,
    pub semantic_decoder_filters: Vec<usize>,
}

impl TransceiverArch {
    /// 28x28x1 images -> 7x7x16 semantic features -> 4x4x32 = 256 complex symbols.
    pub fn mnist() -> Self {
        TransceiverArch {
            image_channels: 1,
            image_size: 28,
            kernel: 3,
            semantic_filters: vec![4, 8, 8, 16, 16],
            semantic_strides: vec![1, 2, 1, 2, 1],
            channel_filters: vec![16, 16, 32, 32],
            channel_strides: vec![1, 1, 2, 1],
            channel_decoder_filters: vec![32, 32, 16, 16],
            semantic_decoder_filters: vec![8, 8, 4, 4, 1],
        }
    }

    /// Two filters per layer on 8x8 images; for gradient checks.
    pub fn shrunken() -> Self {
        TransceiverArch {
            image_channels: 1,
            image_size: 8,
            kernel: 3,
            semantic_filters: vec![2; 5],
            semantic_strides: vec![1, 2, 1, 2, 1],
            channel_filters: vec![2; 4],
            channel_strides: vec![1, 1, 2, 1],
            channel_decoder_filters: vec![2; 4],
            semantic_decoder_filters: vec![2, 2, 2, 2, 1],
        }
    }

    fn conv_out(&self, n: usize, stride: usize) -> usize {
        (n + 2 * (self.kernel / 2) - self.kernel) / stride + 1
    }

    /// Spatial size entering each layer of a strided stack, plus the final size.
    fn sizes(&self, start: usize, strides: &[usize]) -> Vec<usize> {
        let mut sizes = vec![start];
        for &s in strides {
            sizes.push(self.conv_out(*sizes.last().expect("non-empty"), s));
        }
        sizes
    }

    pub fn feature_size(&self) -> usize {
        *self.sizes(self.image_size, &self.semantic_strides).last().expect("non-empty")
    }

    pub fn feature_channels(&self) -> usize {
        *self.semantic_filters.last().expect("semantic encoder has layers")
    }

    pub fn code_size(&self) -> usize {
        *self.sizes(self.feature_size(), &self.channel_strides).last().expect("non-empty")
    }

    pub fn code_channels(&self) -> usize {
        *self.channel_filters.last().expect("channel encoder has layers")
    }

    /// Complex symbols per image.
    pub fn symbol_count(&self) -> usize {
        self.code_size() * self.code_size() * self.code_channels() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.semantic_filters.len() != self.semantic_strides.len()
            || self.channel_filters.len() != self.channel_strides.len()
        {
            return bad("filter and stride lists differ in length".into());
        }
        if self.channel_decoder_filters.len() != self.channel_strides.len()
            || self.semantic_decoder_filters.len() != self.semantic_strides.len()
        {
            return bad("decoders must mirror the encoder depth".into());
        }
        if self.code_channels() % 2 != 0 {
            return bad(format!("channel encoder output has {} channels; symbols need pairs", self.code_channels()));
        }
        if *self.semantic_decoder_filters.last().expect("non-empty") != self.image_channels {
            return bad("semantic decoder must end with the image channel count".into());
        }
        if *self.channel_decoder_filters.last().expect("non-empty") != self.feature_channels() {
            return bad("channel decoder must reproduce the semantic feature channels".into());
        }
        Ok(())
    }
}

fn build_encoder<T: Scalar>(
    name: &str,
    input: usize,
    filters: &[usize],
    strides: &[usize],
    kernel: usize,
    rng: &mut crate::rng::Stream,
) -> Sequential<T> {
    let mut layers = Vec::new();
    let mut c = input;
    for (&f, &s) in filters.iter().zip(strides) {
        layers.push(Layer::Conv2d(Conv2d::new(c, f, kernel, s, rng)));
        layers.push(Layer::Act(Activation::Elu));
        c = f;
    }
    Sequential::new(name, layers)
}

fn build_decoder<T: Scalar>(
    arch: &TransceiverArch,
    name: &str,
    input_channels: usize,
    input_size: usize,
    filters: &[usize],
    targets: &[usize],
    strides: &[usize],
    final_activation: Activation,
    rng: &mut crate::rng::Stream,
) -> Sequential<T> {
    let k = arch.kernel;
    let mut layers = Vec::new();
    let (mut c, mut size) = (input_channels, input_size);
    for (i, ((&f, &target), &s)) in filters.iter().zip(targets).zip(strides).enumerate() {
        let base = (size - 1) * s + k - 2 * (k / 2);
        assert!(target >= base && target - base < s.max(1), "decoder cannot reach {target} from {size} with stride {s}");
        layers.push(Layer::ConvTranspose2d(ConvTranspose2d::new(c, f, k, s, target - base, rng)));
        let last = i + 1 == filters.len();
        layers.push(Layer::Act(if last { final_activation } else { Activation::Elu }));
        c = f;
        size = target;
    }
    Sequential::new(name, layers)
}

/// Real/imag pairs of `batch x symbols` complex values, stored `[batch, symbols, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolBlock<T> {
    symbols: Tensor<T>,
    /// Scale applied by [`normalize_power`], when this block came from it.
    pub scale: Option<T>,
}

impl<T: Scalar> SymbolBlock<T> {
    pub fn new(symbols: Tensor<T>) -> Result<Self> {
        if symbols.shape().len() != 3 || symbols.dim(2) != 2 {
            return Err(Error::Contract(format!("symbol block must be [batch, n, 2], got {:?}", symbols.shape())));
        }
        Ok(SymbolBlock { symbols, scale: None })
    }

    pub fn zeros(batch: usize, n: usize) -> Self {
        SymbolBlock { symbols: Tensor::zeros(&[batch, n, 2]), scale: None }
    }

    pub fn batch(&self) -> usize {
        self.symbols.dim(0)
    }

    pub fn symbols_per_item(&self) -> usize {
        self.symbols.dim(1)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.symbols
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.symbols
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.symbols
    }

    /// `(re, im)` of symbol `i` of item `b`.
    pub fn get(&self, b: usize, i: usize) -> (T, T) {
        let d = self.symbols.item(b);
        (d[2 * i], d[2 * i + 1])
    }

    pub fn set(&mut self, b: usize, i: usize, value: (T, T)) {
        let d = self.symbols.item_mut(b);
        d[2 * i] = value.0;
        d[2 * i + 1] = value.1;
    }

    /// Average power per complex symbol, accumulated in f64.
    pub fn power(&self) -> f64 {
        let n = (self.batch() * self.symbols_per_item()).max(1) as f64;
        self.symbols.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / n
    }

    /// Channel-first view `[batch, 2, n]` for 1-D convolutions.
    pub fn to_sequence(&self) -> Tensor<T> {
        let (b, n) = (self.batch(), self.symbols_per_item());
        let mut out = Tensor::zeros(&[b, 2, n]);
        for bi in 0..b {
            let src = self.symbols.item(bi);
            let dst = out.item_mut(bi);
            for i in 0..n {
                dst[i] = src[2 * i];
                dst[n + i] = src[2 * i + 1];
            }
        }
        out
    }

    pub fn from_sequence(seq: &Tensor<T>) -> Result<Self> {
        if seq.shape().len() != 3 || seq.dim(1) != 2 {
            return Err(Error::Contract(format!("sequence must be [batch, 2, n], got {:?}", seq.shape())));
        }
        let (b, n) = (seq.dim(0), seq.dim(2));
        let mut out = SymbolBlock::zeros(b, n);
        for bi in 0..b {
            let src = seq.item(bi);
            let dst = out.symbols.item_mut(bi);
            for i in 0..n {
                dst[2 * i] = src[i];
                dst[2 * i + 1] = src[n + i];
            }
        }
        Ok(out)
    }
}

/// Map `[batch, 2K, h, w]` features to `h*w*K` complex symbols per item:
/// symbol `(y*w + x)*K + k` is `(feat[2k, y, x], feat[2k+1, y, x])`.
pub fn pack<T: Scalar>(features: &Tensor<T>) -> Result<SymbolBlock<T>> {
    let (b, c, h, w) = (features.dim(0), features.dim(1), features.dim(2), features.dim(3));
    if c % 2 != 0 {
        return Err(Error::Contract(format!("cannot pair {c} channels into symbols")));
    }
    let pairs = c / 2;
    let mut out = SymbolBlock::zeros(b, h * w * pairs);
    for bi in 0..b {
        let src = features.item(bi);
        let dst = out.symbols.item_mut(bi);
        for pos in 0..h * w {
            for k in 0..pairs {
                let s = pos * pairs + k;
                dst[2 * s] = src[(2 * k) * h * w + pos];
                dst[2 * s + 1] = src[(2 * k + 1) * h * w + pos];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack`].
pub fn unpack<T: Scalar>(block: &SymbolBlock<T>, channels: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    if channels % 2 != 0 || block.symbols_per_item() * 2 != channels * h * w {
        return Err(Error::Contract(format!(
            "{} symbols do not fill a {channels}x{h}x{w} feature map",
            block.symbols_per_item()
        )));
    }
    let (b, pairs) = (block.batch(), channels / 2);
    let mut out = Tensor::zeros(&[b, channels, h, w]);
    for bi in 0..b {
        let src = block.symbols.item(bi);
        let dst = out.item_mut(bi);
        for pos in 0..h * w {
            for k in 0..pairs {
                let s = pos * pairs + k;
                dst[(2 * k) * h * w + pos] = src[2 * s];
                dst[(2 * k + 1) * h * w + pos] = src[2 * s + 1];
            }
        }
    }
    Ok(out)
}

/// Scale the whole block by one factor so its average symbol power is 1.
pub fn normalize_power<T: Scalar>(x: &SymbolBlock<T>) -> Result<SymbolBlock<T>> {
    let p = x.power();
    if !p.is_finite() || p <= MIN_BLOCK_POWER {
        return Err(Error::DegenerateInput(format!("transmit block power {p:e} cannot be normalized")));
    }
    let scale = T::of(1.0 / p.sqrt());
    Ok(SymbolBlock { symbols: x.symbols.map(|v| v * scale), scale: Some(scale) })
}

/// Gradient of [`normalize_power`] given its output `y` and scale `s`:
/// `dx = s * (g - y * <g, y> / M)` with `M` the number of complex symbols.
pub fn normalize_power_backward<T: Scalar>(y: &SymbolBlock<T>, grad: &Tensor<T>) -> Tensor<T> {
    let s = y.scale.expect("block was produced by normalize_power");
    let m = T::of((y.batch() * y.symbols_per_item()) as f64);
    let dot: T = y.symbols.data().iter().zip(grad.data()).map(|(&a, &b)| a * b).sum();
    let k = dot / m;
    Tensor::from_vec(
        grad.shape(),
        grad.data().iter().zip(y.symbols.data()).map(|(&g, &yv)| s * (g - yv * k)).collect(),
    )
}

/// Intermediate semantic features `[batch, c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T>(pub Tensor<T>);

impl<T: Scalar> FeatureMap<T> {
    /// `(batch, height, width, channels)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.0.dim(0), self.0.dim(2), self.0.dim(3), self.0.dim(1))
    }
}

/// The four networks of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct Transceiver<T> {
    pub arch: TransceiverArch,
    pub semantic_encoder: Sequential<T>,
    pub channel_encoder: Sequential<T>,
    pub channel_decoder: Sequential<T>,
    pub semantic_decoder: Sequential<T>,
}

/// Saved activations of a transmit pass.
pub struct TxTrace<T> {
    semantic: Trace<T>,
    channel: Trace<T>,
    pub symbols: SymbolBlock<T>,
}

/// Saved activations of a receive pass.
pub struct RxTrace<T> {
    channel: Trace<T>,
    semantic: Trace<T>,
}

impl<T> RxTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.semantic.output()
    }
}

/// Gradient buffers for the transmitter `(semantic, channel)` or receiver
/// `(channel, semantic)` pair.
pub struct PairGrads<T> {
    pub first: Grads<T>,
    pub second: Grads<T>,
}

impl<T: Scalar> Transceiver<T> {
    /// Weights depend only on `seed` (never on the node), so both nodes
    /// start identical.
    pub fn new(arch: TransceiverArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let k = arch.kernel;
        let mut rng = stream(seed, Purpose::WeightInit, 0);
        let semantic_encoder =
            build_encoder("semantic_encoder", arch.image_channels, &arch.semantic_filters, &arch.semantic_strides, k, &mut rng);
        let mut rng = stream(seed, Purpose::WeightInit, 1);
        let channel_encoder =
            build_encoder("channel_encoder", arch.feature_channels(), &arch.channel_filters, &arch.channel_strides, k, &mut rng);

        let chan_sizes = arch.sizes(arch.feature_size(), &arch.channel_strides);
        let sem_sizes = arch.sizes(arch.image_size, &arch.semantic_strides);
        let rev = |v: &[usize]| v.iter().rev().copied().collect::<Vec<_>>();
        // layer j of a decoder mirrors encoder layer L-1-j and restores its input size
        let chan_targets = rev(&chan_sizes[..chan_sizes.len() - 1]);
        let sem_targets = rev(&sem_sizes[..sem_sizes.len() - 1]);

        let mut rng = stream(seed, Purpose::WeightInit, 2);
        let channel_decoder = build_decoder(
            &arch,
            "channel_decoder",
            arch.code_channels(),
            arch.code_size(),
            &arch.channel_decoder_filters,
            &chan_targets,
            &rev(&arch.channel_strides),
            Activation::Elu,
            &mut rng,
        );
        let mut rng = stream(seed, Purpose::WeightInit, 3);
        let semantic_decoder = build_decoder(
            &arch,
            "semantic_decoder",
            arch.feature_channels(),
            arch.feature_size(),
            &arch.semantic_decoder_filters,
            &sem_targets,
            &rev(&arch.semantic_strides),
            Activation::Sigmoid,
            &mut rng,
        );
        Ok(Transceiver { arch, semantic_encoder, channel_encoder, channel_decoder, semantic_decoder })
    }

    pub fn networks(&self) -> [&Sequential<T>; 4] {
        [&self.semantic_encoder, &self.channel_encoder, &self.channel_decoder, &self.semantic_decoder]
    }

    pub fn networks_mut(&mut self) -> [&mut Sequential<T>; 4] {
        [&mut self.semantic_encoder, &mut self.channel_encoder, &mut self.channel_decoder, &mut self.semantic_decoder]
    }

    fn check_images(&self, m: &ImageBatch<T>) -> Result<()> {
        let s = m.tensor().shape();
        let a = &self.arch;
        if s[1] != a.image_channels || s[2] != a.image_size || s[3] != a.image_size {
            return Err(Error::Contract(format!(
                "image batch {s:?} does not match {}x{}x{}",
                a.image_size, a.image_size, a.image_channels
            )));
        }
        Ok(())
    }

    pub fn semantic_encode(&self, m: &ImageBatch<T>) -> Result<FeatureMap<T>> {
        self.check_images(m)?;
        Ok(FeatureMap(self.semantic_encoder.forward(m.tensor())?))
    }

    pub fn channel_encode(&self, s: &FeatureMap<T>) -> Result<SymbolBlock<T>> {
        normalize_power(&pack(&self.channel_encoder.forward(&s.0)?)?)
    }

    pub fn channel_decode(&self, y: &SymbolBlock<T>) -> Result<FeatureMap<T>> {
        if y.symbols_per_item() != self.arch.symbol_count() {
            return Err(Error::Contract(format!(
                "receiver expects {} symbols per item, got {}",
                self.arch.symbol_count(),
                y.symbols_per_item()
            )));
        }
        let code = unpack(y, self.arch.code_channels(), self.arch.code_size(), self.arch.code_size())?;
        Ok(FeatureMap(self.channel_decoder.forward(&code)?))
    }

    pub fn semantic_decode(&self, s: &FeatureMap<T>) -> Result<ImageBatch<T>> {
        Ok(ImageBatch::new(self.semantic_decoder.forward(&s.0)?)?)
    }

    /// Images -> unit-power symbols.
    pub fn transmit(&self, m: &ImageBatch<T>) -> Result<SymbolBlock<T>> {
        self.channel_encode(&self.semantic_encode(m)?)
    }

    /// Received symbols -> images.
    pub fn receive(&self, y: &SymbolBlock<T>) -> Result<ImageBatch<T>> {
        self.semantic_decode(&self.channel_decode(y)?)
    }

    pub fn transmit_traced(&self, m: &ImageBatch<T>) -> Result<TxTrace<T>> {
        self.check_images(m)?;
        let semantic = self.semantic_encoder.forward_trace(m.tensor().clone())?;
        let channel = self.channel_encoder.forward_trace(semantic.output().clone())?;
        let symbols = normalize_power(&pack(channel.output())?)?;
        Ok(TxTrace { semantic, channel, symbols })
    }

    /// Backprop a symbol gradient into `(semantic_encoder, channel_encoder)` grads.
    pub fn transmit_backward(&self, trace: &TxTrace<T>, grad_symbols: &Tensor<T>, grads: &mut PairGrads<T>) {
        let d_packed = normalize_power_backward(&trace.symbols, grad_symbols);
        let d_block = SymbolBlock { symbols: d_packed, scale: None };
        let a = &self.arch;
        let d_code = unpack(&d_block, a.code_channels(), a.code_size(), a.code_size()).expect("shape fixed by the encoder");
        let d_feat = self
            .channel_encoder
            .backward(&trace.channel, &d_code, Some(&mut grads.second), true)
            .expect("input gradient requested");
        self.semantic_encoder.backward(&trace.semantic, &d_feat, Some(&mut grads.first), false);
    }

    pub fn receive_traced(&self, y: &SymbolBlock<T>) -> Result<RxTrace<T>> {
        let a = &self.arch;
        if y.symbols_per_item() != a.symbol_count() {
            return Err(Error::Contract(format!("receiver expects {} symbols per item", a.symbol_count())));
        }
        let code = unpack(y, a.code_channels(), a.code_size(), a.code_size())?;
        let channel = self.channel_decoder.forward_trace(code)?;
        let semantic = self.semantic_decoder.forward_trace(channel.output().clone())?;
        Ok(RxTrace { channel, semantic })
    }

    /// Backprop an image gradient through the receiver. Parameter gradients
    /// go to `grads` (`first` = channel decoder, `second` = semantic
    /// decoder) when given; the symbol gradient is returned only when asked.
    pub fn receive_backward(
        &self,
        trace: &RxTrace<T>,
        grad_images: &Tensor<T>,
        grads: Option<&mut PairGrads<T>>,
        need_symbol_grad: bool,
    ) -> Option<Tensor<T>> {
        let (g_chan, g_sem) = match grads {
            Some(g) => (Some(&mut g.first), Some(&mut g.second)),
            None => (None, None),
        };
        let d_feat = self.semantic_decoder.backward(&trace.semantic, grad_images, g_sem, true).expect("requested");
        let d_code = self.channel_decoder.backward(&trace.channel, &d_feat, g_chan, need_symbol_grad)?;
        let d_block = pack(&d_code).expect("even channel count");
        Some(d_block.into_tensor())
    }

    pub fn tx_grads(&self) -> PairGrads<T> {
        PairGrads { first: self.semantic_encoder.zero_grads(), second: self.channel_encoder.zero_grads() }
    }

    pub fn rx_grads(&self) -> PairGrads<T> {
        PairGrads { first: self.channel_decoder.zero_grads(), second: self.semantic_decoder.zero_grads() }
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.networks().iter().flat_map(|n| n.flat_params()).collect()
    }
}

impl<T: Scalar> PairGrads<T> {
    pub fn all_finite(&self) -> bool {
        self.first.iter().chain(&self.second).all(|g| g.is_finite())
    }
}

/// One node: its transceiver plus an optimizer per network.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState<T> {
    pub id: NodeId,
    pub transceiver: Transceiver<T>,
    /// Optimizers in network order: semantic encoder, channel encoder,
    /// channel decoder, semantic decoder.
    pub optimizers: [Adam<T>; 4],
}

impl<T: Scalar> NodeState<T> {
    pub fn new(id: NodeId, arch: TransceiverArch, seed: u64) -> Result<Self> {
        let transceiver = Transceiver::new(arch, seed)?;
        let optimizers = transceiver.networks().map(|n| Adam::new(&n.params()));
        Ok(NodeState { id, transceiver, optimizers })
    }

    pub fn apply_tx(&mut self, grads: &PairGrads<T>, lr: f64) {
        let [o0, o1, _, _] = &mut self.optimizers;
        o0.update(self.transceiver.semantic_encoder.params_mut(), &grads.first, lr);
        o1.update(self.transceiver.channel_encoder.params_mut(), &grads.second, lr);
    }

    pub fn apply_rx(&mut self, grads: &PairGrads<T>, lr: f64) {
        let [_, _, o2, o3] = &mut self.optimizers;
        o2.update(self.transceiver.channel_decoder.params_mut(), &grads.first, lr);
        o3.update(self.transceiver.semantic_decoder.params_mut(), &grads.second, lr);
    }

    pub fn all_finite(&self) -> bool {
        self.transceiver.networks().iter().all(|n| n.all_finite())
    }
}
