//! Per-node checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TWSCCKPT" | u32 version | str scalar | str config hash | u8 node
//! u64 epoch | u64 step | run state | 4 x (network, adam)
//! u8 has_surrogate [ u64 steps | network, adam (generator) | network, adam (discriminator) ]
//! ```
//!
//! Every node file carries a copy of the shared run state (stream
//! positions, link audit, divergence guard, epoch history) so either file
//! alone can resume its half of the run. Decoding then re-encoding yields the
//! same bytes.

use std::path::Path;

use crate::channel::LinkAudit;
use crate::error::{Error, Result};
use crate::metrics::Direction;
use crate::nn::{Adam, Sequential};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{DivergenceGuard, EpochRecord, LinkQuality, TrainRun};
use crate::transceiver::NodeId;

pub const MAGIC: &[u8; 8] = b"TWSCCKPT";
pub const VERSION: u32 = 1;

fn bad<V>(msg: impl Into<String>) -> Result<V> {
    Err(Error::Checkpoint(msg.into()))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            v.write_le(&mut self.0);
        }
    }

    fn network<T: Scalar>(&mut self, net: &Sequential<T>) {
        self.str(net.name());
        let params = net.params();
        self.u32(params.len() as u32);
        for p in params {
            self.tensor(p);
        }
    }

    fn adam<T: Scalar>(&mut self, opt: &Adam<T>) {
        self.f64(opt.beta1);
        self.f64(opt.beta2);
        self.f64(opt.epsilon);
        self.u64(opt.step);
        self.u32(opt.first_moment.len() as u32);
        for (m, v) in opt.first_moment.iter().zip(&opt.second_moment) {
            self.tensor(m);
            self.tensor(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return bad(format!("truncated at byte {}", self.at));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).or_else(|_| bad("string is not UTF-8"))
    }

    /// Read a tensor that must have exactly `shape`.
    fn tensor<T: Scalar>(&mut self, shape: &[usize], what: &str) -> Result<Tensor<T>> {
        let rank = self.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(self.u64()? as usize);
        }
        if dims != shape {
            return bad(format!("{what}: stored shape {dims:?}, expected {shape:?}"));
        }
        let n: usize = dims.iter().product();
        let raw = self.take(n * T::BYTES)?;
        Ok(Tensor::from_vec(&dims, raw.chunks_exact(T::BYTES).map(T::read_le).collect()))
    }

    fn network<T: Scalar>(&mut self, net: &mut Sequential<T>) -> Result<()> {
        let name = self.str()?;
        if name != net.name() {
            return bad(format!("found network `{name}` where `{}` was expected", net.name()));
        }
        let count = self.u32()? as usize;
        let names = net.param_names();
        let mut params = net.params_mut();
        if count != params.len() {
            return bad(format!("{name}: {count} stored tensors, expected {}", params.len()));
        }
        for (p, pname) in params.iter_mut().zip(&names) {
            let shape = p.shape().to_vec();
            **p = self.tensor(&shape, pname)?;
        }
        Ok(())
    }

    fn adam<T: Scalar>(&mut self, opt: &mut Adam<T>, what: &str) -> Result<()> {
        opt.beta1 = self.f64()?;
        opt.beta2 = self.f64()?;
        opt.epsilon = self.f64()?;
        opt.step = self.u64()?;
        let count = self.u32()? as usize;
        if count != opt.first_moment.len() {
            return bad(format!("{what} optimizer: {count} stored moments, expected {}", opt.first_moment.len()));
        }
        for i in 0..count {
            let shape = opt.first_moment[i].shape().to_vec();
            opt.first_moment[i] = self.tensor(&shape, what)?;
            opt.second_moment[i] = self.tensor(&shape, what)?;
        }
        Ok(())
    }
}

fn direction_code(d: Direction) -> u8 {
    match d {
        Direction::AToB => 0,
        Direction::BToA => 1,
        Direction::Average => 2,
    }
}

fn direction_from(code: u8) -> Result<Direction> {
    match code {
        0 => Ok(Direction::AToB),
        1 => Ok(Direction::BToA),
        2 => Ok(Direction::Average),
        c => bad(format!("unknown direction code {c}")),
    }
}

/// Shared state copied into each node file.
#[derive(Clone, Debug, PartialEq)]
struct RunState {
    guard: DivergenceGuard,
    snr_schedule: u128,
    baseline_noise: u128,
    generator_noise: u128,
    link: [u128; 3],
    audit: LinkAudit,
    history: Vec<EpochRecord>,
}

fn write_state(w: &mut Writer, s: &RunState) {
    w.f64(s.guard.best);
    w.u32(s.guard.consecutive);
    for p in [s.snr_schedule, s.baseline_noise, s.generator_noise] {
        w.u128(p);
    }
    for p in s.link {
        w.u128(p);
    }
    w.u64(s.audit.forward_payload_count);
    w.u64(s.audit.backward_gradient_count);
    w.u64(s.audit.bytes_forward);
    w.u32(s.history.len() as u32);
    for e in &s.history {
        w.u64(e.epoch as u64);
        w.u64(e.steps);
        w.f64(e.train_loss);
        w.f64(e.eval_snr_db);
        w.u32(e.links.len() as u32);
        for l in &e.links {
            w.u8(direction_code(l.direction));
            w.f64(l.mse);
            w.f64(l.psnr);
            w.f64(l.ssim);
        }
        w.u64(e.audits.forward_payload_count);
        w.u64(e.audits.backward_gradient_count);
        w.u64(e.audits.bytes_forward);
    }
}

fn read_audit(r: &mut Reader) -> Result<LinkAudit> {
    Ok(LinkAudit { forward_payload_count: r.u64()?, backward_gradient_count: r.u64()?, bytes_forward: r.u64()? })
}

fn read_state(r: &mut Reader) -> Result<RunState> {
    let guard = DivergenceGuard { best: r.f64()?, consecutive: r.u32()? };
    let (snr_schedule, baseline_noise, generator_noise) = (r.u128()?, r.u128()?, r.u128()?);
    let link = [r.u128()?, r.u128()?, r.u128()?];
    let audit = read_audit(r)?;
    let n = r.u32()? as usize;
    let mut history = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let epoch = r.u64()? as usize;
        let steps = r.u64()?;
        let train_loss = r.f64()?;
        let eval_snr_db = r.f64()?;
        let k = r.u32()? as usize;
        let mut links = Vec::with_capacity(k.min(8));
        for _ in 0..k {
            links.push(LinkQuality { direction: direction_from(r.u8()?)?, mse: r.f64()?, psnr: r.f64()?, ssim: r.f64()? });
        }
        history.push(EpochRecord { epoch, steps, train_loss, eval_snr_db, links, audits: read_audit(r)? });
    }
    Ok(RunState { guard, snr_schedule, baseline_noise, generator_noise, link, audit, history })
}

/// Serialize one node's half of `run`.
pub fn encode_node<T: Scalar>(run: &TrainRun<T>, node: NodeId) -> Vec<u8> {
    let side = run.node(node);
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(T::NAME);
    w.str(&run.config.hash());
    w.u8(node.index() as u8);
    w.u64(run.epoch as u64);
    w.u64(run.step);
    write_state(
        &mut w,
        &RunState {
            guard: run.guard.clone(),
            snr_schedule: run.snr_schedule.get_word_pos(),
            baseline_noise: run.baseline_noise.get_word_pos(),
            generator_noise: side.generator_noise.get_word_pos(),
            link: run.link.stream_positions(),
            audit: run.link.audit().clone(),
            history: run.history.clone(),
        },
    );
    for (net, opt) in side.state.transceiver.networks().into_iter().zip(&side.state.optimizers) {
        w.network(net);
        w.adam(opt);
    }
    match &side.surrogate {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.u64(s.steps);
            w.network(&s.generator);
            w.adam(&s.generator_opt);
            w.network(&s.discriminator);
            w.adam(&s.discriminator_opt);
        }
    }
    w.0
}

/// Load a node file into `run`, overwriting that node and the shared state.
///
/// `run` must have been built from the same config (checked by hash) and
/// architecture (checked tensor by tensor). Returns the node the file
/// belongs to.
pub fn decode_node_into<T: Scalar>(run: &mut TrainRun<T>, bytes: &[u8]) -> Result<NodeId> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return bad("not a checkpoint file");
    }
    let version = r.u32()?;
    if version != VERSION {
        return bad(format!("unsupported version {version}"));
    }
    let scalar = r.str()?;
    if scalar != T::NAME {
        return bad(format!("stored as {scalar}, loading as {}", T::NAME));
    }
    let hash = r.str()?;
    if hash != run.config.hash() {
        return bad("config hash does not match this run");
    }
    let node = match r.u8()? {
        0 => NodeId::A,
        1 => NodeId::B,
        c => return bad(format!("unknown node code {c}")),
    };
    let epoch = r.u64()? as usize;
    let step = r.u64()?;
    let state = read_state(&mut r)?;

    let side = run.node_mut(node);
    let nets = side.state.transceiver.networks_mut();
    for (i, net) in nets.into_iter().enumerate() {
        r.network(net)?;
        r.adam(&mut side.state.optimizers[i], "transceiver")?;
    }
    match (r.u8()?, side.surrogate.as_mut()) {
        (0, None) => {}
        (1, Some(s)) => {
            s.steps = r.u64()?;
            r.network(&mut s.generator)?;
            r.adam(&mut s.generator_opt, "generator")?;
            r.network(&mut s.discriminator)?;
            r.adam(&mut s.discriminator_opt, "discriminator")?;
        }
        _ => return bad("surrogate presence does not match the system kind"),
    }
    if r.at != bytes.len() {
        return bad(format!("{} trailing bytes", bytes.len() - r.at));
    }
    side.generator_noise.set_word_pos(state.generator_noise);

    run.epoch = epoch;
    run.step = step;
    run.guard = state.guard;
    run.history = state.history;
    run.snr_schedule.set_word_pos(state.snr_schedule);
    run.baseline_noise.set_word_pos(state.baseline_noise);
    run.link.restore(state.link, state.audit);
    Ok(node)
}

/// Conventional file location: `<run_dir>/<node>/<epoch>.ckpt`.
pub fn node_path(run_dir: &Path, node: NodeId, epoch: usize) -> std::path::PathBuf {
    run_dir.join(node.as_str()).join(format!("{epoch}.ckpt"))
}

/// Write both node files for the run's current epoch.
pub fn save_run<T: Scalar>(run: &TrainRun<T>, run_dir: &Path) -> Result<()> {
    for node in [NodeId::A, NodeId::B] {
        let path = node_path(run_dir, node, run.epoch);
        let dir = path.parent().expect("node directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(&path, encode_node(run, node)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Restore both nodes of `run` from `<run_dir>/<node>/<epoch>.ckpt`.
pub fn load_run<T: Scalar>(run: &mut TrainRun<T>, run_dir: &Path, epoch: usize) -> Result<()> {
    let mut seen = Vec::new();
    for node in [NodeId::A, NodeId::B] {
        let path = node_path(run_dir, node, epoch);
        if !path.exists() {
            return bad(format!("missing checkpoint {}", path.display()));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let got = decode_node_into(run, &bytes)?;
        if got != node {
            return bad(format!("{} holds node {got}", path.display()));
        }
        seen.push((run.epoch, run.step));
    }
    if seen[0] != seen[1] {
        return bad("node checkpoints are from different steps");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, SystemKind};
    use crate::data::ImageSet;
    use crate::rng::{stream, Purpose};
    use crate::sp_cgan::SurrogateArch;
    use crate::transceiver::TransceiverArch;
    use rand::Rng;

    fn config(kind: SystemKind) -> ExperimentConfig {
        ExperimentConfig { system_kind: kind, batch_size: 4, symbol_count: 4, ..ExperimentConfig::default() }
    }

    fn fresh(kind: SystemKind) -> TrainRun<f64> {
        let arch = TransceiverArch { image_size: 16, ..TransceiverArch::shrunken() };
        TrainRun::with_arch(config(kind), arch, SurrogateArch::tiny(4, 2, true)).unwrap()
    }

    fn trained(kind: SystemKind, steps: usize) -> (TrainRun<f64>, ImageSet) {
        let mut rng = stream(5, Purpose::Probe, 0);
        let data = ImageSet::new((0..32 * 256).map(|_| rng.random()).collect(), 32, 16, 16).unwrap();
        let mut run = fresh(kind);
        for i in 0..steps {
            run.train_step(&data.range(i * 4, i * 4 + 4), &mut ()).unwrap();
        }
        (run, data)
    }

    #[test]
    fn round_trip_is_byte_stable() {
        for kind in [SystemKind::Twsc, SystemKind::Jscc] {
            let (run, _) = trained(kind, 2);
            for node in [NodeId::A, NodeId::B] {
                let bytes = encode_node(&run, node);
                let mut other = fresh(kind);
                assert_eq!(decode_node_into(&mut other, &bytes).unwrap(), node);
                assert_eq!(encode_node(&other, node), bytes);
            }
        }
    }

    #[test]
    fn resumed_run_continues_identically() {
        let (mut run, data) = trained(SystemKind::Twsc, 2);
        let dir = tempfile::tempdir().unwrap();
        save_run(&run, dir.path()).unwrap();
        let mut resumed = fresh(SystemKind::Twsc);
        load_run(&mut resumed, dir.path(), 0).unwrap();
        for i in 2..4 {
            let b = data.range(i * 4, i * 4 + 4);
            assert_eq!(run.train_step(&b, &mut ()).unwrap(), resumed.train_step(&b, &mut ()).unwrap());
        }
        assert_eq!(run.sides[0].flat_weights(), resumed.sides[0].flat_weights());
        assert_eq!(run.link.audit(), resumed.link.audit());
    }

    #[test]
    fn rejects_foreign_or_damaged_files() {
        let (run, _) = trained(SystemKind::Twsc, 1);
        let bytes = encode_node(&run, NodeId::A);
        let mut target = fresh(SystemKind::Twsc);
        assert!(decode_node_into(&mut target, &bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_node_into(&mut target, &extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_node_into(&mut target, &magic).is_err());
        let mut other = fresh(SystemKind::Twsc);
        other.config.seed = 9;
        assert!(matches!(decode_node_into(&mut other, &bytes), Err(Error::Checkpoint(_))));
        let mut jscc = fresh(SystemKind::Jscc);
        assert!(decode_node_into(&mut jscc, &bytes).is_err());
        let mut single: TrainRun<f32> = TrainRun::with_arch(
            config(SystemKind::Twsc),
            TransceiverArch { image_size: 16, ..TransceiverArch::shrunken() },
            SurrogateArch::tiny(4, 2, true),
        )
        .unwrap();
        assert!(decode_node_into(&mut single, &bytes).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = fresh(SystemKind::Twsc);
        let err = load_run(&mut run, dir.path(), 3).unwrap_err().to_string();
        assert!(err.contains("3.ckpt"), "{err}");
    }
}
