//! Binary checkpoint container.
//!
//! Little-endian layout: `"SFCK"`, `u32` version, the config text, data shape,
//! named tensors, Adam state, RNG position and step counters. Every field is
//! stored exactly, so load followed by save reproduces the input bytes.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::dequant::{DequantKind, Dequantizer};
use crate::error::{Error, Result};
use crate::flow::SubsetFlowModel;
use crate::numerics::{LrSchedule, OptimState, Rng, RngState, Tensor};

const MAGIC: &[u8; 4] = b"SFCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// The run configuration, verbatim.
    pub config_text: String,
    pub dims: usize,
    pub levels: usize,
    /// Model tensors followed by dequantizer tensors.
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: OptimState,
    pub rng: RngState,
    pub step: u64,
    pub epoch: u32,
}

struct Writer(Vec<u8>);

impl Writer {
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
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.filter(|&l| l <= (self.bytes.len() - self.pos) / 8).ok_or_else(|| {
            Error::Format(format!("tensor shape {shape:?} exceeds remaining bytes"))
        })?;
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.config_text);
        w.u32(self.dims as u32);
        w.u32(self.levels as u32);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.tensor(t);
        }
        let o = &self.optimizer;
        for v in [o.lr, o.beta1, o.beta2, o.eps] {
            w.f64(v);
        }
        w.u64(o.step);
        w.u32(o.schedule.0.len() as u32);
        for &(e, f) in &o.schedule.0 {
            w.u32(e);
            w.f64(f);
        }
        w.u32(o.first_moment.len() as u32);
        for t in o.first_moment.iter().chain(&o.second_moment) {
            w.tensor(t);
        }
        w.u64(self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);
        w.u64(self.step);
        w.u32(self.epoch);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_text = r.str()?;
        let dims = r.u32()? as usize;
        let levels = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let name = r.str()?;
            tensors.push((name, r.tensor()?));
        }
        let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let opt_step = r.u64()?;
        let milestones = r.u32()? as usize;
        let mut schedule = Vec::new();
        for _ in 0..milestones {
            schedule.push((r.u32()?, r.f64()?));
        }
        let slots = r.u32()? as usize;
        let first_moment = (0..slots).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let second_moment = (0..slots).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let rng = RngState { seed: r.u64()?, stream: r.u64()?, word_pos: r.u128()? };
        let step = r.u64()?;
        let epoch = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
        }
        let optimizer = OptimState {
            lr,
            beta1,
            beta2,
            eps,
            first_moment,
            second_moment,
            step: opt_step,
            schedule: LrSchedule(schedule),
        };
        Ok(Checkpoint { config_text, dims, levels, tensors, optimizer, rng, step, epoch })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config_text)
    }

    /// Rebuilds the model and dequantizer with the stored parameters.
    pub fn restore(&self) -> Result<(RunConfig, SubsetFlowModel, Dequantizer)> {
        let cfg = self.config()?;
        let mut scratch = Rng::new(0);
        let mut model = SubsetFlowModel::new(&cfg.model, self.dims, self.levels, &mut scratch)?;
        let mut deq = match cfg.train.objective.dequant_kind() {
            Some(DequantKind::Variational) => {
                Dequantizer::variational(self.dims, self.levels, &cfg.train.dequant_hidden, &mut scratch)
            }
            _ => Dequantizer::uniform(self.dims, self.levels),
        };
        let mut expected = model.tensor_names();
        let split = expected.len();
        expected.extend(deq.tensor_names());
        let names: Vec<&str> = self.tensors.iter().map(|(n, _)| n.as_str()).collect();
        if names != expected.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
            return Err(Error::Format("checkpoint tensors do not match its config".into()));
        }
        let mut ts: Vec<Tensor> = self.tensors.iter().map(|(_, t)| t.clone()).collect();
        let rest = ts.split_off(split);
        model.set_tensors(ts).map_err(|e| Error::Format(e.to_string()))?;
        deq.set_tensors(rest).map_err(|e| Error::Format(e.to_string()))?;
        Ok((cfg, model, deq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let params = vec![Tensor::matrix(2, 2, vec![1.0, -2.5, f64::MIN_POSITIVE, 3.0]), Tensor::zeros(&[1, 3])];
        let mut opt = OptimState::new(&params, 1e-3, LrSchedule(vec![(5, 0.5)]));
        opt.step = 7;
        opt.first_moment[0].data_mut()[1] = 0.125;
        Checkpoint {
            config_text: "[model]\n# text kept verbatim\n".into(),
            dims: 3,
            levels: 4,
            tensors: vec![("a.w0".into(), params[0].clone()), ("a.b0".into(), params[1].clone())],
            optimizer: opt,
            rng: RngState { seed: 9, stream: 11, word_pos: 12345 },
            step: 42,
            epoch: 2,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
    }
}
