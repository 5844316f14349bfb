use std::path::Path;

use super::model::{Ablation, FusionDims, FusionModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer state needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: u32,
    /// Number of completed optimizer steps.
    pub step: u64,
    pub best_epoch: u32,
    pub best_score: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub seed: u64,
    pub ablation: Ablation,
    /// Parameters rounded to f32 on write.
    pub model: FusionModel,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    /// Size in bytes of the encoded file.
    pub fn encoded_len(&self) -> usize {
        let header = 4 + 4 + 8 + 8 * 4 + 3 + 4;
        let blocks: usize = self
            .model
            .params
            .specs
            .iter()
            .map(|s| 2 + s.name.len() + 1 + 4 * s.shape.len() + 4 * s.numel())
            .sum();
        let state = 1 + self.state.as_ref().map_or(0, |s| 4 + 8 + 4 + 8 + 8 + 16 * s.m.len());
        header + blocks + state
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(ck.encoded_len());
    let dims = ck.model.dims;
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&ck.seed.to_le_bytes());
    for v in [
        dims.inputs[0],
        dims.inputs[1],
        dims.inputs[2],
        dims.fused,
        dims.expert_hidden,
        dims.router_hidden,
        dims.classifier_hidden,
        dims.classes,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let bits = ck
        .ablation
        .modalities
        .iter()
        .enumerate()
        .fold(0u8, |acc, (i, &on)| acc | (u8::from(on) << i));
    out.extend_from_slice(&[bits, u8::from(ck.ablation.moe), u8::from(ck.ablation.contrastive)]);
    let params = &ck.model.params;
    out.extend_from_slice(&(params.specs.len() as u32).to_le_bytes());
    for (id, spec) in params.specs.iter().enumerate() {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(spec.shape.len() as u8);
        for &d in &spec.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in params.get(id) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    match &ck.state {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.epoch.to_le_bytes());
            out.extend_from_slice(&s.step.to_le_bytes());
            out.extend_from_slice(&s.best_epoch.to_le_bytes());
            out.extend_from_slice(&s.best_score.to_le_bytes());
            out.extend_from_slice(&(s.m.len() as u64).to_le_bytes());
            for x in s.m.iter().chain(&s.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    debug_assert_eq!(out.len(), ck.encoded_len());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("need {n} bytes at offset {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0 };
    if bytes.len() < 4 || r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpointMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadCheckpointVersion(version));
    }
    let seed = r.u64()?;
    let mut d = [0usize; 8];
    for v in &mut d {
        *v = r.u32()? as usize;
    }
    let dims = FusionDims {
        inputs: [d[0], d[1], d[2]],
        fused: d[3],
        expert_hidden: d[4],
        router_hidden: d[5],
        classifier_hidden: d[6],
        classes: d[7],
    };
    let bits = r.u8()?;
    let ablation = Ablation {
        modalities: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
        moe: r.u8()? != 0,
        contrastive: r.u8()? != 0,
    };
    // Guard the allocation below against absurd dimensions in a corrupt header.
    if dims.parameter_count() > bytes.len() {
        return Err(Error::Truncated(format!(
            "{} parameters declared",
            dims.parameter_count()
        )));
    }
    let mut model = FusionModel::zeroed(dims);
    let blocks = r.u32()? as usize;
    if blocks != model.params.specs.len() {
        return Err(Error::InvalidCheckpoint(format!(
            "expected {} parameter blocks, found {blocks}",
            model.params.specs.len()
        )));
    }
    for id in 0..blocks {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::InvalidCheckpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let spec = &model.params.specs[id];
        if spec.name != name || spec.shape != shape {
            return Err(Error::InvalidCheckpoint(format!(
                "block {id}: found {name} {shape:?}, expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        let raw = r.take(4 * spec.numel())?;
        for (v, c) in model.params.get_mut(id).iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
        }
    }
    let state = match r.u8()? {
        0 => None,
        1 => {
            let epoch = r.u32()?;
            let step = r.u64()?;
            let best_epoch = r.u32()?;
            let best_score = r.f64()?;
            let n = r.u64()? as usize;
            if n != model.params.len() {
                return Err(Error::InvalidCheckpoint(format!(
                    "optimizer state covers {n} values, model has {}",
                    model.params.len()
                )));
            }
            let mut read = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| r.f64()).collect() };
            let m = read(n)?;
            let v = read(n)?;
            Some(TrainState {
                epoch,
                step,
                best_epoch,
                best_score,
                m,
                v,
            })
        }
        f => return Err(Error::InvalidCheckpoint(format!("bad training-state flag {f}"))),
    };
    if r.at != bytes.len() {
        return Err(Error::InvalidCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    Ok(Checkpoint {
        seed,
        ablation,
        model,
        state,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
