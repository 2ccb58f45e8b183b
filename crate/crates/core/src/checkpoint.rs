//! Binary checkpoints.
//!
//! One container for both network snapshots and resumable train state:
//! magic `TGCK`, a one-byte kind, the owning config fingerprint, then
//! parameter blobs in declaration order (f64 little-endian). Train-state
//! checkpoints append step counters, momentum buffers, and the best
//! validation accuracy; the RNG state is recoverable from (seed, epoch)
//! because every stream is derived, so nothing else needs saving.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::param::Param;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TGCK";

const KIND_NETWORK: u8 = 0;
const KIND_TRAIN_STATE: u8 = 1;

fn write_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse("checkpoint truncated".to_string()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn write_params(out: &mut Vec<u8>, params: &[Param]) {
    write_u32(out, params.len());
    for p in params {
        write_u32(out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        write_u32(out, p.shape.len());
        for &d in &p.shape {
            write_u32(out, d);
        }
        write_u64(out, p.value.len() as u64);
        for &v in &p.value {
            write_f64(out, v);
        }
    }
}

fn read_params(r: &mut Reader) -> Result<Vec<Param>> {
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::parse("checkpoint has a non-utf8 parameter name".to_string()))?;
        let ndim = r.u32()?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()?);
        }
        let numel = r.u64()? as usize;
        if shape.iter().product::<usize>() != numel {
            return Err(Error::parse(format!(
                "checkpoint parameter {name}: shape {shape:?} does not match {numel} values"
            )));
        }
        let mut value = Vec::with_capacity(numel);
        for _ in 0..numel {
            value.push(r.f64()?);
        }
        params.push(Param { name, shape, value });
    }
    Ok(params)
}

fn open(path: &Path, expected_kind: u8) -> Result<(Vec<u8>, usize, u64)> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 13 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::parse(format!(
            "{}: not a checkpoint (missing TGCK magic)",
            path.display()
        )));
    }
    let kind = bytes[4];
    if kind != expected_kind {
        return Err(Error::usage(format!(
            "{}: checkpoint kind {kind} does not match the expected kind {expected_kind}",
            path.display()
        )));
    }
    let hash = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    Ok((bytes, 13, hash))
}

/// Snapshot of one network's parameters.
pub fn save_network(path: &Path, config_hash: u64, params: &[Param]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(KIND_NETWORK);
    write_u64(&mut out, config_hash);
    write_params(&mut out, params);
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Load a network snapshot, checking the config fingerprint.
pub fn load_network(path: &Path, expected_hash: u64) -> Result<Vec<Param>> {
    let (bytes, pos, hash) = open(path, KIND_NETWORK)?;
    if hash != expected_hash {
        return Err(Error::usage(format!(
            "{}: checkpoint was written for config hash {hash:#018x}, expected {expected_hash:#018x}",
            path.display()
        )));
    }
    let mut r = Reader { bytes: &bytes, pos };
    let params = read_params(&mut r)?;
    if !r.done() {
        return Err(Error::parse("checkpoint has trailing bytes".to_string()));
    }
    Ok(params)
}

/// Everything needed to resume a distillation run at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStateBlob {
    pub config_hash: u64,
    pub master_seed: u64,
    /// Epochs fully completed so far.
    pub epochs_done: usize,
    /// Global optimizer steps taken.
    pub steps_done: u64,
    pub best_eval_accuracy: f64,
    pub student: Vec<Param>,
    pub projection: Vec<Param>,
    /// Momentum buffers aligned with student params then projection params.
    pub momentum: Vec<Vec<f64>>,
}

pub fn save_train_state(path: &Path, state: &TrainStateBlob) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(KIND_TRAIN_STATE);
    write_u64(&mut out, state.config_hash);
    write_u64(&mut out, state.master_seed);
    write_u32(&mut out, state.epochs_done);
    write_u64(&mut out, state.steps_done);
    write_f64(&mut out, state.best_eval_accuracy);
    write_params(&mut out, &state.student);
    write_params(&mut out, &state.projection);
    write_u32(&mut out, state.momentum.len());
    for buf in &state.momentum {
        write_u64(&mut out, buf.len() as u64);
        for &v in buf {
            write_f64(&mut out, v);
        }
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn load_train_state(path: &Path, expected_hash: u64) -> Result<TrainStateBlob> {
    let (bytes, pos, hash) = open(path, KIND_TRAIN_STATE)?;
    if hash != expected_hash {
        return Err(Error::usage(format!(
            "{}: train state was written for config hash {hash:#018x}, expected {expected_hash:#018x}",
            path.display()
        )));
    }
    let mut r = Reader { bytes: &bytes, pos };
    let master_seed = r.u64()?;
    let epochs_done = r.u32()?;
    let steps_done = r.u64()?;
    let best_eval_accuracy = r.f64()?;
    let student = read_params(&mut r)?;
    let projection = read_params(&mut r)?;
    let buf_count = r.u32()?;
    let mut momentum = Vec::with_capacity(buf_count);
    for _ in 0..buf_count {
        let len = r.u64()? as usize;
        let mut buf = Vec::with_capacity(len);
        for _ in 0..len {
            buf.push(r.f64()?);
        }
        momentum.push(buf);
    }
    if !r.done() {
        return Err(Error::parse("checkpoint has trailing bytes".to_string()));
    }
    Ok(TrainStateBlob {
        config_hash: hash,
        master_seed,
        epochs_done,
        steps_done,
        best_eval_accuracy,
        student,
        projection,
        momentum,
    })
}
