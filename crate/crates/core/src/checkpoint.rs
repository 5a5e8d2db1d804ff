//! Binary persistence for trained parameters.
//!
//! A checkpoint is a flat catalog of named f64 tensors behind a magic tag:
//! enough to rebuild the policy networks exactly, small enough to read
//! without a framework. All integers and floats are little endian.

use std::path::Path;

use crate::error::{Result, SimError};
use crate::qmix::{PolicyNets, QmixLearner, TrainConfig};
use crate::rng::RngStreams;

const MAGIC: &[u8; 8] = b"AIMACQN1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn save_tensors(path: &Path, tensors: &[(String, Vec<usize>, &[f64])]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(SimError::Checkpoint(format!(
                "tensor {name}: shape {shape:?} does not cover {} values",
                data.len()
            )));
        }
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape.iter() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SimError::Checkpoint("file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(SimError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| SimError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndims = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(SimError::Checkpoint("trailing bytes after the last tensor".into()));
    }
    Ok(tensors)
}

pub fn save_learner(path: &Path, learner: &QmixLearner) -> Result<()> {
    save_tensors(path, &learner.tensors())
}

/// Rebuilds a learner from a checkpoint: every network tensor must be
/// present with the exact expected shape. Target networks start as copies
/// of the loaded parameters.
pub fn load_learner(path: &Path, cfg: TrainConfig) -> Result<QmixLearner> {
    let tensors = load_tensors(path)?;
    let mut rng = RngStreams::new(0).stream("checkpoint-scaffold");
    let mut learner = QmixLearner::new(cfg, &mut rng);
    let mut used = vec![false; tensors.len()];
    for (name, shape, dst) in learner.tensors_mut() {
        let idx = tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| SimError::Checkpoint(format!("missing tensor {name}")))?;
        let t = &tensors[idx];
        if t.shape != shape {
            return Err(SimError::Checkpoint(format!(
                "tensor {name}: shape {:?} in file, {:?} expected",
                t.shape, shape
            )));
        }
        dst.copy_from_slice(&t.data);
        used[idx] = true;
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(SimError::Checkpoint(format!("unknown tensor {}", tensors[i].name)));
    }
    learner.sync_targets();
    Ok(learner)
}

pub fn load_policy(path: &Path) -> Result<PolicyNets> {
    Ok(load_learner(path, TrainConfig::default())?.policy())
}

// ---------------------------------------------------------------------------
