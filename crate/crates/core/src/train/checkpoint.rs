//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MLCLIPCK" | version u32 | total_len u64 | n_sections u32
//! n_sections × (name_len u16, name, offset u64, len u64)
//! section payloads
//! ```
//!
//! Tensor-list sections hold `count u32` then, per tensor, `name_len u32,
//! name, rank u32, dims u64 × rank, f32 × numel`.

use std::path::Path;

use crate::encoders::params::ModelParams;
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::objectives::TeacherState;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::AdamState;
use super::TrainState;

pub const MAGIC: &[u8; 8] = b"MLCLIPCK";
pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [&str; 7] = ["config", "meta", "student", "teacher", "center", "adam_m", "adam_v"];

fn put_tensor_list(out: &mut Vec<u8>, names: &[String], tensors: &[Tensor<f32>]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in names.iter().zip(tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let names = state.student.names().to_vec();
    let mut payloads: Vec<Vec<u8>> = Vec::with_capacity(SECTIONS.len());
    payloads.push(serde_json::to_vec(&state.config).expect("config serializes"));

    let mut meta = Vec::new();
    meta.extend_from_slice(&state.step.to_le_bytes());
    meta.extend_from_slice(&state.adam.t.to_le_bytes());
    for v in [state.teacher.lambda, state.teacher.tau_t, state.teacher.center_momentum] {
        meta.extend_from_slice(&v.to_le_bytes());
    }
    payloads.push(meta);

    for tensors in [state.student.tensors(), state.teacher.params.tensors()] {
        let mut p = Vec::new();
        put_tensor_list(&mut p, &names, tensors);
        payloads.push(p);
    }
    let mut p = Vec::new();
    put_tensor_list(&mut p, &["center".to_string()], std::slice::from_ref(&state.teacher.center));
    payloads.push(p);
    for moments in [&state.adam.m, &state.adam.v] {
        let mut p = Vec::new();
        put_tensor_list(&mut p, &names, moments);
        payloads.push(p);
    }

    let table_len: usize = SECTIONS.iter().map(|n| 2 + n.len() + 16).sum();
    let header_len = 8 + 4 + 8 + 4 + table_len;
    let total = header_len + payloads.iter().map(Vec::len).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(total as u64).to_le_bytes());
    out.extend_from_slice(&(SECTIONS.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for (name, p) in SECTIONS.iter().zip(&payloads) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        offset += p.len() as u64;
    }
    for p in payloads {
        out.extend_from_slice(&p);
    }
    out
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("{} ends early", self.what))),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Validation(format!("{}: invalid UTF-8 name", self.what)))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Validation(format!("{}: {} trailing bytes", self.what, self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_tensor_list(bytes: &[u8], what: &'static str) -> Result<(Vec<String>, Vec<Tensor<f32>>)> {
    let mut r = Reader::new(bytes, what);
    let n = r.u32()? as usize;
    let mut names = Vec::with_capacity(n.min(1 << 16));
    let mut tensors = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        names.push(r.string(name_len)?);
        let rank = r.u32()? as usize;
        if rank > crate::tensor::MAX_RANK {
            return Err(Error::Validation(format!("{what}: tensor rank {rank} too large")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Validation(format!("{what}: tensor size overflows")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Truncated(what.into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        tensors.push(Tensor::new(&shape, data)?);
    }
    r.finish()?;
    Ok((names, tensors))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Err(Error::Truncated("file ends inside the header".into()))
        } else {
            Err(Error::BadMagic)
        };
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader::new(bytes, "header");
    r.take(8)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let total = r.u64()?;
    if (bytes.len() as u64) < total {
        return Err(Error::Truncated(format!("file has {} of {total} bytes", bytes.len())));
    }
    if bytes.len() as u64 > total {
        return Err(Error::Validation(format!("{} bytes after the checkpoint end", bytes.len() as u64 - total)));
    }
    let n = r.u32()? as usize;
    let mut sections = std::collections::HashMap::new();
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = r.string(len)?;
        let offset = r.u64()? as usize;
        let size = r.u64()? as usize;
        let end = offset
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Truncated(format!("section `{name}` extends past the file end")))?;
        sections.insert(name, &bytes[offset..end]);
    }
    let section = |name: &str| {
        sections
            .get(name)
            .copied()
            .ok_or_else(|| Error::Validation(format!("checkpoint has no `{name}` section")))
    };

    let config: TrainConfig = serde_json::from_slice(section("config")?)
        .map_err(|e| Error::Validation(format!("checkpoint config: {e}")))?;
    let model = Model::new(config.model.clone())?;

    let mut meta = Reader::new(section("meta")?, "meta section");
    let step = meta.u64()?;
    let adam_t = meta.u64()?;
    let (lambda, tau_t, center_momentum) = (meta.f64()?, meta.f64()?, meta.f64()?);
    meta.finish()?;

    let params = |name: &'static str| -> Result<ModelParams<f32>> {
        let (names, tensors) = read_tensor_list(section(name)?, name)?;
        let p = ModelParams::from_parts(names, tensors)?;
        model.check_params(&p)?;
        Ok(p)
    };
    let student = params("student")?;
    let teacher_params = params("teacher")?;
    let adam_m = params("adam_m")?;
    let adam_v = params("adam_v")?;

    let (_, mut center) = read_tensor_list(section("center")?, "center")?;
    let k = config.model.dino.output_dim;
    let center = match center.pop() {
        Some(c) if center.is_empty() && c.shape() == [k] => c,
        Some(c) => {
            return Err(Error::ShapeMismatch {
                name: "center".into(),
                expected: vec![k],
                found: c.shape().to_vec(),
            })
        }
        None => return Err(Error::Validation("checkpoint center section is empty".into())),
    };

    Ok(TrainState {
        config,
        step,
        student,
        teacher: TeacherState {
            params: teacher_params,
            center,
            lambda,
            tau_t,
            center_momentum,
        },
        adam: AdamState {
            m: adam_m.tensors().to_vec(),
            v: adam_v.tensors().to_vec(),
            t: adam_t,
        },
    })
}
