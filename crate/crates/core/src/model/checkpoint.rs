//! Binary checkpoint: magic `CUNW`, a version, a JSON header with the model
//! config and free-form metadata, then named little-endian f32 tensors.
//! Optimizer moments and batch-norm buffers are stored as ordinary tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Model, UNetConfig};
use crate::autodiff::Adam;
use crate::error::{Error, Result};
use crate::io::{atomic_write, put_f32s, put_u32, to_u32, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CUNW";
pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: UNetConfig,
    /// Training state and anything else the writer wants to keep.
    pub meta: Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: UNetConfig,
    meta: Value,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::FormatError(msg.into())
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let header = serde_json::to_vec(&Header {
            model: self.config,
            meta: self.meta.clone(),
        })?;
        put_u32(&mut out, to_u32(header.len(), "header length")?);
        out.extend_from_slice(&header);
        put_u32(&mut out, to_u32(self.tensors.len(), "tensor count")?);
        for t in &self.tensors {
            put_u32(&mut out, to_u32(t.name.len(), "name length")?);
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, to_u32(t.shape.len(), "rank")?);
            for &d in &t.shape {
                put_u32(&mut out, to_u32(d, "dimension")?);
            }
            put_f32s(&mut out, &t.data);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(fmt_err("bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedFormat(format!("checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| fmt_err(format!("checkpoint header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| fmt_err("tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| fmt_err("tensor size overflow"))?;
            let data = r.f32s(numel)?;
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.remaining() != 0 {
            return Err(fmt_err(format!("{} trailing bytes after checkpoint", r.remaining())));
        }
        Ok(Self {
            config: header.model,
            meta: header.meta,
            tensors,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &ckpt.encode()?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}

impl Model {
    /// Snapshot of parameters, batch-norm buffers and, if given, the
    /// optimizer state. Any `meta` object is kept; an `adam` key is added.
    pub fn to_checkpoint(&self, adam: Option<&Adam<f32>>, mut meta: Value) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        for (_, p) in self.params().iter() {
            tensors.push(NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            });
        }
        for s in self.running_stats() {
            for (suffix, v) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                tensors.push(NamedTensor {
                    name: format!("{}.{suffix}", s.name),
                    shape: vec![v.len()],
                    data: v.clone(),
                });
            }
        }
        if let Some(a) = adam {
            for (i, (_, p)) in self.params().iter().enumerate() {
                let (m, v) = a.moments(i);
                for (prefix, buf) in [(ADAM_M, m), (ADAM_V, v)] {
                    tensors.push(NamedTensor {
                        name: format!("{prefix}{}", p.name),
                        shape: p.value.shape().to_vec(),
                        data: buf.to_vec(),
                    });
                }
            }
            let am = serde_json::to_value(AdamMeta {
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                step: a.step,
            })?;
            if !meta.is_object() {
                meta = Value::Object(Default::default());
            }
            meta["adam"] = am;
        }
        Ok(Checkpoint {
            config: *self.config(),
            meta,
            tensors,
        })
    }

    /// Rebuilds a model, and the optimizer when its state was saved.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Model, Option<Adam<f32>>)> {
        let mut model = Model::build(ckpt.config, 0)?;
        let take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let t = ckpt.tensor(name).ok_or_else(|| fmt_err(format!("checkpoint lacks tensor {name}")))?;
            if t.shape != shape {
                return Err(fmt_err(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Ok(t.data.clone())
        };
        let names: Vec<(String, Vec<usize>)> =
            model.params().iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect();
        let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
        for (id, (name, shape)) in ids.iter().zip(&names) {
            let data = take(name, shape)?;
            model.params_mut().value_mut(*id).data_mut().copy_from_slice(&data);
        }
        for s in model.running_stats_mut() {
            let n = s.mean.len();
            s.mean = take(&format!("{}.running_mean", s.name), &[n])?;
            s.var = take(&format!("{}.running_var", s.name), &[n])?;
        }
        let adam = match ckpt.meta.get("adam") {
            None => None,
            Some(v) => {
                let am: AdamMeta =
                    serde_json::from_value(v.clone()).map_err(|e| fmt_err(format!("optimizer state: {e}")))?;
                let mut a = Adam::with_hyper(model.params(), am.beta1, am.beta2, am.eps);
                a.step = am.step;
                for (i, (name, shape)) in names.iter().enumerate() {
                    let m = take(&format!("{ADAM_M}{name}"), shape)?;
                    let v = take(&format!("{ADAM_V}{name}"), shape)?;
                    a.set_moments(i, m, v)?;
                }
                Some(a)
            }
        };
        Ok((model, adam))
    }
}
