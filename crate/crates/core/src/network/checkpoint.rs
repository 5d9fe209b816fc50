//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic     8 bytes   "SPINRDCK"
//! version   u32       1
//! config    u32 length, then UTF-8 TOML of the network config
//! tensors   u32 count, then per tensor:
//!             name   u16 length, then UTF-8
//!             kind   u8    0 = trainable, 1 = buffer
//!             dtype  u8    0 = f32, 1 = f64
//!             ndim   u8, then ndim × u32 extents
//!             data   row-major values of the given dtype
//! train     u8 flag; when 1:
//!             epoch u64, iter u64
//!             lr, momentum, weight_decay   f64 each
//!             velocity  u32 count, then per buffer: dtype u8, u64 length, values
//! ```

use std::path::Path;

use super::{Model, NetworkConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore};
use crate::tensor::{OptimizerState, Precision, Scalar, Sgd, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPINRDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer state and progress needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    /// Next epoch to run.
    pub epoch: u64,
    /// Optimizer steps taken so far.
    pub iter: u64,
    pub optimizer: OptimizerState<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pub train: Option<TrainState<T>>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
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

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }

    fn values<T: Scalar>(&mut self, dtype: u8, n: usize) -> Result<Vec<T>> {
        match dtype {
            0 => Ok(self
                .take(n.checked_mul(4).ok_or_else(|| corrupt("length overflow"))?)?
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect()),
            1 => Ok(self
                .take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect()),
            other => Err(corrupt(format!("unknown dtype tag {other}"))),
        }
    }
}

fn dtype_tag<T: Scalar>() -> u8 {
    match T::PRECISION {
        Precision::F32 => 0,
        Precision::F64 => 1,
    }
}

fn put_values<T: Scalar>(out: &mut Vec<u8>, data: &[T]) {
    for &v in data {
        match T::PRECISION {
            Precision::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Model<T>, train: Option<TrainState<T>>) -> Self {
        Checkpoint {
            config: model.net.config.clone(),
            params: model.params.clone(),
            train,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = toml::to_string(&self.config).map_err(|e| Error::Config(e.to_string()))?;
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, kind, tensor) in self.params.iter() {
            let name_len = u16::try_from(name.len()).map_err(|_| corrupt(format!("name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match kind {
                ParamKind::Trainable => 0,
                ParamKind::Buffer => 1,
            });
            out.push(dtype_tag::<T>());
            out.push(tensor.ndim() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_values(&mut out, tensor.data());
        }
        match &self.train {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.epoch.to_le_bytes());
                out.extend_from_slice(&state.iter.to_le_bytes());
                let Sgd {
                    lr,
                    momentum,
                    weight_decay,
                } = state.optimizer.hyper;
                for v in [lr, momentum, weight_decay] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&(state.optimizer.velocity.len() as u32).to_le_bytes());
                for buf in &state.optimizer.velocity {
                    out.push(dtype_tag::<T>());
                    out.extend_from_slice(&(buf.len() as u64).to_le_bytes());
                    put_values(&mut out, buf);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let text = r.string(len)?;
        let config: NetworkConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let len = r.u16()? as usize;
            let name = r.string(len)?;
            let kind = match r.u8()? {
                0 => ParamKind::Trainable,
                1 => ParamKind::Buffer,
                other => return Err(corrupt(format!("`{name}`: unknown kind tag {other}"))),
            };
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| corrupt(format!("`{name}`: shape overflow")))?;
            let data = r.values(dtype, n)?;
            let tensor = Tensor::new(&shape, data).map_err(|e| corrupt(format!("`{name}`: {e}")))?;
            params.add(name, tensor, kind);
        }
        let train = match r.u8()? {
            0 => None,
            1 => {
                let epoch = r.u64()?;
                let iter = r.u64()?;
                let hyper = Sgd {
                    lr: r.f64()?,
                    momentum: r.f64()?,
                    weight_decay: r.f64()?,
                };
                let count = r.u32()? as usize;
                let mut velocity = Vec::with_capacity(count.min(1 << 16));
                for _ in 0..count {
                    let dtype = r.u8()?;
                    let len = r.u64()? as usize;
                    velocity.push(r.values(dtype, len)?);
                }
                Some(TrainState {
                    epoch,
                    iter,
                    optimizer: OptimizerState { hyper, velocity },
                })
            }
            other => return Err(corrupt(format!("unknown train-state flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, params, train })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rebuilds the network from the stored config and installs the stored
    /// tensors, which must match the network's layout exactly.
    pub fn into_model(self) -> Result<Model<T>> {
        let mut model = Model::<T>::new(&self.config, 0)?;
        if model.params.len() != self.params.len() {
            return Err(corrupt(format!(
                "network has {} tensors, checkpoint has {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for ((name, kind, tensor), id) in self.params.iter().zip(model.params.ids().collect::<Vec<_>>()) {
            if model.params.name(id) != name || model.params.kind(id) != kind {
                return Err(corrupt(format!(
                    "tensor `{name}` does not match network tensor `{}`",
                    model.params.name(id)
                )));
            }
            model.params.set(name, tensor.clone())?;
        }
        Ok(model)
    }
}
