//! Binary checkpoint: `"TDSM"`, version `u32`, tensor count `u32`, then per
//! tensor a `u16` name length, the UTF-8 name, a `u8` rank, `u32` dims and
//! little-endian `f32` values. All integers are little-endian.
//!
//! Besides the model tensors a checkpoint stores a few `meta.*` tensors that
//! the parameter shapes alone cannot recover.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ConvSpec, ModelConfig, Tdsm};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TDSM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn write_tensors(w: &mut impl Write, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&u16::try_from(name.len()).map_err(|_| too_big("name"))?.to_le_bytes())?;
        w.write_all(name)?;
        let shape = t.tensor.shape();
        w.write_all(&[u8::try_from(shape.len()).map_err(|_| too_big("rank"))?])?;
        for &d in shape {
            w.write_all(&u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes())?;
        }
        for &v in t.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn too_big(what: &str) -> Error {
    Error::Checkpoint(format!("{what} too large for the format"))
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated checkpoint".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_tensors(r: &mut impl Read) -> Result<Vec<NamedTensor>> {
    if &read_array::<4>(r)? != MAGIC {
        return Err(Error::Checkpoint("not a TDSM checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = read_u32(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_array(r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_array::<1>(r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if rank == 0 || numel == 0 || numel > (1 << 28) {
            return Err(Error::Checkpoint(format!("tensor {name} has unusable shape {shape:?}")));
        }
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated data for {name}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// A model with the training state needed to resume evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Tdsm<f32>,
    /// Completed epochs when the checkpoint was written.
    pub epoch: usize,
    /// Word cap derived from the training split.
    pub max_words: usize,
}

fn meta(name: &str, values: Vec<f32>, shape: Vec<usize>) -> NamedTensor {
    NamedTensor {
        name: format!("meta.{name}"),
        tensor: Tensor::new(shape, values).expect("meta shape matches values"),
    }
}

/// Largest integer an f32 holds exactly.
const F32_EXACT: usize = 1 << 24;

impl Checkpoint {
    pub fn to_tensors(&self) -> Result<Vec<NamedTensor>> {
        let cfg = &self.model.config;
        for (what, v) in [("epoch", self.epoch), ("max_words", self.max_words), ("word_len", cfg.word_len), ("bottleneck", cfg.bottleneck)] {
            if v >= F32_EXACT {
                return Err(too_big(what));
            }
        }
        let mut out: Vec<NamedTensor> = self
            .model
            .params
            .named()
            .into_iter()
            .map(|(name, t)| NamedTensor { name, tensor: t.clone() })
            .collect();
        out.push(meta("epoch", vec![self.epoch as f32], vec![1]));
        out.push(meta("max_words", vec![self.max_words as f32], vec![1]));
        out.push(meta("word_len", vec![cfg.word_len as f32], vec![1]));
        out.push(meta("bottleneck", vec![cfg.bottleneck as f32], vec![1]));
        let strides = cfg.fcn.iter().flat_map(|l| [l.stride.0 as f32, l.stride.1 as f32]).collect();
        out.push(meta("fcn_strides", strides, vec![cfg.fcn.len(), 2]));
        Ok(out)
    }

    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut map: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for t in tensors {
            if map.insert(t.name.clone(), t.tensor).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
            }
        }
        let get = |name: &str| map.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")));
        let int = |t: &Tensor<f32>, i: usize| -> Result<usize> {
            let v = t.data()[i];
            if v < 0.0 || v.fract() != 0.0 || v as usize >= F32_EXACT {
                return Err(Error::Checkpoint(format!("bad integer {v} in meta tensor")));
            }
            Ok(v as usize)
        };
        let epoch = int(get("meta.epoch")?, 0)?;
        let max_words = int(get("meta.max_words")?, 0)?;
        let word_len = int(get("meta.word_len")?, 0)?;
        let strides = get("meta.fcn_strides")?;
        if strides.rank() != 2 || strides.shape()[1] != 2 {
            return Err(Error::Checkpoint("meta.fcn_strides must be [layers × 2]".into()));
        }
        let &[alphabet, embed_dim] = get("embedding")?.shape() else {
            return Err(Error::Checkpoint("embedding must be a matrix".into()));
        };
        let mut fcn = Vec::new();
        for i in 0..strides.shape()[0] {
            let name = format!("fcn.conv{}.weight", i + 1);
            let &[filters, _, kh, kw] = get(&name)?.shape() else {
                return Err(Error::Checkpoint(format!("{name} must have rank 4")));
            };
            fcn.push(ConvSpec {
                filters,
                kernel: (kh, kw),
                stride: (int(strides, 2 * i)?, int(strides, 2 * i + 1)?),
            });
        }
        let blocks = (0..).take_while(|k| map.contains_key(&format!("head.block{k}.down_bias"))).count();
        let bottleneck = int(get("meta.bottleneck")?, 0)?;
        let config = ModelConfig {
            alphabet,
            embed_dim,
            word_len,
            fcn,
            hidden: get("bilstm.forward.b_f")?.numel(),
            blocks,
            bottleneck,
            classes: get("head.out.bias")?.numel(),
        };
        let shapes = config
            .shapes()
            .map_err(|e| Error::Checkpoint(format!("inconsistent architecture: {e}")))?;

        let params = shapes.try_map(&mut |name, shape| {
            let t = map
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        })?;
        if let Some(extra) = map.keys().find(|k| !k.starts_with("meta.")) {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint {
            model: Tdsm::from_params(config, params)?,
            epoch,
            max_words,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            write_tensors(&mut w, &self.to_tensors()?)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = BufReader::new(File::open(path)?);
        Self::from_tensors(read_tensors(&mut r)?)
    }
}
