use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Dtype, Prng, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MIFC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training metadata stored after the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub config_hash: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_slice<T: Scalar>(values: &[T]) -> Self {
        match T::DTYPE {
            Dtype::F32 => TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
            Dtype::F64 => TensorData::F64(values.iter().map(|v| v.as_f64()).collect()),
        }
    }

    /// Values as `T`; `None` when the stored dtype differs.
    fn to_vec<T: Scalar>(&self) -> Option<Vec<T>> {
        if self.dtype() != T::DTYPE {
            return None;
        }
        // Same width, so the conversion through f64 is exact.
        Some(match self {
            TensorData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<StoredTensor>,
    pub meta: CheckpointMeta,
}

fn running_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.running_mean"), format!("{prefix}.running_var"))
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(self.tensors.len())?.to_le_bytes());
        for t in &self.tensors {
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(Error::invalid(format!("tensor {} has dims {:?} but {} values", t.name, t.dims, t.data.len())));
            }
            out.extend_from_slice(&u32_len(t.name.len())?.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.dtype().code());
            out.extend_from_slice(&u32_len(t.dims.len())?.to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&u32_len(meta.len())?.to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("tensor name is not valid UTF-8"))?
                .to_string();
            let code = r.take(1)?[0];
            let dtype = Dtype::from_code(code).ok_or_else(|| Error::format(format!("tensor {name}: unknown dtype {code}")))?;
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                dims.push(usize::try_from(r.u64()?).map_err(|_| Error::format("dimension overflows usize"))?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
            let (n, nbytes) = n.ok_or_else(|| Error::format(format!("tensor {name}: size overflows")))?;
            let raw = r.take(nbytes)?;
            let data = match dtype {
                Dtype::F32 => TensorData::F32(raw.chunks_exact(4).map(f32::read_le).collect()),
                Dtype::F64 => TensorData::F64(raw.chunks_exact(8).map(f64::read_le).collect()),
            };
            debug_assert_eq!(data.len(), n);
            tensors.push(StoredTensor { name, dims, data });
        }
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::format(format!("checkpoint metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after checkpoint metadata"));
        }
        Ok(Checkpoint { tensors, meta })
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("length {n} does not fit the checkpoint format")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = model.to_checkpoint(meta.clone()).to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

impl<T: Scalar> Model<T> {
    /// Parameters first, then each batch-norm layer's running mean and variance.
    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        let store = self.store();
        let mut tensors: Vec<StoredTensor> = store
            .params
            .iter()
            .map(|(name, t)| StoredTensor {
                name: name.clone(),
                dims: t.shape().to_vec(),
                data: TensorData::from_slice(t.data()),
            })
            .collect();
        for (prefix, stats) in &store.bn_stats {
            let (m, v) = running_names(prefix);
            let c = stats.mean.len();
            tensors.push(StoredTensor { name: m, dims: vec![c], data: TensorData::from_slice(&stats.mean) });
            tensors.push(StoredTensor { name: v, dims: vec![c], data: TensorData::from_slice(&stats.var) });
        }
        Checkpoint { tensors, meta }
    }

    /// Rebuilds the model described by the checkpoint metadata and loads every tensor into it.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::build(ckpt.meta.model, &mut Prng::new(0))
            .map_err(|e| Error::format(format!("checkpoint model spec is unusable: {e}")))?;
        model.load_tensors(ckpt)?;
        Ok(model)
    }

    /// Overwrites parameters and running statistics by name. Nothing is
    /// modified if any tensor is missing or mismatched.
    pub fn load_tensors(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let t = ckpt
                .tensor(name)
                .ok_or_else(|| Error::format(format!("checkpoint is missing parameter {name}")))?;
            if t.dims != shape {
                return Err(Error::format(format!("parameter {name}: checkpoint shape {:?}, model shape {shape:?}", t.dims)));
            }
            t.data.to_vec().ok_or_else(|| {
                Error::format(format!("parameter {name}: checkpoint dtype {:?}, model dtype {:?}", t.data.dtype(), T::DTYPE))
            })
        };
        let store = self.store();
        let params = store
            .params
            .iter()
            .map(|(name, t)| Tensor::new(t.shape(), fetch(name, t.shape())?))
            .collect::<Result<Vec<_>>>()?;
        let stats = store
            .bn_stats
            .iter()
            .map(|(prefix, s)| {
                let (m, v) = running_names(prefix);
                Ok((fetch(&m, &[s.mean.len()])?, fetch(&v, &[s.var.len()])?))
            })
            .collect::<Result<Vec<_>>>()?;
        let store = self.store_mut();
        for ((_, dst), src) in store.params.iter_mut().zip(params) {
            *dst = src;
        }
        for ((_, dst), (m, v)) in store.bn_stats.iter_mut().zip(stats) {
            dst.mean = m;
            dst.var = v;
        }
        Ok(())
    }
}
