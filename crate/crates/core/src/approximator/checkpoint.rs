//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "FFCK"
//! version    u32      1
//! meta_len   u32      length of the JSON metadata that follows
//! meta       bytes    UTF-8 JSON
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8       1 = f32, 2 = f64
//!   ndim     u32, dims u32 * ndim
//!   data     element bytes, row-major
//! ```

use std::path::Path;

use super::network::{Network, NetworkSpec, Params};
use super::scalar::Scalar;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"FFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

fn to_data<T: Scalar>(v: &[T]) -> TensorData {
    match T::DTYPE {
        1 => TensorData::F32(v.iter().map(|x| x.as_f64() as f32).collect()),
        _ => TensorData::F64(v.iter().map(|x| x.as_f64()).collect()),
    }
}

fn from_data<T: Scalar>(d: &TensorData) -> Result<Vec<T>, NnError> {
    match (d, T::DTYPE) {
        (TensorData::F32(v), 1) => Ok(v.iter().map(|x| T::of(f64::from(*x))).collect()),
        (TensorData::F64(v), 2) => Ok(v.iter().map(|x| T::of(*x)).collect()),
        _ => Err(NnError::Checkpoint {
            offset: 0,
            message: "tensor dtype does not match the requested network precision".into(),
        }),
    }
}

impl Checkpoint {
    /// Append a network's tensors under `prefix.` and record its spec in the
    /// metadata under `prefix`.
    pub fn push_network<T: Scalar>(&mut self, prefix: &str, net: &Network<T>) {
        if !self.metadata.is_object() {
            self.metadata = serde_json::json!({});
        }
        let spec = serde_json::to_value(net.spec()).expect("spec serializes");
        self.metadata
            .as_object_mut()
            .expect("object")
            .entry("networks")
            .or_insert_with(|| serde_json::json!({}))
            .as_object_mut()
            .expect("object")
            .insert(prefix.to_string(), spec);
        for (name, shape, data) in net.params().tensors() {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}.{name}"),
                shape,
                data: to_data(data),
            });
        }
    }

    pub fn network<T: Scalar>(&self, prefix: &str) -> Result<Network<T>, NnError> {
        let spec_value = self
            .metadata
            .get("networks")
            .and_then(|n| n.get(prefix))
            .ok_or_else(|| NnError::Checkpoint {
                offset: 0,
                message: format!("no network `{prefix}` in checkpoint"),
            })?;
        let spec: NetworkSpec = serde_json::from_value(spec_value.clone()).map_err(|e| NnError::Checkpoint {
            offset: 0,
            message: format!("network `{prefix}` spec: {e}"),
        })?;
        let probe = Network::<T>::new(spec.clone(), 0);
        let mut params: Params<T> = probe.zero_grads();
        let names: Vec<(String, Vec<usize>)> = probe
            .params()
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        for ((name, shape), dst) in names.into_iter().zip(params.tensors_mut()) {
            let full = format!("{prefix}.{name}");
            let t = self.tensor(&full).ok_or_else(|| NnError::Checkpoint {
                offset: 0,
                message: format!("missing tensor `{full}`"),
            })?;
            if t.shape != shape {
                return Err(NnError::Checkpoint {
                    offset: 0,
                    message: format!("tensor `{full}` has shape {:?}, expected {:?}", t.shape, shape),
                });
            }
            *dst = from_data(&t.data)?;
        }
        Network::from_params(spec, params)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        match &self.tensor(name)?.data {
            TensorData::F64(v) if v.len() == 1 => Some(v[0]),
            TensorData::F32(v) if v.len() == 1 => Some(f64::from(v[0])),
            _ => None,
        }
    }

    pub fn push_scalar(&mut self, name: &str, value: f64) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: vec![1],
            data: TensorData::F64(vec![value]),
        });
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("json serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let tag = match t.data {
                TensorData::F32(_) => 1u8,
                TensorData::F64(_) => 2u8,
            };
            out.push(tag);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(NnError::Checkpoint {
                offset: 0,
                message: format!("bad magic {magic:02x?}, expected \"FFCK\""),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let meta_len = r.u32()? as usize;
        let meta_at = r.pos;
        let metadata = serde_json::from_slice(r.take(meta_len)?).map_err(|e| NnError::Checkpoint {
            offset: meta_at,
            message: format!("metadata: {e}"),
        })?;
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name_at = r.pos;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| NnError::Checkpoint {
                offset: name_at,
                message: "tensor name is not UTF-8".into(),
            })?;
            let tag_at = r.pos;
            let tag = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = match tag {
                1 => TensorData::F32(r.take(n * 4)?.chunks_exact(4).map(f32::read_le).collect()),
                2 => TensorData::F64(r.take(n * 8)?.chunks_exact(8).map(f64::read_le).collect()),
                other => {
                    return Err(NnError::Checkpoint {
                        offset: tag_at,
                        message: format!("unknown dtype tag {other}"),
                    })
                }
            };
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint {
                offset: r.pos,
                message: "trailing bytes after last tensor".into(),
            });
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            NnError::Checkpoint { offset, message } => NnError::Checkpoint {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::Checkpoint {
                offset: self.pos,
                message: format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
