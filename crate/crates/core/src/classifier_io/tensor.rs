use std::fs;
use std::path::Path;

use super::IoProtocolError;

pub const MAGIC: &[u8; 8] = b"TNSR0001";
pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    U8 = 2,
    I64 = 3,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::U8),
            3 => Some(DType::I64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
            DType::I64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::I64(_) => DType::I64,
        }
    }
}

/// Dense row-major tensor in the `TNSR0001` binary layout:
/// 8-byte magic, dtype code (u8), rank (u8), `rank` dims as u64 LE, then
/// the little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

fn malformed(msg: impl Into<String>) -> IoProtocolError {
    IoProtocolError::MalformedTensor(msg.into())
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self, IoProtocolError> {
        if dims.len() > MAX_RANK {
            return Err(malformed(format!("rank {} exceeds {MAX_RANK}", dims.len())));
        }
        let n = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .ok_or_else(|| malformed("element count overflows"))?;
        if n != data.len() as u64 {
            return Err(malformed(format!("dims {dims:?} hold {n} elements, data has {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn f32(dims: &[usize], data: Vec<f32>) -> Result<Self, IoProtocolError> {
        Tensor::new(dims.iter().map(|&d| d as u64).collect(), TensorData::F32(data))
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.dims.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoProtocolError> {
        if bytes.len() < 10 || &bytes[..8] != MAGIC {
            return Err(malformed("missing TNSR0001 magic"));
        }
        let dtype = DType::from_code(bytes[8]).ok_or_else(|| malformed(format!("unknown dtype code {}", bytes[8])))?;
        let rank = bytes[9] as usize;
        if rank > MAX_RANK {
            return Err(malformed(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let header = 10 + 8 * rank;
        if bytes.len() < header {
            return Err(malformed("truncated dims"));
        }
        let dims: Vec<u64> = bytes[10..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let n = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size() as u64))
            .ok_or_else(|| malformed("element count overflows"))?;
        let payload = &bytes[header..];
        if payload.len() as u64 != n {
            return Err(malformed(format!(
                "payload is {} bytes, dims {dims:?} need {n}",
                payload.len()
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
            DType::I64 => TensorData::I64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Tensor { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), IoProtocolError> {
        fs::write(path, self.to_bytes()).map_err(|e| IoProtocolError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, IoProtocolError> {
        let bytes = fs::read(path).map_err(|e| IoProtocolError::io(path, e))?;
        Tensor::from_bytes(&bytes)
    }
}
