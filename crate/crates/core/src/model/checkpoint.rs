//! TXRF binary tensor container.
//!
//! ```text
//! "TXRF" | version u32 | record*
//! record = name_len u32 | name bytes | dtype u8 | rank u8 | dims u32 x rank | payload
//! ```
//!
//! All integers are little-endian. dtype 0 is an `f32` tensor, dtype 1 an
//! opaque byte string (rank 1).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"TXRF";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_BYTES: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32 { dims: Vec<usize>, values: Vec<f32> },
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub payload: Payload,
}

impl Record {
    pub fn tensor<S: Scalar>(name: impl Into<String>, t: &Tensor<S>) -> Self {
        let values = t.data().iter().map(|v| v.as_f64() as f32).collect();
        Self { name: name.into(), payload: Payload::F32 { dims: t.shape().to_vec(), values } }
    }

    pub fn bytes(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self { name: name.into(), payload: Payload::Bytes(bytes) }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>> {
        match &self.payload {
            Payload::F32 { dims, values } => Tensor::new(dims, values.iter().map(|&v| S::lit(v as f64)).collect()),
            Payload::Bytes(_) => Err(Error::format("checkpoint", format!("{} holds bytes, not a tensor", self.name))),
        }
    }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        match &r.payload {
            Payload::F32 { dims, values } => {
                out.push(DTYPE_F32);
                out.push(dims.len() as u8);
                dims.iter().for_each(|&d| out.extend_from_slice(&(d as u32).to_le_bytes()));
                values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Payload::Bytes(bytes) => {
                out.push(DTYPE_BYTES);
                out.push(1);
                out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                out.extend_from_slice(bytes);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::format("checkpoint", "missing TXRF magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("checkpoint", "record name is not UTF-8"))?;
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().product::<usize>();
        let payload = match dtype {
            DTYPE_F32 => Payload::F32 {
                values: r.take(count * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect(),
                dims,
            },
            DTYPE_BYTES if rank == 1 => Payload::Bytes(r.take(count)?.to_vec()),
            other => return Err(Error::format("checkpoint", format!("record {name}: bad dtype {other} with rank {rank}"))),
        };
        records.push(Record { name, payload });
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, encode(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// One record per store entry, named `prefix + name`, in store order.
pub fn store_records<S: Scalar>(store: &ParamStore<S>, prefix: &str) -> Vec<Record> {
    store.iter().map(|(_, p)| Record::tensor(format!("{prefix}{}", p.name), &p.value)).collect()
}

/// Fills every store entry from the record named `prefix + name`. Missing
/// entries and shape mismatches are format errors.
pub fn load_store<S: Scalar>(store: &mut ParamStore<S>, records: &[Record], prefix: &str) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, format!("{prefix}{}", p.name))).collect();
    for (id, name) in ids {
        let record = records.iter().find(|r| r.name == name).ok_or_else(|| Error::format("checkpoint", format!("missing record {name}")))?;
        let value = record.to_tensor::<S>()?;
        let p = store.get_mut(id);
        if value.shape() != p.value.shape() {
            return Err(Error::format("checkpoint", format!("{name}: shape {:?}, expected {:?}", value.shape(), p.value.shape())));
        }
        p.value = value;
    }
    Ok(())
}
