//! `"SADW"`, version u16, then per tensor: name_len u16, UTF-8 name, rank u8,
//! dims u32[rank], f32 values; all little-endian. Entries run to end of file.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{dedup_params, Param, Tensor};

use super::F;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SADW";
const VERSION: u16 = 1;

pub fn encode_checkpoint(params: &[Param<F>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in dedup_params(params.to_vec()) {
        let data = p.read();
        let name = data.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(data.value.rank() as u8);
        for &d in data.value.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint {
                tensor: what.to_string(),
                message: format!("truncated at byte {}", self.bytes.len()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parse every entry into `(name, tensor)` in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<F>)>> {
    let header_err = |message: String| Error::Checkpoint {
        tensor: "<header>".into(),
        message,
    };
    if bytes.len() < 6 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(header_err("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(header_err(format!("unsupported version {version}")));
    }
    let mut cur = Cursor { bytes, pos: 6 };
    let mut entries = Vec::new();
    while cur.pos < bytes.len() {
        let len = u16::from_le_bytes(cur.take(2, "<entry>")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(cur.take(len, "<entry>")?)
            .map_err(|e| header_err(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.take(1, &name)?[0] as usize;
        let dims: Vec<usize> = cur
            .take(4 * rank, &name)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let count: usize = dims.iter().product();
        let values = cur
            .take(4 * count, &name)?
            .chunks_exact(4)
            .map(|c| F::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::from_vec(&dims, values).map_err(|e| Error::Checkpoint {
            tensor: name.clone(),
            message: e.to_string(),
        })?;
        entries.push((name, tensor));
    }
    Ok(entries)
}

/// Copy checkpoint values into `params` by name.
///
/// Every parameter must be present with matching dims, and the file must hold nothing
/// else; the error names the first offending tensor. Momentum buffers and gradients are
/// reset.
pub fn restore(params: &[Param<F>], bytes: &[u8]) -> Result<()> {
    let params = dedup_params(params.to_vec());
    let entries = decode_checkpoint(bytes)?;
    let mut by_name: HashMap<&str, &Tensor<F>> = HashMap::with_capacity(entries.len());
    for (name, t) in &entries {
        if by_name.insert(name, t).is_some() {
            return Err(Error::Checkpoint {
                tensor: name.clone(),
                message: "appears twice".into(),
            });
        }
    }
    for p in &params {
        let name = p.name();
        let Some(t) = by_name.remove(name.as_str()) else {
            return Err(Error::Checkpoint {
                tensor: name,
                message: "missing from checkpoint".into(),
            });
        };
        if t.dims() != p.dims() {
            return Err(Error::Checkpoint {
                message: format!("dims {:?} in file, model expects {:?}", t.dims(), p.dims()),
                tensor: name,
            });
        }
    }
    if let Some((name, _)) = entries.iter().find(|(n, _)| by_name.contains_key(n.as_str())) {
        return Err(Error::Checkpoint {
            tensor: name.clone(),
            message: "not part of this model".into(),
        });
    }
    let lookup: HashMap<&str, &Tensor<F>> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for p in &params {
        let mut d = p.write();
        d.value = lookup[d.name.as_str()].clone();
        d.grad.fill(0.0);
        d.velocity.fill(0.0);
    }
    Ok(())
}

pub fn save_checkpoint(params: &[Param<F>], path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(params: &[Param<F>], path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(params, &bytes)
}
