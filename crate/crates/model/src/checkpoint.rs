//! Binary checkpoints: configuration, head kind and named parameter arrays,
//! closed by a SHA-256 digest of everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use nets_core::error::{Error, Result};

use crate::config::NetsConfig;
use crate::model::{HeadKind, Nets};
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"NETSCKPT";
const VERSION: u32 = 1;

pub fn encode(model: &Nets) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    put_bytes(&mut out, &cfg);
    out.push(model.head.code());
    out.extend_from_slice(&(model.params.names.len() as u32).to_le_bytes());
    for (name, m) in model.params.names.iter().zip(&model.params.values) {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Nets> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("digest mismatch, the file is corrupt".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config: NetsConfig =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let code = r.take(1)?[0];
    let head = HeadKind::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown head {code}")))?;
    let mut model = Nets::new(config, head)?;
    let n = r.u32()? as usize;
    if n != model.params.names.len() {
        return Err(Error::Checkpoint(format!(
            "{n} arrays stored, the configuration needs {}",
            model.params.names.len()
        )));
    }
    for i in 0..n {
        let name = std::str::from_utf8(r.bytes()?).map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let slot = &mut model.params.values[i];
        if model.params.names[i] != name || slot.shape() != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "array {i} is {name} {rows}x{cols}, expected {} {:?}",
                model.params.names[i],
                slot.shape()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        *slot = Matrix::from_vec(rows, cols, data);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save(path: &Path, model: &Nets) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Nets> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a checkpoint and refuses it if its architecture differs from `expected`.
pub fn load_compatible(path: &Path, expected: &NetsConfig) -> Result<Nets> {
    let model = load(path)?;
    let diff = model.config.differing_fields(expected);
    if !diff.is_empty() {
        return Err(Error::Checkpoint(format!(
            "configuration mismatch in {}",
            diff.join(", ")
        )));
    }
    Ok(model)
}
