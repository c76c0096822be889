//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    b"RBCK"
//! version  u32 (= 1)
//! hash_bits u32, hidden u32, classes u32, init_seed u64, dropout f64
//! classes × { len u32, utf-8 venue id }
//! rows u32, rows × { bucket u32, hidden × f64 }      (ascending bucket)
//! idf u32, idf × { bucket u32, f64 }                 (ascending bucket)
//! hidden × classes × f64                             (head weights)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::encoder::HashedBowEncoder;
use super::model::{ClassifierHead, LmRec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(model: &LmRec) -> Vec<u8> {
    let enc = &model.encoder;
    let head = &model.head;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&enc.hash_bits().to_le_bytes());
    out.extend_from_slice(&(head.hidden() as u32).to_le_bytes());
    out.extend_from_slice(&(head.classes() as u32).to_le_bytes());
    out.extend_from_slice(&enc.init_seed().to_le_bytes());
    out.extend_from_slice(&head.dropout_rate.to_le_bytes());
    for id in &model.venue_ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    let rows = enc.stored_rows();
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for (bucket, row) in rows {
        out.extend_from_slice(&bucket.to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let idf = enc.idf();
    out.extend_from_slice(&(idf.len() as u32).to_le_bytes());
    for (bucket, w) in idf {
        out.extend_from_slice(&bucket.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
    }
    for v in head.weights() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Data("checkpoint truncated".into()))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<LmRec> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Data("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hash_bits = r.u32()?;
    let hidden = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let init_seed = r.u64()?;
    let dropout = r.f64()?;
    if !(1..=24).contains(&hash_bits) || hidden == 0 {
        return Err(Error::Data("checkpoint header out of range".into()));
    }
    let mut venue_ids = Vec::with_capacity(classes);
    for _ in 0..classes {
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Data("venue id is not utf-8".into()))?;
        venue_ids.push(id.to_owned());
    }
    let n_rows = r.u32()?;
    let mut rows = BTreeMap::new();
    for _ in 0..n_rows {
        let bucket = r.u32()?;
        let row = (0..hidden).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        rows.insert(bucket, row);
    }
    let n_idf = r.u32()?;
    let mut idf = BTreeMap::new();
    for _ in 0..n_idf {
        let bucket = r.u32()?;
        idf.insert(bucket, r.f64()?);
    }
    let weights = (0..hidden * classes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(Error::Data("trailing bytes after checkpoint".into()));
    }
    let mut head = ClassifierHead::from_weights(hidden, classes, weights)?;
    head.dropout_rate = dropout;
    Ok(LmRec {
        encoder: HashedBowEncoder::from_parts(hash_bits, hidden, init_seed, rows, idf),
        head,
        venue_ids,
    })
}

pub fn save(model: &LmRec, path: &Path) -> Result<String> {
    let bytes = to_bytes(model);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load(path: &Path) -> Result<LmRec> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
