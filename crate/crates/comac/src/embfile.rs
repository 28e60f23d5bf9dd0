//! Binary token-embedding files.
//!
//! Little-endian layout:
//!
//! ```text
//! "CMAC" | u32 version = 1 | u32 d | u32 entry_count
//! per entry:
//!   u16 id_len | id bytes (UTF-8) | u32 token_count
//!   token_count x (u16 surface_len | surface bytes)
//!   token_count x d f32, row-major
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use comac_core::embedding::{EmbeddingSource, EmbeddingStore, TokenMatrix};
use comac_core::matrix::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMAC";
pub const VERSION: u32 = 1;

fn too_long(what: &str, len: usize) -> Error {
    Error::Format(format!("{what} of length {len} does not fit its length field"))
}

/// Serializes `matrices` (all of width `d`) into `out`.
pub fn write_embeddings<'a, W, I>(out: &mut W, d: usize, matrices: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TokenMatrix>,
    I::IntoIter: ExactSizeIterator,
{
    let matrices = matrices.into_iter();
    let d32 = u32::try_from(d).map_err(|_| too_long("dimension", d))?;
    let count = u32::try_from(matrices.len()).map_err(|_| too_long("entry table", matrices.len()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&d32.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for m in matrices {
        if m.dim() != d {
            return Err(Error::Format(format!(
                "entry {} has width {}, file width is {d}",
                m.entry_id,
                m.dim()
            )));
        }
        let id = m.entry_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| too_long("entry id", id.len()))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        let n = u32::try_from(m.len()).map_err(|_| too_long("token list", m.len()))?;
        buf.extend_from_slice(&n.to_le_bytes());
        for s in &m.surfaces {
            let len = u16::try_from(s.len()).map_err(|_| too_long("token surface", s.len()))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
        }
        for v in m.rows().as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| Error::io(Path::new("<embeddings>"), e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format(format!(
                "truncated file while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }
}

/// Parses an embedding file. When `expected_dim` is given, a header width
/// that differs from it is a format error.
pub fn read_embeddings(bytes: &[u8], expected_dim: Option<usize>) -> Result<EmbeddingStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let d = cur.u32("dimension")? as usize;
    if d == 0 {
        return Err(Error::Format("zero embedding width".into()));
    }
    if let Some(want) = expected_dim {
        if want != d {
            return Err(Error::Format(format!("header width {d}, expected {want}")));
        }
    }
    let count = cur.u32("entry count")?;
    let mut store = EmbeddingStore::new(d);
    for _ in 0..count {
        let id_len = cur.u16("entry id length")? as usize;
        let id = cur.string(id_len, "entry id")?;
        let n = cur.u32("token count")? as usize;
        let mut surfaces = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = cur.u16("surface length")? as usize;
            surfaces.push(cur.string(len, "token surface")?);
        }
        let n_values = n
            .checked_mul(d)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format("matrix size overflow".into()))?;
        let raw = cur.take(n_values, "matrix values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rows = Matrix::from_vec(n, d, values)?;
        if store.get(&id).is_some() {
            return Err(Error::Format(format!("duplicate entry id {id}")));
        }
        let m = TokenMatrix::new(id.clone(), surfaces, rows).map_err(|e| Error::Format(format!("entry {id}: {e}")))?;
        store.insert(m)?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last entry",
            bytes.len() - cur.pos
        )));
    }
    Ok(store)
}

pub fn import_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(&bytes, expected_dim)
}

pub fn export_embeddings(path: &Path, store: &EmbeddingStore) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let entries: Vec<&TokenMatrix> = store.iter().collect();
    write_embeddings(&mut out, store.dim(), entries)?;
    out.flush().map_err(|e| Error::io(path, e))
}
