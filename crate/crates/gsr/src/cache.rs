//! Preprocessed dataset cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GSR-DS v1\n"
//! u64 num_users, u64 num_items
//! num_items × { u32 len, utf-8 item key }            (item id = position + 1)
//! num_users × { u32 len, utf-8 user key, u32 n, n × u32 item id }
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use gsr_core::data::InteractionDataset;

use crate::codec::{check_magic, found_version, put_bytes, put_u32, put_u64, ByteReader, Truncated};

pub const MAGIC: &[u8] = b"GSR-DS v1\n";

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("not a GSR-DS file")]
    NotCache,
    #[error("unsupported GSR-DS version {found:?} (expected v1)")]
    Version { found: String },
    #[error("GSR-DS file is truncated")]
    Truncated,
    #[error("corrupt GSR-DS file: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<Truncated> for CacheError {
    fn from(_: Truncated) -> Self {
        CacheError::Truncated
    }
}

pub fn encode(ds: &InteractionDataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_to(&mut out, ds).expect("writing to memory");
    out
}

fn write_to<W: Write>(w: &mut W, ds: &InteractionDataset) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u64(w, ds.num_users() as u64)?;
    put_u64(w, ds.num_items() as u64)?;
    for item in &ds.items {
        put_bytes(w, item.as_bytes())?;
    }
    for (user, seq) in ds.users.iter().zip(&ds.sequences) {
        put_bytes(w, user.as_bytes())?;
        put_u32(w, seq.len() as u32)?;
        for &i in seq {
            put_u32(w, i)?;
        }
    }
    Ok(())
}

pub fn decode(buf: &[u8]) -> Result<InteractionDataset, CacheError> {
    match check_magic(buf, MAGIC) {
        Ok(true) => {}
        Ok(false) => return Err(CacheError::Version { found: found_version(buf, 7) }),
        Err(()) => return Err(CacheError::NotCache),
    }
    let mut r = ByteReader::new(&buf[MAGIC.len()..]);
    let num_users = r.u64()? as usize;
    let num_items = r.u64()? as usize;
    // every record needs at least four bytes
    if num_users.saturating_add(num_items) > r.remaining() / 4 {
        return Err(CacheError::Truncated);
    }
    let text = |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|_| CacheError::Invalid("key is not UTF-8".into()));
    let items = (0..num_items).map(|_| text(r.bytes()?)).collect::<Result<Vec<_>, _>>()?;
    let mut users = Vec::with_capacity(num_users);
    let mut sequences = Vec::with_capacity(num_users);
    for _ in 0..num_users {
        users.push(text(r.bytes()?)?);
        let n = r.u32()? as usize;
        let raw = r.take(n.checked_mul(4).ok_or(CacheError::Truncated)?)?;
        let seq: Vec<u32> = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        if seq.is_empty() {
            return Err(CacheError::Invalid(format!("user {:?} has no interactions", users.last().unwrap())));
        }
        if let Some(&bad) = seq.iter().find(|&&i| i == 0 || i as usize > num_items) {
            return Err(CacheError::Invalid(format!("item id {bad} out of range 1..={num_items}")));
        }
        sequences.push(seq);
    }
    if r.remaining() != 0 {
        return Err(CacheError::Invalid(format!("{} trailing bytes", r.remaining())));
    }
    Ok(InteractionDataset { users, items, sequences })
}

pub fn save(ds: &InteractionDataset, path: &Path) -> Result<(), CacheError> {
    let io = |source| CacheError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    write_to(&mut w, ds).and_then(|_| w.flush()).map_err(io)
}

pub fn load(path: &Path) -> Result<InteractionDataset, CacheError> {
    let buf = fs::read(path).map_err(|source| CacheError::Io { path: path.display().to_string(), source })?;
    decode(&buf)
}
