//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Truncated;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], Truncated> {
        let end = self.pos.checked_add(n).ok_or(Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, Truncated> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, Truncated> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, Truncated> {
        Ok(f32::from_bits(self.u32()?))
    }

    /// `u32` byte length followed by that many bytes.
    pub fn bytes(&mut self) -> Result<&'a [u8], Truncated> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_bytes<W: Write>(w: &mut W, b: &[u8]) -> io::Result<()> {
    let n = u32::try_from(b.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "field longer than 4 GiB"))?;
    put_u32(w, n)?;
    w.write_all(b)
}

/// Splits `magic` into its family prefix (up to the last space) and checks
/// `buf` against it. `Ok(true)` on an exact match, `Ok(false)` on the same
/// family with another version, `Err` when the family does not match.
pub(crate) fn check_magic(buf: &[u8], magic: &[u8]) -> Result<bool, ()> {
    let family = &magic[..magic.iter().rposition(|&b| b == b' ').unwrap_or(magic.len()) + 1];
    if buf.starts_with(magic) {
        Ok(true)
    } else if buf.starts_with(family) {
        Ok(false)
    } else {
        Err(())
    }
}

/// Version token following the family prefix, for error messages.
pub(crate) fn found_version(buf: &[u8], family_len: usize) -> String {
    let rest = &buf[family_len.min(buf.len())..];
    let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len()).min(16);
    String::from_utf8_lossy(&rest[..end]).into_owned()
}
