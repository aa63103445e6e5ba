//! Little-endian framing shared by model containers and embedding files.
//!
//! ```text
//! magic[4] | version u16 | kind u8 | body_len u64 | body[body_len] | crc32 u32
//! ```
//!
//! The CRC-32 (IEEE) covers every byte before it. A file whose length does
//! not match `body_len` is rejected as a framing error before the checksum
//! is consulted, so truncation never yields a partial value.

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 4 + 2 + 1 + 8;
pub const FOOTER_LEN: usize = 4;

pub fn frame(magic: [u8; 4], version: u16, kind: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + FOOTER_LEN);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framed<'a> {
    pub version: u16,
    pub kind: u8,
    pub body: &'a [u8],
}

/// Validate magic, length and checksum; version and kind are left to the
/// caller.
pub fn unframe(magic: [u8; 4], bytes: &[u8]) -> Result<Framed<'_>> {
    if bytes.len() < HEADER_LEN + FOOTER_LEN {
        return Err(Error::Framing(format!(
            "{} bytes is shorter than the {}-byte minimum",
            bytes.len(),
            HEADER_LEN + FOOTER_LEN
        )));
    }
    if bytes[..4] != magic {
        return Err(Error::Framing(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let body_len = u64::from_le_bytes(bytes[7..15].try_into().expect("8 bytes"));
    let expected = (HEADER_LEN as u64)
        .checked_add(body_len)
        .and_then(|n| n.checked_add(FOOTER_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(Error::Framing(format!(
            "declared body of {body_len} bytes does not fit a {}-byte file",
            bytes.len()
        )));
    }
    let split = bytes.len() - FOOTER_LEN;
    let stored = u32::from_le_bytes(bytes[split..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..split]);
    if stored != computed {
        return Err(Error::Corrupt { stored, computed });
    }
    Ok(Framed {
        version: u16::from_le_bytes([bytes[4], bytes[5]]),
        kind: bytes[6],
        body: &bytes[HEADER_LEN..split],
    })
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Length-prefixed (u64 element count) float32 array.
    pub fn f32s(&mut self, values: impl ExactSizeIterator<Item = f32>) {
        self.u64(values.len() as u64);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Framing(format!(
                    "need {n} bytes at body offset {}, {} remain",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Framing(format!("invalid UTF-8 string: {e}")))
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = usize::try_from(self.u64()?)
            .map_err(|_| Error::Framing("array length overflows usize".into()))?;
        let bytes_len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Framing("array length overflows usize".into()))?;
        let raw = self.take(bytes_len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Framing(format!(
                "{} trailing bytes in body",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_checks() {
        let mut w = Writer::new();
        w.u32(7);
        w.str("abc");
        w.f32s([1.5f32, -2.0].into_iter());
        let bytes = frame(*b"TEST", 3, 9, &w.into_inner());
        let f = unframe(*b"TEST", &bytes).unwrap();
        assert_eq!((f.version, f.kind), (3, 9));
        let mut r = Reader::new(f.body);
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.str().unwrap(), "abc");
        assert_eq!(r.f32s().unwrap(), vec![1.5, -2.0]);
        r.finish().unwrap();

        assert!(matches!(unframe(*b"NOPE", &bytes), Err(Error::Framing(_))));
        assert!(matches!(
            unframe(*b"TEST", &bytes[..bytes.len() - 1]),
            Err(Error::Framing(_))
        ));
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 2] ^= 0x10;
        assert!(matches!(unframe(*b"TEST", &flipped), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn reader_rejects_overlong_arrays() {
        let mut w = Writer::new();
        w.u64(u64::MAX / 2);
        let body = w.into_inner();
        assert!(Reader::new(&body).f32s().is_err());
    }
}
