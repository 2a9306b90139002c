//! Little-endian reading and writing helpers for the binary file formats.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Reader<R> {
    inner: R,
    kind: &'static str,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R, kind: &'static str) -> Self {
        Self { inner, kind }
    }

    pub(crate) fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::format(self.kind, "file is truncated"),
            _ => Error::Io(e),
        })
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.bytes(&mut b)?;
        Ok(b)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n.checked_mul(4).ok_or_else(|| self.fail("size overflow"))?];
        self.bytes(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got: [u8; 8] = self.array().map_err(|_| self.fail("missing magic"))?;
        if &got != magic {
            return Err(self.fail("bad magic bytes"));
        }
        Ok(())
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(self.fail("trailing bytes after payload")),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::Io(e)),
            }
        }
    }

    pub(crate) fn fail(&self, reason: impl Into<String>) -> Error {
        Error::format(self.kind, reason)
    }
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}
