// SPDX-License-Identifier: MIT OR Apache-2.0

//! Little-endian read/write helpers with byte-offset tracking for errors.

use std::io::{self, Read, Write};

use crate::error::{Result, SaeError};

pub(crate) struct LeReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    pub fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(SaeError::Parse {
            offset: self.offset,
            msg: msg.into(),
        })
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    pub fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(SaeError::Parse {
                        offset: self.offset + got as u64,
                        msg: format!("truncated file while reading {what}"),
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let start = self.offset;
        let got = self.bytes(4, "magic")?;
        if got != expected {
            return Err(SaeError::Parse {
                offset: start,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(expected)
                ),
            });
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, what)?;
        Ok(b[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn usize(&mut self, what: &str) -> Result<usize> {
        let start = self.offset;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| SaeError::Parse {
            offset: start,
            msg: format!("{what} = {v} does not fit in memory"),
        })
    }

    /// `u32` length followed by that many UTF-8 bytes.
    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let start = self.offset;
        let raw = self.bytes(len, what)?;
        String::from_utf8(raw).map_err(|_| SaeError::Parse {
            offset: start,
            msg: format!("{what} is not valid UTF-8"),
        })
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub(crate) fn put_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f32(w: &mut impl Write, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_string(w: &mut impl Write, s: &str) -> io::Result<()> {
    let len = u32::try_from(s.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "string too long"))?;
    put_u32(w, len)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn put_f32s<'a>(
    w: &mut impl Write,
    vals: impl IntoIterator<Item = &'a f32>,
) -> io::Result<()> {
    let mut buf = Vec::with_capacity(4096);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 4096 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)
}
