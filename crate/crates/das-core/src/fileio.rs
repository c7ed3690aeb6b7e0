//! Byte-level helpers shared by the binary file formats.

use crate::error::{DasError, Result};
use byteorder::{LittleEndian, ReadBytesExt};
use std::path::Path;

pub(crate) fn format_err(path: &Path, offset: u64, detail: impl Into<String>) -> DasError {
    DasError::Format {
        path: path.display().to_string(),
        offset,
        detail: detail.into(),
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    pub fn err(&self, detail: impl Into<String>) -> DasError {
        format_err(self.path, self.pos as u64, detail)
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut s = self.take(4, what)?;
        Ok(s.read_u32::<LittleEndian>().unwrap())
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        let mut s = self.take(4, what)?;
        Ok(s.read_f32::<LittleEndian>().unwrap())
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let mut s = self.take(2, what)?;
        Ok(s.read_u16::<LittleEndian>().unwrap())
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let mut s = self.take(8, what)?;
        Ok(s.read_f64::<LittleEndian>().unwrap())
    }

    pub fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!(
                "{} trailing bytes after the declared payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
