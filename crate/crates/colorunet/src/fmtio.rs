//! Little-endian binary I/O with a trailing CRC32, shared by the
//! discretizer and checkpoint file formats.
//!
//! A writer hashes every byte as it goes and appends the checksum on
//! `finish`. A reader hashes every byte as it is consumed and checks the
//! final four bytes against the running digest, so truncation and
//! corruption both surface as format errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub struct ChecksumWriter {
    inner: BufWriter<File>,
    hasher: crc32fast::Hasher,
    path: PathBuf,
}

impl ChecksumWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(ChecksumWriter {
            inner: BufWriter::new(file),
            hasher: crc32fast::Hasher::new(),
            path: path.to_path_buf(),
        })
    }

    pub fn bytes(&mut self, data: &[u8]) -> Result<()> {
        self.hasher.update(data);
        self.inner
            .write_all(data)
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    /// Appends the CRC32 of everything written so far and flushes.
    pub fn finish(mut self) -> Result<()> {
        let sum = self.hasher.clone().finalize();
        self.inner
            .write_all(&sum.to_le_bytes())
            .and_then(|_| self.inner.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub struct ChecksumReader {
    inner: BufReader<File>,
    hasher: crc32fast::Hasher,
    path: PathBuf,
    /// Bytes remaining before the trailing checksum.
    remaining: u64,
}

impl ChecksumReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        if len < 4 {
            return Err(Error::Format(format!(
                "{}: file too short to hold a checksum",
                path.display()
            )));
        }
        Ok(ChecksumReader {
            inner: BufReader::new(file),
            hasher: crc32fast::Hasher::new(),
            path: path.to_path_buf(),
            remaining: len - 4,
        })
    }

    pub fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        if buf.len() as u64 > self.remaining {
            return Err(Error::Format(format!(
                "{}: truncated file",
                self.path.display()
            )));
        }
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.hasher.update(buf);
        self.remaining -= buf.len() as u64;
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Checks the four-byte magic at the current position.
    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        if &b != magic {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.path.display(),
                b,
                magic
            )));
        }
        Ok(())
    }

    /// Consumes the trailing checksum; errors if payload bytes remain
    /// unread or the digest disagrees.
    pub fn finish(mut self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::Format(format!(
                "{}: {} unread bytes before checksum",
                self.path.display(),
                self.remaining
            )));
        }
        let expected = self.hasher.clone().finalize();
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::io(&self.path, e))?;
        let stored = u32::from_le_bytes(b);
        if stored != expected {
            return Err(Error::Format(format!(
                "{}: checksum mismatch (stored {stored:#010x}, computed {expected:#010x})",
                self.path.display()
            )));
        }
        Ok(())
    }
}
