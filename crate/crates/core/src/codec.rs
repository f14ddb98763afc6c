//! Little-endian byte encoding shared by the on-disk formats.
//!
//! Every format starts with an 8-byte magic whose last four bytes are the
//! version (`MVID0001`, `MEMB0001`, `MDEN0001`). Readers never allocate
//! from a header field before checking it against the bytes actually
//! present.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Self {
        Writer {
            buf: magic.to_vec(),
        }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("extent fits in u32"));
    }

    /// CRC-32 of everything written so far (magic included).
    pub fn header_checksum(&mut self) {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn f32s(&mut self, vs: impl IntoIterator<Item = f32>) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates the magic, reporting a version mismatch separately from a
    /// foreign file.
    pub fn new(buf: &'a [u8], magic: &[u8; 8], kind: &'static str) -> Result<Self, FormatError> {
        if buf.len() < 8 {
            if !magic.starts_with(buf) || buf.is_empty() {
                return Err(FormatError::BadMagic {
                    expected: String::from_utf8_lossy(magic).into(),
                    found: buf.to_vec(),
                });
            }
            return Err(FormatError::Truncated {
                needed: 8,
                available: buf.len(),
            });
        }
        if buf[..4] != magic[..4] {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(magic).into(),
                found: buf[..8].to_vec(),
            });
        }
        if buf[4..8] != magic[4..8] {
            return Err(FormatError::BadVersion {
                kind,
                expected: String::from_utf8_lossy(&magic[4..]).into(),
                found: String::from_utf8_lossy(&buf[4..8]).into(),
            });
        }
        Ok(Reader { buf, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated {
            needed: usize::MAX,
            available: self.buf.len(),
        })?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated {
                needed: end,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// A nonzero extent.
    pub fn extent(&mut self, field: &'static str) -> Result<usize, FormatError> {
        let v = self.u32()? as usize;
        if v == 0 {
            return Err(FormatError::InvalidField {
                field,
                detail: "zero extent".into(),
            });
        }
        Ok(v)
    }

    /// Reads the stored CRC-32 and compares it with the bytes before it.
    pub fn verify_header_checksum(&mut self) -> Result<(), FormatError> {
        let computed = crc32fast::hash(&self.buf[..self.pos]);
        let stored = self.u32()?;
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(())
    }

    /// Ensures `count` values of `width` bytes remain before reading them.
    fn reserve(&self, count: usize, width: usize) -> Result<(), FormatError> {
        let needed = count
            .checked_mul(width)
            .and_then(|b| b.checked_add(self.pos))
            .unwrap_or(usize::MAX);
        if needed > self.buf.len() {
            return Err(FormatError::Truncated {
                needed,
                available: self.buf.len(),
            });
        }
        Ok(())
    }

    pub fn f64s(&mut self, count: usize) -> Result<Vec<f64>, FormatError> {
        self.reserve(count, 8)?;
        let bytes = self.take(count * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        self.reserve(count, 4)?;
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_and_version_are_distinct_errors() {
        let magic = b"TEST0001";
        assert!(matches!(
            Reader::new(b"XEST0001", magic, "test").err(),
            Some(FormatError::BadMagic { .. })
        ));
        assert!(matches!(
            Reader::new(b"TEST0002", magic, "test").err(),
            Some(FormatError::BadVersion { .. })
        ));
        assert!(matches!(
            Reader::new(b"TES", magic, "test").err(),
            Some(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn huge_counts_do_not_allocate() {
        let mut w = Writer::new(b"TEST0001");
        w.u32(1);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes, b"TEST0001", "test").unwrap();
        r.u32().unwrap();
        assert!(matches!(
            r.f64s(usize::MAX / 2),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn checksum_roundtrip() {
        let mut w = Writer::new(b"TEST0001");
        w.u32(42);
        w.header_checksum();
        let mut bytes = w.finish();
        let mut r = Reader::new(&bytes, b"TEST0001", "test").unwrap();
        assert_eq!(r.u32().unwrap(), 42);
        r.verify_header_checksum().unwrap();
        r.finish().unwrap();
        bytes[9] ^= 1;
        let mut r = Reader::new(&bytes, b"TEST0001", "test").unwrap();
        r.u32().unwrap();
        assert!(r.verify_header_checksum().is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(read_file(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
