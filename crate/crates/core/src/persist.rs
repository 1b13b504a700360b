//! Binary archive of named f64 matrices, plus file hashing.
//!
//! Layout (little endian): magic `CVIRARCH`, u32 version, u32 entry count,
//! then per entry: u32 name length, name bytes, u32 rows, u32 cols, f64 data.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Mat;

const MAGIC: &[u8; 8] = b"CVIRARCH";
pub const ARCHIVE_VERSION: u32 = 1;

pub fn encode_archive(entries: &[(String, &Mat)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, m) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity(format!("{}: archive truncated", self.path.display())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_archive(buf: &[u8], path: &Path) -> Result<Vec<(String, Mat)>> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::Integrity(format!("{}: not a matrix archive", path.display())));
    }
    let version = r.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: ARCHIVE_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Integrity(format!("{}: entry name is not UTF-8", path.display())))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let bytes = r.take(rows * cols * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Mat::from_shape_vec((rows, cols), data).expect("sized from header")));
    }
    if r.pos != buf.len() {
        return Err(Error::Integrity(format!("{}: trailing bytes after archive", path.display())));
    }
    Ok(out)
}

/// Writes the archive and returns its SHA-256.
pub fn write_archive(path: &Path, entries: &[(String, &Mat)]) -> Result<String> {
    crate::corpus::ensure_parent(path)?;
    let bytes = encode_archive(entries);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Reads an archive, checking its SHA-256 when `expected_sha` is given.
pub fn read_archive(path: &Path, expected_sha: Option<&str>) -> Result<Vec<(String, Mat)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Some(expected) = expected_sha {
        let found = sha256_hex(&bytes);
        if found != expected {
            return Err(Error::Integrity(format!(
                "{}: checksum {found} does not match recorded {expected}",
                path.display()
            )));
        }
    }
    decode_archive(&bytes, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    crate::corpus::hex(&Sha256::digest(bytes))
}

/// Hash of a value's JSON form; struct fields serialize in declaration order.
pub fn json_hash<T: serde::Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let a = Mat::from_shape_fn((3, 2), |(r, c)| (r as f64 + 0.1) / (c as f64 + 3.0));
        let b = Mat::zeros((0, 4));
        let sha = write_archive(&path, &[("a".into(), &a), ("empty".into(), &b)]).unwrap();
        let back = read_archive(&path, Some(&sha)).unwrap();
        assert_eq!(back[0], ("a".to_string(), a));
        assert_eq!(back[1].1.dim(), (0, 4));
    }

    #[test]
    fn corruption_and_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let m = Mat::ones((2, 2));
        let sha = write_archive(&path, &[("m".into(), &m)]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_archive(&path, Some(&sha)), Err(Error::Integrity(_))));

        let mut old = encode_archive(&[("m".into(), &m)]);
        old[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_archive(&old, &path), Err(Error::Version { found: 0, .. })));
        assert!(decode_archive(&old[..10], &path).is_err());
    }
}
