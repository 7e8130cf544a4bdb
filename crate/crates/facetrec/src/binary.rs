//! Little-endian record encoding with a trailing SHA-256 checksum.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{FormatError, FormatResult};

pub(crate) const CHECKSUM_LEN: usize = 32;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    /// Length-prefixed (u32) UTF-8 string.
    pub fn text(&mut self, v: &str) {
        self.u32(v.len() as u32);
        self.bytes(v.as_bytes());
    }
    pub fn pairs(&mut self, pairs: &[(u32, u32)]) {
        self.u64(pairs.len() as u64);
        for &(a, b) in pairs {
            self.u32(a);
            self.u32(b);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> FormatResult<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> FormatResult<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    pub fn u8(&mut self) -> FormatResult<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> FormatResult<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    pub fn u32(&mut self) -> FormatResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> FormatResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn f32(&mut self) -> FormatResult<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    pub fn digest(&mut self) -> FormatResult<[u8; 32]> {
        self.array()
    }
    pub fn text(&mut self) -> FormatResult<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FormatError::Malformed("invalid UTF-8".into()))
    }
    /// A u64 element count, rejected if it cannot fit in the rest of the file.
    pub fn count(&mut self, elem_size: usize) -> FormatResult<usize> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem_size as u64) > remaining {
            return Err(FormatError::Truncated);
        }
        Ok(n as usize)
    }
    pub fn pairs(&mut self) -> FormatResult<Vec<(u32, u32)>> {
        let n = self.count(8)?;
        (0..n).map(|_| Ok((self.u32()?, self.u32()?))).collect()
    }
}

/// Checks magic, version and checksum, then runs `parse` over the body.
///
/// When the checksum does not match, the body is still parsed to tell a
/// short file (`Truncated`) apart from altered bytes (`Checksum`).
pub(crate) fn read_container<T>(
    bytes: &[u8],
    magic: &[u8; 8],
    name: &'static str,
    version: u32,
    parse: impl Fn(&mut Reader<'_>) -> FormatResult<T>,
) -> FormatResult<T> {
    if bytes.len() < 8 {
        return Err(if magic.starts_with(bytes) {
            FormatError::Truncated
        } else {
            FormatError::BadMagic { expected: name }
        });
    }
    if &bytes[..8] != magic {
        return Err(FormatError::BadMagic { expected: name });
    }
    let mut head = Reader { buf: bytes, pos: 8 };
    let found = head.u32()?;
    if found != version {
        return Err(FormatError::Version {
            found,
            supported: version,
        });
    }
    let intact = bytes.len() >= 12 + CHECKSUM_LEN && {
        let split = bytes.len() - CHECKSUM_LEN;
        Sha256::digest(&bytes[..split]).as_slice() == &bytes[split..]
    };
    let body_end = if intact { bytes.len() - CHECKSUM_LEN } else { bytes.len() };
    let mut reader = Reader {
        buf: &bytes[..body_end],
        pos: 12,
    };
    let parsed = parse(&mut reader);
    if intact {
        let value = parsed.map_err(|e| match e {
            FormatError::Truncated => FormatError::Malformed("record extends past the end of the body".into()),
            other => other,
        })?;
        if reader.pos != body_end {
            return Err(FormatError::Malformed("unexpected bytes after the last record".into()));
        }
        return Ok(value);
    }
    match parsed {
        Err(FormatError::Truncated) => Err(FormatError::Truncated),
        Ok(_) if bytes.len() - reader.pos < CHECKSUM_LEN => Err(FormatError::Truncated),
        _ => Err(FormatError::Checksum),
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place,
/// so `path` is never left partially written.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> FormatResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        FormatError::io(path, e)
    })
}

pub(crate) fn read_file(path: &Path) -> FormatResult<Vec<u8>> {
    fs::read(path).map_err(|e| FormatError::io(path, e))
}

pub(crate) fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
