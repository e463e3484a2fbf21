//! Little-endian byte framing shared by the binary file formats.

use crate::FormatError;

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.bytes(magic);
        w.u16(version);
        w
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// Appends the CRC-32 of everything written so far.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, leaving the cursor after them.
    pub fn open(buf: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self, FormatError> {
        let mut r = Reader { buf, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        if &found != magic {
            return Err(FormatError::BadMagic { expected: *magic, found });
        }
        let v = r.u16()?;
        if v != version {
            return Err(FormatError::Version { expected: version, found: v });
        }
        Ok(r)
    }

    /// Fails with `Truncated` unless `n` more bytes plus the trailing
    /// checksum are available.
    pub fn require(&self, n: usize) -> Result<(), FormatError> {
        let needed = self.pos.saturating_add(n).saturating_add(4);
        if needed > self.buf.len() {
            return Err(FormatError::Truncated { needed, available: self.buf.len() });
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.buf.len(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        self.array().map(u16::from_le_bytes)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        self.array().map(u32::from_le_bytes)
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        self.array().map(u64::from_le_bytes)
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        self.array().map(f32::from_le_bytes)
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        self.array().map(f64::from_le_bytes)
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        self.require(n)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| FormatError::Malformed(e.to_string()))
    }

    /// Verifies the trailing checksum; it must be the last four bytes.
    pub fn finish(mut self) -> Result<(), FormatError> {
        let body = self.pos;
        let stored = self.u32()?;
        if self.pos != self.buf.len() {
            return Err(FormatError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        let computed = crc32fast::hash(&self.buf[..body]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(())
    }
}

/// Corrupted bytes can surface as structural nonsense before the checksum
/// is reached; prefer reporting those as a checksum mismatch when the
/// trailing CRC disagrees.
pub(crate) fn blame_checksum(bytes: &[u8], err: crate::Error) -> crate::Error {
    if let crate::Error::Format(FormatError::Malformed(_)) | crate::Error::InvalidConfig { .. } = err {
        if bytes.len() >= 4 {
            let (body, tail) = bytes.split_at(bytes.len() - 4);
            let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
            let computed = crc32fast::hash(body);
            if stored != computed {
                return FormatError::Checksum { stored, computed }.into();
            }
        }
    }
    err
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so a failure never leaves a partial file behind.
pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
