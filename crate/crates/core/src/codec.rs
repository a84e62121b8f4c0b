//! Little-endian framing shared by the DB and embedding file formats.
//!
//! Both formats end in a CRC32C over every preceding byte.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
}

pub const CRC_LEN: usize = 4;

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
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

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    /// Appends the CRC32C trailer and returns the finished file image.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32c::crc32c(&self.buf);
        self.u32(crc);
        self.buf
    }
}

/// Cursor over a file image whose trailer has not yet been checked.
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, leaving the cursor at the first body byte.
    pub fn open(data: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self, FrameError> {
        if data.len() < 4 || &data[..4] != magic {
            return Err(FrameError::BadMagic {
                expected: *magic,
                found: data[..data.len().min(4)].to_vec(),
            });
        }
        let mut r = Reader { data, pos: 4 };
        let found = r.u32()?;
        if found != version {
            return Err(FrameError::Version {
                expected: version,
                found,
            });
        }
        Ok(r)
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    /// Body bytes still available before the CRC trailer.
    fn body_remaining(&self) -> usize {
        self.data
            .len()
            .saturating_sub(CRC_LEN)
            .saturating_sub(self.pos)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.body_remaining() < n {
            return Err(FrameError::Truncated {
                offset: self.pos,
                needed: n - self.body_remaining(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, FrameError> {
        if self.data.len() < self.pos + 4 {
            return Err(FrameError::Truncated {
                offset: self.pos,
                needed: self.pos + 4 - self.data.len(),
            });
        }
        let v = u32::from_le_bytes(self.data[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    pub fn body_u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn body_u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Verifies the body was consumed exactly and the trailer matches.
    pub fn finish(self) -> Result<(), FrameError> {
        let end = self.data.len();
        if end < self.pos + CRC_LEN {
            return Err(FrameError::Truncated {
                offset: self.pos,
                needed: self.pos + CRC_LEN - end,
            });
        }
        if end > self.pos + CRC_LEN {
            return Err(FrameError::Trailing(end - self.pos - CRC_LEN));
        }
        let stored = u32::from_le_bytes(self.data[self.pos..].try_into().unwrap());
        let computed = crc32c::crc32c(&self.data[..self.pos]);
        if stored != computed {
            return Err(FrameError::Checksum { stored, computed });
        }
        Ok(())
    }
}
