//! `NDXR` recording files.
//!
//! Little-endian layout: magic `NDXR` | version u16 | label u8 | channels u16 |
//! rate f32 | samples u64 | subject length u16 + UTF-8 | channel-major f32 payload.
//! Label 255 means unlabeled.

use std::path::Path;

use super::{Label, RawRecording};
use crate::error::{Error, FormatError, Result};
use crate::numerics::Tensor;

pub const RECORDING_MAGIC: [u8; 4] = *b"NDXR";
pub const RECORDING_VERSION: u16 = 1;
const UNLABELED: u8 = 255;

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], FormatError> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(FormatError::Truncated {
                what,
                expected: n as u64,
                found: left as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &'static str) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &'static str) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &'static str) -> std::result::Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Serializes a recording. Samples are narrowed to f32.
pub fn write_recording(rec: &RawRecording) -> Result<Vec<u8>> {
    let channels = u16::try_from(rec.channels())
        .map_err(|_| Error::InvalidArgument(format!("{} channels exceed the format limit", rec.channels())))?;
    let subject = rec.subject.as_bytes();
    let subject_len = u16::try_from(subject.len())
        .map_err(|_| Error::InvalidArgument("subject id longer than 65535 bytes".into()))?;
    let mut out = Vec::with_capacity(23 + subject.len() + rec.samples.len() * 4);
    out.extend_from_slice(&RECORDING_MAGIC);
    out.extend_from_slice(&RECORDING_VERSION.to_le_bytes());
    out.push(rec.label.map_or(UNLABELED, Label::code));
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&(rec.sample_rate as f32).to_le_bytes());
    out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
    out.extend_from_slice(&subject_len.to_le_bytes());
    out.extend_from_slice(subject);
    for &v in rec.samples.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_recording(bytes: &[u8]) -> Result<RawRecording> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != RECORDING_MAGIC {
        return Err(FormatError::BadMagic {
            expected: RECORDING_MAGIC,
            found: magic.try_into().unwrap(),
        }
        .into());
    }
    let version = r.u16("version")?;
    if version != RECORDING_VERSION {
        return Err(FormatError::Version {
            expected: RECORDING_VERSION,
            found: version,
        }
        .into());
    }
    let code = r.u8("label")?;
    let label = match code {
        UNLABELED => None,
        c => Some(Label::from_code(c).ok_or(FormatError::Label(c))?),
    };
    let channels = r.u16("channel count")? as usize;
    if channels == 0 {
        return Err(FormatError::ZeroChannels.into());
    }
    let rate = r.f32("sample rate")? as f64;
    let n = usize::try_from(r.u64("sample count")?)
        .map_err(|_| FormatError::Malformed("sample count exceeds address space".into()))?;
    let subject_len = r.u16("subject length")? as usize;
    let subject = std::str::from_utf8(r.take(subject_len, "subject id")?)
        .map_err(|_| FormatError::Malformed("subject id is not UTF-8".into()))?
        .to_string();
    let payload_len = channels
        .checked_mul(n)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| FormatError::Malformed("payload size overflows".into()))?;
    let payload = r.take(payload_len, "payload")?;
    if r.pos != bytes.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes after payload", bytes.len() - r.pos)).into());
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    RawRecording::new(rate, Tensor::new(vec![channels, n], data)?, label, subject)
}

pub fn write_recording_file(path: &Path, rec: &RawRecording) -> Result<()> {
    std::fs::write(path, write_recording(rec)?).map_err(|e| Error::io(path, e))
}

pub fn ingest_recording_file(path: &Path) -> Result<RawRecording> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_recording(&bytes)
}
