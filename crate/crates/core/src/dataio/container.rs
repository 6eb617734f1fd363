//! The `HVSG` segment container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HVSG"            4 bytes
//! version           u32 (currently 1)
//! segment count     u32
//! per segment:
//!   channels        u32
//!   samples         u32
//!   fs              f32
//!   label           u32
//!   subject         u32
//!   repetition      u32
//!   data            channels * samples f32, row-major (channel by channel)
//! ```
//!
//! Every segment in one file has the same channel count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::SegmentTensor;
use crate::error::{Error, Result};

pub const SEGMENT_MAGIC: &[u8; 4] = b"HVSG";
pub const SEGMENT_VERSION: u32 = 1;

const FILE_HEADER: u64 = 12;
const SEGMENT_HEADER: u64 = 24;

pub fn encode_segments(segments: &[SegmentTensor]) -> Result<Vec<u8>> {
    if let Some(first) = segments.first() {
        if let Some((i, s)) = segments
            .iter()
            .enumerate()
            .find(|(_, s)| s.channels() != first.channels())
        {
            return Err(Error::invalid(format!(
                "segment {i} has {} channels, segment 0 has {}",
                s.channels(),
                first.channels()
            )));
        }
    }
    let count = u32::try_from(segments.len()).map_err(|_| Error::invalid("too many segments"))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(SEGMENT_MAGIC);
    buf.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for s in segments {
        buf.extend_from_slice(&(s.channels() as u32).to_le_bytes());
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(&s.fs().to_le_bytes());
        buf.extend_from_slice(&s.label.to_le_bytes());
        buf.extend_from_slice(&s.subject_id.to_le_bytes());
        buf.extend_from_slice(&s.repetition.to_le_bytes());
        for v in s.samples() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn need(&self, n: u64, expected_total: u64) -> Result<()> {
        if (self.pos as u64) + n > self.buf.len() as u64 {
            return Err(Error::Truncated {
                expected: expected_total.max(self.pos as u64 + n),
                actual: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f32(&mut self) -> f32 {
        f32::from_bits(self.u32())
    }
}

pub fn decode_segments(buf: &[u8]) -> Result<Vec<SegmentTensor>> {
    let mut r = Reader { buf, pos: 0 };
    r.need(FILE_HEADER, FILE_HEADER)?;
    if &buf[..4] != SEGMENT_MAGIC {
        return Err(Error::Corrupt {
            position: 0,
            detail: format!("bad magic {:?}, expected \"HVSG\"", &buf[..4]),
        });
    }
    r.pos = 4;
    let version = r.u32();
    if version != SEGMENT_VERSION {
        return Err(Error::Corrupt {
            position: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let count = r.u32() as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    // running lower bound on the file size implied by headers read so far
    let mut expected = FILE_HEADER + count as u64 * SEGMENT_HEADER;
    for i in 0..count {
        let seg_pos = r.pos as u64;
        r.need(SEGMENT_HEADER, expected)?;
        let channels = r.u32() as usize;
        let len = r.u32() as usize;
        let fs = r.f32();
        let label = r.u32();
        let subject = r.u32();
        let repetition = r.u32();
        if let Some(first) = out.first().map(|s: &SegmentTensor| s.channels()) {
            if channels != first {
                return Err(Error::Corrupt {
                    position: seg_pos,
                    detail: format!("segment {i} has {channels} channels, segment 0 has {first}"),
                });
            }
        }
        let data_bytes = (channels as u64) * (len as u64) * 4;
        expected += data_bytes;
        r.need(data_bytes, expected)?;
        let samples: Vec<f32> = (0..channels * len).map(|_| r.f32()).collect();
        let seg = SegmentTensor::new(channels, len, fs, samples).map_err(|e| Error::Corrupt {
            position: seg_pos,
            detail: format!("segment {i}: {e}"),
        })?;
        out.push(seg.with_meta(label, subject, repetition));
    }
    if r.pos != buf.len() {
        return Err(Error::Corrupt {
            position: r.pos as u64,
            detail: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn write_segments(path: impl AsRef<Path>, segments: &[SegmentTensor]) -> Result<()> {
    let path = path.as_ref();
    let buf = encode_segments(segments)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<SegmentTensor>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_segments(&buf)
}

/// Path of the JSON metadata sidecar for a container file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes free-form metadata next to a container as canonical JSON
/// (object keys sorted, no insignificant whitespace).
pub fn write_sidecar(path: impl AsRef<Path>, meta: &serde_json::Value) -> Result<PathBuf> {
    let side = sidecar_path(path.as_ref());
    let text = crate::canonical_json(meta)?;
    fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(side)
}
