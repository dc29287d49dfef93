//! Little-endian binary containers for datasets (`SPFD`), attribution
//! summaries (`SPFA`) and linear maps (`SPFM`).
//!
//! ```text
//! SPFD  magic | u32 version | u64 n | u64 d | u16 len + tag   | f32[n*d] Z | u8[n] y | u8[n] c
//! SPFA  magic | u32 version | u64 n | u64 d | u16 len + space | f32[n*d] fg | f32[n*d] bg
//! SPFM  magic | u32 version | u8 kind | u64 out | u64 in | u8 has_bias | f32[out*in] W | f32[out] b? | u32 len + JSON meta
//! ```

use std::fs;
use std::io;
use std::path::Path;

use spurious_core::{AttributionSummary, EmbeddingDataset, LinearMap, MapKind};

pub const DATASET_MAGIC: [u8; 4] = *b"SPFD";
pub const SUMMARY_MAGIC: [u8; 4] = *b"SPFA";
pub const MAP_MAGIC: [u8; 4] = *b"SPFM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {}, found {}", show_magic(expected), show_magic(found))]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated file: {context} needs {needed} bytes, {available} left")]
    Truncated {
        context: &'static str,
        needed: u64,
        available: usize,
    },
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(usize),
    #[error("non-finite value in {context} at element {index}")]
    NonFinite { context: &'static str, index: usize },
    #[error("{0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("{0} is too long for its length prefix")]
    TooLong(&'static str),
    #[error("unknown map kind code {0}")]
    Kind(u8),
    #[error("bias flag must be 0 or 1, found {0}")]
    BiasFlag(u8),
    #[error("map metadata is not valid JSON: {0}")]
    Meta(serde_json::Error),
    #[error(transparent)]
    Content(#[from] spurious_core::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn show_magic(m: &[u8; 4]) -> String {
    m.iter()
        .map(|&b| if b.is_ascii_graphic() { char::from(b).to_string() } else { format!("\\x{b:02x}") })
        .collect()
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, needed: u64, context: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len();
        match usize::try_from(needed) {
            Ok(k) if k <= available => {
                let (head, tail) = self.buf.split_at(k);
                self.buf = tail;
                Ok(head)
            }
            _ => Err(FormatError::Truncated {
                context,
                needed,
                available,
            }),
        }
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4, "magic")?;
        let found = [got[0], got[1], got[2], got[3]];
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version(version));
        }
        Ok(())
    }

    fn u8(&mut self, context: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, context)?[0])
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, FormatError> {
        let b = self.take(2, context)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, FormatError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, FormatError> {
        let b = self.take(8, context)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn text(&mut self, context: &'static str) -> Result<String, FormatError> {
        let len = self.u16(context)?;
        let bytes = self.take(u64::from(len), context)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Utf8(context))
    }

    fn f32s(&mut self, count: u64, context: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(count.saturating_mul(4), context)?;
        let out: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(index) = out.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { context, index });
        }
        Ok(out)
    }

    fn finish(self) -> Result<(), FormatError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(FormatError::TrailingBytes(self.buf.len()))
        }
    }
}

fn put_text(out: &mut Vec<u8>, s: &str, context: &'static str) -> Result<(), FormatError> {
    let len = u16::try_from(s.len()).map_err(|_| FormatError::TooLong(context))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(out: &mut Vec<u8>, magic: [u8; 4]) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

pub fn encode_dataset(ds: &EmbeddingDataset) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(32 + ds.features().len() * 4 + 2 * ds.len());
    header(&mut out, DATASET_MAGIC);
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u64).to_le_bytes());
    put_text(&mut out, ds.split_tag(), "split tag")?;
    put_f32s(&mut out, ds.features());
    out.extend_from_slice(ds.labels());
    out.extend_from_slice(ds.attributes());
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<EmbeddingDataset, FormatError> {
    let mut r = Reader { buf: bytes };
    r.magic(DATASET_MAGIC)?;
    let n = r.u64("example count")?;
    let d = r.u64("feature dimension")?;
    let tag = r.text("split tag")?;
    let z = r.f32s(n.saturating_mul(d), "features")?;
    let y = r.take(n, "labels")?.to_vec();
    let c = r.take(n, "attributes")?.to_vec();
    r.finish()?;
    Ok(EmbeddingDataset::new(tag, d as usize, z, y, c)?)
}

pub fn encode_summary(s: &AttributionSummary) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(32 + s.foreground().len() * 8);
    header(&mut out, SUMMARY_MAGIC);
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(&(s.dim() as u64).to_le_bytes());
    put_text(&mut out, s.space_id(), "space id")?;
    put_f32s(&mut out, s.foreground());
    put_f32s(&mut out, s.background());
    Ok(out)
}

pub fn decode_summary(bytes: &[u8]) -> Result<AttributionSummary, FormatError> {
    let mut r = Reader { buf: bytes };
    r.magic(SUMMARY_MAGIC)?;
    let n = r.u64("example count")?;
    let d = r.u64("feature dimension")?;
    let space = r.text("space id")?;
    let fg = r.f32s(n.saturating_mul(d), "foreground attributions")?;
    let bg = r.f32s(n.saturating_mul(d), "background attributions")?;
    r.finish()?;
    Ok(AttributionSummary::new(space, n as usize, d as usize, fg, bg)?)
}

pub fn encode_map(m: &LinearMap) -> Result<Vec<u8>, FormatError> {
    let meta = serde_json::to_vec(m.meta()).map_err(FormatError::Meta)?;
    let meta_len = u32::try_from(meta.len()).map_err(|_| FormatError::TooLong("map metadata"))?;
    let mut out = Vec::with_capacity(40 + m.weights().len() * 4 + meta.len());
    header(&mut out, MAP_MAGIC);
    out.push(m.kind().code());
    out.extend_from_slice(&(m.out_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(m.in_dim() as u64).to_le_bytes());
    out.push(u8::from(m.bias().is_some()));
    put_f32s(&mut out, m.weights());
    if let Some(b) = m.bias() {
        put_f32s(&mut out, b);
    }
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<LinearMap, FormatError> {
    let mut r = Reader { buf: bytes };
    r.magic(MAP_MAGIC)?;
    let code = r.u8("map kind")?;
    let kind = MapKind::from_code(code).ok_or(FormatError::Kind(code))?;
    let out_dim = r.u64("output dimension")?;
    let in_dim = r.u64("input dimension")?;
    let has_bias = match r.u8("bias flag")? {
        0 => false,
        1 => true,
        other => return Err(FormatError::BiasFlag(other)),
    };
    let w = r.f32s(out_dim.saturating_mul(in_dim), "weights")?;
    let b = if has_bias { Some(r.f32s(out_dim, "bias")?) } else { None };
    let meta_len = r.u32("metadata length")?;
    let meta = serde_json::from_slice(r.take(u64::from(meta_len), "metadata")?).map_err(FormatError::Meta)?;
    r.finish()?;
    Ok(LinearMap::new(kind, out_dim as usize, in_dim as usize, w, b, meta)?)
}

fn read(path: &Path) -> Result<Vec<u8>, FormatError> {
    Ok(fs::read(path)?)
}

pub fn save_dataset(ds: &EmbeddingDataset, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_dataset(ds)?)?)
}

pub fn load_dataset(path: &Path) -> Result<EmbeddingDataset, FormatError> {
    decode_dataset(&read(path)?)
}

pub fn save_summary(s: &AttributionSummary, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_summary(s)?)?)
}

pub fn load_summary(path: &Path) -> Result<AttributionSummary, FormatError> {
    decode_summary(&read(path)?)
}

pub fn save_map(m: &LinearMap, path: &Path) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_map(m)?)?)
}

pub fn load_map(path: &Path) -> Result<LinearMap, FormatError> {
    decode_map(&read(path)?)
}
