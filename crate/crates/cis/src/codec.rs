//! Byte-exact file formats: Middlebury `.flo`, binary PPM/PGM and
//! checkpoints.

use std::fs;
use std::path::Path;

use cis_core::numerics::ParamStore;
use cis_core::{FlowField, Frame, Mask, SoftMask};

use crate::error::{CliError, FormatError, Result};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(FormatError::new(self.bytes.len(), format!("truncated {what}: needed {n} bytes at {}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f32(&mut self, what: &str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &str) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>, FormatError> {
    if !flow.is_finite() {
        return Err(FormatError::new(0, "flow contains non-finite values"));
    }
    let mut out = Vec::with_capacity(12 + 8 * flow.vectors().len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for [u, v] in flow.vectors() {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.f32("magic")?;
    if magic != FLO_MAGIC {
        return Err(FormatError::new(0, format!("bad magic {magic}, expected {FLO_MAGIC}")));
    }
    let w = c.i32("width")?;
    let h = c.i32("height")?;
    if w <= 0 || h <= 0 {
        return Err(FormatError::new(4, format!("invalid size {w}x{h}")));
    }
    let n = (w as usize) * (h as usize);
    let mut vectors = Vec::with_capacity(n);
    for _ in 0..n {
        vectors.push([c.f32("flow payload")?, c.f32("flow payload")?]);
    }
    if c.pos != bytes.len() {
        return Err(FormatError::new(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    FlowField::new(w as usize, h as usize, vectors).map_err(|e| FormatError::new(12, e.to_string()))
}

pub fn flo_read(path: &Path) -> Result<FlowField> {
    decode_flo(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

pub fn flo_write(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flo(flow).map_err(|e| CliError::format(path, e))?)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn netpbm_header(kind: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{kind}\n{w} {h}\n255\n").into_bytes()
}

/// Parses a binary netpbm header; returns `(width, height, payload offset)`.
fn parse_netpbm(bytes: &[u8], kind: &[u8; 2]) -> Result<(usize, usize, usize), FormatError> {
    if bytes.len() < 2 || &bytes[..2] != kind {
        return Err(FormatError::new(0, format!("expected {} header", String::from_utf8_lossy(kind))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, slot) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *slot = text.parse().map_err(|_| FormatError::new(start, format!("header field {} is not a number", i + 1)))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FormatError::new(pos, "missing whitespace after header"));
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(FormatError::new(2, format!("invalid size {w}x{h}")));
    }
    if maxval != 255 {
        return Err(FormatError::new(pos, format!("only 8-bit files are supported, maxval {maxval}")));
    }
    Ok((w, h, pos + 1))
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], FormatError> {
    match bytes.len().cmp(&(offset + len)) {
        std::cmp::Ordering::Less => Err(FormatError::new(bytes.len(), format!("truncated payload: {} of {len} bytes", bytes.len() - offset))),
        std::cmp::Ordering::Greater => Err(FormatError::new(offset + len, "trailing bytes after payload")),
        std::cmp::Ordering::Equal => Ok(&bytes[offset..]),
    }
}

/// Binary PPM (P6); channels in `[0, 1]` are scaled to 0-255.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = netpbm_header("P6", frame.width(), frame.height());
    out.extend(frame.pixels().iter().flat_map(|p| p.map(quantize)));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame, FormatError> {
    let (w, h, at) = parse_netpbm(bytes, b"P6")?;
    let data = payload(bytes, at, 3 * w * h)?;
    let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]].map(|b| b as f32 / 255.0)).collect();
    Frame::new(w, h, pixels).map_err(|e| FormatError::new(at, e.to_string()))
}

/// Binary PGM (P5), 255 for foreground and 0 for background.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = netpbm_header("P5", mask.width(), mask.height());
    out.extend(mask.bits().iter().map(|&b| if b { 255 } else { 0 }));
    out
}

/// Any nonzero gray level counts as foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask, FormatError> {
    let (w, h, at) = parse_netpbm(bytes, b"P5")?;
    let bits = payload(bytes, at, w * h)?.iter().map(|&b| b != 0).collect();
    Mask::new(w, h, bits).map_err(|e| FormatError::new(at, e.to_string()))
}

/// Binary PGM (P5) with probabilities scaled to 0-255.
pub fn encode_soft_mask(mask: &SoftMask) -> Vec<u8> {
    let mut out = netpbm_header("P5", mask.width(), mask.height());
    out.extend(mask.probs().iter().map(|&p| quantize(p)));
    out
}

pub fn decode_soft_mask(bytes: &[u8]) -> Result<SoftMask, FormatError> {
    let (w, h, at) = parse_netpbm(bytes, b"P5")?;
    let probs = payload(bytes, at, w * h)?.iter().map(|&b| b as f32 / 255.0).collect();
    SoftMask::new(w, h, probs).map_err(|e| FormatError::new(at, e.to_string()))
}

pub fn ppm_read(path: &Path) -> Result<Frame> {
    decode_ppm(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

pub fn mask_read(path: &Path) -> Result<Mask> {
    decode_mask(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

pub fn soft_mask_read(path: &Path) -> Result<SoftMask> {
    decode_soft_mask(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

pub fn checkpoint_read(path: &Path) -> Result<ParamStore> {
    ParamStore::from_bytes(&read_bytes(path)?).map_err(|e| match e {
        cis_core::Error::Checkpoint { offset, detail } => CliError::format(path, FormatError::new(offset, detail)),
        other => other.into(),
    })
}

pub fn checkpoint_write(path: &Path, store: &ParamStore) -> Result<()> {
    write_bytes(path, &store.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flo_layout_of_a_two_pixel_field() {
        let flow = FlowField::new(2, 1, vec![[1.5, -2.0], [0.0, 3.25]]).unwrap();
        let bytes = encode_flo(&flow).unwrap();
        // hand-assembled; the magic float 202021.25 reads "PIEH" in little-endian
        let mut expected = Vec::new();
        expected.extend_from_slice(b"PIEH");
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&[0x00, 0x00, 0xC0, 0x3F]); // 1.5
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0xC0]); // -2.0
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0x00]); // 0.0
        expected.extend_from_slice(&[0x00, 0x00, 0x50, 0x40]); // 3.25
        assert_eq!(bytes.len(), 28);
        assert_eq!(bytes, expected);
        assert_eq!(decode_flo(&bytes).unwrap(), flow);
    }

    #[test]
    fn flo_rejects_bad_magic_and_truncation() {
        let mut bytes = encode_flo(&FlowField::zeros(3, 2)).unwrap();
        let err = decode_flo(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(err.offset, bytes.len() - 3);
        bytes[..4].copy_from_slice(&0.0f32.to_le_bytes());
        assert_eq!(decode_flo(&bytes).unwrap_err().offset, 0);
        assert!(decode_flo(&[]).is_err());
    }

    #[test]
    fn flo_refuses_non_finite() {
        let flow = FlowField::new(1, 1, vec![[f32::NAN, 0.0]]).unwrap();
        assert!(encode_flo(&flow).is_err());
    }

    #[test]
    fn netpbm_headers_and_round_trips() {
        let mask = Mask::from_fn(3, 2, |x, y| x == y);
        let bytes = encode_mask(&mask);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 0, 0, 255, 0]);
        assert_eq!(decode_mask(&bytes).unwrap(), mask);

        let frame = Frame::new(2, 1, vec![[0.0, 0.5, 1.0], [1.0, 0.2, 0.0]]).unwrap();
        let bytes = encode_ppm(&frame);
        assert_eq!(&bytes[11..], &[0, 128, 255, 255, 51, 0]);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&back), bytes);

        let soft = SoftMask::new(2, 1, vec![0.25, 1.0]).unwrap();
        assert_eq!(&encode_soft_mask(&soft)[11..], &[64, 255]);
    }

    #[test]
    fn netpbm_comments_and_errors() {
        let bytes = b"P5 # made by hand\n2 1\n255\n\x00\x07";
        assert_eq!(decode_mask(bytes).unwrap().bits(), &[false, true]);
        assert!(decode_mask(b"P6\n1 1\n255\n\x00\x00\x00").is_err());
        assert_eq!(decode_mask(b"P5\n2 2\n255\n\x00").unwrap_err().offset, 12);
        assert!(decode_mask(b"P5\n2 1\n65535\n\x00\x00\x00\x00").is_err());
        assert!(decode_mask(b"P5\nx 1\n255\n\x00").is_err());
    }
}
