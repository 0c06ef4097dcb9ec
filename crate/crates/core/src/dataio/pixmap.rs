//! Binary PGM (P5) / PPM (P6) codec, maxval 255 only.

use super::{DataError, Frame};

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        loop {
            while self.pos < self.bytes.len() && is_space(self.bytes[self.pos]) {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn number(&mut self, field: &'static str) -> Result<usize, DataError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DataError::Format { field, message: "expected a decimal number".into() });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(DataError::Format { field, message: "number out of range".into() })
    }
}

/// Decodes a P5 or P6 image. Colour input is reduced to grey with
/// `(77 R + 150 G + 29 B) >> 8`. The returned frame has index 0.
pub fn decode_pixmap(bytes: &[u8]) -> Result<Frame, DataError> {
    if bytes.len() < 2 {
        return Err(DataError::Format { field: "magic", message: "file too short".into() });
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(DataError::Format {
                field: "magic",
                message: format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            })
        }
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    let width = reader.number("width")?;
    let height = reader.number("height")?;
    let maxval = reader.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(DataError::Format {
            field: if width == 0 { "width" } else { "height" },
            message: "dimension must be at least 1".into(),
        });
    }
    if maxval != 255 {
        return Err(DataError::Format { field: "maxval", message: format!("expected 255, got {maxval}") });
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(reader.pos) {
        Some(&b) if is_space(b) => reader.pos += 1,
        _ => {
            return Err(DataError::Format {
                field: "maxval",
                message: "header must end with a single whitespace byte".into(),
            })
        }
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(DataError::Format { field: "width", message: "image too large".into() })?;
    let payload = &bytes[reader.pos..];
    if payload.len() < expected {
        return Err(DataError::Format {
            field: "payload",
            message: format!("truncated: expected {expected} bytes, found {}", payload.len()),
        });
    }
    let payload = &payload[..expected];
    let pixels = if channels == 1 {
        payload.to_vec()
    } else {
        payload
            .chunks_exact(3)
            .map(|rgb| ((77 * rgb[0] as u32 + 150 * rgb[1] as u32 + 29 * rgb[2] as u32) >> 8) as u8)
            .collect()
    };
    Frame::new(width, height, 0, pixels)
}

/// Canonical P5 encoding: `P5\n<w> <h>\n255\n` followed by the raster.
pub fn encode_pixmap(frame: &Frame) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", frame.width(), frame.height());
    let mut out = Vec::with_capacity(header.len() + frame.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(frame.pixels());
    out
}
