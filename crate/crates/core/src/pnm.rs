//! Binary netpbm codec: 8-bit graymaps (P5) in and out, pixmaps (P6) out.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PnmError {
    #[error("expected magic {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("maxval {0} unsupported, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// Decoded header fields and the offset at which the raster begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub width: u32,
    pub height: u32,
    pub maxval: u32,
    pub data_offset: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8], PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::BadHeader("unexpected end of header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32, PnmError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| PnmError::BadHeader(format!("{what} is not a number")))
    }
}

/// Reads a header with the given magic, leaving `data_offset` just past the
/// single whitespace byte that terminates it.
pub fn read_header(bytes: &[u8], magic: &'static str) -> Result<Header, PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(PnmError::BadMagic {
            expected: magic,
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(PnmError::BadHeader("missing whitespace after maxval".into())),
    }
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_offset: cur.pos,
    })
}

fn raster<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8], PnmError> {
    let expected = header.width as usize * header.height as usize * channels;
    let data = &bytes[header.data_offset..];
    if data.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            found: data.len(),
        });
    }
    Ok(&data[..expected])
}

/// Decodes a P5 graymap into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), PnmError> {
    let header = read_header(bytes, "P5")?;
    let data = raster(bytes, &header, 1)?;
    Ok((header.width, header.height, data.to_vec()))
}

/// Decodes a P6 pixmap into `(width, height, rgb)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), PnmError> {
    let header = read_header(bytes, "P6")?;
    let data = raster(bytes, &header, 3)?;
    Ok((header.width, header.height, data.to_vec()))
}

fn encode(magic: &str, width: u32, height: u32, data: &[u8]) -> Vec<u8> {
    let header = format!("{magic}\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(data);
    out
}

pub fn encode_pgm(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width as usize * height as usize);
    encode("P5", width, height, pixels)
}

pub fn encode_ppm(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), width as usize * height as usize * 3);
    encode("P6", width, height, rgb)
}
