//! Minimal binary PPM (P6, 8-bit) codec.
//!
//! PPM is the mandatory frame interchange format: trivially written,
//! trivially parsed, and bit-exact on round trip. Headers may contain
//! `#` comments and arbitrary whitespace, per the Netpbm convention.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: not a binary PPM (P6) file")]
    BadMagic { path: String },
    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: String, reason: String },
    #[error("{path}: truncated pixel data: wanted {wanted} bytes, found {found}")]
    Truncated {
        path: String,
        wanted: usize,
        found: usize,
    },
}

/// 8-bit RGB image as raw interleaved bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` bytes, row-major RGB.
    pub pixels: Vec<u8>,
}

impl PpmImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height * 3, "pixel buffer size");
        Self {
            width,
            height,
            pixels,
        }
    }
}

/// Serialize as `P6\n<w> <h>\n255\n` followed by raw bytes.
pub fn write_ppm<W: Write>(w: &mut W, img: &PpmImage) -> std::io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.pixels)
}

pub fn write_ppm_file(path: &Path, img: &PpmImage) -> Result<(), PpmError> {
    let wrap = |source| PpmError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(wrap)?);
    write_ppm(&mut f, img).map_err(wrap)?;
    f.flush().map_err(wrap)
}

/// Read one whitespace/comment-delimited ASCII token.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}

pub fn read_ppm<R: Read>(r: &mut R, path: &str) -> Result<PpmImage, PpmError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|source| PpmError::Io {
        path: path.to_string(),
        source,
    })?;
    if !bytes.starts_with(b"P6") {
        return Err(PpmError::BadMagic {
            path: path.to_string(),
        });
    }
    let mut pos = 2usize;
    let bad = |reason: &str| PpmError::BadHeader {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let width: usize = next_token(&bytes, &mut pos)
        .ok_or_else(|| bad("missing width"))?
        .parse()
        .map_err(|_| bad("width not a number"))?;
    let height: usize = next_token(&bytes, &mut pos)
        .ok_or_else(|| bad("missing height"))?
        .parse()
        .map_err(|_| bad("height not a number"))?;
    let maxval: usize = next_token(&bytes, &mut pos)
        .ok_or_else(|| bad("missing maxval"))?
        .parse()
        .map_err(|_| bad("maxval not a number"))?;
    if maxval != 255 {
        return Err(bad(&format!("unsupported maxval {}", maxval)));
    }
    // Exactly one whitespace byte separates header and raster.
    pos += 1;
    let wanted = width * height * 3;
    if bytes.len() < pos + wanted {
        return Err(PpmError::Truncated {
            path: path.to_string(),
            wanted,
            found: bytes.len().saturating_sub(pos),
        });
    }
    Ok(PpmImage {
        width,
        height,
        pixels: bytes[pos..pos + wanted].to_vec(),
    })
}

pub fn read_ppm_file(path: &Path) -> Result<PpmImage, PpmError> {
    let display = path.display().to_string();
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|source| {
        PpmError::Io {
            path: display.clone(),
            source,
        }
    })?);
    read_ppm(&mut f, &display)
}
