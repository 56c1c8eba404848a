//! Binary PGM (P5) reading and writing.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A decoded greyscale image. Samples are stored as read, in `0..=maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    pub fn read(path: &Path) -> Result<Self, PgmError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes).map_err(|message| PgmError::Format {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos).ok_or("missing magic number")?;
        if magic != b"P5" {
            return Err(format!(
                "expected P5 magic, found {:?}",
                String::from_utf8_lossy(magic)
            ));
        }
        let mut header = [0usize; 3];
        for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let tok = next_token(bytes, &mut pos).ok_or(format!("missing {name}"))?;
            *slot = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or(format!("invalid {name}"))?;
        }
        let [width, height, maxval] = header;
        if width == 0 || height == 0 {
            return Err("zero image dimension".into());
        }
        if maxval == 0 || maxval > 65535 {
            return Err(format!("maxval {maxval} out of range"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let n = width * height;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let raster = bytes.get(pos..pos + need).ok_or_else(|| {
            format!(
                "truncated raster: need {need} bytes, have {}",
                bytes.len().saturating_sub(pos)
            )
        })?;
        let samples = if wide {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        } else {
            raster.iter().map(|&b| b as u16).collect()
        };
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            samples,
        })
    }

    /// 8-bit encoding; samples above 255 are clamped.
    pub fn encode_u8(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
        let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
        out.extend_from_slice(samples);
        out
    }

    pub fn write_u8(
        path: &Path,
        width: usize,
        height: usize,
        samples: &[u8],
    ) -> Result<(), PgmError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&Self::encode_u8(width, height, samples))?;
        Ok(())
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    (start < *pos).then(|| &bytes[start..*pos])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        let p = Pgm::decode(&bytes).unwrap();
        assert_eq!((p.width, p.height, p.maxval), (3, 2, 255));
        assert_eq!(p.samples, vec![0, 10, 20, 30, 40, 255]);
    }

    #[test]
    fn decode_16bit() {
        let mut bytes = b"P5 1 2 1000\n".to_vec();
        bytes.extend_from_slice(&[0x03, 0xE8, 0x00, 0x01]);
        let p = Pgm::decode(&bytes).unwrap();
        assert_eq!(p.samples, vec![1000, 1]);
    }

    #[test]
    fn rejects_truncated_and_wrong_magic() {
        assert!(Pgm::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(Pgm::decode(b"P5\n4 4\n255\n\x00\x00").is_err());
    }

    #[test]
    fn roundtrip_u8() {
        let data: Vec<u8> = (0..12).map(|i| i * 20).collect();
        let p = Pgm::decode(&Pgm::encode_u8(4, 3, &data)).unwrap();
        assert_eq!(
            p.samples,
            data.iter().map(|&b| b as u16).collect::<Vec<_>>()
        );
    }
}
