//! Binary PPM (P6) and PGM (P5) encoding/decoding, maxval 255.

use super::{DataError, Result};

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DataError::Decode("truncated raster header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::Decode(format!("bad header number {:?}", tok)))
    }
}

/// Decode a binary P6 image to interleaved RGB bytes.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let magic = r.token()?;
    if magic != b"P6" {
        return Err(DataError::Decode(format!(
            "expected P6 magic, got {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(DataError::Decode(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and payload
    r.pos += 1;
    let need = width * height * 3;
    let payload = bytes.get(r.pos..r.pos + need).ok_or_else(|| {
        DataError::Decode(format!(
            "truncated payload: need {need} bytes, have {}",
            bytes.len().saturating_sub(r.pos)
        ))
    })?;
    Ok((width, height, payload.to_vec()))
}
