//! Binary PGM (`P5`, maxval 255) images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Header<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.name.to_string(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("{what} out of range")))
    }
}

/// Decodes a `P5` image into `1 x H x W` with values `byte / 255`.
pub fn parse_pgm(bytes: &[u8], name: &str) -> Result<Tensor> {
    let mut hdr = Header {
        bytes,
        pos: 0,
        name,
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(hdr.err("bad magic: only binary PGM (P5) is supported"));
    }
    hdr.pos = 2;
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(hdr.err(format!("maxval {maxval} unsupported (expected 255)")));
    }
    if width == 0 || height == 0 {
        return Err(hdr.err("zero image dimension"));
    }
    match bytes.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        _ => return Err(hdr.err("expected a single whitespace byte after maxval")),
    }
    let expected = width * height;
    let payload = &bytes[hdr.pos..];
    if payload.len() != expected {
        return Err(hdr.err(format!(
            "payload is {} bytes, expected {expected} for {width}x{height}",
            payload.len()
        )));
    }
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[1, height, width], data)
}

pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.dims() {
        [1, h, w] | [h, w] => (*h, *w),
        d => {
            return Err(Error::Shape(format!(
                "PGM needs a single-channel image, got {d:?}"
            )))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, &path.display().to_string())
}

pub fn write_pgm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_payload_bytes() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        let img = parse_pgm(&bytes, "t").unwrap();
        assert_eq!(img.dims(), &[1, 2, 2]);
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert!((img.data()[2] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # made by hand\n3 # width\n1\n255\n".to_vec();
        bytes.extend([1u8, 2, 3]);
        assert_eq!(parse_pgm(&bytes, "t").unwrap().dims(), &[1, 1, 3]);
    }

    #[test]
    fn rejects_ascii_pgm() {
        let err = parse_pgm(b"P2\n1 1\n255\n0\n", "a.pgm").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn rejects_bad_maxval_truncation_and_trailing_bytes() {
        assert!(parse_pgm(b"P5\n1 1\n65535\n\0\0", "t").is_err());
        let err = parse_pgm(b"P5\n2 2\n255\n\x01\x02\x03", "t")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("byte 11") && err.contains("expected 4"),
            "{err}"
        );
        assert!(parse_pgm(b"P5\n1 1\n255\n\x01\x02", "t").is_err());
    }

    #[test]
    fn round_trip_within_quantization() {
        let img = Tensor::from_vec(
            &[1, 3, 4],
            (0..12).map(|i| (i as f64 * 0.0833).min(1.0)).collect(),
        )
        .unwrap();
        let back = parse_pgm(&encode_pgm(&img).unwrap(), "t").unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }
}
