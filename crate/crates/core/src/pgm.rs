//! Portable graymap (PGM) reading and writing.
//!
//! Reads ASCII (`P2`) and binary (`P5`) graymaps with `maxval ≤ 255`; header
//! comments starting with `#` are skipped. Writes binary `P5` with maxval 255
//! and no comments.

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Shape};

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Next unsigned decimal token. Returns the value and its start offset.
    fn number(&mut self, what: &str) -> Result<(u32, usize)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if start >= self.bytes.len() {
                parse_err(start, format!("unexpected end of data, expected {what}"))
            } else {
                parse_err(start, format!("expected {what}"))
            });
        }
        // all ASCII digits, so utf8 is guaranteed
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default();
        let value = text
            .parse::<u32>()
            .map_err(|_| parse_err(start, format!("{what} out of range")))?;
        Ok((value, start))
    }
}

/// Parses a P2 or P5 graymap into a single-channel grid with values in
/// `[0, 1]` (sample / maxval).
pub fn read_pgm(bytes: &[u8]) -> Result<GridFunction> {
    if bytes.len() < 2 {
        return Err(parse_err(0, "missing magic number"));
    }
    let binary = match &bytes[..2] {
        b"P2" => false,
        b"P5" => true,
        _ => return Err(parse_err(0, "magic number must be P2 or P5")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if cur.pos < bytes.len() && !bytes[cur.pos].is_ascii_whitespace() && bytes[cur.pos] != b'#' {
        return Err(parse_err(cur.pos, "expected whitespace after magic number"));
    }
    let (width, woff) = cur.number("width")?;
    let (height, hoff) = cur.number("height")?;
    let (maxval, moff) = cur.number("maxval")?;
    if width == 0 {
        return Err(parse_err(woff, "width must be positive"));
    }
    if height == 0 {
        return Err(parse_err(hoff, "height must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(moff, format!("unsupported maxval {maxval}")));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width * height;
    let scale = f64::from(maxval);
    let mut values = Vec::with_capacity(n);

    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(parse_err(cur.pos, "expected single whitespace before raster"));
        }
        let start = cur.pos + 1;
        let end = start + n;
        if bytes.len() < end {
            return Err(parse_err(
                bytes.len(),
                format!("truncated raster: need {n} bytes, found {}", bytes.len() - start),
            ));
        }
        for (i, &b) in bytes[start..end].iter().enumerate() {
            if u32::from(b) > maxval {
                return Err(parse_err(start + i, format!("sample {b} exceeds maxval {maxval}")));
            }
            values.push(f64::from(b) / scale);
        }
    } else {
        for _ in 0..n {
            let (v, off) = cur.number("sample")?;
            if v > maxval {
                return Err(parse_err(off, format!("sample {v} exceeds maxval {maxval}")));
            }
            values.push(f64::from(v) / scale);
        }
    }
    GridFunction::new(Shape::image(width, height), values)
}

/// Encodes a single-channel grid as binary P5 with maxval 255. Values are
/// clamped to `[0, 1]` and quantized with `round(v * 255)`.
pub fn write_pgm(f: &GridFunction) -> Result<Vec<u8>> {
    if f.channels() != 1 {
        return Err(Error::UnsupportedShape {
            shape: f.shape(),
            reason: "PGM output needs a single-channel grid".into(),
        });
    }
    let mut out = format!("P5\n{} {}\n255\n", f.width(), f.height()).into_bytes();
    out.extend(f.values().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_ascii() {
        let g = read_pgm(b"P2 1 1 255 128").unwrap();
        assert_eq!(g.shape(), Shape::image(1, 1));
        assert_eq!(g.values()[0], 128.0 / 255.0);
    }

    #[test]
    fn ascii_with_comments() {
        let g = read_pgm(b"P2\n# a comment\n2 1\n# another\n10\n0 10\n").unwrap();
        assert_eq!(g.values(), &[0.0, 1.0]);
    }

    #[test]
    fn binary_zero_payload() {
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend([0u8; 6]);
        let g = read_pgm(&bytes).unwrap();
        assert_eq!(g.shape(), Shape::image(3, 2));
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn write_header_and_clamp() {
        let g = GridFunction::image(1, 1, vec![0.0]).unwrap();
        let mut expected = b"P5\n1 1\n255\n".to_vec();
        expected.push(0);
        assert_eq!(write_pgm(&g).unwrap(), expected);

        let g = GridFunction::image(2, 1, vec![1.5, -0.2]).unwrap();
        let bytes = write_pgm(&g).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[255, 0]);
    }

    #[test]
    fn multichannel_write_is_rejected() {
        let g = GridFunction::zeros(Shape::new(2, 2, 2));
        assert!(matches!(write_pgm(&g), Err(Error::UnsupportedShape { .. })));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let err = read_pgm(b"P6 1 1 255 0").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));

        let err = read_pgm(b"P2 1 1 300 0").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 7, .. }), "{err}");

        let err = read_pgm(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 13, .. }), "{err}");

        let err = read_pgm(b"P2 2 1 255 7").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 12, .. }), "{err}");

        let err = read_pgm(b"P2 x").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 3, .. }), "{err}");
    }

    #[test]
    fn canonical_p5_corpus_round_trips_bytewise() {
        let corpus: Vec<Vec<u8>> = vec![
            {
                let mut b = b"P5\n4 3\n255\n".to_vec();
                b.extend((0..12u8).map(|i| i * 21));
                b
            },
            {
                let mut b = b"P5\n1 1\n255\n".to_vec();
                b.push(255);
                b
            },
            {
                let mut b = b"P5\n16 16\n255\n".to_vec();
                b.extend((0..=255u8).rev());
                b
            },
        ];
        for bytes in corpus {
            let g = read_pgm(&bytes).unwrap();
            assert_eq!(write_pgm(&g).unwrap(), bytes);
        }
        // non-canonical header spelling maps to the canonical encoding
        let g = read_pgm(b"P5 # c\n 2  1 255\n\x07\x09").unwrap();
        assert_eq!(write_pgm(&g).unwrap(), b"P5\n2 1\n255\n\x07\x09".to_vec());
    }

    proptest! {
        #[test]
        fn quantized_grids_round_trip(w in 1usize..9, h in 1usize..9, seed in prop::collection::vec(0u8..=255, 64)) {
            let values: Vec<f64> = (0..w * h).map(|i| f64::from(seed[i % 64]) / 255.0).collect();
            let f = GridFunction::image(w, h, values).unwrap();
            let back = read_pgm(&write_pgm(&f).unwrap()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
