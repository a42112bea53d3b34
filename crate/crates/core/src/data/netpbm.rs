//! Binary PPM (P6) and PGM (P5), 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit single-channel image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `round(255 · clamp(v, 0, 1))` with halves rounded up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

/// Encodes a `3 × H × W` image with values in `[0, 1]` as P6.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::shape("encode_ppm", format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = header("P6", w, h);
    out.reserve(3 * plane);
    let d = image.data();
    for px in 0..plane {
        for ch in 0..3 {
            out.push(quantize(d[ch * plane + px]));
        }
    }
    Ok(out)
}

/// Encodes an `H × W` map with values in `[0, 1]` as P5.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = map.hw()?;
    let mut out = header("P5", w, h);
    out.extend(map.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], format: &'static str) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::format(format, format!("expected magic {}, found {found:?}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(format, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format, "expected a decimal number in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| Error::format(format, format!("header number {text} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(format, "missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format, format!("only maxval 255 is supported, got {maxval}")));
    }
    if width == 0 || height == 0 || width.saturating_mul(height) > 1 << 28 {
        return Err(Error::format(format, format!("implausible size {width}×{height}")));
    }
    Ok(Header { width, height, data_start: pos })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize, format: &'static str) -> Result<&'a [u8]> {
    let n = h.width * h.height * channels;
    let data = &bytes[h.data_start..];
    if data.len() < n {
        return Err(Error::format(format, format!("truncated pixel data: {} of {n} bytes", data.len())));
    }
    Ok(&data[..n])
}

/// Decodes P6 into a `3 × H × W` tensor of `byte / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes, b"P6", "PPM")?;
    let data = payload(bytes, &h, 3, "PPM")?;
    let plane = h.width * h.height;
    let mut out = vec![0.0; 3 * plane];
    for px in 0..plane {
        for ch in 0..3 {
            out[ch * plane + px] = data[3 * px + ch] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h.height, h.width], out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes, b"P5", "PGM")?;
    let data = payload(bytes, &h, 1, "PGM")?;
    Ok(GrayImage { width: h.width, height: h.height, pixels: data.to_vec() })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ppm(image)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_ppm(&read_bytes(path.as_ref())?)
}

/// Writes a real-valued `H × W` map, quantised to 8 bits.
pub fn write_pgm(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm(map)?)
}

/// Reads a PGM as an `H × W` tensor of `byte / 255`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let g = decode_pgm(&read_bytes(path.as_ref())?)?;
    Tensor::new(vec![g.height, g.width], g.pixels.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Writes class labels verbatim as PGM bytes.
pub fn write_mask(path: impl AsRef<Path>, height: usize, width: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != height * width {
        return Err(Error::shape("write_mask", format!("{} labels for {height}×{width}", labels.len())));
    }
    let mut bytes = header("P5", width, height);
    bytes.extend_from_slice(labels);
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&read_bytes(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_quantizes_to_128() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(2.0), 255);
        let bytes = encode_pgm(&Tensor::full(&[1, 1], 0.5)).unwrap();
        assert_eq!(*bytes.last().unwrap(), 128);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let pgm = encode_pgm(&Tensor::full(&[2, 2], 0.1)).unwrap();
        let err = decode_ppm(&pgm).unwrap_err();
        assert!(matches!(err, Error::Format { format: "PPM", .. }), "{err}");
    }

    #[test]
    fn malformed_headers() {
        for bad in [
            &b""[..],
            b"P6",
            b"P6\n2",
            b"P6\n2 2\n",
            b"P6\n2 2\n65535\n",
            b"P6\nx 2\n255\n",
            b"P6\n0 2\n255\n",
            b"P6\n2 2\n255\n\x01\x02",
        ] {
            assert!(decode_ppm(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n# max\n255\n\x00\xff";
        let g = decode_pgm(bytes).unwrap();
        assert_eq!((g.width, g.height), (2, 1));
        assert_eq!(g.pixels, [0, 255]);
    }

    proptest! {
        #[test]
        fn ppm_round_trip_reproduces_bytes(bytes in prop::collection::vec(any::<u8>(), 3 * 5 * 4)) {
            let mut body = header("P6", 5, 4);
            body.extend_from_slice(&bytes);
            let image = decode_ppm(&body).unwrap();
            prop_assert_eq!(encode_ppm(&image).unwrap(), body);
        }
    }
}
