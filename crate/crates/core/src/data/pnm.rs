//! Binary portable pixmap (P6) and graymap (P5) with 8-bit samples.

use crate::error::{Error, Result};

use super::{Mask, RgbImage};

fn fmt_err(path: &str, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        detail: detail.into(),
    }
}

pub fn header(magic: &str, width: usize, height: usize) -> String {
    format!("{magic}\n{width} {height}\n255\n")
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = header("P6", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_pgm(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = header("P5", width, height).into_bytes();
    out.extend_from_slice(samples);
    out
}

/// Parse the magic and the three header integers; returns
/// (width, height, offset of the first sample byte).
fn parse_header(bytes: &[u8], magic: &[u8; 2], path: &str) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(fmt_err(
            path,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
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
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(fmt_err(path, "truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| fmt_err(path, "header integer out of range"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(fmt_err(path, "missing whitespace after maxval"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(fmt_err(path, format!("maxval {maxval}, only 8-bit (255) supported")));
    }
    if w == 0 || h == 0 {
        return Err(fmt_err(path, "zero image extent"));
    }
    Ok((w, h, pos))
}

pub fn decode_ppm(bytes: &[u8], path: &str) -> Result<RgbImage> {
    let (w, h, off) = parse_header(bytes, b"P6", path)?;
    let n = w * h * 3;
    if bytes.len() != off + n {
        return Err(fmt_err(path, format!("expected {n} sample bytes, found {}", bytes.len() - off)));
    }
    RgbImage::new(w, h, bytes[off..].to_vec())
}

pub fn decode_pgm(bytes: &[u8], path: &str) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, off) = parse_header(bytes, b"P5", path)?;
    let n = w * h;
    if bytes.len() != off + n {
        return Err(fmt_err(path, format!("expected {n} sample bytes, found {}", bytes.len() - off)));
    }
    Ok((w, h, bytes[off..].to_vec()))
}

/// Masks are graymaps whose sample value is the class index.
pub fn decode_mask(bytes: &[u8], classes: usize, path: &str) -> Result<Mask> {
    let (w, h, labels) = decode_pgm(bytes, path)?;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(fmt_err(path, format!("mask value {bad} outside {classes} classes")));
    }
    Mask::new(w, h, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p6_header_bytes() {
        let img = RgbImage::new(64, 64, vec![7; 64 * 64 * 3]).unwrap();
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n64 64\n255\n"));
        assert_eq!(decode_ppm(&bytes, "x").unwrap(), img);
    }

    #[test]
    fn header_comments_and_whitespace() {
        let mut bytes = b"P5 # c\n2\t1\n# more\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 3]);
        let (w, h, s) = decode_pgm(&bytes, "x").unwrap();
        assert_eq!((w, h, s), (2, 1, vec![1, 3]));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0", "x").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0", "x").is_err());
        assert!(decode_ppm(b"P6\n2 1\n255\n\0\0\0", "x").is_err());
        let bytes = encode_pgm(2, 1, &[0, 9]);
        assert!(matches!(decode_mask(&bytes, 4, "m"), Err(Error::Format { .. })));
        assert!(decode_mask(&bytes, 10, "m").is_ok());
    }
}
