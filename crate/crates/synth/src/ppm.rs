//! Binary PPM (P6, maxval 255).

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn write_ppm(mut out: impl Write, img: &RgbImage) -> std::io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.data)
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte).map_err(|e| Error::Ppm(e.to_string()))? == 0 {
            return if tok.is_empty() {
                Err(Error::Ppm("truncated header".into()))
            } else {
                Ok(tok)
            };
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip).map_err(|e| Error::Ppm(e.to_string()))?;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
        } else {
            tok.push(c as char);
        }
    }
}

pub fn read_ppm(mut r: impl BufRead) -> Result<RgbImage> {
    let magic = header_token(&mut r)?;
    if magic != "P6" {
        return Err(Error::Ppm(format!("expected P6, found {magic:?}")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = header_token(&mut r)?;
        t.parse().map_err(|_| Error::Ppm(format!("bad {what} {t:?}")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(Error::Ppm(format!("only maxval 255 is supported, found {maxval}")));
    }
    let mut img = RgbImage::new(width, height);
    r.read_exact(&mut img.data)
        .map_err(|_| Error::Ppm(format!("expected {} bytes of pixel data", img.data.len())))?;
    Ok(img)
}

/// Reads just the extents of a PPM file.
pub fn read_ppm_dims(mut r: impl BufRead) -> Result<(usize, usize)> {
    let magic = header_token(&mut r)?;
    if magic != "P6" {
        return Err(Error::Ppm(format!("expected P6, found {magic:?}")));
    }
    let w = header_token(&mut r)?;
    let h = header_token(&mut r)?;
    match (w.parse(), h.parse()) {
        (Ok(w), Ok(h)) => Ok((w, h)),
        _ => Err(Error::Ppm(format!("bad extents {w:?} {h:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut img = RgbImage::new(3, 2);
        img.set_pixel(2, 1, [1, 2, 255]);
        let mut buf = Vec::new();
        write_ppm(&mut buf, &img).unwrap();
        assert!(buf.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(read_ppm(&buf[..]).unwrap(), img);
        assert_eq!(read_ppm_dims(&buf[..]).unwrap(), (3, 2));
    }

    #[test]
    fn comments_and_errors() {
        let mut buf = b"P6 # made by hand\n1 1 255\n".to_vec();
        buf.extend([9, 8, 7]);
        assert_eq!(read_ppm(&buf[..]).unwrap().pixel(0, 0), [9, 8, 7]);
        assert!(read_ppm(&b"P3\n1 1\n255\n"[..]).is_err());
        assert!(read_ppm(&b"P6\n2 2\n255\nabc"[..]).is_err());
        assert!(read_ppm(&b"P6\n1 1\n65535\n"[..]).is_err());
    }
}
