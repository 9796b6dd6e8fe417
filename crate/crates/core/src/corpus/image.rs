//! 8-bit grayscale images: binary PGM read/write and PNG read.

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Pixel values scaled to [0, 1].
    pub fn to_unit(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / (255.0 * self.pixels.len() as f64)
    }

    /// Binary P5 encoding with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("PGM: {m}"));
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("only binary P5 is supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("maxval must be 255"));
        }
        // exactly one whitespace byte separates the header from the raster
        let data = &bytes[(pos + 1).min(bytes.len())..];
        if data.len() < width * height {
            return Err(bad("truncated raster"));
        }
        Self::new(width, height, data[..width * height].to_vec())
    }

    /// Loads PGM or PNG, chosen by content.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(b"P5") {
            return Self::from_pgm(&bytes);
        }
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(w, h, img.into_raw())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([7, 9]);
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap().pixels, [7, 9]);
    }

    #[test]
    fn png_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        image::GrayImage::from_raw(2, 2, vec![1, 2, 3, 4]).unwrap().save(&path).unwrap();
        let img = GrayImage::load(&path).unwrap();
        assert_eq!((img.width, img.height, img.pixels), (2, 2, vec![1, 2, 3, 4]));
    }

    #[test]
    fn rejects_wrong_size() {
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayImage::from_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }
}
