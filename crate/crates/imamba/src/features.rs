//! Per-channel grayscale dumps of feature maps and their pairwise redundancy.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use imamba_core::Tensor;

use crate::{Error, Result};

/// Gray level of a channel whose values are all equal.
pub const FLAT_LEVEL: u8 = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Min–max normalization of one plane to `0..=255`.
    pub fn normalized(plane: &[f32], width: usize, height: usize) -> Self {
        let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = f64::from(hi) - f64::from(lo);
        let pixels = plane
            .iter()
            .map(|&v| {
                if span > 0.0 && span.is_finite() {
                    ((f64::from(v) - f64::from(lo)) / span * 255.0).round() as u8
                } else {
                    FLAT_LEVEL
                }
            })
            .collect();
        GrayImage { width, height, pixels }
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses the exact layout written by [`GrayImage::to_pgm`].
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::Malformed { what: "PGM", detail: detail.to_string() };
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            let end = bytes[pos..].iter().position(|b| b.is_ascii_whitespace()).ok_or_else(|| bad("short header"))?;
            fields.push(std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not text"))?);
            pos += end + 1;
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(bad("expected P5 with maxval 255"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let pixels = bytes[pos..].to_vec();
        if pixels.len() != width * height {
            return Err(bad("pixel count does not match extents"));
        }
        Ok(GrayImage { width, height, pixels })
    }
}

/// One image per channel of sample `n` of an `[N, C, H, W]` tensor.
pub fn channel_images(x: &Tensor<f32>, n: usize) -> Result<Vec<GrayImage>> {
    let (_, c, h, w) = x.nchw()?;
    (0..c).map(|ch| Ok(GrayImage::normalized(x.plane(n, ch)?, w, h))).collect()
}

/// Cosine similarity of every channel pair `i < j` of sample `n`.
/// A pair involving an all-zero channel scores 0.
pub fn channel_cosines(x: &Tensor<f32>, n: usize) -> Result<Vec<(usize, usize, f64)>> {
    let (_, c, _, _) = x.nchw()?;
    let planes: Vec<&[f32]> = (0..c).map(|ch| x.plane(n, ch)).collect::<imamba_core::Result<_>>()?;
    let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&u, &v)| f64::from(u) * f64::from(v)).sum::<f64>();
    let norms: Vec<f64> = planes.iter().map(|p| dot(p, p)).collect();
    let mut out = Vec::with_capacity(c * c.saturating_sub(1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            let denom = (norms[i] * norms[j]).sqrt();
            let cos = if denom > 0.0 { dot(planes[i], planes[j]) / denom } else { 0.0 };
            out.push((i, j, cos));
        }
    }
    Ok(out)
}

pub fn cosine_csv(pairs: &[(usize, usize, f64)]) -> String {
    let mut s = String::from("channel_a,channel_b,cosine\n");
    for (i, j, c) in pairs {
        let _ = writeln!(s, "{i},{j},{c:.6}");
    }
    s
}

/// Writes `channel_XXX.pgm` per channel and `cosine.csv` into `dir`.
pub fn dump(x: &Tensor<f32>, n: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (c, img) in channel_images(x, n)?.iter().enumerate() {
        let path = dir.join(format!("channel_{c:03}.pgm"));
        fs::write(&path, img.to_pgm()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join("cosine.csv");
    fs::write(&path, cosine_csv(&channel_cosines(x, n)?)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_channel_is_mid_gray() {
        let img = GrayImage::normalized(&[0.3; 6], 3, 2);
        assert!(img.pixels.iter().all(|&p| p == FLAT_LEVEL));
    }

    #[test]
    fn extremes_map_to_black_and_white() {
        let img = GrayImage::normalized(&[-1.0, 0.0, 3.0], 3, 1);
        assert_eq!(img.pixels, [0, 64, 255]);
    }

    #[test]
    fn duplicated_channel_has_unit_cosine() {
        let plane = [0.5f32, -1.25, 3.0, 0.1];
        let mut data = plane.to_vec();
        data.extend(plane);
        data.extend([0.0; 4]);
        let x = Tensor::new(&[1, 3, 2, 2], data).unwrap();
        let cos = channel_cosines(&x, 0).unwrap();
        assert_eq!(cos[0], (0, 1, 1.0));
        assert_eq!(cos[1].2, 0.0);
        assert!(cosine_csv(&cos).contains("\n0,1,1.000000\n"));
    }

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage { width: 3, height: 2, pixels: vec![0, 10, 32, 255, 9, 13] };
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = GrayImage::from_pgm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.to_pgm(), bytes);
    }
}
