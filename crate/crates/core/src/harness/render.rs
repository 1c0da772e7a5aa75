//! 8-bit PGM renders and difference images.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::datamodel::Image;
use crate::error::{Error, Result};

/// Scale applied to difference images before rendering.
pub const DIFF_GAIN: f64 = 5.0;

/// 99th percentile of the magnitude (nearest rank).
pub fn percentile99(values: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * 0.99).round() as usize]
}

/// `DIFF_GAIN · ||x| − |ref||`.
pub fn difference_image(x: &Image, reference: &Image) -> Result<Array2<f64>> {
    if x.dim() != reference.dim() {
        return Err(Error::Shape(format!("image {:?} vs reference {:?}", x.dim(), reference.dim())));
    }
    Ok(ndarray::Zip::from(x)
        .and(reference)
        .map_collect(|a, b| DIFF_GAIN * (a.norm() - b.norm()).abs()))
}

/// Binary P5 bytes of `values / level`, clamped to `[0, 1]` and quantized
/// to 0–255. A non-positive `level` renders black.
pub fn pgm_bytes(values: &Array2<f64>, level: f64) -> Vec<u8> {
    let (h, w) = values.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if level > 0.0 {
            ((v / level).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, values: &Array2<f64>, level: f64) -> Result<()> {
    fs::write(path, pgm_bytes(values, level)).map_err(|e| Error::io(path, e))
}

/// Magnitude render normalized to its own 99th percentile.
pub fn write_magnitude_pgm(path: &Path, image: &Image) -> Result<()> {
    let mag = image.mapv(|v| v.norm());
    write_pgm(path, &mag, percentile99(&mag))
}

/// Parse a binary P5 file with maxval 255 into `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Manifest(format!("{} is not an 8-bit P5 image", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(bad());
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = bytes.get(pos..).ok_or_else(bad)?.to_vec();
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    #[test]
    fn self_difference_is_zero() {
        let x = Image::from_shape_fn((4, 4), |(y, x)| C64::new(y as f64, x as f64));
        assert!(difference_image(&x, &x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pgm_header_and_quantization() {
        let v = Array2::from_shape_vec((1, 3), vec![0.0, 0.5, 2.0]).unwrap();
        let b = pgm_bytes(&v, 1.0);
        assert_eq!(&b[..11], b"P5\n3 1\n255\n");
        assert_eq!(&b[11..], &[0, 128, 255]);
    }
}
