//! Raster and packed-tensor file I/O.
//!
//! Packed tensors are a single text line `f32 <dim> <dim> ...\n` followed by
//! little-endian float32 values in C order.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use ndarray::{Array3, ArrayD, IxDyn};

use crate::error::{Error, Result};

/// Reads an 8-bit PNG as raw 0..255 values, C×H×W (1 or 3 channels).
pub fn read_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?;
    if img.color().has_alpha() || img.color().channel_count() >= 3 {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64
        }))
    } else {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        Ok(Array3::from_shape_fn((1, h as usize, w as usize), |(_, y, x)| {
            g.get_pixel(x as u32, y as u32)[0] as f64
        }))
    }
}

/// Rounds raw 0..255 values to u8 and writes a lossless PNG.
pub fn write_png(path: &Path, raw: &Array3<f64>) -> Result<()> {
    let (c, h, w) = raw.dim();
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    match c {
        3 => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([q(raw[[0, y, x]]), q(raw[[1, y, x]]), q(raw[[2, y, x]])])
            });
            buf.save(path)?;
        }
        1 => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([q(raw[[0, y as usize, x as usize]])])
            });
            buf.save(path)?;
        }
        _ => {
            return Err(Error::invalid(format!(
                "PNG export supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

/// Writes a 2-D map with values in [0, 1] as an 8-bit grayscale raster.
pub fn write_gray_png(path: &Path, map: &ndarray::Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let raw = Array3::from_shape_fn((1, h, w), |(_, y, x)| map[[y, x]] * 255.0);
    write_png(path, &raw)
}

pub fn encode_tensor(t: &ArrayD<f64>) -> Vec<u8> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let mut out = format!("f32 {}\n", dims.join(" ")).into_bytes();
    out.reserve(t.len() * 4);
    for v in t.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<ArrayD<f64>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing tensor header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format(path, "tensor header is not UTF-8"))?;
    let mut parts = header.split_whitespace();
    match parts.next() {
        Some("f32") => {}
        other => {
            return Err(Error::format(
                path,
                format!("unsupported tensor dtype {other:?}"),
            ))
        }
    }
    let shape = parts
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::format(path, "bad tensor dimension"))?;
    let count: usize = shape.iter().product();
    let body = &bytes[nl + 1..];
    if body.len() != count * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", count * 4, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), values)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_tensor(path: &Path, t: &ArrayD<f64>) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_header_and_payload() {
        let t = ArrayD::from_shape_vec(IxDyn(&[1, 2, 2]), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let bytes = encode_tensor(&t);
        assert!(bytes.starts_with(b"f32 1 2 2\n"));
        assert_eq!(bytes.len(), 10 + 16);
        assert_eq!(&bytes[10..14], &0.5f32.to_le_bytes());
        let back = decode_tensor(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let t = ArrayD::from_elem(IxDyn(&[3, 3]), 1.0);
        let bytes = encode_tensor(&t);
        assert!(decode_tensor(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(decode_tensor(b"f64 2\n", Path::new("mem")).is_err());
    }

    #[test]
    fn png_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let raw = Array3::from_shape_fn((3, 5, 4), |(c, y, x)| ((c * 50 + y * 13 + x * 7) % 256) as f64);
        write_png(&p, &raw).unwrap();
        assert_eq!(read_png(&p).unwrap(), raw);
        let g = Array3::from_shape_fn((1, 3, 3), |(_, y, x)| (y * 3 + x) as f64 * 20.0);
        write_png(&p, &g).unwrap();
        assert_eq!(read_png(&p).unwrap(), g);
    }
}
