//! 8-bit PNG and JSON persistence for images, part maps and scene data.
//!
//! Network-range values `[-1, 1]` map to bytes by `round((v + 1) / 2 * 255)`
//! with clamping; bytes map back by `b / 255 * 2 - 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn quantize(v: f64) -> u8 {
    ((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

/// Rounds every value to the nearest representable 8-bit level.
pub fn quantize_tensor<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(|v| S::lit(dequantize(quantize(v.as_f64()))))
}

fn planes<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match t.shape()[..] {
        [c, h, w] | [1, c, h, w] if c == 1 || c == 3 => Ok((c, h, w)),
        _ => Err(Error::shape("png", format!("expected (3|1, H, W) with optional unit batch, got {:?}", t.shape()))),
    }
}

/// Writes a `(C, H, W)` or `(1, C, H, W)` tensor with `C` of 1 or 3.
pub fn write_png<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let (c, h, w) = planes(t)?;
    let mut bytes = Vec::with_capacity(c * h * w);
    for i in 0..h * w {
        for ch in 0..c {
            bytes.push(quantize(t.data()[ch * h * w + i].as_f64()));
        }
    }
    let color = if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale };
    write_bytes(path, &bytes, w, h, color)
}

/// Writes raw 8-bit grayscale values.
pub fn write_gray_png(path: &Path, bytes: &[u8], width: usize, height: usize) -> Result<()> {
    if bytes.len() != width * height {
        return Err(Error::shape("png", format!("{} bytes for {width}x{height}", bytes.len())));
    }
    write_bytes(path, bytes, width, height, png::ColorType::Grayscale)
}

/// Writes interleaved 8-bit RGB values.
pub fn write_rgb_png(path: &Path, bytes: &[u8], width: usize, height: usize) -> Result<()> {
    if bytes.len() != 3 * width * height {
        return Err(Error::shape("png", format!("{} bytes for {width}x{height} RGB", bytes.len())));
    }
    write_bytes(path, bytes, width, height, png::ColorType::Rgb)
}

fn write_bytes(path: &Path, bytes: &[u8], width: usize, height: usize, color: png::ColorType) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let encoded = encoder.write_header().and_then(|mut w| w.write_image_data(bytes));
    encoded.map_err(|e| Error::format("png", format!("{}: {e}", path.display())))
}

/// Decoded 8-bit image: channels (1 or 3), height, width and interleaved bytes.
pub struct RawImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub bytes: Vec<u8>,
}

pub fn read_raw_png(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: String| Error::format("png", format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    buf.truncate(info.line_size * info.height as usize);
    Ok(RawImage { channels, height: info.height as usize, width: info.width as usize, bytes: buf })
}

/// Reads an 8-bit PNG into a `(C, H, W)` tensor in network range.
pub fn read_png<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let raw = read_raw_png(path)?;
    let (c, h, w) = (raw.channels, raw.height, raw.width);
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, px) = (i / (h * w), i % (h * w));
        S::lit(dequantize(raw.bytes[px * c + ch]))
    }))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| Error::json(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_round_trips_levels() {
        for b in 0..=255u8 {
            assert_eq!(quantize(dequantize(b)), b);
        }
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(3.0), 255);
        assert_eq!(quantize(0.0), 128);
    }

    #[test]
    fn rgb_png_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let t = quantize_tensor(&Tensor::<f64>::from_fn(&[3, 5, 4], |i| (i as f64 / 30.0) - 1.0));
        write_png(&path, &t).unwrap();
        let back: Tensor<f64> = read_png(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn gray_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let bytes: Vec<u8> = (0..12).map(|i| i * 20).collect();
        write_gray_png(&path, &bytes, 3, 4).unwrap();
        let raw = read_raw_png(&path).unwrap();
        assert_eq!((raw.channels, raw.height, raw.width), (1, 4, 3));
        assert_eq!(raw.bytes, bytes);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(read_png::<f64>(Path::new("/nonexistent/x.png")), Err(Error::Io { .. })));
    }
}
