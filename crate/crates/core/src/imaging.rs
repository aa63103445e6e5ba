//! Image tensor type, PNG codec and the geometric/photometric primitives the
//! rest of the crate builds on.
//!
//! Every image is held as `f32` in `[0, 1]`, row-major with interleaved
//! channels. Decoding always yields three channels: grayscale is replicated
//! and alpha is dropped.

use std::io::Cursor;

use crate::error::{Error, Result};

/// Side length of the canonical model input.
pub const CANONICAL_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::dims(
                format!("{expected} values ({height}x{width}x{channels})"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Argument(format!(
                "pixel value {} at index {bad} outside [0, 1]",
                data[bad]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Image with every element set to `value` (clamped into `[0, 1]`).
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value.clamp(0.0, 1.0); height * width * channels],
        )
    }

    // Callers inside the crate guarantee the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    pub fn is_canonical(&self) -> bool {
        self.height == CANONICAL_SIZE && self.width == CANONICAL_SIZE && self.channels == 3
    }

    /// Three-channel copy; grayscale is replicated.
    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self::from_raw(self.height, self.width, 3, data)
    }

    /// Resize to the canonical 256x256 RGB model input.
    pub fn to_canonical(&self) -> ImageTensor {
        let rgb = self.to_rgb();
        if rgb.is_canonical() {
            return rgb;
        }
        resize_bilinear(&rgb, CANONICAL_SIZE, CANONICAL_SIZE).expect("canonical size is nonzero")
    }

    /// Per-pixel luminance `0.299 R + 0.587 G + 0.114 B` (identity for grayscale).
    pub fn luminance(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let mut cursor = Cursor::new(bytes);
    let decoded = decode_raw(&mut cursor);
    let (info, raw) = match decoded {
        Ok(v) => v,
        Err(RawError::Png(e)) => {
            return Err(Error::Decode {
                offset: cursor.position(),
                message: e.to_string(),
            })
        }
        Err(RawError::Format(msg)) => return Err(Error::UnsupportedFormat(msg)),
    };

    let (h, w) = (info.height as usize, info.width as usize);
    let src_channels = info.color_type.samples();
    let keep = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        _ => 3,
    };
    let mut data = Vec::with_capacity(h * w * 3);
    for row in raw.chunks_exact(info.line_size).take(h) {
        for px in row[..w * src_channels].chunks_exact(src_channels) {
            if keep == 1 {
                let v = f32::from(px[0]) / 255.0;
                data.extend_from_slice(&[v, v, v]);
            } else {
                data.extend(px[..3].iter().map(|&b| f32::from(b) / 255.0));
            }
        }
    }
    Ok(ImageTensor::from_raw(h, w, 3, data))
}

enum RawError {
    Png(png::DecodingError),
    Format(String),
}

fn decode_raw(
    cursor: &mut Cursor<&[u8]>,
) -> std::result::Result<(png::OutputInfo, Vec<u8>), RawError> {
    let mut decoder = png::Decoder::new(cursor);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(RawError::Png)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(RawError::Format(format!(
            "bit depth {} (only 8-bit PNG is supported)",
            depth as u8
        )));
    }
    if color == png::ColorType::Indexed {
        return Err(RawError::Format("indexed-color PNG".into()));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RawError::Format("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(RawError::Png)?;
    Ok((info, buf))
}

pub fn encode_png(img: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(if img.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
        let mut writer = encoder
            .write_header()
            .expect("writing to a Vec cannot fail");
        writer
            .write_image_data(&bytes)
            .expect("buffer length matches header");
    }
    out
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Bilinear resize with corner-aligned sampling. A single output row or
/// column samples the input centre.
pub fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument(format!(
            "target size must be positive, got {out_h}x{out_w}"
        )));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let c = img.channels;
    let ys = sample_positions(img.height, out_h);
    let xs = sample_positions(img.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
                let bottom = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(ImageTensor::from_raw(out_h, out_w, c, data))
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src as f64 - 1.0) / 2.0
            } else {
                i as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0)
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

pub fn adjust_brightness(img: &ImageTensor, factor: f32) -> Result<ImageTensor> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Argument(format!(
            "brightness factor must be positive, got {factor}"
        )));
    }
    let data = img.data.iter().map(|&v| (v * factor).clamp(0.0, 1.0)).collect();
    Ok(ImageTensor::from_raw(img.height, img.width, img.channels, data))
}
