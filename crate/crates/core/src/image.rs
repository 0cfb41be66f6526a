//! RGB images and their PNG / binary PPM (P6) interchange.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Three-channel image stored as a `[1, 3, H, W]` tensor.
///
/// Values are sRGB-encoded unless `linear` is set. They may leave `[0, 1]`
/// while the image is a network prediction; export clamps.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    tensor: Tensor,
    pub linear: bool,
}

impl RgbImage {
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let (b, c, _, _) = tensor.dims4()?;
        if b != 1 || c != 3 {
            return Err(Error::shape(format!(
                "an RGB image must be [1, 3, H, W], got {:?}",
                tensor.shape()
            )));
        }
        Ok(Self {
            tensor,
            linear: false,
        })
    }

    /// Builds an image from a per-pixel function returning `[r, g, b]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = vec![0.0; 3 * height * width];
        let plane = height * width;
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for (c, v) in px.into_iter().enumerate() {
                    data[c * plane + y * width + x] = v;
                }
            }
        }
        Self {
            tensor: Tensor::from_parts_unchecked(vec![1, 3, height, width], data),
            linear: false,
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let (h, w) = (self.height(), self.width());
        let d = self.tensor.data();
        [0, 1, 2].map(|c| d[c * h * w + y * w + x])
    }

    pub fn clamped(&self) -> Self {
        Self {
            tensor: self.tensor.clamp01(),
            linear: self.linear,
        }
    }

    /// Per-pixel `(R + G + B) / 3` of the clamped image.
    pub fn lightness(&self) -> Vec<f64> {
        let plane = self.height() * self.width();
        let d = self.tensor.data();
        (0..plane)
            .map(|i| {
                (d[i].clamp(0.0, 1.0) + d[plane + i].clamp(0.0, 1.0) + d[2 * plane + i].clamp(0.0, 1.0))
                    / 3.0
            })
            .collect()
    }

    pub fn mean_lightness(&self) -> f64 {
        let l = self.lightness();
        l.iter().sum::<f64>() / l.len() as f64
    }

    /// Interleaved 8-bit RGB, clamped and rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.interleaved(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
    }

    pub fn to_rgb16(&self) -> Vec<u16> {
        self.interleaved(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
    }

    fn interleaved<T>(&self, f: impl Fn(f64) -> T) -> Vec<T> {
        let (h, w) = (self.height(), self.width());
        let plane = h * w;
        let d = self.tensor.data();
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                out.push(f(d[c * plane + i]));
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        Self::from_interleaved(width, height, rgb, |v| f64::from(v) / 255.0)
    }

    pub fn from_rgb16(width: usize, height: usize, rgb: &[u16]) -> Result<Self> {
        Self::from_interleaved(width, height, rgb, |v| f64::from(v) / 65535.0)
    }

    fn from_interleaved<T: Copy>(width: usize, height: usize, px: &[T], f: impl Fn(T) -> f64) -> Result<Self> {
        if px.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "{width}x{height} RGB needs {} values, got {}",
                3 * width * height,
                px.len()
            )));
        }
        Ok(Self::from_fn(height, width, |y, x| {
            let i = 3 * (y * width + x);
            [f(px[i]), f(px[i + 1]), f(px[i + 2])]
        }))
    }
}

/// Reads a PNG (8/16-bit gray, gray+alpha, RGB or RGBA) or a P6 PPM,
/// chosen by file signature.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        decode_png(&bytes)
    }
}

/// Writes by extension: `.ppm` gives P6, anything else PNG.
pub fn write_image(path: &Path, img: &RgbImage, sixteen_bit: bool) -> Result<()> {
    let is_ppm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let mut out = BufWriter::new(File::create(path)?);
    if is_ppm {
        encode_ppm(&mut out, img, sixteen_bit)?;
    } else {
        encode_png(&mut out, img, sixteen_bit)?;
    }
    out.flush()?;
    Ok(())
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&v| f64::from(v) / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / 65535.0)
            .collect(),
        other => return Err(Error::format("PNG", format!("unsupported bit depth {other:?}"))),
    };
    let channels = info.color_type.samples();
    if samples.len() != w * h * channels {
        return Err(Error::format("PNG", "decoded buffer has unexpected length"));
    }
    Ok(RgbImage::from_fn(h, w, |y, x| {
        let p = &samples[(y * w + x) * channels..(y * w + x + 1) * channels];
        match channels {
            1 | 2 => [p[0]; 3],
            _ => [p[0], p[1], p[2]],
        }
    }))
}

fn encode_png(out: &mut impl Write, img: &RgbImage, sixteen_bit: bool) -> Result<()> {
    let mut enc = png::Encoder::new(out, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(if sixteen_bit {
        png::BitDepth::Sixteen
    } else {
        png::BitDepth::Eight
    });
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let data: Vec<u8> = if sixteen_bit {
        img.to_rgb16().iter().flat_map(|v| v.to_be_bytes()).collect()
    } else {
        img.to_rgb8()
    };
    writer
        .write_image_data(&data)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    Ok(())
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    // Header: "P6" <ws> width <ws> height <ws> maxval <single ws> data
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::format("PPM", "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PPM", "bad header number"))?;
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PPM", format!("maxval {maxval} out of range")));
    }
    let data = bytes.get(pos..).unwrap_or_default();
    let scale = maxval as f64;
    let values: Vec<f64> = if maxval < 256 {
        data.iter().take(3 * w * h).map(|&v| f64::from(v) / scale).collect()
    } else {
        data.chunks_exact(2)
            .take(3 * w * h)
            .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / scale)
            .collect()
    };
    if values.len() != 3 * w * h {
        return Err(Error::format("PPM", "truncated pixel data"));
    }
    Ok(RgbImage::from_fn(h, w, |y, x| {
        let i = 3 * (y * w + x);
        [values[i], values[i + 1], values[i + 2]]
    }))
}

fn encode_ppm(out: &mut impl Write, img: &RgbImage, sixteen_bit: bool) -> Result<()> {
    let maxval = if sixteen_bit { 65535 } else { 255 };
    write!(out, "P6\n{} {}\n{}\n", img.width(), img.height(), maxval)?;
    if sixteen_bit {
        for v in img.to_rgb16() {
            out.write_all(&v.to_be_bytes())?;
        }
    } else {
        out.write_all(&img.to_rgb8())?;
    }
    Ok(())
}

/// PNG and PPM files directly under `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm")
            })
        })
        .collect();
    paths.sort();
    Ok(paths)
}
