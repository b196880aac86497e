//! PNG and base64 wire formats for images, binary masks and part-label maps.
//!
//! Images are 8-bit RGB (or grayscale for one channel) with values quantized
//! as `round(255 v)`; binary masks are 8-bit grayscale 0/255; label maps are
//! 8-bit indexed PNGs whose index is the label.

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use dragpart_core::{BinaryMask, ImageGrid, LabelMap};
use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(width: usize, height: usize, color: ColorType, palette: Option<Vec<u8>>, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
    writer.write_image_data(data).map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    data: Vec<u8>,
}

fn decode(bytes: &[u8], transformations: Transformations) -> Result<Decoded> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(transformations);
    let mut reader = dec.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Image("image too large".into()))?;
    let mut data = vec![0u8; size];
    let info = reader.next_frame(&mut data).map_err(|e| Error::Image(e.to_string()))?;
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::Image(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    data.truncate(info.buffer_size());
    Ok(Decoded { width: info.width as usize, height: info.height as usize, color: info.color_type, data })
}

/// Encodes an image as 8-bit PNG; signed images are mapped to `[0, 1]` first.
pub fn encode_image(image: &ImageGrid) -> Result<Vec<u8>> {
    let image = image.to_unit_range();
    let color = match image.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => return Err(Error::Image(format!("cannot write a {c}-channel image as PNG"))),
    };
    let data: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    encode(image.width(), image.height(), color, None, &data)
}

/// Decodes any 8-bit-representable PNG to a 3-channel `[0, 1]` image; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<ImageGrid> {
    let d = decode(bytes, Transformations::normalize_to_color8())?;
    let pixels = d.width * d.height;
    let rgb: Vec<f32> = match d.color {
        ColorType::Rgb => d.data.iter().map(|&b| f32::from(b) / 255.0).collect(),
        ColorType::Rgba => d.data.chunks_exact(4).flat_map(|p| p[..3].iter().map(|&b| f32::from(b) / 255.0)).collect(),
        ColorType::Grayscale => d.data.iter().flat_map(|&b| [f32::from(b) / 255.0; 3]).collect(),
        ColorType::GrayscaleAlpha => d.data.chunks_exact(2).flat_map(|p| [f32::from(p[0]) / 255.0; 3]).collect(),
        ColorType::Indexed => return Err(Error::Image("palette was not expanded".into())),
    };
    debug_assert_eq!(rgb.len(), pixels * 3);
    Ok(ImageGrid::new(d.height, d.width, 3, rgb)?)
}

pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let data: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(mask.width, mask.height, ColorType::Grayscale, None, &data)
}

/// Any PNG; a pixel is set when its first channel exceeds 127.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let d = decode(bytes, Transformations::normalize_to_color8())?;
    let stride = d.data.len() / (d.width * d.height).max(1);
    let data = d.data.chunks_exact(stride).map(|p| p[0] > 127).collect();
    Ok(BinaryMask::new(d.height, d.width, data)?)
}

/// Indexed PNG with a gray ramp palette; index `l` is label `l`.
pub fn encode_labels(labels: &LabelMap) -> Result<Vec<u8>> {
    let max = labels.labels.iter().copied().max().unwrap_or(0);
    if max > 255 {
        return Err(Error::Image(format!("label {max} does not fit an 8-bit palette")));
    }
    let entries = usize::from(max) + 1;
    let palette: Vec<u8> = (0..entries)
        .flat_map(|i| {
            let g = if entries == 1 { 0 } else { (i * 255 / (entries - 1)) as u8 };
            [g, g, g]
        })
        .collect();
    let data: Vec<u8> = labels.labels.iter().map(|&l| l as u8).collect();
    encode(labels.width, labels.height, ColorType::Indexed, Some(palette), &data)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let d = decode(bytes, Transformations::IDENTITY)?;
    if d.color != ColorType::Indexed {
        return Err(Error::Image(format!("label maps must be indexed PNGs, got {:?}", d.color)));
    }
    Ok(LabelMap::new(d.height, d.width, d.data.into_iter().map(u16::from).collect())?)
}

pub fn to_base64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn from_base64(text: &str) -> Result<Vec<u8>> {
    STANDARD.decode(text.trim()).map_err(|e| Error::Image(format!("invalid base64: {e}")))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    decode_image(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}

pub fn write_image(path: impl AsRef<Path>, image: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_image(image)?).map_err(|e| Error::file(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    decode_mask(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}

/// Value an image takes after a PNG round trip.
pub fn quantized(image: &ImageGrid) -> Result<ImageGrid> {
    let image = image.to_unit_range();
    let data = image.data().iter().map(|&v| f32::from(quantize(v)) / 255.0).collect();
    Ok(ImageGrid::new(image.height(), image.width(), image.channels(), data)?)
}
