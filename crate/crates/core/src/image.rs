//! Image handles passed between the painter, the planner and the gateway.

use std::sync::OnceLock;

use thiserror::Error;

use crate::hash::sha256_hex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("png decode failed: {0}")]
    Decode(String),
    #[error("pixel buffer of {got} bytes does not match {width}x{height} rgb")]
    BadBuffer { width: u32, height: u32, got: usize },
    #[error("unsupported png color layout {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
enum ImageData {
    Rgb8(Vec<u8>),
    Png(Vec<u8>),
}

/// An image either as raw RGB pixels or as encoded PNG bytes received from
/// a backend. Encoded bytes are kept unmodified.
#[derive(Debug, Clone)]
pub struct ImageHandle {
    width: u32,
    height: u32,
    data: ImageData,
    png: OnceLock<Vec<u8>>,
}

impl PartialEq for ImageHandle {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.data == other.data
    }
}

impl ImageHandle {
    pub fn from_rgb8(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(ImageError::BadBuffer {
                width,
                height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: ImageData::Rgb8(pixels),
            png: OnceLock::new(),
        })
    }

    /// Wraps encoded PNG bytes, reading only the header for the dimensions.
    pub fn from_png(bytes: Vec<u8>) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes.as_slice()));
        let reader = decoder.read_info().map_err(|e| ImageError::Decode(e.to_string()))?;
        let info = reader.info();
        let (width, height) = (info.width, info.height);
        Ok(Self {
            width,
            height,
            data: ImageData::Png(bytes.clone()),
            png: OnceLock::from(bytes),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// PNG encoding of the image. Backend-supplied bytes are returned as is.
    pub fn png_bytes(&self) -> &[u8] {
        self.png.get_or_init(|| match &self.data {
            ImageData::Png(b) => b.clone(),
            ImageData::Rgb8(px) => encode_png(self.width, self.height, px),
        })
    }

    /// SHA-256 of the PNG bytes; doubles as the on-disk file name.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.png_bytes())
    }

    /// Raw RGB pixels, decoding PNG data when necessary.
    pub fn to_rgb8(&self) -> Result<Vec<u8>, ImageError> {
        match &self.data {
            ImageData::Rgb8(px) => Ok(px.clone()),
            ImageData::Png(bytes) => decode_png_rgb8(bytes),
        }
    }
}

fn encode_png(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().expect("png header into memory");
        writer.write_image_data(pixels).expect("png data into memory");
    }
    out
}

fn decode_png_rgb8(bytes: &[u8]) -> Result<Vec<u8>, ImageError> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| ImageError::Decode(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Decode("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    match frame.color_type {
        png::ColorType::Rgb => Ok(buf),
        png::ColorType::Rgba => Ok(buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        png::ColorType::Grayscale => Ok(buf.iter().flat_map(|&g| [g, g, g]).collect()),
        png::ColorType::GrayscaleAlpha => Ok(buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect()),
        other => Err(ImageError::Unsupported(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_preserves_pixels() {
        let px: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let img = ImageHandle::from_rgb8(4, 3, px.clone()).unwrap();
        let back = ImageHandle::from_png(img.png_bytes().to_vec()).unwrap();
        assert_eq!((back.width(), back.height()), (4, 3));
        assert_eq!(back.to_rgb8().unwrap(), px);
        assert_eq!(back.content_hash(), img.content_hash());
    }

    #[test]
    fn rejects_wrong_buffer_size() {
        assert!(ImageHandle::from_rgb8(2, 2, vec![0; 11]).is_err());
        assert!(ImageHandle::from_png(b"not a png".to_vec()).is_err());
    }
}
