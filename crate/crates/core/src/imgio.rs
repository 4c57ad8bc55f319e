//! Raster image decoding and encoding.
//!
//! Images are held as interleaved RGB triples of `f32` in `[0, 1]`, gamma
//! encoded exactly as stored in the file. Only PNG and JPEG are supported.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, ImageFormat, ImageReader};
use thiserror::Error;

const JPEG_QUALITY: u8 = 95;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: String, reason: String },
    #[error("invalid output format: {0}")]
    InvalidFormat(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Output container format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Png,
    Jpeg,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Png => "png",
            OutputFormat::Jpeg => "jpg",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(OutputFormat::Png),
            "jpg" | "jpeg" => Ok(OutputFormat::Jpeg),
            other => Err(ImageError::InvalidFormat(other.to_string())),
        }
    }
}

/// An opaque RGB image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<[f32; 3]>,
}

impl RgbImage {
    /// Builds an image, clamping every sample into `[0, 1]` and mapping NaN to 0.
    pub fn new(width: u32, height: u32, pixels: Vec<[f32; 3]>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(ImageError::InvalidImage(format!(
                "expected {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        let pixels = pixels.into_iter().map(|p| p.map(clamp_unit)).collect();
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).map(clamp_unit));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Samples quantized to 8 bits with round-half-up.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.map(quantize_u8)).collect()
    }
}

fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Maps `[0, 1]` to `0..=255`, rounding halves up.
pub fn quantize_u8(v: f32) -> u8 {
    let scaled = (clamp_unit(v) as f64) * 255.0;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Decodes a PNG or JPEG file. Alpha is composited over white.
pub fn decode_image(path: &Path) -> Result<RgbImage, ImageError> {
    if !path.exists() {
        return Err(ImageError::FileNotFound(path.display().to_string()));
    }
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        Some(other) => return Err(ImageError::UnsupportedFormat(format!("{}: {other:?}", path.display()))),
        None => {
            return Err(ImageError::UnsupportedFormat(format!(
                "{}: unrecognized content",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| ImageError::CorruptImage {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let rgba = decoded.to_rgba8();
    let (width, height) = rgba.dimensions();
    let pixels = rgba
        .pixels()
        .map(|p| {
            let [r, g, b, a] = p.0;
            let alpha = a as f32 / 255.0;
            [r, g, b].map(|c| c as f32 / 255.0 * alpha + (1.0 - alpha))
        })
        .collect();
    RgbImage::new(width, height, pixels)
}

/// Writes `img` as 8-bit PNG or JPEG.
pub fn encode_image(img: &RgbImage, path: &Path, format: OutputFormat) -> Result<(), ImageError> {
    let bytes = img.to_rgb8();
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    let result = match format {
        OutputFormat::Png => {
            PngEncoder::new(&mut writer).write_image(&bytes, img.width, img.height, image::ExtendedColorType::Rgb8)
        }
        OutputFormat::Jpeg => JpegEncoder::new_with_quality(&mut writer, JPEG_QUALITY).write_image(
            &bytes,
            img.width,
            img.height,
            image::ExtendedColorType::Rgb8,
        ),
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => ImageError::Io(io),
        other => ImageError::Io(std::io::Error::other(other.to_string())),
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize_u8(0.4999), 127);
        assert_eq!(quantize_u8(0.5001), 128);
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(-3.0), 0);
        assert_eq!(quantize_u8(f32::NAN), 0);
    }

    #[test]
    fn red_pixel_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        image::RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]))
            .save(&path)
            .unwrap();
        let img = decode_image(&path).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn gray_jpeg_within_codec_noise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.jpg");
        let img = RgbImage::from_fn(2, 2, |_, _| [128.0 / 255.0; 3]);
        encode_image(&img, &path, OutputFormat::Jpeg).unwrap();
        let back = decode_image(&path).unwrap();
        for p in back.pixels() {
            for &v in p {
                assert!((v - 128.0 / 255.0).abs() <= 2.0 / 255.0, "{v}");
            }
        }
    }

    #[test]
    fn alpha_composited_over_white() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alpha.png");
        image::RgbaImage::from_pixel(1, 1, image::Rgba([0, 0, 0, 0]))
            .save(&path)
            .unwrap();
        assert_eq!(decode_image(&path).unwrap().pixel(0, 0), [1.0; 3]);
    }

    #[test]
    fn text_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.png");
        std::fs::write(&path, "definitely not an image").unwrap();
        let err = decode_image(&path).unwrap_err();
        assert!(
            matches!(err, ImageError::UnsupportedFormat(_) | ImageError::CorruptImage { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn missing_file() {
        let err = decode_image(Path::new("/nonexistent/photo.png")).unwrap_err();
        assert!(matches!(err, ImageError::FileNotFound(_)));
    }

    #[test]
    fn unwritable_directory() {
        let img = RgbImage::from_fn(2, 2, |_, _| [0.5; 3]);
        let err = encode_image(&img, Path::new("/nonexistent-dir/sub/out.png"), OutputFormat::Png).unwrap_err();
        assert!(matches!(err, ImageError::Io(_)));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("PNG".parse::<OutputFormat>().unwrap(), OutputFormat::Png);
        assert_eq!("jpeg".parse::<OutputFormat>().unwrap(), OutputFormat::Jpeg);
        assert!(matches!(
            "tiff".parse::<OutputFormat>(),
            Err(ImageError::InvalidFormat(_))
        ));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(RgbImage::new(2, 2, vec![[0.0; 3]; 3]).is_err());
    }
}
