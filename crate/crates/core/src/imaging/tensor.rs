use std::io::Cursor;

use image::{ImageEncoder, ImageFormat};

use super::ImagingError;

/// A decoded RGB image, 8 bits per channel, row-major and interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageTensor {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageTensor")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::Input(format!("empty image {width}x{height}")));
        }
        let expected = width as usize * height as usize * Self::CHANNELS;
        if pixels.len() != expected {
            return Err(ImagingError::Input(format!(
                "pixel buffer holds {} bytes, {width}x{height}x3 needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// An image with every pixel set to `rgb`.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImagingError> {
        let n = width as usize * height as usize;
        let pixels = rgb.iter().copied().cycle().take(n * 3).collect();
        Self::new(width, height, pixels)
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImagingError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Formats accepted by [`decode_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodedFormat {
    Png,
    Jpeg,
}

impl EncodedFormat {
    pub fn detect(bytes: &[u8]) -> Result<Self, ImagingError> {
        match image::guess_format(bytes) {
            Ok(ImageFormat::Png) => Ok(EncodedFormat::Png),
            Ok(ImageFormat::Jpeg) => Ok(EncodedFormat::Jpeg),
            Ok(other) => Err(ImagingError::Decode {
                stage: "format detection",
                message: format!("unsupported format {other:?}, expected PNG or JPEG"),
            }),
            Err(_) => Err(ImagingError::Decode {
                stage: "format detection",
                message: "stream is neither PNG nor JPEG".into(),
            }),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            EncodedFormat::Png => "png",
            EncodedFormat::Jpeg => "jpg",
        }
    }

    fn image_format(self) -> ImageFormat {
        match self {
            EncodedFormat::Png => ImageFormat::Png,
            EncodedFormat::Jpeg => ImageFormat::Jpeg,
        }
    }
}

/// Decodes a PNG or JPEG stream into an RGB tensor. Alpha is discarded.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor, ImagingError> {
    let format = EncodedFormat::detect(bytes)?;
    let stage = match format {
        EncodedFormat::Png => "png decode",
        EncodedFormat::Jpeg => "jpeg decode",
    };
    let decoded = image::load_from_memory_with_format(bytes, format.image_format())
        .map_err(|e| ImagingError::Decode { stage, message: e.to_string() })?;
    let rgb = decoded.into_rgb8();
    let (width, height) = rgb.dimensions();
    ImageTensor::new(width, height, rgb.into_raw())
}

/// Encodes a tensor as an 8-bit RGB PNG. Output is deterministic.
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>, ImagingError> {
    let mut out = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(img.pixels(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}
