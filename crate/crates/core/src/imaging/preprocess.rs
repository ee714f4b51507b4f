use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ImageTensor, ImagingError};

/// A crop rectangle in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    #[default]
    CenterSquare,
    ExplicitRoi(Roi),
}

/// Per-channel affine map from 8-bit pixel values: `value * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: [f32; 3],
    pub offset: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { scale: [1.0 / 255.0; 3], offset: [0.0; 3] }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<(), String> {
        for c in 0..3 {
            if !self.scale[c].is_finite() || self.scale[c] <= 0.0 {
                return Err(format!("normalization scale[{c}] must be finite and positive"));
            }
            if !self.offset[c].is_finite() {
                return Err(format!("normalization offset[{c}] must be finite"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, channel: usize, value: u8) -> f32 {
        f32::from(value) * self.scale[channel] + self.offset[channel]
    }

    /// Closed interval of normalized values for `channel`.
    pub fn range(&self, channel: usize) -> (f32, f32) {
        (self.offset[channel], self.apply(channel, 255))
    }
}

/// Memory order of the channel axis in a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelLayout {
    /// `[1, side, side, 3]` (NHWC).
    Interleaved,
    /// `[1, 3, side, side]` (NCHW).
    #[default]
    Planar,
}

impl ChannelLayout {
    pub fn index(self, side: usize, channel: usize, x: usize, y: usize) -> usize {
        match self {
            ChannelLayout::Interleaved => (y * side + x) * 3 + channel,
            ChannelLayout::Planar => channel * side * side + y * side + x,
        }
    }

    pub fn shape(self, side: usize) -> [usize; 4] {
        match self {
            ChannelLayout::Interleaved => [1, side, side, 3],
            ChannelLayout::Planar => [1, 3, side, side],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_side: u32,
    #[serde(default)]
    pub crop_mode: CropMode,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub channel_layout: ChannelLayout,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_side: 224,
            crop_mode: CropMode::CenterSquare,
            normalization: Normalization::default(),
            channel_layout: ChannelLayout::Planar,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if self.target_side < 8 {
            return Err(ImagingError::Config(format!(
                "target_side {} is below the minimum of 8",
                self.target_side
            )));
        }
        self.normalization.validate().map_err(ImagingError::Config)
    }
}

/// A normalized square tensor ready for a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub side: u32,
    pub layout: ChannelLayout,
    pub normalization: Normalization,
    pub values: Vec<f32>,
    pub provenance: String,
}

impl ModelInput {
    pub const AD_HOC: &'static str = "ad-hoc";

    /// Normalizes an already square 8-bit image without resampling.
    pub fn from_square_image(
        img: &ImageTensor,
        layout: ChannelLayout,
        normalization: Normalization,
    ) -> Result<Self, ImagingError> {
        if img.width() != img.height() {
            return Err(ImagingError::Input(format!(
                "model input must be square, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let side = img.width() as usize;
        let mut values = vec![0.0f32; side * side * 3];
        for (i, px) in img.pixels().chunks_exact(3).enumerate() {
            let (x, y) = (i % side, i / side);
            for c in 0..3 {
                values[layout.index(side, c, x, y)] = normalization.apply(c, px[c]);
            }
        }
        Ok(Self {
            side: side as u32,
            layout,
            normalization,
            values,
            provenance: Self::AD_HOC.to_string(),
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn value(&self, channel: usize, x: usize, y: usize) -> f32 {
        self.values[self.layout.index(self.side as usize, channel, x, y)]
    }

    pub fn set_value(&mut self, channel: usize, x: usize, y: usize, v: f32) {
        let i = self.layout.index(self.side as usize, channel, x, y);
        self.values[i] = v;
    }

    pub fn shape(&self) -> [usize; 4] {
        self.layout.shape(self.side as usize)
    }
}

fn crop_rect(img: &ImageTensor, mode: &CropMode) -> Result<Roi, ImagingError> {
    let (w, h) = (img.width(), img.height());
    match *mode {
        CropMode::CenterSquare => {
            let side = w.min(h);
            Ok(Roi { x: (w - side) / 2, y: (h - side) / 2, width: side, height: side })
        }
        CropMode::ExplicitRoi(roi) => {
            let inside = roi.width > 0
                && roi.height > 0
                && u64::from(roi.x) + u64::from(roi.width) <= u64::from(w)
                && u64::from(roi.y) + u64::from(roi.height) <= u64::from(h);
            if !inside {
                return Err(ImagingError::Bounds { roi, width: w, height: h });
            }
            if roi.width < 2 || roi.height < 2 {
                return Err(ImagingError::Input(format!("region of interest {roi} is degenerate")));
            }
            Ok(roi)
        }
    }
}

/// Crops per `cfg.crop_mode` and resizes to `target_side` squared with
/// half-pixel-center bilinear interpolation. Returns 8-bit pixels so the
/// result can also back saliency overlays.
pub fn crop_and_resize(img: &ImageTensor, cfg: &PreprocessConfig) -> Result<ImageTensor, ImagingError> {
    cfg.validate()?;
    if img.width() < 2 || img.height() < 2 {
        return Err(ImagingError::Input(format!(
            "image {}x{} is too small to preprocess",
            img.width(),
            img.height()
        )));
    }
    let roi = crop_rect(img, &cfg.crop_mode)?;
    let side = cfg.target_side;
    if roi.width == side && roi.height == side {
        return ImageTensor::from_fn(side, side, |x, y| img.pixel(roi.x + x, roi.y + y));
    }
    let sx_scale = f64::from(roi.width) / f64::from(side);
    let sy_scale = f64::from(roi.height) / f64::from(side);
    let axis = |o: u32, scale: f64, len: u32| -> (u32, u32, f64) {
        let s = ((f64::from(o) + 0.5) * scale - 0.5).clamp(0.0, f64::from(len - 1));
        let i0 = s.floor() as u32;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - f64::from(i0))
    };
    let xs: Vec<_> = (0..side).map(|o| axis(o, sx_scale, roi.width)).collect();
    let ys: Vec<_> = (0..side).map(|o| axis(o, sy_scale, roi.height)).collect();
    ImageTensor::from_fn(side, side, |ox, oy| {
        let (x0, x1, fx) = xs[ox as usize];
        let (y0, y1, fy) = ys[oy as usize];
        let p00 = img.pixel(roi.x + x0, roi.y + y0);
        let p10 = img.pixel(roi.x + x1, roi.y + y0);
        let p01 = img.pixel(roi.x + x0, roi.y + y1);
        let p11 = img.pixel(roi.x + x1, roi.y + y1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    })
}

/// Square crop, resize to `target_side` and per-channel normalization.
pub fn preprocess(img: &ImageTensor, cfg: &PreprocessConfig) -> Result<ModelInput, ImagingError> {
    let square = crop_and_resize(img, cfg)?;
    ModelInput::from_square_image(&square, cfg.channel_layout, cfg.normalization)
}
