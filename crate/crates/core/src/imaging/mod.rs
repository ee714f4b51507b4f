//! Image decoding, the classifier preprocessing contract, and augmentation.

mod augment;
mod preprocess;
mod tensor;

pub use augment::{augment, expand_training_set, AugmentPolicy, AugmentSpec, TrainingImage};
pub use preprocess::{
    crop_and_resize, preprocess, ChannelLayout, CropMode, ModelInput, Normalization,
    PreprocessConfig, Roi,
};
pub use tensor::{decode_image, encode_png, EncodedFormat, ImageTensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("decode error during {stage}: {message}")]
    Decode { stage: &'static str, message: String },
    #[error("encode error: {0}")]
    Encode(String),
    #[error("invalid image: {0}")]
    Input(String),
    #[error("region of interest {roi} lies outside the {width}x{height} image")]
    Bounds { roi: Roi, width: u32, height: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid augmentation spec: field `{field}` {message}")]
    Validation { field: &'static str, message: String },
    #[error("sample {id} is in the {split} split; augmentation is only allowed on training samples")]
    Leakage { id: String, split: crate::Split },
}
