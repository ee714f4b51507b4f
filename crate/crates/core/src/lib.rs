//! Edge inference and surveillance tooling for White Spot Syndrome Virus (WSSV)
//! recognition in shrimp images.
//!
//! The crate is organised by the life of an image:
//!
//! * [`imaging`] decodes images, applies the square-crop / resize / normalize
//!   contract expected by the classifiers, and performs label-preserving
//!   augmentation.
//! * [`inference`] loads ONNX model bundles and produces sigmoid-scored
//!   binary predictions.
//! * [`explain`] computes occlusion saliency maps and red-blue overlays.
//! * [`qa`] measures conversion parity and CPU inference latency.
//! * [`eval`] holds stratified splitters and imbalance-aware metrics
//!   (F1, AUC-ROC, false negative rate).
//! * [`dataset`] is a content-addressed image store with labels, splits,
//!   an audit trail and manifest export.
//! * [`reports`] and [`registry`] hold the geotagged field reports and the
//!   model registry served by the HTTP service.

pub mod dataset;
pub mod eval;
pub mod explain;
pub mod imaging;
pub mod inference;
pub mod qa;
pub mod registry;
pub mod reports;
pub mod sample;
pub mod toy;

mod fsutil;

pub use sample::{ImageSample, Label, SampleSource, Split};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    pub struct Preprocessing;
    #[doc = include_str!("../../../book/src/inference.md")]
    pub struct Inference;
    #[doc = include_str!("../../../book/src/saliency.md")]
    pub struct Saliency;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/model-qa.md")]
    pub struct ModelQa;
    #[doc = include_str!("../../../book/src/dataset.md")]
    pub struct Dataset;
}
