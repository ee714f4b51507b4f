use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::imaging::{ChannelLayout, Normalization, PreprocessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    /// The graph ends before the sigmoid; the engine applies it.
    Logit,
    /// The graph embeds the sigmoid.
    Probability,
}

/// Hyperparameters of the external training run, kept for provenance only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub optimizer: String,
    pub loss: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub name: String,
    pub version: String,
    pub input_name: String,
    pub input_side: u32,
    pub channel_layout: ChannelLayout,
    pub normalization: Normalization,
    pub output_kind: OutputKind,
    #[serde(default = "default_threshold")]
    pub decision_threshold: f64,
    #[serde(default = "default_class_map")]
    pub class_map: BTreeMap<u8, String>,
    #[serde(default)]
    pub provenance: Option<TrainingProvenance>,
}

fn default_threshold() -> f64 {
    0.5
}

pub(crate) fn default_class_map() -> BTreeMap<u8, String> {
    BTreeMap::from([(0, "healthy".to_string()), (1, "wssv".to_string())])
}

impl ModelMetadata {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let fail = |m: String| Err(InferenceError::Configuration(m));
        if self.name.trim().is_empty() {
            return fail("metadata name must not be empty".into());
        }
        if self.input_name.is_empty() {
            return fail("metadata input_name must not be empty".into());
        }
        if self.input_side < 8 {
            return fail(format!("input_side {} is below the minimum of 8", self.input_side));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return fail(format!(
                "decision_threshold {} must lie strictly inside (0, 1)",
                self.decision_threshold
            ));
        }
        if self.class_map != default_class_map() {
            return fail(format!(
                "class_map must be {{0: healthy, 1: wssv}}, got {:?}",
                self.class_map
            ));
        }
        self.normalization.validate().map_err(InferenceError::Configuration)
    }

    /// `name@version`, the identity reported in predictions.
    pub fn model_id(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }

    /// Center-square preprocessing matching this model's input contract.
    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            target_side: self.input_side,
            normalization: self.normalization,
            channel_layout: self.channel_layout,
            ..PreprocessConfig::default()
        }
    }
}
