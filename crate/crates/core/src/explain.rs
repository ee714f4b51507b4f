//! Occlusion saliency: how much the WSSV score drops when a square patch of
//! the input is masked out.
//!
//! Only forward passes are needed, so any [`Scorer`] works, including an
//! ONNX model behind the CPU runtime. For each patch position the importance
//! is `max(0, baseline - occluded)`. Each pixel takes the mean importance of
//! the patches covering it, and the map is min-max normalized to `[0, 1]`.
//! A map with constant importance is all zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImageTensor, ModelInput};
use crate::inference::{InferenceError, Scorer};

/// Blend weight of the colormap over the image in overlays.
pub const OVERLAY_ALPHA: f64 = 0.45;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("invalid occlusion config: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionFill {
    /// Per-channel mean of the input being explained.
    #[default]
    MeanColor,
    /// Pixel value 128 in every channel, normalized like the input.
    Gray128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    #[default]
    Wssv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub patch_side: u32,
    pub stride: u32,
    #[serde(default)]
    pub fill: OcclusionFill,
    #[serde(default)]
    pub target_class: TargetClass,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { patch_side: 16, stride: 8, fill: OcclusionFill::MeanColor, target_class: TargetClass::Wssv }
    }
}

impl OcclusionConfig {
    pub fn validate(&self, side: u32) -> Result<(), ExplainError> {
        if self.stride == 0 || self.stride > self.patch_side {
            return Err(ExplainError::Config(format!(
                "stride {} must lie in [1, patch_side = {}]",
                self.stride, self.patch_side
            )));
        }
        if self.patch_side > side {
            return Err(ExplainError::Config(format!(
                "patch side {} exceeds input side {side}",
                self.patch_side
            )));
        }
        Ok(())
    }
}

/// Top-left offsets along one axis. Positions step by `stride`; when the last
/// step does not end flush with the border an edge-aligned position is added
/// so every pixel is covered.
pub fn patch_offsets(side: u32, patch: u32, stride: u32) -> Vec<u32> {
    let last = side - patch;
    let mut offsets: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub side: u32,
    pub baseline_score: f64,
    /// Row-major, `side * side` values in `[0, 1]`.
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn value(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.side + x) as usize]
    }

    /// Coordinates of the first maximal value in row-major order.
    pub fn argmax(&self) -> (u32, u32) {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        (i as u32 % self.side, i as u32 / self.side)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Returns a copy of `input` with the square at `(x0, y0)` replaced by `fill`.
pub fn occlude(input: &ModelInput, x0: u32, y0: u32, patch: u32, fill: [f32; 3]) -> ModelInput {
    let mut out = input.clone();
    for y in y0..y0 + patch {
        for x in x0..x0 + patch {
            for (c, &v) in fill.iter().enumerate() {
                out.set_value(c, x as usize, y as usize, v);
            }
        }
    }
    out
}

fn fill_values(input: &ModelInput, fill: OcclusionFill) -> [f32; 3] {
    match fill {
        OcclusionFill::Gray128 => {
            let n = input.normalization;
            [n.apply(0, 128), n.apply(1, 128), n.apply(2, 128)]
        }
        OcclusionFill::MeanColor => {
            let side = input.side as usize;
            let mut sums = [0.0f64; 3];
            for y in 0..side {
                for x in 0..side {
                    for (c, sum) in sums.iter_mut().enumerate() {
                        *sum += f64::from(input.value(c, x, y));
                    }
                }
            }
            let n = (side * side) as f64;
            sums.map(|s| (s / n) as f32)
        }
    }
}

/// Computes an occlusion saliency map with one baseline pass plus one pass
/// per patch position. Patch passes run in parallel; the reduction is done in
/// a fixed order so the result does not depend on scheduling.
pub fn occlusion_saliency<S: Scorer + ?Sized>(
    scorer: &S,
    input: &ModelInput,
    cfg: &OcclusionConfig,
) -> Result<SaliencyMap, ExplainError> {
    let side = input.side;
    if side != scorer.input_side() {
        return Err(ExplainError::Input(format!(
            "input side {side} does not match model input side {}",
            scorer.input_side()
        )));
    }
    cfg.validate(side)?;
    let baseline = scorer.score(input)?;
    let fill = fill_values(input, cfg.fill);
    let offsets = patch_offsets(side, cfg.patch_side, cfg.stride);
    let positions: Vec<(u32, u32)> =
        offsets.iter().flat_map(|&y| offsets.iter().map(move |&x| (x, y))).collect();
    let scores = positions
        .par_iter()
        .map(|&(x, y)| scorer.score(&occlude(input, x, y, cfg.patch_side, fill)))
        .collect::<Result<Vec<f64>, InferenceError>>()?;

    let n = side as usize;
    let mut sum = vec![0.0f64; n * n];
    let mut count = vec![0u32; n * n];
    for (&(x0, y0), &occluded) in positions.iter().zip(&scores) {
        let importance = (baseline - occluded).max(0.0);
        for y in y0..y0 + cfg.patch_side {
            let row = y as usize * n;
            for x in x0..x0 + cfg.patch_side {
                sum[row + x as usize] += importance;
                count[row + x as usize] += 1;
            }
        }
    }
    let mut values: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / f64::from(c) })
        .collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        let range = hi - lo;
        values.iter_mut().for_each(|v| *v = ((*v - lo) / range).clamp(0.0, 1.0));
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(SaliencyMap { side, baseline_score: baseline, values })
}

/// Blue (0) to red (1) colormap.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [255.0 * v, 0.0, 255.0 * (1.0 - v)]
}

/// Blends the saliency colormap over `img` with alpha [`OVERLAY_ALPHA`].
/// `img` must already be in model-input geometry (`side x side`).
pub fn render_overlay(map: &SaliencyMap, img: &ImageTensor) -> Result<ImageTensor, ExplainError> {
    if img.width() != map.side || img.height() != map.side {
        return Err(ExplainError::Input(format!(
            "saliency map is {0}x{0} but the image is {1}x{2}",
            map.side,
            img.width(),
            img.height()
        )));
    }
    ImageTensor::from_fn(map.side, map.side, |x, y| {
        let px = img.pixel(x, y);
        let color = colormap(map.value(x, y));
        let mut out = [0u8; 3];
        for c in 0..3 {
            let blended = (1.0 - OVERLAY_ALPHA) * f64::from(px[c]) + OVERLAY_ALPHA * color[c];
            out[c] = blended.round().clamp(0.0, 255.0) as u8;
        }
        out
    })
    .map_err(|e| ExplainError::Input(e.to_string()))
}
