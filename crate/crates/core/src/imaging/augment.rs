//! Label-preserving augmentation.
//!
//! Every transform treats the three channels with identical coefficients, so
//! the relative colour of white-spot lesions is never remapped. There is no
//! hue, saturation or channel-shuffle knob on [`AugmentSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_png, ImageTensor, ImagingError};
use crate::sample::{blob_name, content_id, ImageSample};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    /// Counter-clockwise rotation, `[0, 360)`.
    pub rotation_degrees: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Additive brightness as a fraction of full scale, `[-0.5, 0.5]`.
    pub brightness_delta: f64,
    /// Gaussian blur sigma in pixels; 0 disables.
    pub blur_sigma: f64,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), ImagingError> {
        let invalid = |field, message: &str| {
            Err(ImagingError::Validation { field, message: message.to_string() })
        };
        if !self.rotation_degrees.is_finite() || !(0.0..360.0).contains(&self.rotation_degrees) {
            return invalid("rotation_degrees", "must lie in [0, 360)");
        }
        if !self.brightness_delta.is_finite() || !(-0.5..=0.5).contains(&self.brightness_delta) {
            return invalid("brightness_delta", "must lie in [-0.5, 0.5]");
        }
        if !self.blur_sigma.is_finite() || self.blur_sigma < 0.0 {
            return invalid("blur_sigma", "must be finite and non-negative");
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_degrees == 0.0
            && !self.flip_horizontal
            && !self.flip_vertical
            && self.brightness_delta == 0.0
            && self.blur_sigma == 0.0
    }
}

/// Applies rotation, flips, blur and brightness, in that order. Output has the
/// input's dimensions; regions exposed by rotation replicate the nearest edge.
pub fn augment(img: &ImageTensor, spec: &AugmentSpec) -> Result<ImageTensor, ImagingError> {
    spec.validate()?;
    let mut out = rotate(img, spec.rotation_degrees)?;
    if spec.flip_horizontal {
        out = flip_horizontal(&out)?;
    }
    if spec.flip_vertical {
        out = flip_vertical(&out)?;
    }
    if spec.blur_sigma > 0.0 {
        out = gaussian_blur(&out, spec.blur_sigma)?;
    }
    if spec.brightness_delta != 0.0 {
        out = shift_brightness(&out, spec.brightness_delta)?;
    }
    Ok(out)
}

fn flip_horizontal(img: &ImageTensor) -> Result<ImageTensor, ImagingError> {
    let w = img.width();
    ImageTensor::from_fn(w, img.height(), |x, y| img.pixel(w - 1 - x, y))
}

fn flip_vertical(img: &ImageTensor) -> Result<ImageTensor, ImagingError> {
    let h = img.height();
    ImageTensor::from_fn(img.width(), h, |x, y| img.pixel(x, h - 1 - y))
}

fn rotate(img: &ImageTensor, degrees: f64) -> Result<ImageTensor, ImagingError> {
    let (w, h) = (img.width(), img.height());
    if degrees == 0.0 {
        return Ok(img.clone());
    }
    if w == h && degrees % 90.0 == 0.0 {
        let n = w - 1;
        return ImageTensor::from_fn(w, h, |x, y| match degrees as u32 {
            90 => img.pixel(n - y, x),
            180 => img.pixel(n - x, n - y),
            _ => img.pixel(y, n - x),
        });
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = f64::from(w - 1) / 2.0;
    let cy = f64::from(h - 1) / 2.0;
    let max_x = f64::from(w - 1);
    let max_y = f64::from(h - 1);
    ImageTensor::from_fn(w, h, |x, y| {
        let dx = f64::from(x) - cx;
        let dy = f64::from(y) - cy;
        let sx = (cx + dx * cos - dy * sin).clamp(0.0, max_x);
        let sy = (cy + dx * sin + dy * cos).clamp(0.0, max_y);
        bilinear(img, sx, sy)
    })
}

fn bilinear(img: &ImageTensor, sx: f64, sy: f64) -> [u8; 3] {
    let x0 = sx.floor() as u32;
    let y0 = sy.floor() as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = sx - f64::from(x0);
    let fy = sy - f64::from(y0);
    let (p00, p10, p01, p11) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Symmetric reflection (`d c b a | a b c d | d c b a`) into `[0, len)`.
fn reflect(i: i64, len: i64) -> usize {
    let period = 2 * len;
    let m = i.rem_euclid(period);
    (if m < len { m } else { period - 1 - m }) as usize
}

fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor, ImagingError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let src = img.pixels();
    let mut horizontal = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for (k, weight) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + k as i64 - radius, w as i64);
                let s = (y * w + sx) * 3;
                let d = (y * w + x) * 3;
                for c in 0..3 {
                    horizontal[d + c] += weight * f64::from(src[s + c]);
                }
            }
        }
    }
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, weight) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + k as i64 - radius, h as i64);
                let s = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += weight * horizontal[s + c];
                }
            }
            let d = (y * w + x) * 3;
            for c in 0..3 {
                out[d + c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageTensor::new(img.width(), img.height(), out)
}

fn shift_brightness(img: &ImageTensor, delta: f64) -> Result<ImageTensor, ImagingError> {
    let shift = delta * 255.0;
    let pixels = img
        .pixels()
        .iter()
        .map(|&v| (f64::from(v) + shift).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageTensor::new(img.width(), img.height(), pixels)
}

/// Sampling ranges for drawing random [`AugmentSpec`]s from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Rotations are drawn from `[-max, max]` and wrapped into `[0, 360)`.
    pub max_rotation_degrees: f64,
    pub flip_probability: f64,
    pub max_brightness_delta: f64,
    pub max_blur_sigma: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            max_rotation_degrees: 20.0,
            flip_probability: 0.5,
            max_brightness_delta: 0.15,
            max_blur_sigma: 1.2,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), ImagingError> {
        let bad = |field, message: &str| {
            Err(ImagingError::Validation { field, message: message.to_string() })
        };
        if !(0.0..180.0).contains(&self.max_rotation_degrees) {
            return bad("max_rotation_degrees", "must lie in [0, 180)");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability", "must lie in [0, 1]");
        }
        if !(0.0..=0.5).contains(&self.max_brightness_delta) {
            return bad("max_brightness_delta", "must lie in [0, 0.5]");
        }
        if !self.max_blur_sigma.is_finite() || self.max_blur_sigma < 0.0 {
            return bad("max_blur_sigma", "must be finite and non-negative");
        }
        Ok(())
    }

    /// Draws `count` specs; the same `(policy, count, seed)` always yields the
    /// same list.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<AugmentSpec>, ImagingError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |max: f64| if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let rotation = uniform(self.max_rotation_degrees).rem_euclid(360.0);
            let brightness = uniform(self.max_brightness_delta);
            let blur = uniform(self.max_blur_sigma).abs();
            specs.push(AugmentSpec {
                rotation_degrees: if rotation >= 360.0 { 0.0 } else { rotation },
                flip_horizontal: false,
                flip_vertical: false,
                brightness_delta: brightness,
                blur_sigma: blur,
            });
        }
        for spec in &mut specs {
            spec.flip_horizontal = rng.random_bool(self.flip_probability);
            spec.flip_vertical = rng.random_bool(self.flip_probability);
        }
        Ok(specs)
    }
}

/// A sample record together with its decoded pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingImage {
    pub record: ImageSample,
    pub image: ImageTensor,
}

/// Returns the originals followed by one augmented copy per `(sample, spec)`
/// pair. Copies inherit label, split, source and capture metadata, record
/// their source id in `augmentation_of`, and are identified by the content
/// hash of their PNG encoding.
pub fn expand_training_set(
    samples: &[TrainingImage],
    specs: &[AugmentSpec],
) -> Result<Vec<TrainingImage>, ImagingError> {
    for s in samples {
        if s.record.split.is_held_out() {
            return Err(ImagingError::Leakage { id: s.record.id.clone(), split: s.record.split });
        }
    }
    for spec in specs {
        spec.validate()?;
    }
    let mut out = samples.to_vec();
    out.reserve(samples.len() * specs.len());
    for s in samples {
        for spec in specs {
            let image = augment(&s.image, spec)?;
            let png = encode_png(&image)?;
            let id = content_id(&png);
            let record = ImageSample {
                image_ref: blob_name(&id, "png"),
                id,
                augmentation_of: Some(s.record.id.clone()),
                ..s.record.clone()
            };
            out.push(TrainingImage { record, image });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{Label, SampleSource, Split};
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(w: u32, h: u32, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
        ImageTensor::new(w, h, pixels).unwrap()
    }

    fn spec() -> AugmentSpec {
        AugmentSpec::default()
    }

    #[test]
    fn double_horizontal_flip_is_identity() {
        let img = noise(13, 7, 1);
        let once = augment(&img, &AugmentSpec { flip_horizontal: true, ..spec() }).unwrap();
        assert_ne!(once, img);
        let twice = augment(&once, &AugmentSpec { flip_horizontal: true, ..spec() }).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn double_vertical_flip_is_identity() {
        let img = noise(5, 9, 2);
        let s = AugmentSpec { flip_vertical: true, ..spec() };
        assert_eq!(augment(&augment(&img, &s).unwrap(), &s).unwrap(), img);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = noise(11, 11, 3);
        let quarter = AugmentSpec { rotation_degrees: 90.0, ..spec() };
        let mut out = img.clone();
        for _ in 0..4 {
            out = augment(&out, &quarter).unwrap();
        }
        assert_eq!(out, img);
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        // Top-middle pixel moves to the left-middle.
        let img = ImageTensor::from_fn(3, 3, |x, y| if (x, y) == (1, 0) { [255; 3] } else { [0; 3] })
            .unwrap();
        let out = augment(&img, &AugmentSpec { rotation_degrees: 90.0, ..spec() }).unwrap();
        assert_eq!(out.pixel(0, 1), [255; 3]);
        assert_eq!(out.pixel(1, 0), [0; 3]);
    }

    #[test]
    fn identity_spec_is_byte_exact() {
        let img = noise(17, 4, 4);
        assert!(spec().is_identity());
        assert_eq!(augment(&img, &spec()).unwrap(), img);
    }

    #[test]
    fn rotation_keeps_dimensions_and_replicates_edges() {
        let img = ImageTensor::filled(20, 10, [40, 80, 120]).unwrap();
        let out = augment(&img, &AugmentSpec { rotation_degrees: 33.0, ..spec() }).unwrap();
        assert_eq!((out.width(), out.height()), (20, 10));
        // Constant input: edge replication leaves no black corners.
        assert!(out.pixels().chunks(3).all(|p| p == [40, 80, 120]));
    }

    #[test]
    fn brightness_is_additive_and_clamped() {
        let img = ImageTensor::from_fn(2, 1, |x, _| if x == 0 { [10, 100, 250] } else { [0; 3] })
            .unwrap();
        let out = augment(&img, &AugmentSpec { brightness_delta: 0.1, ..spec() }).unwrap();
        // 0.1 * 255 = 25.5
        assert_eq!(out.pixel(0, 0), [36, 126, 255]);
        assert_eq!(out.pixel(1, 0), [26, 26, 26]);
    }

    #[test]
    fn blur_preserves_constant_images_and_smooths_impulses() {
        let flat = ImageTensor::filled(9, 9, [77, 77, 77]).unwrap();
        let s = AugmentSpec { blur_sigma: 1.5, ..spec() };
        assert_eq!(augment(&flat, &s).unwrap(), flat);
        let impulse =
            ImageTensor::from_fn(9, 9, |x, y| if (x, y) == (4, 4) { [255; 3] } else { [0; 3] }).unwrap();
        let out = augment(&impulse, &s).unwrap();
        assert!(out.pixel(4, 4)[0] < 255);
        assert!(out.pixel(5, 4)[0] > 0);
        assert_eq!(out.pixel(5, 4), out.pixel(3, 4));
    }

    #[test]
    fn out_of_range_specs_are_rejected() {
        for bad in [
            AugmentSpec { rotation_degrees: 360.0, ..spec() },
            AugmentSpec { rotation_degrees: -1.0, ..spec() },
            AugmentSpec { brightness_delta: 0.6, ..spec() },
            AugmentSpec { blur_sigma: -0.1, ..spec() },
            AugmentSpec { blur_sigma: f64::NAN, ..spec() },
        ] {
            assert!(matches!(augment(&noise(4, 4, 0), &bad), Err(ImagingError::Validation { .. })));
        }
    }

    #[test]
    fn spec_json_has_exactly_five_fields() {
        let v = serde_json::to_value(spec()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            keys,
            ["blur_sigma", "brightness_delta", "flip_horizontal", "flip_vertical", "rotation_degrees"]
        );
        let extra = r#"{"rotation_degrees":0,"flip_horizontal":false,"flip_vertical":false,
            "brightness_delta":0,"blur_sigma":0,"hue_shift":0.1}"#;
        assert!(serde_json::from_str::<AugmentSpec>(extra).is_err());
    }

    #[test]
    fn policy_sampling_is_seeded() {
        let policy = AugmentPolicy::default();
        let a = policy.sample(16, 9).unwrap();
        assert_eq!(a, policy.sample(16, 9).unwrap());
        assert_ne!(a, policy.sample(16, 10).unwrap());
        for s in &a {
            s.validate().unwrap();
        }
    }

    fn training(id: &str, label: Label, split: Split) -> TrainingImage {
        let image = noise(6, 6, id.len() as u64);
        TrainingImage {
            record: ImageSample {
                id: id.to_string(),
                image_ref: blob_name(id, "png"),
                label,
                split,
                source: SampleSource::Import,
                captured_at: chrono::DateTime::UNIX_EPOCH,
                device_label: None,
                augmentation_of: None,
            },
            image,
        }
    }

    #[test]
    fn expansion_counts_and_inherits_labels() {
        let samples =
            vec![training("a", Label::Wssv, Split::Train), training("bb", Label::Healthy, Split::Train)];
        let specs = vec![
            AugmentSpec { flip_horizontal: true, ..spec() },
            AugmentSpec { rotation_degrees: 90.0, ..spec() },
            AugmentSpec { brightness_delta: 0.2, ..spec() },
        ];
        let out = expand_training_set(&samples, &specs).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(&out[..2], &samples[..]);
        for aug in &out[2..] {
            let src = aug.record.augmentation_of.as_deref().unwrap();
            let source = samples.iter().find(|s| s.record.id == src).unwrap();
            assert_eq!(aug.record.label, source.record.label);
            assert_eq!(aug.record.id, content_id(&encode_png(&aug.image).unwrap()));
        }
    }

    #[test]
    fn empty_spec_list_returns_originals() {
        let samples = vec![training("a", Label::Wssv, Split::Train)];
        assert_eq!(expand_training_set(&samples, &[]).unwrap(), samples);
    }

    #[test]
    fn held_out_samples_cannot_be_augmented() {
        for split in [Split::Test, Split::Validation] {
            let samples = vec![training("t", Label::Wssv, split)];
            assert!(matches!(
                expand_training_set(&samples, &[spec()]),
                Err(ImagingError::Leakage { .. })
            ));
        }
    }

    fn ramp(channel: usize) -> ImageTensor {
        ImageTensor::from_fn(12, 12, |x, y| {
            let mut px = [0u8; 3];
            px[channel] = ((x * 12 + y) * 255 / 143) as u8;
            px
        })
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn channels_are_transformed_identically(
            rotation in 0.0f64..360.0,
            fh in any::<bool>(),
            fv in any::<bool>(),
            brightness in -0.5f64..=0.5,
            blur in 0.0f64..2.0,
        ) {
            let s = AugmentSpec {
                rotation_degrees: rotation,
                flip_horizontal: fh,
                flip_vertical: fv,
                brightness_delta: brightness,
                blur_sigma: blur,
            };
            let outs: Vec<Vec<u8>> = (0..3)
                .map(|c| {
                    let out = augment(&ramp(c), &s).unwrap();
                    out.pixels().chunks(3).map(|p| p[c]).collect()
                })
                .collect();
            prop_assert_eq!(&outs[0], &outs[1]);
            prop_assert_eq!(&outs[1], &outs[2]);
        }

        #[test]
        fn augmentation_is_deterministic(seed in any::<u64>(), rotation in 0.0f64..360.0) {
            let img = noise(8, 5, seed);
            let s = AugmentSpec { rotation_degrees: rotation, blur_sigma: 0.7, ..spec() };
            prop_assert_eq!(augment(&img, &s).unwrap(), augment(&img, &s).unwrap());
        }
    }
}
