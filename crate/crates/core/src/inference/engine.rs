use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use prost::Message;
use serde::{Deserialize, Serialize};
use tract_onnx::pb;
use tract_onnx::prelude::*;

use super::{InferenceError, ModelBundle, ModelMetadata, OutputKind};
use crate::imaging::{ChannelLayout, ModelInput};

/// Binary decision derived from a score and the model's threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Healthy,
    Wssv,
}

impl Decision {
    /// Scores equal to the threshold are classified as `Wssv`.
    pub fn from_score(score: f64, threshold: f64) -> Self {
        if score >= threshold {
            Decision::Wssv
        } else {
            Decision::Healthy
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Healthy => "healthy",
            Decision::Wssv => "wssv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub decision: Decision,
    pub model_id: String,
    pub latency_ms: f64,
    pub input_provenance: String,
}

/// `1 / (1 + e^-x)`, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> Result<f64, InferenceError> {
    if !x.is_finite() {
        return Err(InferenceError::Numeric(format!("sigmoid of non-finite value {x}")));
    }
    Ok(if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    })
}

/// Anything that maps a model input to a WSSV probability.
///
/// Implemented by [`ModelHandle`]; saliency and benchmarking are written
/// against this trait so they can be observed through wrappers.
pub trait Scorer: Sync {
    fn input_side(&self) -> u32;
    fn score(&self, input: &ModelInput) -> Result<f64, InferenceError>;
}

type Plan = Arc<TypedSimplePlan>;

/// A loaded, CPU-compiled model. Shareable across threads.
pub struct ModelHandle {
    metadata: ModelMetadata,
    checksum: String,
    plan: Plan,
    busy: AtomicBool,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("model_id", &self.metadata.model_id())
            .field("checksum", &self.checksum)
            .finish_non_exhaustive()
    }
}

/// Validates a bundle and compiles it for CPU inference.
pub fn load_model(bundle: &ModelBundle) -> Result<ModelHandle, InferenceError> {
    let meta = &bundle.metadata;
    meta.validate()?;
    if !bundle.checksum_matches() {
        return Err(InferenceError::Integrity {
            expected: bundle.checksum.clone(),
            actual: ModelBundle::checksum_of(&bundle.model_blob),
        });
    }
    let proto = pb::ModelProto::decode(bundle.model_blob.as_slice())
        .map_err(|e| InferenceError::Format(format!("not an ONNX protobuf: {e}")))?;
    let graph = proto
        .graph
        .as_ref()
        .ok_or_else(|| InferenceError::Format("model has no graph".into()))?;

    let onnx = tract_onnx::onnx();
    if let Some(node) = graph.node.iter().find(|n| !onnx.op_register.0.contains_key(&n.op_type)) {
        return Err(InferenceError::Capability { op: node.op_type.clone() });
    }
    check_declared_shapes(graph, meta)?;

    let expected = meta.channel_layout.shape(meta.input_side as usize);
    let config_err = |stage: &str| {
        let stage = stage.to_string();
        move |e: TractError| InferenceError::Configuration(format!("{stage}: {e:#}"))
    };
    let model = onnx
        .model_for_proto_model(&proto)
        .map_err(config_err("graph import"))?
        .with_input_fact(0, f32::fact(expected).into())
        .map_err(config_err("input fact"))?
        .into_optimized()
        .map_err(config_err("shape analysis"))?;
    let out_fact = model.output_fact(0).map_err(config_err("output fact"))?;
    let out_volume = out_fact
        .shape
        .as_concrete()
        .map(|dims| dims.iter().product::<usize>())
        .ok_or_else(|| InferenceError::Configuration("output shape is not concrete".into()))?;
    if out_volume != 1 {
        return Err(InferenceError::Configuration(format!(
            "model must emit a single score per image, output shape is {:?}",
            out_fact.shape
        )));
    }
    let plan = model.into_runnable().map_err(config_err("plan"))?;
    Ok(ModelHandle {
        metadata: meta.clone(),
        checksum: bundle.checksum.clone(),
        plan,
        busy: AtomicBool::new(false),
    })
}

fn check_declared_shapes(graph: &pb::GraphProto, meta: &ModelMetadata) -> Result<(), InferenceError> {
    let initialized: std::collections::HashSet<&str> =
        graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let inputs: Vec<&pb::ValueInfoProto> =
        graph.input.iter().filter(|i| !initialized.contains(i.name.as_str())).collect();
    let [input] = inputs.as_slice() else {
        return Err(InferenceError::Configuration(format!(
            "model declares {} inputs, expected exactly one",
            inputs.len()
        )));
    };
    if input.name != meta.input_name {
        return Err(InferenceError::Configuration(format!(
            "metadata input_name `{}` but model input is `{}`",
            meta.input_name, input.name
        )));
    }
    if graph.output.len() != 1 {
        return Err(InferenceError::Configuration(format!(
            "model declares {} outputs, expected exactly one",
            graph.output.len()
        )));
    }
    let Some(dims) = declared_dims(input) else {
        return Ok(());
    };
    let expected = meta.channel_layout.shape(meta.input_side as usize);
    let describe = |d: &[Option<i64>]| {
        d.iter()
            .map(|v| v.map_or_else(|| "?".to_string(), |v| v.to_string()))
            .collect::<Vec<_>>()
            .join("x")
    };
    let consistent = dims.len() == 4
        && dims.iter().zip(expected).enumerate().all(|(axis, (declared, want))| match declared {
            None => true,
            Some(v) if axis == 0 => *v == 1 || *v <= 0,
            Some(v) => *v == want as i64,
        });
    if !consistent {
        let layout = match meta.channel_layout {
            ChannelLayout::Planar => "planar",
            ChannelLayout::Interleaved => "interleaved",
        };
        return Err(InferenceError::Configuration(format!(
            "metadata declares {layout} input side {} but the model input is {}",
            meta.input_side,
            describe(&dims)
        )));
    }
    Ok(())
}

fn declared_dims(info: &pb::ValueInfoProto) -> Option<Vec<Option<i64>>> {
    let pb::type_proto::Value::TensorType(t) = info.r#type.as_ref()?.value.as_ref()?;
    let shape = t.shape.as_ref()?;
    Some(
        shape
            .dim
            .iter()
            .map(|d| match d.value {
                Some(pb::tensor_shape_proto::dimension::Value::DimValue(v)) => Some(v),
                _ => None,
            })
            .collect(),
    )
}

impl ModelHandle {
    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn model_id(&self) -> String {
        self.metadata.model_id()
    }

    pub fn input_side(&self) -> u32 {
        self.metadata.input_side
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), InferenceError> {
        let side = self.metadata.input_side;
        if input.side != side {
            return Err(InferenceError::Input(format!(
                "input side {} does not match model input side {side}",
                input.side
            )));
        }
        if input.layout != self.metadata.channel_layout {
            return Err(InferenceError::Input(format!(
                "input layout {:?} does not match model layout {:?}",
                input.layout, self.metadata.channel_layout
            )));
        }
        let want = side as usize * side as usize * 3;
        if input.values.len() != want {
            return Err(InferenceError::Input(format!(
                "input holds {} values, expected {want}",
                input.values.len()
            )));
        }
        Ok(())
    }

    /// Runs the graph and returns the raw output plus the forward-pass time.
    fn forward(&self, input: &ModelInput) -> Result<(f64, f64), InferenceError> {
        self.check_input(input)?;
        let tensor = Tensor::from_shape(&input.shape(), &input.values)
            .map_err(|e| InferenceError::Input(format!("{e:#}")))?;
        let start = Instant::now();
        let outputs = self
            .plan
            .run(tvec!(tensor.into()))
            .map_err(|e| InferenceError::Runtime(format!("{e:#}")))?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let out = outputs[0]
            .cast_to::<f32>()
            .map_err(|e| InferenceError::Runtime(format!("{e:#}")))?;
        let raw = *out
            .to_plain_array_view::<f32>()
            .map_err(|e| InferenceError::Runtime(format!("{e:#}")))?
            .iter()
            .next()
            .ok_or_else(|| InferenceError::ModelContract("model produced an empty output".into()))?;
        Ok((f64::from(raw), elapsed))
    }

    fn score_raw(&self, raw: f64) -> Result<f64, InferenceError> {
        match self.metadata.output_kind {
            OutputKind::Logit => sigmoid(raw),
            OutputKind::Probability if (0.0..=1.0).contains(&raw) => Ok(raw),
            OutputKind::Probability => Err(InferenceError::ModelContract(format!(
                "probability output {raw} lies outside [0, 1]"
            ))),
        }
    }

    fn predict_unguarded(&self, input: &ModelInput) -> Result<Prediction, InferenceError> {
        let (raw, latency_ms) = self.forward(input)?;
        let score = self.score_raw(raw)?;
        Ok(Prediction {
            score,
            decision: Decision::from_score(score, self.metadata.decision_threshold),
            model_id: self.model_id(),
            latency_ms,
            input_provenance: input.provenance.clone(),
        })
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Prediction, InferenceError> {
        if self.busy.load(Ordering::Acquire) {
            return Err(InferenceError::Busy);
        }
        self.predict_unguarded(input)
    }

    /// Predicts each input in order. The first invalid input aborts the batch
    /// and is reported by index.
    pub fn predict_batch(&self, inputs: &[ModelInput]) -> Result<Vec<Prediction>, InferenceError> {
        for (index, input) in inputs.iter().enumerate() {
            self.check_input(input)
                .map_err(|e| InferenceError::BatchItem { index, source: Box::new(e) })?;
        }
        inputs
            .iter()
            .enumerate()
            .map(|(index, input)| {
                self.predict(input)
                    .map_err(|e| InferenceError::BatchItem { index, source: Box::new(e) })
            })
            .collect()
    }

    /// Reserves the handle for exclusive use (latency benchmarking). While the
    /// returned guard lives, [`ModelHandle::predict`] fails with
    /// [`InferenceError::Busy`]; a second reservation fails likewise.
    pub fn reserve(&self) -> Result<ReservedHandle<'_>, InferenceError> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| InferenceError::Busy)?;
        Ok(ReservedHandle { handle: self })
    }
}

impl Scorer for ModelHandle {
    fn input_side(&self) -> u32 {
        self.metadata.input_side
    }

    fn score(&self, input: &ModelInput) -> Result<f64, InferenceError> {
        self.predict(input).map(|p| p.score)
    }
}

/// Exclusive access to a [`ModelHandle`]; releases the busy flag on drop.
pub struct ReservedHandle<'a> {
    handle: &'a ModelHandle,
}

impl ReservedHandle<'_> {
    pub fn predict(&self, input: &ModelInput) -> Result<Prediction, InferenceError> {
        self.handle.predict_unguarded(input)
    }
}

impl Scorer for ReservedHandle<'_> {
    fn input_side(&self) -> u32 {
        self.handle.metadata.input_side
    }

    fn score(&self, input: &ModelInput) -> Result<f64, InferenceError> {
        self.predict(input).map(|p| p.score)
    }
}

impl Drop for ReservedHandle<'_> {
    fn drop(&mut self) {
        self.handle.busy.store(false, Ordering::Release);
    }
}

pub fn predict(handle: &ModelHandle, input: &ModelInput) -> Result<Prediction, InferenceError> {
    handle.predict(input)
}

pub fn predict_batch(
    handle: &ModelHandle,
    inputs: &[ModelInput],
) -> Result<Vec<Prediction>, InferenceError> {
    handle.predict_batch(inputs)
}
