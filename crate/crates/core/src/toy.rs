//! Small fixed-weight ONNX models for demos, tests and smoke checks.
//!
//! The graphs are emitted directly as ONNX protobufs so their forward pass
//! can be computed by hand:
//!
//! * [`constant_logit_model`]: `GlobalAveragePool -> Flatten -> Gemm` with an
//!   all-zero weight, so the logit is the Gemm bias for every input.
//! * [`patch_model`]: a `patch x patch` stride-`patch` convolution whose
//!   kernel averages all three channels, followed by `Flatten -> Gemm` reading
//!   only the top-left cell. The logit is
//!   `weight * mean(top-left patch) + bias`.

use prost::Message;
use tract_onnx::pb;

use crate::imaging::{ChannelLayout, Normalization};
use crate::inference::{ModelBundle, ModelMetadata, OutputKind};

pub const INPUT_NAME: &str = "input";
const OUTPUT_NAME: &str = "score";
const FLOAT: i32 = 1;

fn tensor(name: &str, dims: &[i64], data: Vec<f32>) -> pb::TensorProto {
    pb::TensorProto {
        name: name.to_string(),
        dims: dims.to_vec(),
        data_type: FLOAT,
        float_data: data,
        ..Default::default()
    }
}

fn value_info(name: &str, dims: &[i64]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension, Dimension};
    let shape = pb::TensorShapeProto {
        dim: dims
            .iter()
            .map(|&d| Dimension { value: Some(dimension::Value::DimValue(d)), ..Default::default() })
            .collect(),
    };
    pb::ValueInfoProto {
        name: name.to_string(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: FLOAT,
                shape: Some(shape),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn int_attr(name: &str, value: i64) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.to_string(),
        r#type: pb::attribute_proto::AttributeType::Int as i32,
        i: value,
        ..Default::default()
    }
}

fn ints_attr(name: &str, values: &[i64]) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.to_string(),
        r#type: pb::attribute_proto::AttributeType::Ints as i32,
        ints: values.to_vec(),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attrs: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.to_string(),
        name: output.to_string(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.to_string()],
        attribute: attrs,
        ..Default::default()
    }
}

fn input_dims(side: u32, layout: ChannelLayout) -> [i64; 4] {
    let s = i64::from(side);
    match layout {
        ChannelLayout::Planar => [1, 3, s, s],
        ChannelLayout::Interleaved => [1, s, s, 3],
    }
}

/// Builds a planar-input graph. `body` receives the name of the NCHW tensor
/// and returns nodes, initializers and the name of the `[1, 1]` logit.
struct GraphSpec {
    side: u32,
    layout: ChannelLayout,
    output: OutputKind,
    extra_op: Option<String>,
}

fn assemble(
    spec: &GraphSpec,
    mut nodes: Vec<pb::NodeProto>,
    initializers: Vec<pb::TensorProto>,
    logit: &str,
) -> Vec<u8> {
    let mut head = Vec::new();
    let mut last = logit.to_string();
    if spec.layout == ChannelLayout::Interleaved {
        // NHWC input is transposed to NCHW before the body.
        head.push(node("Transpose", &[INPUT_NAME], "nchw", vec![ints_attr("perm", &[0, 3, 1, 2])]));
    }
    if let Some(op) = &spec.extra_op {
        nodes.push(node(op, &[&last], "extra", vec![]));
        last = "extra".into();
    }
    if spec.output == OutputKind::Probability {
        nodes.push(node("Sigmoid", &[&last], "probability", vec![]));
        last = "probability".into();
    }
    nodes.push(node("Identity", &[&last], OUTPUT_NAME, vec![]));
    head.extend(nodes);
    let graph = pb::GraphProto {
        name: "toy".into(),
        node: head,
        initializer: initializers,
        input: vec![value_info(INPUT_NAME, &input_dims(spec.side, spec.layout))],
        output: vec![value_info(OUTPUT_NAME, &[1, 1])],
        ..Default::default()
    };
    let model = pb::ModelProto {
        ir_version: 7,
        producer_name: "wssv-core-toy".into(),
        opset_import: vec![pb::OperatorSetIdProto { domain: String::new(), version: 13 }],
        graph: Some(graph),
        ..Default::default()
    };
    model.encode_to_vec()
}

fn body_input(layout: ChannelLayout) -> &'static str {
    match layout {
        ChannelLayout::Planar => INPUT_NAME,
        ChannelLayout::Interleaved => "nchw",
    }
}

fn constant_graph(spec: &GraphSpec, logit: f32) -> Vec<u8> {
    let x = body_input(spec.layout);
    let nodes = vec![
        node("GlobalAveragePool", &[x], "pooled", vec![]),
        node("Flatten", &["pooled"], "flat", vec![int_attr("axis", 1)]),
        node("Gemm", &["flat", "w", "b"], "logit", vec![int_attr("transB", 1)]),
    ];
    let inits = vec![tensor("w", &[1, 3], vec![0.0; 3]), tensor("b", &[1], vec![logit])];
    assemble(spec, nodes, inits, "logit")
}

fn patch_graph(spec: &GraphSpec, patch: u32, weight: f32, bias: f32) -> Vec<u8> {
    assert!(patch >= 1 && spec.side % patch == 0, "patch must divide the input side");
    let x = body_input(spec.layout);
    let p = i64::from(patch);
    let cells = (spec.side / patch).pow(2) as usize;
    let kernel = vec![1.0 / (3.0 * (patch * patch) as f32); 3 * (patch * patch) as usize];
    let mut readout = vec![0.0; cells];
    readout[0] = weight;
    let nodes = vec![
        node(
            "Conv",
            &[x, "kernel"],
            "means",
            vec![ints_attr("kernel_shape", &[p, p]), ints_attr("strides", &[p, p])],
        ),
        node("Relu", &["means"], "activated", vec![]),
        node("Flatten", &["activated"], "flat", vec![int_attr("axis", 1)]),
        node("Gemm", &["flat", "readout", "bias"], "logit", vec![int_attr("transB", 1)]),
    ];
    let inits = vec![
        tensor("kernel", &[1, 3, p, p], kernel),
        tensor("readout", &[1, cells as i64], readout),
        tensor("bias", &[1], vec![bias]),
    ];
    assemble(spec, nodes, inits, "logit")
}

/// A graph whose logit is `logit` for every input.
pub fn constant_logit_model(side: u32, logit: f32, output: OutputKind) -> Vec<u8> {
    let spec = GraphSpec { side, layout: ChannelLayout::Planar, output, extra_op: None };
    constant_graph(&spec, logit)
}

/// A conv net whose logit is `weight * mean(top-left patch) + bias`, where the
/// mean runs over the normalized values of all three channels.
pub fn patch_model(side: u32, patch: u32, weight: f32, bias: f32, layout: ChannelLayout) -> Vec<u8> {
    let spec = GraphSpec { side, layout, output: OutputKind::Logit, extra_op: None };
    patch_graph(&spec, patch, weight, bias)
}

/// The constant model with an extra node of type `op` appended.
pub fn model_with_extra_op(side: u32, op: &str) -> Vec<u8> {
    let spec =
        GraphSpec { side, layout: ChannelLayout::Planar, output: OutputKind::Logit, extra_op: Some(op.into()) };
    constant_graph(&spec, 0.0)
}

pub fn toy_metadata(name: &str, side: u32, output_kind: OutputKind) -> ModelMetadata {
    ModelMetadata {
        name: name.to_string(),
        version: "1".into(),
        input_name: INPUT_NAME.into(),
        input_side: side,
        channel_layout: ChannelLayout::Planar,
        normalization: Normalization::default(),
        output_kind,
        decision_threshold: 0.5,
        class_map: crate::inference::metadata_default_class_map(),
        provenance: None,
    }
}

/// Bundle around [`constant_logit_model`].
pub fn constant_bundle(side: u32, logit: f32) -> ModelBundle {
    ModelBundle::new(
        toy_metadata("toy-constant", side, OutputKind::Logit),
        constant_logit_model(side, logit, OutputKind::Logit),
    )
}

/// Default top-left patch side used by [`patch_bundle`].
pub const PATCH_SIDE: u32 = 32;
pub const PATCH_WEIGHT: f32 = 10.0;
pub const PATCH_BIAS: f32 = -5.0;

/// Bundle around [`patch_model`] with a 32-pixel patch, weight 10 and bias
/// -5: a white top-left patch gives logit 5, a black one logit -5.
pub fn patch_bundle(side: u32) -> ModelBundle {
    ModelBundle::new(
        toy_metadata("toy-patch", side, OutputKind::Logit),
        patch_model(side, PATCH_SIDE, PATCH_WEIGHT, PATCH_BIAS, ChannelLayout::Planar),
    )
}

/// Hand evaluation of [`patch_bundle`]'s logit for a planar model input.
pub fn patch_logit_reference(input: &crate::imaging::ModelInput, patch: u32, weight: f64, bias: f64) -> f64 {
    let mut sum = 0.0f64;
    for c in 0..3 {
        for y in 0..patch as usize {
            for x in 0..patch as usize {
                sum += f64::from(input.value(c, x, y));
            }
        }
    }
    let mean = sum / f64::from(3 * patch * patch);
    weight * mean.max(0.0) + bias
}
