use std::path::Path;

use tract_onnx::pb;
use tract_onnx::prelude::*;

use crate::dsp::CLIP_SAMPLES;
use crate::error::{Error, Result};

fn tract_err(context: &str, e: impl std::fmt::Display) -> Error {
    Error::Embed(format!("{context}: {e}"))
}

/// Frozen encoder graph. The optimized plan is immutable and each `run`
/// builds its own execution state, so one instance serves parallel callers.
pub(crate) struct OnnxEncoder {
    plan: Arc<TypedRunnableModel>,
    dim: usize,
}

impl OnnxEncoder {
    pub fn load(path: &Path, input_name: &str, output_name: &str) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Embed(format!(
                "model file {} not found",
                path.display()
            )));
        }
        let mut model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| tract_err(&format!("reading {}", path.display()), e))?;
        model
            .set_input_names([input_name])
            .map_err(|e| tract_err(&format!("input tensor `{input_name}`"), e))?;
        model
            .select_outputs_by_name([output_name])
            .map_err(|e| tract_err(&format!("output tensor `{output_name}`"), e))?;
        let model = model
            .with_input_fact(0, f32::fact([1, CLIP_SAMPLES]).into())
            .and_then(|m| m.into_optimized())
            .map_err(|e| tract_err("preparing encoder graph", e))?;

        let out_fact = model
            .output_fact(0)
            .map_err(|e| tract_err("output fact", e))?
            .clone();
        let dims: Vec<usize> = out_fact
            .shape
            .as_concrete()
            .map(|s| s.to_vec())
            .ok_or_else(|| Error::Embed("encoder output shape is not concrete".into()))?;
        let dim = match dims.as_slice() {
            [1, _, h] | [1, h] => *h,
            other => {
                return Err(Error::Embed(format!(
                    "encoder output must be [1, T, H], got {other:?}"
                )))
            }
        };
        let plan = model
            .into_runnable()
            .map_err(|e| tract_err("building plan", e))?;
        Ok(OnnxEncoder { plan, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Runs the encoder and mean-pools the time axis.
    pub fn run(&self, samples: &[f64]) -> Result<Vec<f64>> {
        let input: Vec<f32> = samples.iter().map(|&x| x as f32).collect();
        let tensor = tract_ndarray::Array2::from_shape_vec((1, samples.len()), input)
            .map_err(|e| tract_err("input shape", e))?;
        let outputs = self
            .plan
            .run(tvec!(Tensor::from(tensor).into()))
            .map_err(|e| tract_err("running encoder", e))?;
        let out = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| tract_err("encoder output", e))?;
        let shape = out.shape().to_vec();
        let (frames, h) = match shape.as_slice() {
            [1, t, h] => (*t, *h),
            [1, h] => (1, *h),
            other => return Err(Error::Embed(format!("unexpected output shape {other:?}"))),
        };
        if frames == 0 {
            return Err(Error::Embed("encoder produced zero frames".into()));
        }
        let flat: Vec<f32> = out.iter().copied().collect();
        let mut pooled = vec![0.0f64; h];
        for row in flat.chunks(h) {
            for (p, &v) in pooled.iter_mut().zip(row) {
                *p += v as f64;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= frames as f64);
        Ok(pooled)
    }
}

fn value_info(name: &str, dims: &[i64]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension, Dimension};
    pb::ValueInfoProto {
        name: name.to_owned(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: pb::tensor_proto::DataType::Float as i32,
                shape: Some(pb::TensorShapeProto {
                    dim: dims
                        .iter()
                        .map(|&d| Dimension {
                            value: Some(dimension::Value::DimValue(d)),
                            ..Default::default()
                        })
                        .collect(),
                }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.to_owned(),
        name: output.to_owned(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.to_owned()],
        ..Default::default()
    }
}

/// Writes a toy frozen encoder: input `audio` `[1, 128000]` is scaled by
/// `gain` and reshaped to `frames` `[1, 128000 / hidden, hidden]`. Its
/// mean-pooled embedding is `gain` times the per-column sample mean. Useful
/// for exercising the encoder backend without a real model.
pub fn write_reshape_encoder(path: &Path, hidden: usize, gain: f32) -> Result<()> {
    use prost::Message;
    if hidden == 0 || CLIP_SAMPLES % hidden != 0 {
        return Err(Error::InvalidInput(format!("hidden size {hidden} must divide {CLIP_SAMPLES}")));
    }
    let frames = (CLIP_SAMPLES / hidden) as i64;
    let graph = pb::GraphProto {
        name: "reshape-encoder".into(),
        node: vec![
            node("Mul", &["audio", "gain"], "scaled"),
            node("Reshape", &["scaled", "shape"], "frames"),
        ],
        initializer: vec![
            pb::TensorProto {
                name: "gain".into(),
                dims: vec![],
                data_type: pb::tensor_proto::DataType::Float as i32,
                float_data: vec![gain],
                ..Default::default()
            },
            pb::TensorProto {
                name: "shape".into(),
                dims: vec![3],
                data_type: pb::tensor_proto::DataType::Int64 as i32,
                int64_data: vec![1, frames, hidden as i64],
                ..Default::default()
            },
        ],
        input: vec![value_info("audio", &[1, CLIP_SAMPLES as i64])],
        output: vec![value_info("frames", &[1, frames, hidden as i64])],
        ..Default::default()
    };
    let model = pb::ModelProto {
        ir_version: 8,
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "ser-core".into(),
        graph: Some(graph),
        ..Default::default()
    };
    std::fs::write(path, model.encode_to_vec()).map_err(|e| Error::io(path, e))
}
