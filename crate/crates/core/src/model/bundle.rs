//! Model bundle JSON, version `c2m3-mlp/v1`.
//!
//! Numbers are written with serde_json's shortest round-trip representation,
//! so a serialize/deserialize round trip is bit-exact for 64-bit values.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Layer, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: &str = "c2m3-mlp/v1";

#[derive(Serialize, Deserialize)]
struct BundleLayer {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    format: String,
    dims: Vec<usize>,
    activation: String,
    layers: Vec<BundleLayer>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    provenance: Option<serde_json::Value>,
}

fn to_bundle<S: Scalar>(params: &MlpParams<S>) -> Bundle {
    Bundle {
        format: FORMAT_VERSION.to_string(),
        dims: params.dims(),
        activation: "relu".to_string(),
        layers: params
            .layers()
            .iter()
            .map(|l| BundleLayer {
                w: l.weight.rows().into_iter().map(|r| r.iter().map(|x| x.as_f64()).collect()).collect(),
                b: l.bias.iter().map(|x| x.as_f64()).collect(),
            })
            .collect(),
        provenance: None,
    }
}

pub fn serialize<S: Scalar>(params: &MlpParams<S>) -> Vec<u8> {
    serde_json::to_vec_pretty(&to_bundle(params)).expect("bundle serializes")
}

/// Same bundle with an attached provenance block (ignored on read).
pub fn serialize_with_provenance<S: Scalar>(
    params: &MlpParams<S>,
    provenance: serde_json::Value,
) -> Vec<u8> {
    let mut bundle = to_bundle(params);
    bundle.provenance = Some(provenance);
    serde_json::to_vec_pretty(&bundle).expect("bundle serializes")
}

pub fn deserialize<S: Scalar>(bytes: &[u8]) -> Result<MlpParams<S>> {
    let bundle: Bundle =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
    if bundle.format != FORMAT_VERSION {
        return Err(Error::Format(format!("unknown format version {:?}", bundle.format)));
    }
    if bundle.activation != "relu" {
        return Err(Error::Format(format!("unsupported activation {:?}", bundle.activation)));
    }
    if bundle.dims.len() != bundle.layers.len() + 1 {
        return Err(Error::Format(format!(
            "dims length {} inconsistent with {} layers",
            bundle.dims.len(),
            bundle.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(bundle.layers.len());
    for (i, layer) in bundle.layers.iter().enumerate() {
        let (rows, cols) = (bundle.dims[i + 1], bundle.dims[i]);
        if layer.w.len() != rows || layer.w.iter().any(|r| r.len() != cols) {
            return Err(Error::Format(format!(
                "layer {i}: weight shape does not match dims {rows}x{cols}"
            )));
        }
        if layer.b.len() != rows {
            return Err(Error::Format(format!("layer {i}: bias length vs dims {rows}")));
        }
        let flat: Vec<S> =
            layer.w.iter().flatten().map(|&x| S::of_f64(x)).collect();
        let weight = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::Format(e.to_string()))?;
        let bias = Array1::from_vec(layer.b.iter().map(|&x| S::of_f64(x)).collect());
        layers.push(Layer { weight, bias });
    }
    MlpParams::new(layers).map_err(|e| Error::Format(e.to_string()))
}
