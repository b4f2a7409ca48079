use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape3;

fn one() -> usize {
    1
}

fn lrn_size() -> usize {
    5
}
fn lrn_alpha() -> f64 {
    1e-4
}
fn lrn_beta() -> f64 {
    0.75
}
fn lrn_k() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    Relu,
    Maxpool {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    /// Across-channel local response normalization.
    Lrn {
        #[serde(default = "lrn_size")]
        size: usize,
        #[serde(default = "lrn_alpha")]
        alpha: f64,
        #[serde(default = "lrn_beta")]
        beta: f64,
        #[serde(default = "lrn_k")]
        k: f64,
    },
    Fc {
        out_units: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn is_elementwise(&self) -> bool {
        matches!(self, LayerKind::Relu | LayerKind::Lrn { .. } | LayerKind::Softmax)
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Fc { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }
}

/// Architecture of a linear-chain network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Shape3,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub class_names: Vec<String>,
}

/// Weight and bias counts a parameterized layer needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub weights: usize,
    pub bias: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.weights + self.bias
    }
}

fn window_out(layer: &str, axis: &str, input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(
            layer,
            format!("kernel {kernel} larger than padded {axis} {padded}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("unknown layer `{name}`")))
    }

    /// Checks every structural invariant and returns the output shape of
    /// each layer.
    pub fn validate(&self) -> Result<Vec<Shape3>> {
        if self.input_shape.is_empty() {
            return Err(Error::Config(format!(
                "input shape {} is empty",
                self.input_shape
            )));
        }
        let mut seen = HashSet::new();
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape;
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::Config(format!("duplicate layer name `{}`", layer.name)));
            }
            cur = self.layer_output(layer, cur)?;
            shapes.push(cur);
        }
        if let Some(last) = self.layers.last() {
            if matches!(last.kind, LayerKind::Softmax)
                && !self.class_names.is_empty()
                && cur.len() != self.class_names.len()
            {
                return Err(Error::shape(
                    &last.name,
                    format!(
                        "softmax has {} outputs but {} class names are given",
                        cur.len(),
                        self.class_names.len()
                    ),
                ));
            }
        }
        Ok(shapes)
    }

    fn layer_output(&self, layer: &LayerSpec, input: Shape3) -> Result<Shape3> {
        let name = layer.name.as_str();
        match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::shape(name, "out_channels, kernel and stride must be >= 1"));
                }
                Ok(Shape3::new(
                    out_channels,
                    window_out(name, "height", input.height, kernel, stride, pad)?,
                    window_out(name, "width", input.width, kernel, stride, pad)?,
                ))
            }
            LayerKind::Maxpool { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return Err(Error::shape(name, "kernel and stride must be >= 1"));
                }
                Ok(Shape3::new(
                    input.channels,
                    window_out(name, "height", input.height, kernel, stride, 0)?,
                    window_out(name, "width", input.width, kernel, stride, 0)?,
                ))
            }
            LayerKind::Lrn { size, alpha, beta, k } => {
                if size == 0 || !(alpha.is_finite() && beta.is_finite() && k.is_finite()) {
                    return Err(Error::shape(name, "invalid normalization parameters"));
                }
                Ok(input)
            }
            LayerKind::Fc { out_units } => {
                if out_units == 0 {
                    return Err(Error::shape(name, "out_units must be >= 1"));
                }
                Ok(Shape3::new(out_units, 1, 1))
            }
            LayerKind::Relu | LayerKind::Softmax => Ok(input),
        }
    }

    /// Expected parameter counts per layer, `None` for parameter-free layers.
    pub fn param_counts(&self) -> Result<Vec<Option<ParamCount>>> {
        let shapes = self.validate()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let input = if i == 0 { self.input_shape } else { shapes[i - 1] };
                match layer.kind {
                    LayerKind::Conv {
                        out_channels,
                        kernel,
                        ..
                    } => Some(ParamCount {
                        weights: out_channels * input.channels * kernel * kernel,
                        bias: out_channels,
                    }),
                    LayerKind::Fc { out_units } => Some(ParamCount {
                        weights: out_units * input.len(),
                        bias: out_units,
                    }),
                    _ => None,
                }
            })
            .collect())
    }
}
