//! Deterministic feed-forward inference for linear-chain CNNs.

mod forward;
mod init;
mod spec;
mod weights;

pub use forward::{Ablation, ForwardOutput};
pub use init::random_init;
pub use spec::{LayerKind, LayerSpec, NetworkSpec, ParamCount};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, WEIGHT_MAGIC};

use crate::error::{Error, Result};
use crate::tensor::Shape3;

/// Weights and biases of a conv or fc layer.
///
/// Conv weights are laid out `[out][in][ky][kx]`, fc weights `[out][in]`
/// with the input flattened channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// A fully parameterized network. Immutable once built; `forward` is a pure
/// function of the network, the input and the ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape3>,
    params: Vec<Option<LayerParams>>,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: Vec<Option<LayerParams>>) -> Result<Self> {
        let shapes = spec.validate()?;
        let counts = spec.param_counts()?;
        if params.len() != spec.layers.len() {
            return Err(Error::Config(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        for ((layer, count), p) in spec.layers.iter().zip(&counts).zip(&params) {
            match (count, p) {
                (None, None) => {}
                (Some(c), Some(p)) => {
                    let actual = p.weights.len() + p.bias.len();
                    if p.weights.len() != c.weights || p.bias.len() != c.bias {
                        return Err(Error::SizeMismatch {
                            layer: layer.name.clone(),
                            expected: c.total(),
                            actual,
                        });
                    }
                }
                (Some(c), None) => {
                    return Err(Error::SizeMismatch {
                        layer: layer.name.clone(),
                        expected: c.total(),
                        actual: 0,
                    })
                }
                (None, Some(p)) => {
                    return Err(Error::SizeMismatch {
                        layer: layer.name.clone(),
                        expected: 0,
                        actual: p.weights.len() + p.bias.len(),
                    })
                }
            }
        }
        Ok(Network {
            spec,
            shapes,
            params,
        })
    }

    /// All parameters zero.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        let params = spec
            .param_counts()?
            .into_iter()
            .map(|c| {
                c.map(|c| LayerParams {
                    weights: vec![0.0; c.weights],
                    bias: vec![0.0; c.bias],
                })
            })
            .collect();
        Network::new(spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape3 {
        self.spec.input_shape
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> &[Shape3] {
        &self.shapes
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.spec.layer_index(name)
    }

    pub fn output_shape(&self, layer: &str) -> Result<Shape3> {
        Ok(self.shapes[self.layer_index(layer)?])
    }


    pub fn params(&self, layer: &str) -> Result<Option<&LayerParams>> {
        Ok(self.params[self.layer_index(layer)?].as_ref())
    }

    pub fn params_mut(&mut self, layer: &str) -> Result<&mut LayerParams> {
        let idx = self.layer_index(layer)?;
        self.params[idx]
            .as_mut()
            .ok_or_else(|| Error::Config(format!("layer `{layer}` has no parameters")))
    }

    pub(crate) fn params_at(&self, index: usize) -> Option<&LayerParams> {
        self.params[index].as_ref()
    }

    pub(crate) fn all_params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    /// Number of filters of a conv layer.
    pub fn filter_count(&self, layer: &str) -> Result<usize> {
        let idx = self.layer_index(layer)?;
        match self.spec.layers[idx].kind {
            LayerKind::Conv { out_channels, .. } => Ok(out_channels),
            _ => Err(Error::Config(format!("layer `{layer}` is not a convolution"))),
        }
    }

    /// Mutable weights (`[in][ky][kx]`) and bias of one conv filter.
    pub fn filter_mut(&mut self, layer: &str, filter: usize) -> Result<(&mut [f32], &mut f32)> {
        let count = self.filter_count(layer)?;
        if filter >= count {
            return Err(Error::Config(format!(
                "filter {filter} out of range for `{layer}` ({count} filters)"
            )));
        }
        let params = self.params_mut(layer)?;
        let per = params.weights.len() / count;
        Ok((
            &mut params.weights[filter * per..(filter + 1) * per],
            &mut params.bias[filter],
        ))
    }

    /// Copy of the network with one conv filter's weights and bias zeroed.
    pub fn with_filter_zeroed(&self, layer: &str, filter: usize) -> Result<Network> {
        let mut net = self.clone();
        let (w, b) = net.filter_mut(layer, filter)?;
        w.fill(0.0);
        *b = 0.0;
        Ok(net)
    }
}
