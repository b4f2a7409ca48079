//! Binary weight files.
//!
//! Layout: the four bytes `FSW1`, then one block per layer in network order.
//! A block is a little-endian `u32` count followed by that many little-endian
//! `f32` values: the layer's weights, then its biases. Parameter-free layers
//! carry a block with count zero.

use std::path::Path;

use super::{LayerParams, Network, NetworkSpec};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"FSW1";

pub fn encode_weights(net: &Network) -> Vec<u8> {
    let mut out = WEIGHT_MAGIC.to_vec();
    for p in net.all_params() {
        match p {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(p) => {
                let n = (p.weights.len() + p.bias.len()) as u32;
                out.extend_from_slice(&n.to_le_bytes());
                for v in p.weights.iter().chain(&p.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

/// Parses a weight file against `spec`. Never returns a partial network.
pub fn decode_weights(spec: &NetworkSpec, bytes: &[u8]) -> Result<Network> {
    let counts = spec.param_counts()?;
    let rest = bytes
        .strip_prefix(WEIGHT_MAGIC.as_slice())
        .ok_or_else(|| Error::Format("missing FSW1 magic".into()))?;
    let mut cursor = Cursor { buf: rest };
    let mut params = Vec::with_capacity(counts.len());
    for (layer, count) in spec.layers.iter().zip(&counts) {
        let n = cursor
            .u32()
            .ok_or_else(|| Error::Format(format!("truncated before block of `{}`", layer.name)))?
            as usize;
        let expected = count.map_or(0, |c| c.total());
        if n != expected {
            return Err(Error::SizeMismatch {
                layer: layer.name.clone(),
                expected,
                actual: n,
            });
        }
        let values = cursor
            .f32s(n)
            .ok_or_else(|| Error::Format(format!("truncated inside block of `{}`", layer.name)))?;
        params.push(count.map(|c| {
            let mut weights = values;
            let bias = weights.split_off(c.weights);
            LayerParams { weights, bias }
        }));
    }
    if !cursor.buf.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last layer",
            cursor.buf.len()
        )));
    }
    Network::new(spec.clone(), params)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(spec, &bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl Cursor<'_> {
    fn u32(&mut self) -> Option<u32> {
        let (head, tail) = self.buf.split_first_chunk::<4>()?;
        self.buf = tail;
        Some(u32::from_le_bytes(*head))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let len = n.checked_mul(4)?;
        if self.buf.len() < len {
            return None;
        }
        let (head, tail) = self.buf.split_at(len);
        self.buf = tail;
        Some(
            head.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    }
}
