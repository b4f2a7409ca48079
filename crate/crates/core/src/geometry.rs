//! Receptive fields: which input pixels can influence a feature-map cell.
//!
//! Going down one layer, a window of `size` cells starting at `offset` maps
//! to `(size - 1) * stride + kernel` input cells starting at
//! `offset * stride - pad`. Elementwise layers leave the window unchanged and
//! a fully connected layer behaves as a kernel covering its whole input.
//!
//! The clipped box is the set of input pixels that actually reach the cell:
//! at every level the window is cut to cells that exist, so padding and rows
//! dropped by a stride that does not divide the input are excluded.

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::nn::{LayerKind, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceptiveField {
    /// Start of the unclipped region, may be negative with padding.
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
    /// Midpoint of the unclipped region.
    pub center: (f64, f64),
    /// `center` clamped into `[0, W] x [0, H]`.
    pub clamped_center: (f64, f64),
    pub clipped: BBox,
}

/// Affine map from a layer's grid to input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGeometry {
    pub stride: (usize, usize),
    pub offset: (i64, i64),
    pub size: (usize, usize),
    pub map_width: usize,
    pub map_height: usize,
    pub image_width: usize,
    pub image_height: usize,
    axes: Vec<(AxisOp, AxisOp)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct AxisOp {
    kernel: usize,
    stride: usize,
    pad: usize,
    /// Length of the layer's input along this axis.
    len: usize,
}

fn axis_ops(spec: &NetworkSpec, upto: usize) -> Result<Vec<(AxisOp, AxisOp)>> {
    let shapes = spec.validate()?;
    Ok(spec.layers[..=upto]
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let input = if i == 0 { spec.input_shape } else { shapes[i - 1] };
            let (kernel, stride, pad) = match layer.kind {
                LayerKind::Conv {
                    kernel, stride, pad, ..
                } => ((kernel, kernel), stride, pad),
                LayerKind::Maxpool { kernel, stride } => ((kernel, kernel), stride, 0),
                LayerKind::Fc { .. } => ((input.width, input.height), 1, 0),
                LayerKind::Relu | LayerKind::Lrn { .. } | LayerKind::Softmax => ((1, 1), 1, 0),
            };
            (
                AxisOp { kernel: kernel.0, stride, pad, len: input.width },
                AxisOp { kernel: kernel.1, stride, pad, len: input.height },
            )
        })
        .collect())
}

fn back_project(ops: impl DoubleEndedIterator<Item = AxisOp>, coord: usize) -> (i64, usize) {
    let mut offset = coord as i64;
    let mut size = 1usize;
    for op in ops.rev() {
        size = (size - 1) * op.stride + op.kernel;
        offset = offset * op.stride as i64 - op.pad as i64;
    }
    (offset, size)
}

/// Inclusive input range reached by `coord`, or `None` when the cell sees
/// only padding.
fn covered(ops: impl DoubleEndedIterator<Item = AxisOp>, coord: usize) -> Option<(usize, usize)> {
    let (mut lo, mut hi) = (coord as i64, coord as i64);
    for op in ops.rev() {
        lo = (lo * op.stride as i64 - op.pad as i64).max(0);
        hi = (hi * op.stride as i64 - op.pad as i64 + op.kernel as i64 - 1).min(op.len as i64 - 1);
        if lo > hi {
            return None;
        }
    }
    Some((lo as usize, hi as usize))
}

fn covered_box(ops: &[(AxisOp, AxisOp)], c: usize, r: usize) -> BBox {
    match (covered(ops.iter().map(|o| o.0), c), covered(ops.iter().map(|o| o.1), r)) {
        (Some((x0, x1)), Some((y0, y1))) => {
            BBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64)
        }
        _ => BBox::new(0.0, 0.0, 0.0, 0.0),
    }
}

/// Receptive field of cell `(c, r)` of `layer`.
pub fn receptive_field(spec: &NetworkSpec, layer: &str, c: usize, r: usize) -> Result<ReceptiveField> {
    let idx = spec.layer_index(layer)?;
    let map = spec.validate()?[idx];
    if c >= map.width || r >= map.height {
        return Err(Error::Config(format!(
            "cell ({c}, {r}) outside the {}x{} map of `{layer}`",
            map.width, map.height
        )));
    }
    let ops = axis_ops(spec, idx)?;
    let (x0, width) = back_project(ops.iter().map(|o| o.0), c);
    let (y0, height) = back_project(ops.iter().map(|o| o.1), r);
    Ok(make_field(
        x0,
        y0,
        width,
        height,
        spec.input_shape.width,
        spec.input_shape.height,
        covered_box(&ops, c, r),
    ))
}

fn make_field(x0: i64, y0: i64, width: usize, height: usize, iw: usize, ih: usize, clipped: BBox) -> ReceptiveField {
    let center = (x0 as f64 + width as f64 / 2.0, y0 as f64 + height as f64 / 2.0);
    let clamped_center = (center.0.clamp(0.0, iw as f64), center.1.clamp(0.0, ih as f64));
    ReceptiveField {
        x0,
        y0,
        width,
        height,
        center,
        clamped_center,
        clipped,
    }
}

/// Grid-to-image geometry of `layer`, for repeated lookups.
pub fn layer_geometry(spec: &NetworkSpec, layer: &str) -> Result<LayerGeometry> {
    let idx = spec.layer_index(layer)?;
    let map = spec.validate()?[idx];
    let ops = axis_ops(spec, idx)?;
    let (ox, sx) = back_project(ops.iter().map(|o| o.0), 0);
    let (oy, sy) = back_project(ops.iter().map(|o| o.1), 0);
    let stride = (
        ops.iter().map(|o| o.0.stride).product(),
        ops.iter().map(|o| o.1.stride).product(),
    );
    Ok(LayerGeometry {
        stride,
        offset: (ox, oy),
        size: (sx, sy),
        map_width: map.width,
        map_height: map.height,
        image_width: spec.input_shape.width,
        image_height: spec.input_shape.height,
        axes: ops,
    })
}

impl LayerGeometry {
    pub fn field(&self, c: usize, r: usize) -> ReceptiveField {
        make_field(
            self.offset.0 + (c * self.stride.0) as i64,
            self.offset.1 + (r * self.stride.1) as i64,
            self.size.0,
            self.size.1,
            self.image_width,
            self.image_height,
            covered_box(&self.axes, c, r),
        )
    }

    /// Grid cell whose receptive-field center is closest to input point `(x, y)`.
    pub fn nearest_cell(&self, x: f64, y: f64) -> (usize, usize) {
        let axis = |p: f64, offset: i64, size: usize, stride: usize, n: usize| -> usize {
            let first = offset as f64 + size as f64 / 2.0;
            let k = ((p - first) / stride as f64).round();
            k.clamp(0.0, (n - 1) as f64) as usize
        };
        (
            axis(x, self.offset.0, self.size.0, self.stride.0, self.map_width),
            axis(y, self.offset.1, self.size.1, self.stride.1, self.map_height),
        )
    }
}
