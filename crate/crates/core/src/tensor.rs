use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(channels, height, width)`; serialized as a three-element array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape3 {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl From<[usize; 3]> for Shape3 {
    fn from(v: [usize; 3]) -> Self {
        Shape3::new(v[0], v[1], v[2])
    }
}

impl From<Shape3> for [usize; 3] {
    fn from(s: Shape3) -> Self {
        [s.channels, s.height, s.width]
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Dense channel-major `f32` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape3,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape3) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape3, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape3, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Data(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let idx = (c * self.shape.height + y) * self.shape.width + x;
        self.data[idx] = v;
    }

    pub fn channel(&self, c: usize) -> ChannelView<'_> {
        let plane = self.shape.plane();
        ChannelView {
            width: self.shape.width,
            height: self.shape.height,
            data: &self.data[c * plane..(c + 1) * plane],
        }
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.shape.plane();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Borrowed single 2-D channel of a tensor.
#[derive(Clone, Copy, Debug)]
pub struct ChannelView<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f32],
}

impl<'a> ChannelView<'a> {
    pub fn new(width: usize, height: usize, data: &'a [f32]) -> Self {
        assert_eq!(data.len(), width * height, "channel view size mismatch");
        ChannelView {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, r: usize) -> f32 {
        self.data[r * self.width + c]
    }

    /// Value at signed coordinates, zero outside the map.
    #[inline]
    pub fn at_padded(&self, c: i64, r: i64) -> f32 {
        if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
            0.0
        } else {
            self.at(c as usize, r as usize)
        }
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}
