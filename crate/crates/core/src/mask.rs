//! Binary pixel masks and their run-length encoding.
//!
//! Runs alternate between background and foreground, starting with
//! background, over the mask in row-major order. A mask that begins with
//! foreground therefore starts with a zero-length run.

use crate::bbox::BBox;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        PixelMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Tight half-open bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then(|| {
            BBox::new(
                x0 as f64,
                y0 as f64,
                (x1 - x0) as f64,
                (y1 - y0) as f64,
            )
        })
    }

    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        if len > 0 || runs.is_empty() {
            runs.push(len);
        }
        runs
    }

    pub fn from_rle(width: usize, height: usize, runs: &[u32]) -> Result<Self> {
        let total = width
            .checked_mul(height)
            .ok_or_else(|| Error::Format("mask dimensions overflow".into()))?;
        let mut sum = 0usize;
        for &r in runs {
            sum = sum
                .checked_add(r as usize)
                .filter(|s| *s <= total)
                .ok_or_else(|| Error::Format("mask runs exceed mask size".into()))?;
        }
        if sum != total {
            return Err(Error::Format(format!(
                "mask runs cover {sum} pixels, mask has {total}"
            )));
        }
        let mut bits = Vec::with_capacity(total);
        for (i, &r) in runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        Ok(PixelMask {
            width,
            height,
            bits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_starting_with_foreground() {
        let m = PixelMask::from_fn(3, 1, |x, _| x == 0);
        assert_eq!(m.to_rle(), vec![0, 1, 2]);
        assert_eq!(PixelMask::from_rle(3, 1, &[0, 1, 2]).unwrap(), m);
    }

    #[test]
    fn rle_rejects_wrong_total() {
        assert!(PixelMask::from_rle(2, 2, &[1, 2]).is_err());
        assert!(PixelMask::from_rle(2, 2, &[u32::MAX, u32::MAX]).is_err());
    }

    #[test]
    fn bounding_box_is_tight() {
        let m = PixelMask::from_fn(10, 8, |x, y| (2..5).contains(&x) && (3..7).contains(&y));
        assert_eq!(m.bounding_box(), Some(BBox::new(2.0, 3.0, 3.0, 4.0)));
        assert_eq!(PixelMask::new(4, 4).bounding_box(), None);
    }

    proptest! {
        #[test]
        fn rle_round_trips(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let m = PixelMask::from_fn(w, h, |x, y| (seed >> ((x * 7 + y * 3) % 64)) & 1 == 1);
            prop_assert_eq!(PixelMask::from_rle(w, h, &m.to_rle()).unwrap(), m);
        }
    }
}
