use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// A dense `width x height` grid of reals, stored row-major (`y * width + x`).
///
/// Generated targets and activated predictions stay in `[0, 1]`; the type
/// itself does not enforce it so raw (pre-activation) maps can share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Heatmap {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} heatmap",
                values.len()
            )));
        }
        Ok(Heatmap {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Heatmap {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    /// First (row-major) pixel attaining the maximum value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Pixelwise maximum with `other`, in place.
    pub fn max_assign(&mut self, other: &Heatmap) -> Result<()> {
        self.check_same(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            if b > *a {
                *a = b;
            }
        }
        Ok(())
    }

    pub fn check_same(&self, other: &Heatmap) -> Result<()> {
        if self.size() != other.size() {
            return Err(Error::shape(format!(
                "heatmap {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Pixel containing the normalized point, clamped to the grid.
    pub fn pixel_of(&self, p: &Point) -> (usize, usize) {
        pixel_of(p, self.width, self.height)
    }

    /// Normalized coordinates of a pixel center.
    pub fn pixel_center(&self, x: usize, y: usize) -> Point {
        Point::new(
            (x as f64 + 0.5) / self.width as f64,
            (y as f64 + 0.5) / self.height as f64,
        )
    }
}

pub(crate) fn pixel_of(p: &Point, width: usize, height: usize) -> (usize, usize) {
    let q = |v: f64, n: usize| ((v * n as f64).floor().max(0.0) as usize).min(n - 1);
    (q(p.x, width), q(p.y, height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_row_major() {
        let h = Heatmap::filled(4, 3, 0.2);
        assert_eq!(h.argmax(), (0, 0));
        let mut h = Heatmap::zeros(4, 3);
        h.set(3, 0, 1.0);
        h.set(0, 2, 1.0);
        assert_eq!(h.argmax(), (3, 0));
    }

    #[test]
    fn pixel_of_clamps_edges() {
        let h = Heatmap::zeros(64, 64);
        assert_eq!(h.pixel_of(&Point::new(1.0, 0.0)), (63, 0));
        assert_eq!(h.pixel_of(&Point::new(0.5, 0.5)), (32, 32));
        let c = h.pixel_center(10, 20);
        assert_eq!(c, Point::new(10.5 / 64.0, 20.5 / 64.0));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Heatmap::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
