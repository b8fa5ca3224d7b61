//! Dense multi-channel fields on the node grid and at element Gauss points.
//!
//! Both containers are channel-major and row-major in space: row index runs
//! along `y`, column index along `x`.

use crate::error::{shape_err, Result};

/// Values on grid nodes: `channels × height × width` where
/// `height = ny + 1` and `width = nx + 1` for a grid of `nx × ny` elements.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeField {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        NodeField {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return shape_err(format!(
                "node field {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            ));
        }
        Ok(NodeField {
            channels,
            height,
            width,
            data,
        })
    }

    /// Node field sampled from a function of `(channel, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for j in 0..height {
                for i in 0..width {
                    data.push(f(c, j, i));
                }
            }
        }
        NodeField {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn idx(&self, c: usize, j: usize, i: usize) -> usize {
        (c * self.height + j) * self.width + i
    }

    #[inline]
    pub fn get(&self, c: usize, j: usize, i: usize) -> f64 {
        self.data[self.idx(c, j, i)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, j: usize, i: usize, v: f64) {
        let k = self.idx(c, j, i);
        self.data[k] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &NodeField) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &NodeField, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            shape_err(format!("{what}: {:?} vs {:?}", self.shape(), other.shape()))
        }
    }

    pub fn dot(&self, other: &NodeField) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm of the flattened field.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &NodeField) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn add(&self, other: &NodeField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &NodeField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-element, per-Gauss-point quantities: `channels × n_gauss × ny × nx`.
///
/// The Gauss slot is folded into the channel axis, so the tensor seen by a
/// convolution has `channels * n_gauss` planes of element resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussField {
    pub channels: usize,
    pub n_gauss: usize,
    pub ny: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl GaussField {
    pub fn zeros(channels: usize, n_gauss: usize, ny: usize, nx: usize) -> Self {
        GaussField {
            channels,
            n_gauss,
            ny,
            nx,
            data: vec![0.0; channels * n_gauss * ny * nx],
        }
    }

    pub fn filled(channels: usize, n_gauss: usize, ny: usize, nx: usize, v: f64) -> Self {
        let mut g = Self::zeros(channels, n_gauss, ny, nx);
        g.data.iter_mut().for_each(|x| *x = v);
        g
    }

    pub fn from_vec(channels: usize, n_gauss: usize, ny: usize, nx: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * n_gauss * ny * nx {
            return shape_err(format!(
                "gauss field {channels}x{n_gauss}x{ny}x{nx} needs {} values, got {}",
                channels * n_gauss * ny * nx,
                data.len()
            ));
        }
        Ok(GaussField {
            channels,
            n_gauss,
            ny,
            nx,
            data,
        })
    }

    /// Total channel count of the folded tensor.
    pub fn tensor_channels(&self) -> usize {
        self.channels * self.n_gauss
    }

    pub fn plane_len(&self) -> usize {
        self.ny * self.nx
    }

    #[inline]
    pub fn idx(&self, c: usize, g: usize, ey: usize, ex: usize) -> usize {
        ((c * self.n_gauss + g) * self.ny + ey) * self.nx + ex
    }

    #[inline]
    pub fn get(&self, c: usize, g: usize, ey: usize, ex: usize) -> f64 {
        self.data[self.idx(c, g, ey, ex)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, g: usize, ey: usize, ex: usize, v: f64) {
        let k = self.idx(c, g, ey, ex);
        self.data[k] = v;
    }

    /// Plane of channel `c` at Gauss slot `g`.
    pub fn plane(&self, c: usize, g: usize) -> &[f64] {
        let n = self.plane_len();
        let k = (c * self.n_gauss + g) * n;
        &self.data[k..k + n]
    }

    pub fn plane_mut(&mut self, c: usize, g: usize) -> &mut [f64] {
        let n = self.plane_len();
        let k = (c * self.n_gauss + g) * n;
        &mut self.data[k..k + n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
