//! Dense NCHW float tensors.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::image::Plane;

/// Row-major `(batch, channels, height, width)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], v: f64) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::filled([1, 1, 1, 1], v)
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return shape_err(format!("tensor {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Tensor { shape, data })
    }

    /// Uniform values in `[-scale, scale)`.
    pub fn uniform(shape: [usize; 4], scale: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
        }
    }

    /// Stack planes as the channels of a batch-1 tensor.
    pub fn from_planes(planes: &[&Plane]) -> Result<Self> {
        let Some(first) = planes.first() else {
            return shape_err("no planes to stack");
        };
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in planes {
            if p.dims() != (w, h) {
                return shape_err(format!("plane {:?} does not match {:?}", p.dims(), (w, h)));
            }
            data.extend_from_slice(p.data());
        }
        Ok(Tensor {
            shape: [1, planes.len(), h, w],
            data,
        })
    }

    /// Concatenate batch-compatible tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let Some(first) = items.first() else {
            return shape_err("no tensors to stack");
        };
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return shape_err(format!("cannot stack {:?} with {:?}", t.shape, first.shape));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Spatial window `[x0, x0+w) × [y0, y0+h)` of every plane.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let [n, c, th, tw] = self.shape;
        if w == 0 || h == 0 || x0 + w > tw || y0 + h > th {
            return shape_err(format!("crop {w}x{h}+{x0}+{y0} outside {tw}x{th}"));
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                let p = self.plane(b, ch);
                for y in y0..y0 + h {
                    data.extend_from_slice(&p[y * tw + x0..y * tw + x0 + w]);
                }
            }
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let o = (n * self.shape[1] + c) * p;
        &self.data[o..o + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let o = (n * self.shape[1] + c) * p;
        &mut self.data[o..o + p]
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x]
    }

    pub fn to_plane(&self, n: usize, c: usize) -> Plane {
        Plane::from_vec(self.shape[3], self.shape[2], self.plane(n, c).to_vec()).expect("plane size")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        crate::metrics::pairwise_sum(&self.data)
    }
}
