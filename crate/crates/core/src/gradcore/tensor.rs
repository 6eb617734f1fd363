use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 4-D array laid out as (batch, depth, height, width), row-major.
///
/// Throughout the crate height is the electrode axis and width is time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, d: usize, h: usize, w: usize) -> usize {
        let [_, dd, hh, ww] = self.shape;
        ((n * dd + d) * hh + h) * ww + w
    }

    #[inline]
    pub fn get(&self, n: usize, d: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, d, h, w)]
    }

    /// Contiguous slice for one (batch, depth) plane.
    #[inline]
    pub fn plane(&self, n: usize, d: usize) -> &[f64] {
        let sz = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + d) * sz;
        &self.data[start..start + sz]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, d: usize) -> &mut [f64] {
        let sz = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + d) * sz;
        &mut self.data[start..start + sz]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copy of depth slices `[start, start + len)`.
    pub fn slice_depth(&self, start: usize, len: usize) -> Self {
        let [n, d, h, w] = self.shape;
        debug_assert!(start + len <= d);
        let mut out = Tensor4::zeros([n, len, h, w]);
        for b in 0..n {
            for k in 0..len {
                out.plane_mut(b, k).copy_from_slice(self.plane(b, start + k));
            }
        }
        out
    }

    /// Copy of one batch item, keeping a leading batch dimension of 1.
    pub fn batch_item(&self, n: usize) -> Self {
        let [_, d, h, w] = self.shape;
        let sz = d * h * w;
        Self {
            shape: [1, d, h, w],
            data: self.data[n * sz..(n + 1) * sz].to_vec(),
        }
    }

    /// Stack single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let [_, d, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * d * h * w);
        let mut n = 0;
        for t in items {
            let [tn, td, th, tw] = t.shape;
            if (td, th, tw) != (d, h, w) {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: [n, d, h, w],
            data,
        })
    }
}
