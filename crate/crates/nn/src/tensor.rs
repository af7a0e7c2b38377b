//! Dense row-major `f64` tensors.

use std::fmt;

/// A contiguous, row-major n-dimensional array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Shape as `(batch, channels, height, width)`; panics unless rank 4.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape[..] {
            [b, c, h, w] => (b, c, h, w),
            _ => panic!("expected a rank-4 tensor, got shape {:?}", self.shape),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.data.len(), "cannot reshape {:?} to {shape:?}", self.shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { shape: self.shape.clone(), data }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        assert!(axis < self.rank());
        assert!(start + len <= self.shape[axis], "narrow out of range");
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor { shape, data }
    }

    /// Concatenates tensors along `axis`; all other dims must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0];
        let rank = first.rank();
        for p in parts {
            assert_eq!(p.rank(), rank);
            for d in 0..rank {
                if d != axis {
                    assert_eq!(p.shape[d], first.shape[d], "concat dim {d} mismatch");
                }
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor { shape, data }
    }

    /// Writes `src` into `self` at offset `start` along `axis`, accumulating.
    pub fn accumulate_narrow(&mut self, axis: usize, start: usize, src: &Tensor) {
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let len = src.shape[axis];
        for o in 0..outer {
            let dst = o * dim * inner + start * inner;
            let s = o * len * inner;
            for k in 0..len * inner {
                self.data[dst + k] += src.data[s + k];
            }
        }
    }

    pub fn permute(&self, perm: &[usize]) -> Tensor {
        let rank = self.rank();
        assert_eq!(perm.len(), rank, "permutation rank mismatch");
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides = strides(&self.shape);
        let perm_strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[off]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                off += perm_strides[d];
                if idx[d] < new_shape[d] {
                    break;
                }
                off -= perm_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        Tensor { shape: new_shape, data }
    }

    /// Sums `self` down to `shape`, where each target dim equals the source dim or is 1.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        assert_eq!(shape.len(), self.rank(), "sum_to_shape rank mismatch");
        let mut out = Tensor::zeros(shape);
        let out_strides = strides(shape);
        let eff: Vec<usize> = (0..shape.len())
            .map(|d| if shape[d] == 1 { 0 } else { out_strides[d] })
            .collect();
        for_each_offset(&self.shape, &eff, |i, o| out.data[o] += self.data[i]);
        out
    }

    /// Materializes a broadcast of `self` to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        assert_eq!(shape.len(), self.rank(), "broadcast rank mismatch");
        let src_strides = strides(&self.shape);
        let eff: Vec<usize> = (0..shape.len())
            .map(|d| {
                assert!(
                    self.shape[d] == shape[d] || self.shape[d] == 1,
                    "cannot broadcast {:?} to {shape:?}",
                    self.shape
                );
                if self.shape[d] == 1 {
                    0
                } else {
                    src_strides[d]
                }
            })
            .collect();
        let mut data = vec![0.0; numel(shape)];
        for_each_offset(shape, &eff, |i, o| data[i] = self.data[o]);
        Tensor { shape: shape.to_vec(), data }
    }
}

/// Visits every linear index of `shape` together with the offset given by `eff_strides`.
pub(crate) fn for_each_offset(shape: &[usize], eff_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for i in 0..total {
        f(i, off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += eff_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= eff_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Output shape of a numpy-style broadcast between equal-rank shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast requires equal rank: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "incompatible shapes {a:?} and {b:?}");
            x.max(y)
        })
        .collect()
}
