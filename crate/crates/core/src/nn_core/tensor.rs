use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor construction",
                format!("{n} values for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Leading dimension of a 2-D tensor (or length of a 1-D one).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Trailing dimension of a 2-D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self (n x k) * w^T` where `w` is `m x k`; result is `n x m`.
    pub fn matmul_t(&self, w: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows(), self.cols(), w.rows());
        debug_assert_eq!(k, w.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let x = &self.data[i * k..(i + 1) * k];
            let o = &mut out[i * m..(i + 1) * m];
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = dot(x, &w.data[j * k..(j + 1) * k]);
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    /// `self (n x m) * w` where `w` is `m x k`; result is `n x k`.
    pub fn matmul(&self, w: &Tensor) -> Tensor {
        let (n, m, k) = (self.rows(), self.cols(), w.cols());
        debug_assert_eq!(m, w.rows());
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let o = &mut out[i * k..(i + 1) * k];
            for j in 0..m {
                let a = self.data[i * m + j];
                if a == 0.0 {
                    continue;
                }
                for (oc, wc) in o.iter_mut().zip(&w.data[j * k..(j + 1) * k]) {
                    *oc += a * wc;
                }
            }
        }
        Tensor {
            shape: vec![n, k],
            data: out,
        }
    }

    /// Accumulates `a^T * b` into `self`, for `a: n x m`, `b: n x k`, `self: m x k`.
    pub fn add_at_b(&mut self, a: &Tensor, b: &Tensor) {
        let (n, m, k) = (a.rows(), a.cols(), b.cols());
        debug_assert_eq!(self.data.len(), m * k);
        for i in 0..n {
            let ar = &a.data[i * m..(i + 1) * m];
            let br = &b.data[i * k..(i + 1) * k];
            for (j, &aij) in ar.iter().enumerate() {
                if aij == 0.0 {
                    continue;
                }
                for (s, bv) in self.data[j * k..(j + 1) * k].iter_mut().zip(br) {
                    *s += aij * bv;
                }
            }
        }
    }

    /// Column-wise concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let n = parts.first().map(|p| p.rows()).unwrap_or(0);
        if let Some(bad) = parts.iter().find(|p| p.rows() != n) {
            return Err(Error::shape("concat_cols rows", n, bad.rows()));
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor {
            shape: vec![n, total],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, widths: &[usize]) -> Vec<Tensor> {
        let n = self.rows();
        debug_assert_eq!(widths.iter().sum::<usize>(), self.cols());
        let mut parts: Vec<Tensor> = widths.iter().map(|&w| Tensor::zeros(&[n, w])).collect();
        for i in 0..n {
            let row = self.row(i);
            let mut off = 0;
            for (p, &w) in parts.iter_mut().zip(widths) {
                p.row_mut(i).copy_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        parts
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", self.data.len(), format!("{shape:?}")));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
