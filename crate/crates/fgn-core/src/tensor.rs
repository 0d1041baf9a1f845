//! Dense row-major tensors over `f64`.
//!
//! Shapes are kept simple: `[]` is a scalar, `[n]` a vector, `[m, n]` a
//! matrix. That is all the network math needs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                context: "Tensor::new".into(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Dimension {
                context: "Tensor::scalar_value".into(),
                expected: 1,
                got: self.data.len(),
            })
        }
    }

    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [r, _] => *r,
            [_] => 1,
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.as_slice() {
            [_, c] => *c,
            [n] => *n,
            _ => 1,
        }
    }

    /// Element access for matrices (and vectors, with `r == 0`).
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `a * b` for row-major matrices, written with the k-loop in the middle so
/// the inner accesses stay sequential.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k1) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k1 != k2 {
        return Err(Error::Dimension {
            context: "matmul".into(),
            expected: k1,
            got: k2,
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(kk);
            for (ov, &bv) in orow.iter_mut().zip(brow) {
                *ov += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.at(i, j);
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}
