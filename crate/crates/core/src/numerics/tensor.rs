use alloc::vec;
use alloc::vec::Vec;

use super::NumericsError;

/// Dense row-major array of `f64` with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, NumericsError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::InvalidShape(shape.to_vec()));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel], grad: None }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel], grad: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value], grad: None }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), NumericsError> {
        if grad.len() != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "set_grad",
                lhs: self.shape.clone(),
                rhs: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Rows and columns when viewed as a matrix; trailing dims fold into columns.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.dims2();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transposed(&self) -> Self {
        let (m, n) = self.dims2();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self { shape: vec![n, m], data: out, grad: None }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
