use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major matrix; vectors are n×1 and scalars 1×1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("tensor", format!("{} values for shape {rows}x{cols}", data.len())));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn scalar(x: T) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn column(data: Vec<T>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn from_f64(t: &Tensor<f64>) -> Self {
        Tensor { rows: t.rows, cols: t.cols, data: t.data.iter().map(|&x| T::from_f64(x)).collect() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x.re()).collect() }
    }

    pub fn add_assign(&mut self, o: &Tensor<T>) {
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += *b;
        }
    }
}
