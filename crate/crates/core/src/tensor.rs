//! Dense row-major f64 tensors.
//!
//! `Tensor` is the plain value type used for parameters, features and
//! frozen outputs. Differentiable computation happens on a [`crate::tape::Tape`],
//! whose nodes carry a value, a gradient buffer and a backward rule.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Xavier-normal initialization: i.i.d. N(0, 2/(fan_in+fan_out)).
    ///
    /// 2-D shapes are read as [fan_out, fan_in]; 3-D conv kernels
    /// [w, c_in, c_out] use w*c_in as fan_in and w*c_out as fan_out.
    pub fn xavier_normal(shape: Vec<usize>, rng: &mut SeededRng) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::contract(format!(
                "xavier init on zero-sized shape {shape:?}"
            )));
        }
        let (fan_in, fan_out) = match shape.as_slice() {
            [rows, cols] => (*cols, *rows),
            [w, c_in, c_out] => (w * c_in, w * c_out),
            _ => {
                return Err(Error::contract(format!(
                    "xavier init needs 2 fan dimensions, got shape {shape:?}"
                )))
            }
        };
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..numel).map(|_| rng.normal() * std).collect();
        Ok(Tensor { shape, data })
    }

    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut SeededRng) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(|_| rng.normal() * std).collect(),
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Matrix row as a slice; panics if not 2-D.
    pub fn row(&self, r: usize) -> &[f64] {
        assert_eq!(self.shape.len(), 2, "row() on non-matrix");
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}
