//! Dense row-major tensors of up to 4 dimensions.

use crate::error::{Error, Result};

/// Element type for tensor math: `f64` for training and DPFL inference,
/// `f32` for SPFL inference.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Row-major dense array with 1 to 4 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::Shape(format!("tensor rank must be 1..=4, got {}", shape.len())));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Self { shape, data: vec![T::default(); count] }
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Reinterpret the buffer under a new shape of identical element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != self.data.len() || shape.is_empty() || shape.len() > 4 {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Tensor<f64> {
    /// Slice of rows `[start, end)` along the first (batch) dimension.
    pub fn batch_rows(&self, start: usize, end: usize) -> Result<Tensor<f64>> {
        let stride: usize = self.shape[1..].iter().product();
        if end > self.shape[0] || start > end {
            return Err(Error::Shape(format!(
                "batch slice {start}..{end} out of range for {:?}",
                self.shape
            )));
        }
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(shape, self.data[start * stride..end * stride].to_vec())
    }

    /// Gather rows along the first dimension in the given index order.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<f64>> {
        let stride: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(Error::Shape(format!("row {i} out of range for {:?}", self.shape)));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_element_count_must_agree() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn gather_and_slice_rows() {
        let t = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let s = t.batch_rows(1, 3).unwrap();
        assert_eq!(s.as_slice(), &[2.0, 3.0, 4.0, 5.0]);
        let g = t.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.as_slice(), &[4.0, 5.0, 0.0, 1.0]);
    }

    #[test]
    fn cast_round_trips_f32_representable_values() {
        let t = Tensor::new(vec![2], vec![1.5f64, -0.25]).unwrap();
        let f: Tensor<f32> = t.cast();
        let back: Tensor<f64> = f.cast();
        assert_eq!(back.as_slice(), t.as_slice());
    }
}
