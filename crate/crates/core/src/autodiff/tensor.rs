use std::io::Read;

use super::Float;
use crate::{Error, Result};

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| super::cst(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(format!("item() on shape {:?}", self.shape))),
        }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from(*v).expect("castable")).collect(),
        }
    }

    /// Appends `u32 ndim`, `u32` per dimension, then each value as
    /// little-endian f32.
    pub fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_f32().expect("finite").to_le_bytes());
        }
    }

    /// Inverse of [`Tensor::write_le`].
    pub fn read_le(input: &mut impl Read) -> Result<Self> {
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let ndim = u32::from_le_bytes(word) as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("tensor rank {ndim} is implausible")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            input.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        input.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::from(f32::from_le_bytes(c.try_into().unwrap())).expect("castable"))
            .collect();
        Self::new(&shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let t = Tensor::<f32>::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-8, 7.0]).unwrap();
        let mut buf = Vec::new();
        t.write_le(&mut buf);
        assert_eq!(buf.len(), 4 + 8 + 24);
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        let back = Tensor::<f32>::read_le(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn shape_mismatch() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::zeros(&[2]).item().is_err());
    }
}
