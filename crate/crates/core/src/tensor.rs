//! Dense row-major `f64` tensors.
//!
//! Activations use channels × height × width layout; vectors are rank 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
            return Err(Error::invalid(format!("invalid tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// (channels, height, width) of a rank-3 tensor.
    pub fn chw(&self) -> Option<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Little-endian `f32` encoding, 4 bytes per element. This is the wire format
    /// for every transmitted activation.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
    }

    /// Inverse of [`Tensor::to_f32_bytes`].
    pub fn from_f32_bytes(shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::invalid("byte payload is not a multiple of 4"));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(shape, data)
    }
}

/// Quantizes `t` to the `f32` wire format and zeroes every element with at least
/// one undelivered byte. `delivered` covers the serialized payload byte by byte.
pub fn zero_fill_undelivered(t: &Tensor, delivered: &[bool]) -> Result<Tensor> {
    if delivered.len() != t.len() * 4 {
        return Err(Error::invalid(format!(
            "delivery mask covers {} bytes, payload has {}",
            delivered.len(),
            t.len() * 4
        )));
    }
    let data = t
        .data
        .iter()
        .zip(delivered.chunks_exact(4))
        .map(|(v, bytes)| {
            if bytes.iter().all(|b| *b) {
                *v as f32 as f64
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(t.shape.clone(), data)
}
