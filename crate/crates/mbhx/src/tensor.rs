//! Dense N-dimensional (N≤4) tensors of finite `f64` values.
//!
//! Image-shaped tensors use `[batch, channel, height, width]` layout,
//! row-major. Tensors are immutable; all mutation happens by constructing
//! new tensors, so cloning is a cheap `Arc` bump and sharing across
//! threads is safe.

use std::sync::Arc;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor from explicit data, validating the shape product and
    /// that every element is finite.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        validate_shape(shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Contract(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite element {bad} in tensor of shape {shape:?}"
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Internal constructor for op outputs. Finiteness is an invariant of
    /// every op, checked here in debug builds.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "op produced a non-finite element"
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; numel]),
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_op(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar_value(value: f64) -> Tensor {
        Tensor::from_op(vec![1], vec![value])
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

    /// The single element of a 1-element tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Same data with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        validate_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Contract(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.numel(),
                shape,
                numel
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Replace one element, returning a new tensor. Used by finite-difference
    /// probes; not a hot path.
    pub fn with_element(&self, index: usize, value: f64) -> Result<Tensor> {
        if index >= self.numel() {
            return Err(Error::Contract(format!(
                "index {index} out of bounds for {} elements",
                self.numel()
            )));
        }
        if !value.is_finite() {
            return Err(Error::Contract(format!("non-finite element {value}")));
        }
        let mut data = self.data.as_ref().clone();
        data[index] = value;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    /// Stack equally-shaped tensors along a new leading batch axis.
    /// Inputs of shape `[c, h, w]` produce `[n, c, h, w]`.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("cannot stack zero tensors".into()))?;
        if first.shape.len() >= MAX_RANK {
            return Err(Error::Contract(format!(
                "stacking rank-{} tensors would exceed max rank {}",
                first.shape.len(),
                MAX_RANK
            )));
        }
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for item in items {
            if item.shape != first.shape {
                return Err(Error::Contract(format!(
                    "stack shape mismatch: {:?} vs {:?}",
                    item.shape, first.shape
                )));
            }
            data.extend_from_slice(item.data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_op(shape, data))
    }

    /// The `index`-th slice along the leading axis, with that axis removed.
    pub fn unstack(&self, index: usize) -> Result<Tensor> {
        let n = *self
            .shape
            .first()
            .ok_or_else(|| Error::Contract("cannot unstack a rank-0 tensor".into()))?;
        if index >= n {
            return Err(Error::Contract(format!(
                "unstack index {index} out of bounds for leading extent {n}"
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let data = self.data[index * inner..(index + 1) * inner].to_vec();
        Ok(Tensor::from_op(self.shape[1..].to_vec(), data))
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    /// Bypasses the finiteness invariant so tests can feed poisoned
    /// values into guards that exist for exactly that case.
    #[cfg(test)]
    pub(crate) fn raw_for_tests(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Contract(format!(
            "rank must be 1..={MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::Contract(format!(
            "extents must be positive, got shape {shape:?}"
        )));
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_data_mismatch() {
        let err = Tensor::new(&[2, 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(&[2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn rejects_zero_extent_and_excess_rank() {
        assert!(Tensor::new(&[0], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn stack_and_unstack_round_trip() {
        let a = Tensor::new(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let b = Tensor::new(&[2, 3], (6..12).map(f64::from).collect()).unwrap();
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 3]);
        assert_eq!(s.unstack(0).unwrap(), a);
        assert_eq!(s.unstack(1).unwrap(), b);
    }

    #[test]
    fn scalar_accessor() {
        assert_eq!(Tensor::scalar_value(2.5).scalar().unwrap(), 2.5);
        assert!(Tensor::zeros(&[2]).scalar().is_err());
    }
}
