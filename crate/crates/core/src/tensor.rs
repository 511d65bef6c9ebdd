use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor over any [`Scalar`].
///
/// Shape is dynamic. Invariant: `data.len() == shape.iter().product()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::ZERO; n] }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Builds a tensor, checking that the element count matches the shape.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch {
                what: format!("tensor construction ({} elements)", data.len()),
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Like [`Tensor::from_vec`] but additionally rejects non-finite entries.
    pub fn from_vec_checked(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Self::from_vec(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                what: "reshape".into(),
                expected: self.shape.clone(),
                got: shape.to_vec(),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    /// Elementwise cast through f64.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64(x.value())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// self += alpha * other. Shapes must match.
    pub fn axpy(&mut self, alpha: S, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn dot(&self, other: &Tensor<S>) -> S {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        let mut acc = S::ZERO;
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            acc += a * b;
        }
        acc
    }

    /// Squared L2 norm of all elements.
    pub fn sq_norm(&self) -> S {
        let mut acc = S::ZERO;
        for &a in &self.data {
            acc += a * a;
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Global L2 norm across a list of tensors, in f64 for stability.
pub fn global_l2_norm<S: Scalar>(tensors: &[Tensor<S>]) -> f64 {
    tensors
        .iter()
        .map(|t| t.as_slice().iter().map(|x| x.value() * x.value()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn checked_rejects_nan() {
        let r = Tensor::<f32>::from_vec_checked(&[2], vec![1.0, f32::NAN]);
        assert!(matches!(r, Err(crate::error::Error::NonFinite(_))));
    }

    #[test]
    fn axpy_and_norms() {
        let mut a = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        a.axpy(2.0, &b);
        assert_eq!(a.as_slice(), &[3.0, 4.0, 5.0]);
        assert!((global_l2_norm(&[a.clone()]) - 50f64.sqrt()).abs() < 1e-12);
        assert!((a.sq_norm() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn reshape_preserves_data() {
        let a = Tensor::<f32>::from_vec(&[2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let b = a.reshape(&[3, 2]).unwrap();
        assert_eq!(b.shape(), &[3, 2]);
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(a.reshape(&[4, 2]).is_err());
    }
}
