use crate::error::{Error, Result};

/// Element type for tensors: `f32` in production training, `f64` in
/// gradient checks and oracle tests.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossless-enough cast from `f64` into the working scalar type.
pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    num_traits::cast(x).expect("f64 -> scalar cast")
}

/// Dense N-dimensional array of reals with explicit shape.
///
/// Data is flat row-major; 4-D image tensors are laid out
/// `[batch, height, width, channels]`. Constructors reject empty axes,
/// shape/length mismatches and non-finite elements, so a `Tensor` obtained
/// from public operations always holds finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a shape and row-major data, validating the invariants.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dimension(
                "shape",
                "all dimensions >= 1",
                format!("{shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dimension(
                "data length",
                expected,
                data.len(),
            ));
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Tensor whose elements are produced from their flat index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Reinterprets the same data under a new shape of equal volume.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let volume: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || volume != self.data.len() {
            return Err(Error::dimension(
                "reshape volume",
                self.data.len(),
                format!("{shape:?} ({volume})"),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (index, &x) in self.data.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: context.to_string(),
                    index,
                    value: x.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    /// Elementwise map into a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Flat index of `[n, i, j, c]` in a rank-4 tensor.
    #[inline]
    pub fn idx4(&self, n: usize, i: usize, j: usize, c: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + i) * self.shape[2] + j) * self.shape[3] + c
    }

    /// Inner product with another tensor of identical shape.
    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::dimension(
                "dot shapes",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Casts every element to `f64`.
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.to_f64().unwrap()).collect(),
        }
    }

    /// Casts every element to `f32`.
    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.to_f64().unwrap() as f32).collect(),
        }
    }
}

/// Checks that two tensors share a shape, naming the axis that differs.
pub(crate) fn expect_same_shape<T: Scalar>(
    what: &str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    if a.shape() != b.shape() {
        let axis = a
            .shape()
            .iter()
            .zip(b.shape())
            .position(|(x, y)| x != y)
            .map(|i| format!("{what} axis {i}"))
            .unwrap_or_else(|| format!("{what} rank"));
        return Err(Error::dimension(
            axis,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_volume() {
        let err = Tensor::new(vec![2, 3], vec![0.0f64; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        assert!(Tensor::new(vec![2, 3], vec![0.0f64; 6]).is_ok());
    }

    #[test]
    fn new_rejects_zero_axis() {
        let err = Tensor::new(vec![2, 0], vec![0.0f64; 0]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new(vec![3], vec![1.0, f64::NAN, 0.0]).unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn idx4_is_row_major_nhwc() {
        let t = Tensor::<f64>::zeros(&[2, 3, 4, 5]);
        assert_eq!(t.idx4(0, 0, 0, 0), 0);
        assert_eq!(t.idx4(0, 0, 0, 4), 4);
        assert_eq!(t.idx4(0, 0, 1, 0), 5);
        assert_eq!(t.idx4(0, 1, 0, 0), 20);
        assert_eq!(t.idx4(1, 0, 0, 0), 60);
        assert_eq!(t.idx4(1, 2, 3, 4), 119);
    }

    #[test]
    fn reshape_preserves_volume() {
        let t = Tensor::new(vec![2, 6], (0..12).map(|i| i as f64).collect()).unwrap();
        let r = t.reshaped(&[3, 4]).unwrap();
        assert_eq!(r.shape(), &[3, 4]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[5, 2]).is_err());
    }
}
