use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![S::zero(); n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }
}

/// Per-sample activation geometry: `channels × len`, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub len: usize,
}

impl Shape {
    pub const fn new(channels: usize, len: usize) -> Self {
        Self { channels, len }
    }

    pub const fn size(self) -> usize {
        self.channels * self.len
    }
}

/// A batch of equally shaped activations, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub n: usize,
    pub shape: Shape,
    pub data: Vec<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn zeros(n: usize, shape: Shape) -> Self {
        Self { n, shape, data: vec![S::zero(); n * shape.size()] }
    }

    pub fn from_samples(shape: Shape, samples: &[&[S]]) -> Result<Self> {
        let mut data = Vec::with_capacity(samples.len() * shape.size());
        for s in samples {
            if s.len() != shape.size() {
                return Err(Error::Shape(format!(
                    "sample of length {} for input of length {}",
                    s.len(),
                    shape.size()
                )));
            }
            data.extend_from_slice(s);
        }
        Ok(Self { n: samples.len(), shape, data })
    }

    pub fn sample(&self, i: usize) -> &[S] {
        let k = self.shape.size();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn samples(&self) -> std::slice::ChunksExact<'_, S> {
        self.data.chunks_exact(self.shape.size())
    }
}

/// Dot product with eight independent accumulators in a fixed combination order, so the
/// result is reproducible while the loop still vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
}

/// A strided read-only matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> MatRef<'a, S> {
    /// Row-major `rows × cols`.
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c <- a * b + beta * c` with `c` row-major `a.rows × b.cols`.
pub fn gemm<S: Scalar>(a: MatRef<'_, S>, b: MatRef<'_, S>, beta: S, c: &mut [S]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert!(a.span() <= a.data.len() && b.span() <= b.data.len(), "view out of bounds");
    assert_eq!(c.len(), a.rows * b.cols, "output size");
    if c.is_empty() {
        return;
    }
    // SAFETY: bounds are checked above and `c` is a unique borrow.
    unsafe {
        S::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            S::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sqrt()).collect();
        let mut c = vec![1.0; 8];
        // (2x3) * (3x4) + 2 * ones
        gemm(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 4), 2.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let naive: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum::<f64>() + 2.0;
                assert!((c[i * 4 + j] - naive).abs() < 1e-12);
            }
        }
        let mut ct = vec![0.0; 8];
        // (3x2)^T * (3x4)
        gemm(MatRef::new(&a, 3, 2).t(), MatRef::new(&b, 3, 4), 0.0, &mut ct);
        for i in 0..2 {
            for j in 0..4 {
                let naive: f64 = (0..3).map(|k| a[k * 2 + i] * b[k * 4 + j]).sum();
                assert!((ct[i * 4 + j] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
