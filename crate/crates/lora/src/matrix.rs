use rand::Rng;

use crate::error::{shape, LoraError};
use crate::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LoraError> {
        if rows == 0 || cols == 0 {
            return Err(LoraError::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LoraError::DataLength {
                len: data.len(),
                expected: rows * cols,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LoraError::NonFiniteEntry { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, LoraError> {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self, LoraError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(shape("from_rows", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    /// Entries drawn from U(-scale, scale).
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: T, rng: &mut R) -> Result<Self, LoraError> {
        let s = scale.to_f64().unwrap_or(0.0);
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.gen_range(-1.0..=1.0) * s))
            .collect();
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>, LoraError> {
        if x.len() != self.cols {
            return Err(shape(
                "matvec",
                format!("{}x{} times vector of length {}", self.rows, self.cols, x.len()),
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ x` without materialising the transpose.
    pub fn matvec_t(&self, x: &[T]) -> Result<Vec<T>, LoraError> {
        if x.len() != self.rows {
            return Err(shape(
                "matvec_t",
                format!("({}x{})ᵀ times vector of length {}", self.rows, self.cols, x.len()),
            ));
        }
        let mut out = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o = *o + a * xr;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LoraError> {
        if self.cols != other.rows {
            return Err(shape(
                "matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut data = vec![T::zero(); self.rows * other.cols];
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self.get(i, p);
                let out = &mut data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out.iter_mut().zip(other.row(p)) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, LoraError> {
        if self.shape() != other.shape() {
            return Err(shape(
                "add",
                format!("{}x{} plus {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            data: self.data.iter().map(|&v| v * s).collect(),
            ..*self
        }
    }

    /// `self += s · u vᵀ`.
    pub(crate) fn add_outer(&mut self, s: T, u: &[T], v: &[T]) {
        debug_assert_eq!((u.len(), v.len()), self.shape());
        for (r, &ur) in u.iter().enumerate() {
            let k = s * ur;
            let cols = self.cols;
            for (o, &vc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(v) {
                *o = *o + k * vc;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max)
        })
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(
            a.matmul(&b).unwrap(),
            Matrix::from_rows(&[[2.0, 1.0], [4.0, 3.0]]).unwrap()
        );
        assert_eq!(a.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
        assert_eq!(a.transpose().get(0, 1), 3.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(Matrix::<f64>::zeros(0, 3), Err(LoraError::EmptyMatrix { .. })));
        assert!(Matrix::new(2, 2, vec![1.0f64; 3]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::NAN]).is_err());
        let a = Matrix::<f64>::zeros(2, 3).unwrap();
        assert!(a.matmul(&a).is_err());
        assert!(a.matvec(&[1.0]).is_err());
    }

    #[test]
    fn works_in_f32() {
        let a = Matrix::<f32>::from_rows(&[[1.0f32, 2.0]]).unwrap();
        assert_eq!(a.matvec(&[2.0, 0.5]).unwrap(), vec![3.0f32]);
    }
}
