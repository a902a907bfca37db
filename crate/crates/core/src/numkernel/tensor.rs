use super::{KernelError, Scalar};

/// Reduction direction for [`Tensor::sum_axis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Collapse rows: `m x n -> 1 x n`.
    Rows,
    /// Collapse columns: `m x n -> m x 1`.
    Cols,
}

/// Row-major dense tensor. Arithmetic is defined on rank-2 tensors only.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn mismatch<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

impl<T: Scalar> Tensor<T> {
    /// Validates shape, length and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, KernelError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(KernelError::InvalidShape(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(KernelError::ShapeMismatch {
                op: "new",
                left: shape,
                right: vec![data.len()],
            });
        }
        let t = Tensor { shape, data };
        t.ensure_finite("new")?;
        Ok(t)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, KernelError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "tensor extents must be positive");
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::full(rows, cols, T::zero())
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor::full(rows, cols, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(1, 1, value)
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "tensor extents must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Same-shape tensor of zeros.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> Result<T, KernelError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(KernelError::NotScalar(self.shape.clone()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<(), KernelError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(KernelError::NonFinite { op })
        }
    }

    fn ensure_matrix(&self, op: &'static str) -> Result<(), KernelError> {
        if self.shape.len() == 2 {
            Ok(())
        } else {
            Err(KernelError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![0, 0],
            })
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self, KernelError> {
        if self.shape != other.shape {
            return Err(mismatch(op, self, other));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, KernelError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, KernelError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self, KernelError> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn transpose(&self) -> Result<Self, KernelError> {
        self.ensure_matrix("transpose")?;
        let (m, n) = (self.rows(), self.cols());
        Ok(Tensor::from_fn(n, m, |i, j| self.data[j * n + i]))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self, KernelError> {
        self.ensure_matrix("matmul")?;
        other.ensure_matrix("matmul")?;
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        if other.rows() != k {
            return Err(mismatch("matmul", self, other));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self, KernelError> {
        self.ensure_matrix("matmul_tn")?;
        other.ensure_matrix("matmul_tn")?;
        let (k, m, n) = (self.rows(), self.cols(), other.cols());
        if other.rows() != k {
            return Err(mismatch("matmul_tn", self, other));
        }
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let b_row = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = self.data[p * m + i];
                if a == T::zero() {
                    continue;
                }
                let row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self, KernelError> {
        self.ensure_matrix("matmul_nt")?;
        other.ensure_matrix("matmul_nt")?;
        let (m, k, n) = (self.rows(), self.cols(), other.rows());
        if other.cols() != k {
            return Err(mismatch("matmul_nt", self, other));
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc = acc + a * b;
                }
                out.push(acc);
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self, KernelError> {
        let first = parts
            .first()
            .ok_or_else(|| KernelError::InvalidArgument("concat_rows of nothing".into()))?;
        let cols = first.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for part in parts {
            part.ensure_matrix("concat_rows")?;
            if part.cols() != cols {
                return Err(mismatch("concat_rows", first, part));
            }
            rows += part.rows();
            data.extend_from_slice(&part.data);
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    pub fn sum_axis(&self, axis: Axis) -> Result<Self, KernelError> {
        self.ensure_matrix("sum_axis")?;
        let (m, n) = (self.rows(), self.cols());
        Ok(match axis {
            Axis::Rows => Tensor::from_fn(1, n, |_, j| (0..m).map(|i| self.data[i * n + j]).sum()),
            Axis::Cols => Tensor::from_fn(m, 1, |i, _| self.row(i).iter().copied().sum()),
        })
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn elu(&self) -> Self {
        self.map(|x| if x > T::zero() { x } else { x.exp_m1() })
    }

    pub fn logistic(&self) -> Self {
        self.map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    /// Softmax of each row, shifted by the row maximum.
    pub fn row_softmax(&self) -> Result<Self, KernelError> {
        self.ensure_matrix("row_softmax")?;
        let n = self.cols();
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows() {
            let row = self.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = data.len();
            data.extend(row.iter().map(|&v| (v - max).exp()));
            let total: T = data[start..].iter().copied().sum();
            for v in &mut data[start..start + n] {
                *v = *v / total;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }
}
