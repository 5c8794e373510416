//! Dense row-major `f64` tensors and the numeric kernels the graph is built on.
//!
//! Only ranks 0, 1 and 2 are exercised by the graph primitives. Rank-2
//! tensors are read as `(batch, features)`.

use std::fmt;

use crate::error::{AutodiffError, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a `(rows.len(), width)` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(AutodiffError::DataLength {
                    shape: vec![rows.len(), width],
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), width], data)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor, whatever its rank.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    /// Replaces the values, keeping the shape.
    pub fn assign(&mut self, other: &Tensor) -> Result<()> {
        if other.shape != self.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
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

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    /// `self += factor * other`, in place.
    pub fn axpy(&mut self, factor: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "axpy",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.as_matrix("transpose")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (n, k) = self.as_matrix("matmul")?;
        let (k2, m) = rhs.as_matrix("matmul")?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Adds a length-`d` vector to every row of an `(n, d)` matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (n, d) = self.as_matrix("add_row")?;
        if row.shape != [d] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for i in 0..n {
            for (v, &b) in data[i * d..(i + 1) * d].iter_mut().zip(&row.data) {
                *v += b;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Column sums of an `(n, d)` matrix, shape `(d)`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (n, d) = self.as_matrix("sum_rows")?;
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, &v) in out.iter_mut().zip(&self.data[i * d..(i + 1) * d]) {
                *o += v;
            }
        }
        Ok(Tensor::vector(out))
    }

    /// Row sums of an `(n, d)` matrix, shape `(n, 1)`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let (n, d) = self.as_matrix("sum_cols")?;
        let data = (0..n)
            .map(|i| self.data[i * d..(i + 1) * d].iter().sum())
            .collect();
        Ok(Tensor {
            shape: vec![n, 1],
            data,
        })
    }

    pub fn broadcast_rows(&self, n: usize) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(AutodiffError::Rank {
                op: "broadcast_rows",
                shape: self.shape.clone(),
            });
        }
        let d = self.data.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Ok(Tensor {
            shape: vec![n, d],
            data,
        })
    }

    pub fn broadcast_cols(&self, d: usize) -> Result<Tensor> {
        if self.rank() != 2 || self.shape[1] != 1 {
            return Err(AutodiffError::Rank {
                op: "broadcast_cols",
                shape: self.shape.clone(),
            });
        }
        let n = self.shape[0];
        let mut data = Vec::with_capacity(n * d);
        for &v in &self.data {
            data.extend(std::iter::repeat_n(v, d));
        }
        Ok(Tensor {
            shape: vec![n, d],
            data,
        })
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let n = parts.first().map_or(0, |t| t.rows());
        let mut widths = Vec::with_capacity(parts.len());
        for t in parts {
            if t.rank() != 2 || t.shape[0] != n {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            widths.push(t.shape[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (t, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&t.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Tensor {
            shape: vec![n, total],
            data,
        })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, d) = self.as_matrix("slice_cols")?;
        if start + len > d {
            return Err(AutodiffError::Slice {
                start,
                len,
                width: d,
            });
        }
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&self.data[i * d + start..i * d + start + len]);
        }
        Ok(Tensor {
            shape: vec![n, len],
            data,
        })
    }

    pub(crate) fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(AutodiffError::Rank {
                op,
                shape: self.shape.clone(),
            }),
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow for large |x|
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
        assert!(b.matmul(&a).is_err());
    }

    #[test]
    fn concat_then_slice() {
        let a = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(c.slice_cols(1, 2).unwrap(), b);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }
}
