//! Dense row-major arrays and the numeric kernels behind every primitive.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::AutodiffError;

/// Floating point element type. `f32` is the training default, `f64` is used
/// when gradients are checked numerically.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + MulAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Bytes per element in the checkpoint container.
    const WIDTH: usize;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_le(self, out: &mut Vec<u8>);

    fn from_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const WIDTH: usize = 4;

    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Real for f64 {
    const WIDTH: usize = 8;

    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Dense array with an explicit shape. A scalar has shape `[]`.
#[derive(Clone, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Array<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Array")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Real> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::BadData {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(
            shape.to_vec(),
            values.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
    }

    /// Matrix whose row `i` is the one-hot encoding of `ids[i]`.
    pub fn one_hot(ids: &[usize], width: usize) -> Self {
        let mut out = Self::zeros(&[ids.len(), width]);
        for (i, &id) in ids.iter().enumerate() {
            out.data[i * width + id] = T::one();
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a scalar-shaped array.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// `(rows, cols)` of a matrix; vectors of shape `[n]` are treated as `[1, n]`.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [c] => Some((1, *c)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    fn matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        self.dims2().ok_or(AutodiffError::Rank {
            op,
            shape: self.shape.clone(),
        })
    }

    fn checked(self, op: &'static str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(AutodiffError::NonFinite { op })
        }
    }

    fn map(&self, op: &'static str, f: impl Fn(T) -> T) -> Result<Self> {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
        .checked(op)
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(mismatch(op, &self.shape, &other.shape));
        }
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
        .checked(op)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        self.map("scale", |v| v * c)
    }

    pub fn offset(&self, c: T) -> Result<Self> {
        self.map("offset", |v| v + c)
    }

    pub fn exp(&self) -> Result<Self> {
        self.map("exp", T::exp)
    }

    pub fn log(&self) -> Result<Self> {
        self.map("log", T::ln)
    }

    pub fn tanh(&self) -> Result<Self> {
        self.map("tanh", T::tanh)
    }

    pub fn relu(&self) -> Result<Self> {
        self.map("relu", |v| if v > T::zero() { v } else { T::zero() })
    }

    /// Heaviside step: 1 where the input is positive, else 0.
    pub fn step(&self) -> Result<Self> {
        self.map("step", |v| if v > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sqrt(&self) -> Result<Self> {
        self.map("sqrt", T::sqrt)
    }

    pub fn recip(&self) -> Result<Self> {
        self.map("recip", T::recip)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(mismatch("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.matrix("matmul")?;
        let (k2, n) = other.matrix("matmul")?;
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(mismatch("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
        .checked("matmul")
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.matrix("transpose")?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "concat" })?;
        let (rows, _) = first.matrix("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.matrix("concat")?;
            if r != rows {
                return Err(mismatch("concat", &first.shape, &p.shape));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Self {
            shape: vec![rows, total],
            data: out,
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.matrix("slice_cols")?;
        if start > end || end > c {
            return Err(mismatch("slice_cols", &self.shape, &[start, end]));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(Self {
            shape: vec![r, w],
            data: out,
        })
    }

    /// Row lookup: output row `i` is `self[ids[i]]`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        let (r, c) = self.matrix("gather")?;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(AutodiffError::Index {
                    op: "gather",
                    index: id,
                    bound: r,
                });
            }
            out.extend_from_slice(&self.data[id * c..(id + 1) * c]);
        }
        Ok(Self {
            shape: vec![ids.len(), c],
            data: out,
        })
    }

    /// Adds row `i` of `self` into row `ids[i]` of a zero `[rows, cols]` matrix.
    pub fn scatter_add_rows(&self, ids: &[usize], rows: usize) -> Result<Self> {
        let (r, c) = self.matrix("scatter_add")?;
        if r != ids.len() {
            return Err(mismatch("scatter_add", &self.shape, &[ids.len()]));
        }
        let mut out = vec![T::zero(); rows * c];
        for (i, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(AutodiffError::Index {
                    op: "scatter_add",
                    index: id,
                    bound: rows,
                });
            }
            for (o, &v) in out[id * c..(id + 1) * c]
                .iter_mut()
                .zip(&self.data[i * c..(i + 1) * c])
            {
                *o += v;
            }
        }
        Self {
            shape: vec![rows, c],
            data: out,
        }
        .checked("scatter_add")
    }

    fn row_broadcast(
        &self,
        row: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let (r, c) = self.matrix(op)?;
        if row.data.len() != c || row.dims2().map(|d| d.0) != Some(1) {
            return Err(mismatch(op, &self.shape, &row.shape));
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(self.data[i * c + j], row.data[j]));
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
        .checked(op)
    }

    fn col_broadcast(
        &self,
        col: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let (r, c) = self.matrix(op)?;
        if col.shape != [r, 1] {
            return Err(mismatch(op, &self.shape, &col.shape));
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let v = col.data[i];
            for j in 0..c {
                out.push(f(self.data[i * c + j], v));
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
        .checked(op)
    }

    /// Matrix plus a row vector repeated down every row.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        self.row_broadcast(row, "add_row", |a, b| a + b)
    }

    pub fn mul_row(&self, row: &Self) -> Result<Self> {
        self.row_broadcast(row, "mul_row", |a, b| a * b)
    }

    /// Matrix plus a `[rows, 1]` column repeated across every column.
    pub fn add_col(&self, col: &Self) -> Result<Self> {
        self.col_broadcast(col, "add_col", |a, b| a + b)
    }

    pub fn mul_col(&self, col: &Self) -> Result<Self> {
        self.col_broadcast(col, "mul_col", |a, b| a * b)
    }

    /// Sum over rows (axis 0), giving `[1, cols]`.
    pub fn sum_rows(&self) -> Result<Self> {
        let (r, c) = self.matrix("sum_rows")?;
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        Self {
            shape: vec![1, c],
            data: out,
        }
        .checked("sum_rows")
    }

    /// Sum over columns (axis 1), giving `[rows, 1]`.
    pub fn sum_cols(&self) -> Result<Self> {
        let (r, c) = self.matrix("sum_cols")?;
        let out = (0..r)
            .map(|i| self.data[i * c..(i + 1) * c].iter().copied().sum())
            .collect();
        Self {
            shape: vec![r, 1],
            data: out,
        }
        .checked("sum_cols")
    }

    pub fn sum(&self) -> Result<Self> {
        Self::scalar(self.data.iter().copied().sum()).checked("sum")
    }

    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Self> {
        if self.data.len() != 1 {
            return Err(mismatch("broadcast", &self.shape, shape));
        }
        Ok(Self::full(shape, self.data[0]))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (r, c) = self.matrix("softmax")?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut total = T::zero();
            for &v in row {
                let e = (v - max).exp();
                total += e;
                out.push(e);
            }
            for o in &mut out[start..] {
                *o = *o / total;
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
        .checked("softmax")
    }

    /// `sum_i weights[i] * -log softmax(self[i])[targets[i]]`.
    pub fn cross_entropy(&self, targets: &[usize], weights: &[T]) -> Result<Self> {
        let (r, c) = self.matrix("cross_entropy")?;
        if targets.len() != r || weights.len() != r {
            return Err(mismatch("cross_entropy", &self.shape, &[targets.len()]));
        }
        let mut total = T::zero();
        for i in 0..r {
            let t = targets[i];
            if t >= c {
                return Err(AutodiffError::Index {
                    op: "cross_entropy",
                    index: t,
                    bound: c,
                });
            }
            if weights[i] == T::zero() {
                continue;
            }
            let row = &self.data[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += weights[i] * (lse - row[t]);
        }
        Self::scalar(total).checked("cross_entropy")
    }

    /// Index of the maximum entry of each row; the first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let (r, c) = match self.dims2() {
            Some(d) => d,
            None => return vec![],
        };
        (0..r)
            .map(|i| {
                let row = &self.data[i * c..(i + 1) * c];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}
