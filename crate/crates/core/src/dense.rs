//! Small dense matrices in column-major order and the counted kernels that
//! every algorithm above is built on.
//!
//! Counted kernels take a [`FlopCounter`] and add one unit per scalar
//! multiply-add (plain additions count as one unit as well). Copies,
//! comparisons and square roots are not counted.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Tally of multiply-add operations, split by named phase.
///
/// One counter belongs to one computation run; it is not shared between
/// threads.
#[derive(Debug, Default)]
pub struct FlopCounter {
    total: Cell<u64>,
    current: RefCell<Option<String>>,
    phases: RefCell<BTreeMap<String, u64>>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&self, n: u64) {
        self.total.set(self.total.get() + n);
        if let Some(name) = self.current.borrow().as_ref() {
            *self.phases.borrow_mut().entry(name.clone()).or_insert(0) += n;
        }
    }

    pub fn total(&self) -> u64 {
        self.total.get()
    }

    /// Operations recorded while `name` was the active phase.
    pub fn phase(&self, name: &str) -> u64 {
        self.phases.borrow().get(name).copied().unwrap_or(0)
    }

    pub fn phases(&self) -> Vec<(String, u64)> {
        self.phases.borrow().iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    /// Makes `name` the active phase and returns the previously active one.
    pub fn set_phase(&self, name: Option<&str>) -> Option<String> {
        self.current.replace(name.map(str::to_owned))
    }

    /// Runs `f` with `name` as the active phase, restoring the previous phase afterwards.
    pub fn in_phase<R>(&self, name: &str, f: impl FnOnce() -> R) -> R {
        let previous = self.set_phase(Some(name));
        let out = f();
        self.current.replace(previous);
        out
    }

    pub fn reset(&self) {
        self.total.set(0);
        self.phases.borrow_mut().clear();
    }
}

/// Dense real matrix stored column by column.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(12) {
            write!(f, " ")?;
            for j in 0..self.cols.min(12) {
                write!(f, " {:>11.4e}", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from column-major entries; all entries must be finite.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_col_major",
                expected: format!("{} entries", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of rows (convenient for literals in tests).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        Self::from_fn(m, n, |i, j| rows[i][j])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Single column built from a vector.
    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] += v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_fro(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Copy of rows `r0..r0+m` and columns `c0..c0+n`.
    pub fn block(&self, r0: usize, c0: usize, m: usize, n: usize) -> DenseMatrix {
        assert!(r0 + m <= self.rows && c0 + n <= self.cols, "block out of range");
        DenseMatrix::from_fn(m, n, |i, j| self.get(r0 + i, c0 + j))
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &DenseMatrix) {
        assert!(
            r0 + b.rows <= self.rows && c0 + b.cols <= self.cols,
            "set_block out of range"
        );
        for j in 0..b.cols {
            let dst = &mut self.data[(c0 + j) * self.rows + r0..(c0 + j) * self.rows + r0 + b.rows];
            dst.copy_from_slice(b.col(j));
        }
    }

    pub fn add_block(&mut self, r0: usize, c0: usize, b: &DenseMatrix) {
        assert!(
            r0 + b.rows <= self.rows && c0 + b.cols <= self.cols,
            "add_block out of range"
        );
        for j in 0..b.cols {
            let dst = &mut self.data[(c0 + j) * self.rows + r0..(c0 + j) * self.rows + r0 + b.rows];
            for (d, s) in dst.iter_mut().zip(b.col(j)) {
                *d += s;
            }
        }
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(Error::Shape {
                op: "vstack",
                expected: format!("{cols} columns"),
                got: format!("{} columns", bad.cols),
            });
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut out = DenseMatrix::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            out.set_block(r0, 0, p);
            r0 += p.rows;
        }
        Ok(out)
    }

    /// Rows `r0..r0+m`, all columns.
    pub fn row_range(&self, r0: usize, m: usize) -> DenseMatrix {
        self.block(r0, 0, m, self.cols)
    }
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn shape_err(op: &'static str, expected: String, got: String) -> Error {
    Error::Shape { op, expected, got }
}

/// `y += alpha * A * x`.
pub fn gemv(alpha: f64, a: &DenseMatrix, x: &[f64], y: &mut [f64], flops: &FlopCounter) -> Result<()> {
    if x.len() != a.cols || y.len() != a.rows {
        return Err(shape_err(
            "gemv",
            format!("x:{} y:{}", a.cols, a.rows),
            format!("x:{} y:{}", x.len(), y.len()),
        ));
    }
    for (j, &xj) in x.iter().enumerate() {
        let s = alpha * xj;
        for (yi, aij) in y.iter_mut().zip(a.col(j)) {
            *yi += aij * s;
        }
    }
    flops.add((a.rows * a.cols) as u64);
    Ok(())
}

/// `y += alpha * A^T * x`.
pub fn gemv_t(alpha: f64, a: &DenseMatrix, x: &[f64], y: &mut [f64], flops: &FlopCounter) -> Result<()> {
    if x.len() != a.rows || y.len() != a.cols {
        return Err(shape_err(
            "gemv_t",
            format!("x:{} y:{}", a.rows, a.cols),
            format!("x:{} y:{}", x.len(), y.len()),
        ));
    }
    for (j, yj) in y.iter_mut().enumerate() {
        *yj += alpha * dot_uncounted(a.col(j), x);
    }
    flops.add((a.rows * a.cols) as u64);
    Ok(())
}

/// Returns `A * x`.
pub fn matvec(a: &DenseMatrix, x: &[f64], flops: &FlopCounter) -> Result<Vec<f64>> {
    let mut y = vec![0.0; a.rows];
    gemv(1.0, a, x, &mut y, flops)?;
    Ok(y)
}

/// Returns `A^T * x`.
pub fn matvec_t(a: &DenseMatrix, x: &[f64], flops: &FlopCounter) -> Result<Vec<f64>> {
    let mut y = vec![0.0; a.cols];
    gemv_t(1.0, a, x, &mut y, flops)?;
    Ok(y)
}

/// Returns `A * B`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix, flops: &FlopCounter) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(shape_err(
            "matmul",
            format!("inner dimension {}", a.cols),
            format!("{}", b.rows),
        ));
    }
    let mut c = DenseMatrix::zeros(a.rows, b.cols);
    for j in 0..b.cols {
        let cj = &mut c.data[j * a.rows..(j + 1) * a.rows];
        for (l, &blj) in b.col(j).iter().enumerate() {
            if blj == 0.0 {
                continue;
            }
            for (ci, ail) in cj.iter_mut().zip(a.col(l)) {
                *ci += ail * blj;
            }
        }
    }
    flops.add((a.rows * a.cols * b.cols) as u64);
    Ok(c)
}

/// Returns `A^T * B`.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix, flops: &FlopCounter) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(shape_err(
            "matmul_tn",
            format!("{} rows", a.rows),
            format!("{} rows", b.rows),
        ));
    }
    let c = DenseMatrix::from_fn(a.cols, b.cols, |i, j| dot_uncounted(a.col(i), b.col(j)));
    flops.add((a.rows * a.cols * b.cols) as u64);
    Ok(c)
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64], flops: &FlopCounter) -> Result<()> {
    if x.len() != y.len() {
        return Err(shape_err("axpy", format!("{}", y.len()), format!("{}", x.len())));
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    flops.add(x.len() as u64);
    Ok(())
}

pub fn dot(x: &[f64], y: &[f64], flops: &FlopCounter) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err("dot", format!("{}", x.len()), format!("{}", y.len())));
    }
    flops.add(x.len() as u64);
    Ok(dot_uncounted(x, y))
}

#[inline]
pub(crate) fn dot_uncounted(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
