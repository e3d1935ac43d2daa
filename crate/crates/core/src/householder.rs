//! Householder triangularization of tall matrices and the orthogonal
//! complements derived from it.
//!
//! Reflector signs are chosen to avoid cancellation; afterwards a diagonal
//! sign pass makes the diagonal of `R` non-negative. With that convention
//! the first columns of the accumulated orthogonal factor coincide with the
//! input whenever the input is isometric, so a single application of `Q^T`
//! yields both the projection coefficients (leading rows) and the
//! complement part (trailing rows).

use crate::dense::{dot_uncounted, DenseMatrix, FlopCounter};
use crate::error::{Error, Result};

/// Tolerance used to decide whether a matrix is isometric.
pub const ISOMETRY_TOL: f64 = 1e-12;

/// Product of Householder reflections `Q = H_1 ... H_k D`, where `D` is the
/// diagonal sign fix acting on the first `k` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectorStack {
    dim: usize,
    /// Reflector `j` acts on coordinates `j..dim`; its first entry is 1.
    vectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
    signs: Vec<f64>,
}

impl ReflectorStack {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of reflections.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// Applies `Q^T` in place.
    pub fn apply_qt_in_place(&self, x: &mut [f64], flops: &FlopCounter) -> Result<()> {
        self.check_dim(x.len())?;
        for (j, (v, &beta)) in self.vectors.iter().zip(&self.betas).enumerate() {
            reflect(v, beta, &mut x[j..], flops);
        }
        for (xj, s) in x.iter_mut().zip(&self.signs) {
            *xj *= s;
        }
        Ok(())
    }

    /// Applies `Q` in place.
    pub fn apply_q_in_place(&self, y: &mut [f64], flops: &FlopCounter) -> Result<()> {
        self.check_dim(y.len())?;
        for (yj, s) in y.iter_mut().zip(&self.signs) {
            *yj *= s;
        }
        for (j, (v, &beta)) in self.vectors.iter().zip(&self.betas).enumerate().rev() {
            reflect(v, beta, &mut y[j..], flops);
        }
        Ok(())
    }

    /// Returns `Q^T x`; the first `len()` entries are the coefficient part,
    /// the remaining ones the complement part.
    pub fn apply_q_transpose(&self, x: &[f64], flops: &FlopCounter) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.apply_qt_in_place(&mut out, flops)?;
        Ok(out)
    }

    pub fn apply_q(&self, y: &[f64], flops: &FlopCounter) -> Result<Vec<f64>> {
        let mut out = y.to_vec();
        self.apply_q_in_place(&mut out, flops)?;
        Ok(out)
    }

    /// Applies `Q^T` to every column of `a`.
    pub fn apply_q_transpose_mat(&self, a: &DenseMatrix, flops: &FlopCounter) -> Result<DenseMatrix> {
        let mut out = a.clone();
        for j in 0..out.cols() {
            self.apply_qt_in_place(out.col_mut(j), flops)?;
        }
        Ok(out)
    }

    /// First `n` columns of `Q`, explicitly.
    pub fn leading_columns(&self, n: usize, flops: &FlopCounter) -> Result<DenseMatrix> {
        let mut q = DenseMatrix::zeros(self.dim, n);
        for j in 0..n {
            q.set(j, j, 1.0);
            self.apply_q_in_place(q.col_mut(j), flops)?;
        }
        Ok(q)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(Error::Shape {
                op: "reflector stack",
                expected: format!("vector of length {}", self.dim),
                got: format!("length {n}"),
            });
        }
        Ok(())
    }
}

#[inline]
fn reflect(v: &[f64], beta: f64, x: &mut [f64], flops: &FlopCounter) {
    if beta == 0.0 {
        return;
    }
    let s = beta * dot_uncounted(v, x);
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
    flops.add(2 * v.len() as u64);
}

/// Triangularizes with `min(m, n)` reflections; returns the stack and the
/// upper-trapezoidal `min(m, n) x n` factor.
pub(crate) fn triangularize_any(a: &DenseMatrix, flops: &FlopCounter) -> Result<(ReflectorStack, DenseMatrix)> {
    if !a.is_finite() {
        return Err(Error::NonFinite("householder input"));
    }
    let (m, n) = a.shape();
    let steps = m.min(n);
    let mut work = a.clone();
    let mut vectors = Vec::with_capacity(steps);
    let mut betas = Vec::with_capacity(steps);
    let mut signs = Vec::with_capacity(steps);

    for j in 0..steps {
        let x = &work.col(j)[j..];
        let tail: f64 = x[1..].iter().map(|v| v * v).sum();
        flops.add(x.len() as u64);
        let x0 = x[0];
        let (v, beta, diag) = if tail == 0.0 {
            let mut v = vec![0.0; x.len()];
            v[0] = 1.0;
            (v, 0.0, x0)
        } else {
            let alpha = (x0 * x0 + tail).sqrt();
            let sign = if x0 >= 0.0 { 1.0 } else { -1.0 };
            let v0 = x0 + sign * alpha;
            let mut v: Vec<f64> = x.iter().map(|xi| xi / v0).collect();
            v[0] = 1.0;
            let beta = 2.0 / dot_uncounted(&v, &v);
            (v, beta, -sign * alpha)
        };
        // Column j is now (diag, 0, ..., 0).
        {
            let col = work.col_mut(j);
            col[j] = diag;
            col[j + 1..].iter_mut().for_each(|c| *c = 0.0);
        }
        for c in j + 1..n {
            reflect(&v, beta, &mut work.col_mut(c)[j..], flops);
        }
        signs.push(if diag < 0.0 { -1.0 } else { 1.0 });
        vectors.push(v);
        betas.push(beta);
    }

    let r = DenseMatrix::from_fn(steps, n, |i, j| if i <= j { signs[i] * work.get(i, j) } else { 0.0 });
    Ok((
        ReflectorStack {
            dim: m,
            vectors,
            betas,
            signs,
        },
        r,
    ))
}

/// Householder triangularization `Q^T A = [R; 0]` of an `m x n` matrix with
/// `m >= n`; `R` is `n x n` upper triangular with non-negative diagonal.
pub fn householder_triangularize(a: &DenseMatrix, flops: &FlopCounter) -> Result<(ReflectorStack, DenseMatrix)> {
    if a.rows() < a.cols() {
        return Err(Error::TooFewRows {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    triangularize_any(a, flops)
}

/// Upper-triangular factor of a thin QR decomposition, padded with zero
/// rows to `n x n` when `a` has fewer rows than columns.
pub fn r_factor(a: &DenseMatrix, flops: &FlopCounter) -> Result<DenseMatrix> {
    let n = a.cols();
    let (_, r) = triangularize_any(a, flops)?;
    if r.rows() == n {
        return Ok(r);
    }
    let mut out = DenseMatrix::zeros(n, n);
    out.set_block(0, 0, &r);
    Ok(out)
}

/// Thin QR `A = Q R` with `Q` isometric `m x n` and `R` upper triangular.
pub fn thin_qr(a: &DenseMatrix, flops: &FlopCounter) -> Result<(DenseMatrix, DenseMatrix)> {
    let (stack, r) = householder_triangularize(a, flops)?;
    let q = stack.leading_columns(a.cols(), flops)?;
    Ok((q, r))
}

/// Largest entry of `|Q^T Q - I|`.
pub fn isometry_defect(q: &DenseMatrix) -> f64 {
    let n = q.cols();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let g = dot_uncounted(q.col(i), q.col(j));
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// Orthogonal complement of an isometric `m x n` matrix `Q`, represented by
/// the reflections that triangularize it: `[Q P]` is orthogonal.
#[derive(Clone, Debug)]
pub struct Complement {
    stack: ReflectorStack,
    n: usize,
}

impl Complement {
    /// Number of complement columns, `m - n`.
    pub fn dim(&self) -> usize {
        self.stack.dim() - self.n
    }

    pub fn stack(&self) -> &ReflectorStack {
        &self.stack
    }

    /// `P^T x` for an `m`-vector `x`.
    pub fn project(&self, x: &[f64], flops: &FlopCounter) -> Result<Vec<f64>> {
        let full = self.stack.apply_q_transpose(x, flops)?;
        Ok(full[self.n..].to_vec())
    }

    /// `P y` for an `(m - n)`-vector `y`.
    pub fn expand(&self, y: &[f64], flops: &FlopCounter) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::Shape {
                op: "complement expand",
                expected: format!("{}", self.dim()),
                got: format!("{}", y.len()),
            });
        }
        let mut full = vec![0.0; self.stack.dim()];
        full[self.n..].copy_from_slice(y);
        self.stack.apply_q_in_place(&mut full, flops)?;
        Ok(full)
    }

    /// Explicit `m x (m - n)` complement matrix.
    pub fn to_dense(&self, flops: &FlopCounter) -> Result<DenseMatrix> {
        let m = self.stack.dim();
        let mut p = DenseMatrix::zeros(m, self.dim());
        for j in 0..self.dim() {
            let mut e = vec![0.0; self.dim()];
            e[j] = 1.0;
            p.col_mut(j).copy_from_slice(&self.expand(&e, flops)?);
        }
        Ok(p)
    }
}

/// Extends an isometric matrix to an orthonormal basis of the full space.
pub fn extend_to_orthonormal(q: &DenseMatrix, flops: &FlopCounter) -> Result<Complement> {
    if q.rows() < q.cols() {
        return Err(Error::TooFewRows {
            rows: q.rows(),
            cols: q.cols(),
        });
    }
    let deviation = isometry_defect(q);
    if !(deviation <= ISOMETRY_TOL) {
        return Err(Error::NotIsometric { deviation });
    }
    let (stack, _) = triangularize_any(q, flops)?;
    Ok(Complement { stack, n: q.cols() })
}

/// Least-squares solution of `A X = B` for `A` with full column rank.
/// Returns `None` when a diagonal entry of `R` falls below `rank_tol`
/// relative to the largest one.
pub fn solve_least_squares(
    a: &DenseMatrix,
    b: &DenseMatrix,
    rank_tol: f64,
    flops: &FlopCounter,
) -> Result<Option<DenseMatrix>> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            op: "least squares",
            expected: format!("{} rows", a.rows()),
            got: format!("{} rows", b.rows()),
        });
    }
    if a.rows() < a.cols() {
        return Ok(None);
    }
    let n = a.cols();
    let (stack, r) = triangularize_any(a, flops)?;
    let scale = (0..n).fold(0.0f64, |m, i| m.max(r.get(i, i).abs()));
    if n > 0 && (0..n).any(|i| r.get(i, i) <= rank_tol * scale) {
        return Ok(None);
    }
    let qtb = stack.apply_q_transpose_mat(b, flops)?;
    let mut x = DenseMatrix::zeros(n, b.cols());
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut s = qtb.get(i, c);
            for j in i + 1..n {
                s -= r.get(i, j) * x.get(j, c);
            }
            x.set(i, c, s / r.get(i, i));
        }
    }
    flops.add((n * n * b.cols()) as u64 / 2);
    Ok(Some(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{matmul, norm2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Dense reconstruction `Q [R; 0]` by applying `Q` to padded columns of `R`.
    fn reconstruct(stack: &ReflectorStack, r: &DenseMatrix) -> DenseMatrix {
        let f = FlopCounter::new();
        let m = stack.dim();
        let mut out = DenseMatrix::zeros(m, r.cols());
        for j in 0..r.cols() {
            let mut col = vec![0.0; m];
            col[..r.rows()].copy_from_slice(r.col(j));
            out.col_mut(j).copy_from_slice(&stack.apply_q(&col, &f).unwrap());
        }
        out
    }

    #[test]
    fn identity_columns_give_identity_r() {
        let f = FlopCounter::new();
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let (stack, r) = householder_triangularize(&a, &f).unwrap();
        assert_eq!(r, DenseMatrix::identity(2));
        let x = [0.3, -1.2, 4.5];
        assert_eq!(stack.apply_q_transpose(&x, &f).unwrap(), x.to_vec());
    }

    #[test]
    fn single_column_norm() {
        let f = FlopCounter::new();
        let a = DenseMatrix::from_rows(&[&[3.0], &[4.0]]);
        let (_, r) = householder_triangularize(&a, &f).unwrap();
        assert!((r.get(0, 0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction() {
        let a = random(6, 3, 11);
        let f = FlopCounter::new();
        let (stack, r) = householder_triangularize(&a, &f).unwrap();
        for i in 0..3 {
            assert!(r.get(i, i) >= 0.0);
            for j in 0..i {
                assert_eq!(r.get(i, j), 0.0);
            }
        }
        assert!(reconstruct(&stack, &r).sub(&a).max_abs() <= 1e-13);
    }

    #[test]
    fn isometric_input_gives_identity_and_coinciding_columns() {
        let f = FlopCounter::new();
        let (q, _) = thin_qr(&random(9, 4, 3), &f).unwrap();
        let (stack, r) = householder_triangularize(&q, &f).unwrap();
        assert!(r.sub(&DenseMatrix::identity(4)).max_abs() <= 1e-12);
        let lead = stack.leading_columns(4, &f).unwrap();
        assert!(lead.sub(&q).max_abs() <= 1e-12);
    }

    #[test]
    fn range_membership_leaves_empty_tail() {
        let f = FlopCounter::new();
        let (q, _) = thin_qr(&random(8, 3, 5), &f).unwrap();
        let (stack, _) = householder_triangularize(&q, &f).unwrap();
        let x = crate::dense::matvec(&q, &[0.7, -0.1, 2.0], &f).unwrap();
        let out = stack.apply_q_transpose(&x, &f).unwrap();
        assert!(out[3..].iter().all(|v| v.abs() <= 1e-13));
        assert!((out[0] - 0.7).abs() < 1e-13 && (out[2] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn apply_preserves_norm() {
        let f = FlopCounter::new();
        let (stack, _) = householder_triangularize(&random(7, 4, 8), &f).unwrap();
        let x: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let y = stack.apply_q_transpose(&x, &f).unwrap();
        assert!((norm2(&y) - norm2(&x)).abs() <= 1e-13 * norm2(&x));
        assert!(stack.apply_q_transpose(&x[..3], &f).is_err());
    }

    #[test]
    fn complement_of_first_unit_vector() {
        let f = FlopCounter::new();
        let q = DenseMatrix::from_rows(&[&[1.0], &[0.0]]);
        let p = extend_to_orthonormal(&q, &f).unwrap().to_dense(&f).unwrap();
        assert!(p.get(0, 0).abs() < 1e-15);
        assert!((p.get(1, 0).abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn complement_in_two_dimensions() {
        let f = FlopCounter::new();
        let s = 0.5f64.sqrt();
        let q = DenseMatrix::from_rows(&[&[s], &[s]]);
        let p = extend_to_orthonormal(&q, &f).unwrap().to_dense(&f).unwrap();
        let sign = p.get(0, 0).signum();
        assert!((p.get(0, 0) - sign * s).abs() < 1e-15);
        assert!((p.get(1, 0) + sign * s).abs() < 1e-15);
    }

    #[test]
    fn complement_identities() {
        let f = FlopCounter::new();
        let (q, _) = thin_qr(&random(8, 3, 21), &f).unwrap();
        let c = extend_to_orthonormal(&q, &f).unwrap();
        let p = c.to_dense(&f).unwrap();
        assert_eq!(p.shape(), (8, 5));
        assert!(
            crate::dense::matmul_tn(&p, &p, &f)
                .unwrap()
                .sub(&DenseMatrix::identity(5))
                .max_abs()
                <= 1e-12
        );
        assert!(crate::dense::matmul_tn(&p, &q, &f).unwrap().max_abs() <= 1e-12);
        let qqt = matmul(&q, &q.transpose(), &f).unwrap();
        let ppt = matmul(&p, &p.transpose(), &f).unwrap();
        let mut sum = qqt.clone();
        sum.add_block(0, 0, &ppt);
        assert!(sum.sub(&DenseMatrix::identity(8)).max_abs() <= 1e-12);
    }

    #[test]
    fn errors() {
        let f = FlopCounter::new();
        assert!(matches!(
            householder_triangularize(&DenseMatrix::zeros(2, 3), &f),
            Err(Error::TooFewRows { .. })
        ));
        let mut bad = DenseMatrix::zeros(3, 1);
        bad.set(0, 0, f64::INFINITY);
        assert!(matches!(householder_triangularize(&bad, &f), Err(Error::NonFinite(_))));
        let not_iso = DenseMatrix::from_rows(&[&[2.0], &[0.0]]);
        assert!(matches!(
            extend_to_orthonormal(&not_iso, &f),
            Err(Error::NotIsometric { .. })
        ));
    }

    #[test]
    fn least_squares_detects_rank_deficiency() {
        let f = FlopCounter::new();
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        let b = DenseMatrix::from_rows(&[&[1.0], &[1.0], &[1.0]]);
        assert!(solve_least_squares(&a, &b, 1e-12, &f).unwrap().is_none());
        let a = random(5, 2, 1);
        let x = DenseMatrix::from_rows(&[&[1.5], &[-2.0]]);
        let b = matmul(&a, &x, &f).unwrap();
        let sol = solve_least_squares(&a, &b, 1e-12, &f).unwrap().unwrap();
        assert!(sol.sub(&x).max_abs() < 1e-13);
    }
}
