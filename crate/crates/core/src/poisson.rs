//! Five-point finite differences for the Poisson equation on the L-shaped
//! domain `(0,1)^2 \ [1/2,1]^2` with Dirichlet boundary conditions.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Largest dimension for which a dense inverse is formed.
pub const DENSE_LIMIT: usize = 12_000;

#[derive(Clone, Debug)]
pub struct PoissonProblem {
    /// Intervals per coordinate direction.
    pub grid: usize,
    /// Interior points in row-major order (`y` outer, `x` inner).
    pub points: Vec<[f64; 2]>,
    /// Grid indices `(i, j)` of the points.
    pub indices: Vec<(usize, usize)>,
    /// Sparse rows `(column, value)` of the matrix.
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Whether the grid point `(i, j)` lies strictly inside the L-shape.
pub fn is_interior(grid: usize, i: usize, j: usize) -> bool {
    let half = grid / 2;
    i > 0 && j > 0 && i < grid && j < grid && (i < half || j < half)
}

pub fn assemble_poisson_lshape(grid: usize) -> Result<PoissonProblem> {
    if grid < 4 || !grid.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "grid must be even and at least 4, got {grid}"
        )));
    }
    let h = 1.0 / grid as f64;
    let mut number = vec![usize::MAX; (grid + 1) * (grid + 1)];
    let mut points = Vec::new();
    let mut indices = Vec::new();
    for j in 0..=grid {
        for i in 0..=grid {
            if is_interior(grid, i, j) {
                number[j * (grid + 1) + i] = points.len();
                points.push([i as f64 * h, j as f64 * h]);
                indices.push((i, j));
            }
        }
    }
    let scale = 1.0 / (h * h);
    let rows = indices
        .iter()
        .map(|&(i, j)| {
            let mut row = Vec::with_capacity(5);
            for (di, dj) in [(0i64, -1i64), (-1, 0), (0, 0), (1, 0), (0, 1)] {
                let (ni, nj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                if di == 0 && dj == 0 {
                    row.push((number[j * (grid + 1) + i], 4.0 * scale));
                } else if is_interior(grid, ni, nj) {
                    row.push((number[nj * (grid + 1) + ni], -scale));
                }
            }
            row
        })
        .collect();
    Ok(PoissonProblem {
        grid,
        points,
        indices,
        rows,
    })
}

impl PoissonProblem {
    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim();
        let mut a = DenseMatrix::zeros(n, n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                a.set(i, j, v);
            }
        }
        a
    }

    /// Largest distance between the indices of coupled unknowns.
    pub fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Dense inverse via a banded Cholesky factorization.
    pub fn dense_inverse(&self) -> Result<DenseMatrix> {
        let n = self.dim();
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
        }
        let bw = self.bandwidth();
        let chol = BandCholesky::factor(self, bw)?;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut work = vec![0.0; n];
        for c in 0..n {
            work.iter_mut().for_each(|v| *v = 0.0);
            work[c] = 1.0;
            chol.solve_in_place(&mut work, c);
            inv.col_mut(c).copy_from_slice(&work);
        }
        // Symmetrize round-off.
        for j in 0..n {
            for i in j + 1..n {
                let m = 0.5 * (inv.get(i, j) + inv.get(j, i));
                inv.set(i, j, m);
                inv.set(j, i, m);
            }
        }
        Ok(inv)
    }
}

/// Lower-triangular band factor `L` with `A = L L^T`.
struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i, i-bw ..= i]`.
    band: Vec<f64>,
}

impl BandCholesky {
    fn factor(p: &PoissonProblem, bw: usize) -> Result<Self> {
        let n = p.dim();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for (i, r) in p.rows.iter().enumerate() {
            for &(j, v) in r {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = band[i * w + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::InvalidParameter("matrix is not positive definite".into()));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    /// Solves `L L^T x = b` in place; `b` vanishes before `first`.
    fn solve_in_place(&self, b: &mut [f64], first: usize) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in first..n {
            let lo = i.saturating_sub(bw).max(first);
            let mut s = b[i];
            for k in lo..i {
                s -= self.band[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let s = b[i] / self.band[i * w + bw];
            b[i] = s;
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                b[k] -= self.band[i * w + (k + bw - i)] * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{matmul, FlopCounter};

    #[test]
    fn small_grid_dimension() {
        // Direct enumeration of grid points strictly inside the L.
        let n = 4;
        let mut count = 0;
        for j in 1..n {
            for i in 1..n {
                let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                if x < 0.5 || y < 0.5 {
                    count += 1;
                }
            }
        }
        let p = assemble_poisson_lshape(n).unwrap();
        assert_eq!(p.dim(), count);
        assert_eq!(p.dim(), 5);
    }

    #[test]
    fn symmetric() {
        let a = assemble_poisson_lshape(8).unwrap().to_dense();
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn rejects_odd_or_small_grids() {
        assert!(assemble_poisson_lshape(7).is_err());
        assert!(assemble_poisson_lshape(2).is_err());
    }

    #[test]
    fn inverse_is_inverse() {
        let p = assemble_poisson_lshape(12).unwrap();
        let inv = p.dense_inverse().unwrap();
        let prod = matmul(&p.to_dense(), &inv, &FlopCounter::new()).unwrap();
        assert!(prod.sub(&DenseMatrix::identity(p.dim())).max_abs() <= 1e-10);
    }

    #[test]
    fn positive_definite_by_dense_eigensolve() {
        for grid in [4, 8, 16, 32] {
            let p = assemble_poisson_lshape(grid).unwrap();
            let n = p.dim();
            let a = p.to_dense();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a.get(i, j));
            let lmin = m.symmetric_eigen().eigenvalues.min();
            assert!(lmin > 0.0, "grid {grid}: {lmin}");
        }
    }

    #[test]
    fn n64_dimension() {
        assert_eq!(assemble_poisson_lshape(64).unwrap().dim(), 63 * 63 - 32 * 32);
    }
}
