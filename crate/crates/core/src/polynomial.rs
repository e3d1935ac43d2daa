//! Tensor Legendre cluster bases on the bounding boxes of a geometric tree.

use std::sync::Arc;

use crate::basis::ClusterBasis;
use crate::cluster::{Cluster, ClusterTree};
use crate::dense::{matmul, matmul_tn, DenseMatrix, FlopCounter};
use crate::error::{Error, Result};
use crate::householder::{solve_least_squares, thin_qr, triangularize_any};

/// Relative tolerance on the least-squares residual of a transfer matrix.
pub const NESTEDNESS_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

/// Legendre polynomials `P_0(x) .. P_p(x)`.
pub fn legendre(p: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p + 1);
    out.push(1.0);
    if p >= 1 {
        out.push(x);
    }
    for n in 1..p {
        let nf = n as f64;
        out.push(((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0));
    }
    out
}

/// Values of all `(p+1)^d` tensor polynomials of `box_of`, scaled to its
/// bounding box, at the tree positions `range`. The first coordinate varies
/// slowest in the multi-index.
fn evaluate(tree: &ClusterTree, box_of: &Cluster, range: std::ops::Range<usize>, p: usize) -> DenseMatrix {
    let d = tree.dim();
    let k = (p + 1).pow(d as u32);
    let mut out = DenseMatrix::zeros(range.len(), k);
    for (row, pos) in range.enumerate() {
        let x = tree.point(pos);
        let vals: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let w = box_of.bmax[j] - box_of.bmin[j];
                let w = if w > 0.0 { w } else { 1.0 };
                let c = 0.5 * (box_of.bmax[j] + box_of.bmin[j]);
                legendre(p, 2.0 * (x[j] - c) / w)
            })
            .collect();
        for nu in 0..k {
            let mut rest = nu;
            let mut v = 1.0;
            for j in (0..d).rev() {
                v *= vals[j][rest % (p + 1)];
                rest /= p + 1;
            }
            out.set(row, nu, v);
        }
    }
    out
}

/// Polynomial cluster basis of degree `p` in every coordinate, rank `(p+1)^d`.
pub fn build_polynomial_basis(tree: &Arc<ClusterTree>, p: usize) -> Result<ClusterBasis> {
    let d = tree.dim();
    let k = (p + 1)
        .checked_pow(d as u32)
        .ok_or_else(|| Error::InvalidParameter(format!("degree {p} too large in {d} dimensions")))?;
    let flops = FlopCounter::new();
    let mut leaf = vec![None; tree.len()];
    let mut transfer = vec![None; tree.len()];
    for c in tree.clusters() {
        let own = evaluate(tree, c, c.range(), p);
        if c.is_leaf() {
            if c.size() < k {
                return Err(Error::RankDeficient { cluster: c.id });
            }
            let (_, r) = triangularize_any(&own, &flops)?;
            let diag: Vec<f64> = (0..k).map(|i| r.get(i, i).abs()).collect();
            let scale = diag.iter().copied().fold(0.0, f64::max);
            if diag.iter().any(|&v| v <= RANK_TOL * scale) {
                return Err(Error::RankDeficient { cluster: c.id });
            }
            leaf[c.id] = Some(own.clone());
        }
        if let Some(f) = c.father {
            let fathers = evaluate(tree, tree.cluster(f), c.range(), p);
            let e =
                solve_least_squares(&own, &fathers, RANK_TOL, &flops)?.ok_or(Error::RankDeficient { cluster: c.id })?;
            let residual = matmul(&own, &e, &flops)?.sub(&fathers).norm_fro();
            if residual > NESTEDNESS_TOL * fathers.norm_fro() {
                return Err(Error::NotNested {
                    cluster: c.id,
                    residual: residual / fathers.norm_fro(),
                });
            }
            transfer[c.id] = Some(e);
        }
    }
    ClusterBasis::new(Arc::clone(tree), k, leaf, transfer, false)
}

/// Isometric nested basis whose range contains the tensor polynomials of
/// degree `p` on every cluster. Where the polynomials restricted to a
/// cluster are linearly dependent (thin strips, too few distinct
/// coordinates), the thin QR factor still has `k` orthonormal columns and
/// the surplus directions are an arbitrary orthonormal completion.
pub fn build_isometric_polynomial_basis(
    tree: &Arc<ClusterTree>,
    p: usize,
    flops: &FlopCounter,
) -> Result<ClusterBasis> {
    let d = tree.dim();
    let k = (p + 1)
        .checked_pow(d as u32)
        .ok_or_else(|| Error::InvalidParameter(format!("degree {p} too large in {d} dimensions")))?;
    let n = tree.len();
    let mut q: Vec<Option<DenseMatrix>> = vec![None; n];
    let mut leaf = vec![None; n];
    let mut transfer = vec![None; n];
    for t in (0..n).rev() {
        let c = tree.cluster(t);
        if c.is_leaf() {
            if c.size() < k {
                return Err(Error::RankDeficient { cluster: t });
            }
            let (qt, _) = thin_qr(&evaluate(tree, c, c.range(), p), flops)?;
            leaf[t] = Some(qt.clone());
            q[t] = Some(qt);
            continue;
        }
        // Coefficients of the polynomials of t in the son bases.
        let parts: Vec<DenseMatrix> = c
            .sons
            .iter()
            .map(|&s| {
                matmul_tn(
                    q[s].as_ref().unwrap(),
                    &evaluate(tree, c, tree.cluster(s).range(), p),
                    flops,
                )
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&DenseMatrix> = parts.iter().collect();
        let (qhat, _) = thin_qr(&DenseMatrix::vstack(&refs)?, flops)?;
        let mut full = DenseMatrix::zeros(c.size(), k);
        for (i, &s) in c.sons.iter().enumerate() {
            let e = qhat.row_range(i * k, k);
            let son = tree.cluster(s);
            full.set_block(son.begin - c.begin, 0, &matmul(q[s].as_ref().unwrap(), &e, flops)?);
            transfer[s] = Some(e);
        }
        for &s in &c.sons {
            q[s] = None;
        }
        q[t] = Some(full);
    }
    ClusterBasis::new(Arc::clone(tree), k, leaf, transfer, true)
}
