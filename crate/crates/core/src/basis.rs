//! Nested cluster bases: leaf matrices, transfer matrices, orthogonalization
//! and the Gram recursions.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::ClusterTree;
use crate::dense::{matmul, matmul_tn, DenseMatrix, FlopCounter};
use crate::error::{Error, Result};
use crate::householder::{isometry_defect, thin_qr, ISOMETRY_TOL};

/// Rank-`k` nested cluster basis. Leaf clusters carry `V_t` (`#t x k`),
/// every non-root cluster a transfer matrix `E_t` (`k x k`) with
/// `V_father|_t = V_t E_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterBasis {
    tree: Arc<ClusterTree>,
    rank: usize,
    leaf: Vec<Option<DenseMatrix>>,
    transfer: Vec<Option<DenseMatrix>>,
    isometric: bool,
}

impl ClusterBasis {
    /// Assembles a basis; `leaf[t]` must be present exactly for tree leaves
    /// and `transfer[t]` for every non-root cluster.
    pub fn new(
        tree: Arc<ClusterTree>,
        rank: usize,
        leaf: Vec<Option<DenseMatrix>>,
        transfer: Vec<Option<DenseMatrix>>,
        isometric: bool,
    ) -> Result<Self> {
        if leaf.len() != tree.len() || transfer.len() != tree.len() {
            return Err(Error::Shape {
                op: "cluster basis",
                expected: format!("{} clusters", tree.len()),
                got: format!("{} leaf / {} transfer entries", leaf.len(), transfer.len()),
            });
        }
        for c in tree.clusters() {
            let ok_leaf = match (&leaf[c.id], c.is_leaf()) {
                (Some(v), true) => v.shape() == (c.size(), rank) && v.is_finite(),
                (None, false) => true,
                _ => false,
            };
            let ok_transfer = match (&transfer[c.id], c.father.is_some()) {
                (Some(e), true) => e.shape() == (rank, rank) && e.is_finite(),
                (None, false) => true,
                _ => false,
            };
            if !ok_leaf || !ok_transfer {
                return Err(Error::Shape {
                    op: "cluster basis",
                    expected: format!("rank {rank} matrices at cluster {}", c.id),
                    got: "missing, misplaced or non-finite matrix".into(),
                });
            }
        }
        Ok(Self {
            tree,
            rank,
            leaf,
            transfer,
            isometric,
        })
    }

    pub fn tree(&self) -> &Arc<ClusterTree> {
        &self.tree
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_isometric(&self) -> bool {
        self.isometric
    }

    /// `V_t` of a leaf cluster.
    pub fn leaf_matrix(&self, t: usize) -> &DenseMatrix {
        self.leaf[t]
            .as_ref()
            .expect("leaf matrix requested for a non-leaf cluster")
    }

    /// `E_t` of a non-root cluster.
    pub fn transfer(&self, t: usize) -> &DenseMatrix {
        self.transfer[t]
            .as_ref()
            .expect("transfer matrix requested for the root")
    }

    pub fn same_tree(&self, other: &ClusterBasis) -> bool {
        Arc::ptr_eq(&self.tree, &other.tree)
    }

    /// Explicit `V_t`, expanded through the transfer matrices.
    pub fn materialize(&self, t: usize) -> DenseMatrix {
        let c = self.tree.cluster(t);
        if c.is_leaf() {
            return self.leaf_matrix(t).clone();
        }
        let f = FlopCounter::new();
        let mut out = DenseMatrix::zeros(c.size(), self.rank);
        for &s in &c.sons {
            let son = matmul(&self.materialize(s), self.transfer(s), &f).expect("consistent ranks");
            out.set_block(self.tree.cluster(s).begin - c.begin, 0, &son);
        }
        out
    }

    /// Largest `|Q_t^T Q_t - I|` entry over all clusters.
    pub fn isometry_defect(&self) -> f64 {
        (0..self.tree.len())
            .map(|t| isometry_defect(&self.materialize(t)))
            .fold(0.0, f64::max)
    }
}

/// Isometric basis with the same ranges as `basis`, together with the
/// per-cluster factors `R_t` satisfying `V_t = Q_t R_t`.
pub fn orthogonalize(basis: &ClusterBasis, flops: &FlopCounter) -> Result<(ClusterBasis, Vec<DenseMatrix>)> {
    let tree = basis.tree();
    let k = basis.rank();
    let n = tree.len();
    let mut r: Vec<Option<DenseMatrix>> = vec![None; n];
    let mut leaf = vec![None; n];
    let mut transfer: Vec<Option<DenseMatrix>> = vec![None; n];
    for t in (0..n).rev() {
        let c = tree.cluster(t);
        let (q, rt) = if c.is_leaf() {
            let v = basis.leaf_matrix(t);
            if v.rows() < k {
                return Err(Error::RankDeficient { cluster: t });
            }
            thin_qr(v, flops)?
        } else {
            let parts: Vec<DenseMatrix> = c
                .sons
                .iter()
                .map(|&s| matmul(r[s].as_ref().unwrap(), basis.transfer(s), flops))
                .collect::<Result<_>>()?;
            let refs: Vec<&DenseMatrix> = parts.iter().collect();
            thin_qr(&DenseMatrix::vstack(&refs)?, flops)?
        };
        check_rank(&rt, t)?;
        if c.is_leaf() {
            leaf[t] = Some(q);
        } else {
            for (i, &s) in c.sons.iter().enumerate() {
                transfer[s] = Some(q.row_range(i * k, k));
            }
        }
        r[t] = Some(rt);
    }
    let iso = ClusterBasis::new(Arc::clone(tree), k, leaf, transfer, true)?;
    Ok((iso, r.into_iter().map(Option::unwrap).collect()))
}

fn check_rank(r: &DenseMatrix, cluster: usize) -> Result<()> {
    let diag: Vec<f64> = (0..r.cols()).map(|i| r.get(i, i).abs()).collect();
    let scale = diag.iter().copied().fold(0.0, f64::max);
    if diag.iter().any(|&d| d <= 1e-12 * scale) || scale == 0.0 {
        return Err(Error::RankDeficient { cluster });
    }
    Ok(())
}

pub(crate) fn require_isometric(basis: &ClusterBasis) -> Result<()> {
    if !basis.is_isometric() {
        return Err(Error::BasisNotIsometric);
    }
    Ok(())
}

/// `A_t^T B_t` for every cluster, via `A_t^T B_t = sum E_{A,t'}^T (A_t'^T B_t') E_{B,t'}`.
pub fn cross_gram_family(a: &ClusterBasis, b: &ClusterBasis, flops: &FlopCounter) -> Result<Vec<DenseMatrix>> {
    if !a.same_tree(b) {
        return Err(Error::Mismatch("cluster trees"));
    }
    let tree = a.tree();
    let mut out: Vec<Option<DenseMatrix>> = vec![None; tree.len()];
    for t in (0..tree.len()).rev() {
        let c = tree.cluster(t);
        let g = if c.is_leaf() {
            matmul_tn(a.leaf_matrix(t), b.leaf_matrix(t), flops)?
        } else {
            let mut g = DenseMatrix::zeros(a.rank(), b.rank());
            for &s in &c.sons {
                let inner = matmul(out[s].as_ref().unwrap(), b.transfer(s), flops)?;
                let term = matmul_tn(a.transfer(s), &inner, flops)?;
                g.add_block(0, 0, &term);
                flops.add((a.rank() * b.rank()) as u64);
            }
            g
        };
        out[t] = Some(g);
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// `C_t = V_t^T V_t` for every cluster.
pub fn gram_family(basis: &ClusterBasis, flops: &FlopCounter) -> Result<Vec<DenseMatrix>> {
    cross_gram_family(basis, basis, flops)
}

/// Nested basis with uniformly random leaf and transfer entries in `[-1, 1]`.
pub fn random_nested_basis(tree: &Arc<ClusterTree>, k: usize, seed: u64) -> ClusterBasis {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaf = vec![None; tree.len()];
    let mut transfer = vec![None; tree.len()];
    for c in tree.clusters() {
        if c.is_leaf() {
            leaf[c.id] = Some(DenseMatrix::from_fn(c.size(), k, |_, _| rng.gen_range(-1.0..1.0)));
        }
        if c.father.is_some() {
            transfer[c.id] = Some(DenseMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0)));
        }
    }
    ClusterBasis::new(Arc::clone(tree), k, leaf, transfer, false).expect("generated shapes are consistent")
}

/// Random isometric basis: the orthogonalization of a random nested basis.
pub fn random_isometric_basis(tree: &Arc<ClusterTree>, k: usize, seed: u64) -> Result<ClusterBasis> {
    Ok(orthogonalize(&random_nested_basis(tree, k, seed), &FlopCounter::new())?.0)
}

/// Checks the isometry of a basis numerically and sets its flag.
pub fn assert_isometric(mut basis: ClusterBasis) -> Result<ClusterBasis> {
    let deviation = basis.isometry_defect();
    if !(deviation <= ISOMETRY_TOL) {
        return Err(Error::NotIsometric { deviation });
    }
    basis.isometric = true;
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::build_geometric_tree;

    fn tree(n: usize, leaf: usize) -> Arc<ClusterTree> {
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        Arc::new(build_geometric_tree(&pts, leaf).unwrap())
    }

    fn dense_gram(b: &ClusterBasis, t: usize) -> DenseMatrix {
        let v = b.materialize(t);
        matmul_tn(&v, &v, &FlopCounter::new()).unwrap()
    }

    #[test]
    fn gram_matches_dense() {
        let tr = tree(32, 4);
        let b = random_nested_basis(&tr, 3, 1);
        let g = gram_family(&b, &FlopCounter::new()).unwrap();
        for t in 0..tr.len() {
            let d = dense_gram(&b, t);
            assert!(g[t].sub(&d).max_abs() <= 1e-12 * d.max_abs());
        }
    }

    #[test]
    fn orthogonalize_reconstructs() {
        let tr = tree(32, 4);
        let b = random_nested_basis(&tr, 3, 2);
        let f = FlopCounter::new();
        let (q, r) = orthogonalize(&b, &f).unwrap();
        assert!(q.isometry_defect() <= 1e-12);
        for t in 0..tr.len() {
            let v = b.materialize(t);
            let qr = matmul(&q.materialize(t), &r[t], &f).unwrap();
            assert!(qr.sub(&v).max_abs() <= 1e-12 * v.max_abs().max(1.0));
        }
        let g = gram_family(&q, &f).unwrap();
        assert!(g.iter().all(|c| c.sub(&DenseMatrix::identity(3)).max_abs() <= 1e-12));
    }

    #[test]
    fn orthogonalizing_isometric_basis_gives_identity_factors() {
        let tr = tree(16, 4);
        let q = random_isometric_basis(&tr, 2, 3).unwrap();
        let (_, r) = orthogonalize(&q, &FlopCounter::new()).unwrap();
        for rt in r {
            assert!(rt.sub(&DenseMatrix::identity(2)).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_leaf_normalizes() {
        let tr = tree(8, 4);
        let ones = |m| Some(DenseMatrix::from_fn(m, 1, |_, _| 1.0));
        let mut leaf = vec![None; tr.len()];
        let mut transfer = vec![None; tr.len()];
        for c in tr.clusters() {
            if c.is_leaf() {
                leaf[c.id] = ones(c.size());
            }
            if c.father.is_some() {
                transfer[c.id] = Some(DenseMatrix::identity(1));
            }
        }
        let b = ClusterBasis::new(Arc::clone(&tr), 1, leaf, transfer, false).unwrap();
        assert_eq!(b.materialize(0), DenseMatrix::from_fn(8, 1, |_, _| 1.0));
        let (q, r) = orthogonalize(&b, &FlopCounter::new()).unwrap();
        let l = tr.sons(0)[0];
        assert!(q.leaf_matrix(l).as_slice().iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert!((r[l].get(0, 0) - 2.0).abs() < 1e-15);
        let g = gram_family(&b, &FlopCounter::new()).unwrap();
        assert_eq!(g[l].get(0, 0), 4.0);
    }

    #[test]
    fn cross_gram_matches_dense() {
        let tr = tree(24, 3);
        let w = random_nested_basis(&tr, 2, 4);
        let q = random_isometric_basis(&tr, 3, 5).unwrap();
        let f = FlopCounter::new();
        let d = cross_gram_family(&w, &q, &f).unwrap();
        for t in 0..tr.len() {
            let dense = matmul_tn(&w.materialize(t), &q.materialize(t), &f).unwrap();
            assert!(d[t].sub(&dense).max_abs() <= 1e-12 * dense.max_abs().max(1.0));
        }
        let other = random_nested_basis(&tree(24, 3), 2, 4);
        assert_eq!(cross_gram_family(&other, &q, &f), Err(Error::Mismatch("cluster trees")));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let tr = tree(8, 2);
        assert!(matches!(
            orthogonalize(&random_nested_basis(&tr, 3, 1), &FlopCounter::new()),
            Err(Error::RankDeficient { .. })
        ));
    }
}
