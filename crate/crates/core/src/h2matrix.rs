//! Block trees and H²-matrices in the simplified format where every leaf
//! block is `V_t S_b W_s^T`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{require_isometric, ClusterBasis};
use crate::cluster::ClusterTree;
use crate::dense::{matmul, matmul_tn, DenseMatrix, FlopCounter};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    /// Son blocks; the son `(t_i, s_j)` sits at position `i * #sons(s) + j`.
    pub sons: Vec<usize>,
    pub admissible: bool,
}

impl Block {
    pub fn is_leaf(&self) -> bool {
        self.sons.is_empty()
    }
}

/// Hierarchical partition of `I x J`, numbered in depth-first pre-order.
#[derive(Clone, Debug)]
pub struct BlockTree {
    row_tree: Arc<ClusterTree>,
    col_tree: Arc<ClusterTree>,
    blocks: Vec<Block>,
    eta: f64,
    by_row: Vec<Vec<usize>>,
    by_col: Vec<Vec<usize>>,
}

/// `max(diam t, diam s) <= eta * dist(t, s)` with strictly positive distance.
pub fn admissible(t: &crate::cluster::Cluster, s: &crate::cluster::Cluster, eta: f64) -> bool {
    let dist = t.distance(s);
    eta > 0.0 && dist > 0.0 && t.diameter().max(s.diameter()) <= eta * dist
}

impl BlockTree {
    pub fn build(row_tree: &Arc<ClusterTree>, col_tree: &Arc<ClusterTree>, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!("admissibility parameter {eta}")));
        }
        if row_tree.validate().is_err() || col_tree.validate().is_err() {
            return Err(Error::InvalidParameter(
                "cluster trees must be valid and level-uniform".into(),
            ));
        }
        if row_tree.depth() != col_tree.depth() {
            return Err(Error::Mismatch("tree depths"));
        }
        let mut blocks = Vec::new();
        build_rec(row_tree, col_tree, 0, 0, eta, &mut blocks);
        let mut by_row = vec![Vec::new(); row_tree.len()];
        let mut by_col = vec![Vec::new(); col_tree.len()];
        for b in &blocks {
            by_row[b.row].push(b.id);
            by_col[b.col].push(b.id);
        }
        Ok(Self {
            row_tree: Arc::clone(row_tree),
            col_tree: Arc::clone(col_tree),
            blocks,
            eta,
            by_row,
            by_col,
        })
    }

    pub fn row_tree(&self) -> &Arc<ClusterTree> {
        &self.row_tree
    }

    pub fn col_tree(&self) -> &Arc<ClusterTree> {
        &self.col_tree
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, b: usize) -> &Block {
        &self.blocks[b]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.is_leaf())
    }

    /// Blocks with row cluster `t`, in construction order.
    pub fn row_blocks(&self, t: usize) -> &[usize] {
        &self.by_row[t]
    }

    /// Blocks with column cluster `s`, in construction order.
    pub fn col_blocks(&self, s: usize) -> &[usize] {
        &self.by_col[s]
    }

    /// `C_sp`: the largest number of blocks sharing a row or column cluster.
    pub fn sparsity_constant(&self) -> usize {
        let r = self.by_row.iter().map(Vec::len).max().unwrap_or(0);
        let c = self.by_col.iter().map(Vec::len).max().unwrap_or(0);
        r.max(c)
    }

    /// Exact-cover check of the leaf blocks on the dense index grid.
    pub fn check_partition(&self) -> bool {
        let (n, m) = (self.row_tree.n(), self.col_tree.n());
        let mut seen = vec![false; n * m];
        for b in self.leaves() {
            for i in self.row_tree.cluster(b.row).range() {
                for j in self.col_tree.cluster(b.col).range() {
                    if std::mem::replace(&mut seen[i * m + j], true) {
                        return false;
                    }
                }
            }
        }
        seen.into_iter().all(|v| v)
    }
}

fn build_rec(rt: &ClusterTree, ct: &ClusterTree, t: usize, s: usize, eta: f64, out: &mut Vec<Block>) -> usize {
    let id = out.len();
    let adm = admissible(rt.cluster(t), ct.cluster(s), eta);
    out.push(Block {
        id,
        row: t,
        col: s,
        sons: Vec::new(),
        admissible: adm,
    });
    if adm || rt.is_leaf(t) || ct.is_leaf(s) {
        return id;
    }
    let mut sons = Vec::with_capacity(rt.sons(t).len() * ct.sons(s).len());
    for &ts in rt.sons(t) {
        for &ss in ct.sons(s) {
            sons.push(build_rec(rt, ct, ts, ss, eta, out));
        }
    }
    out[id].sons = sons;
    id
}

/// H²-matrix with coupling matrices on all leaf blocks.
#[derive(Clone, Debug)]
pub struct H2Matrix {
    blocks: Arc<BlockTree>,
    row_basis: Arc<ClusterBasis>,
    col_basis: Arc<ClusterBasis>,
    coupling: Vec<Option<DenseMatrix>>,
}

impl H2Matrix {
    pub fn new(
        blocks: Arc<BlockTree>,
        row_basis: Arc<ClusterBasis>,
        col_basis: Arc<ClusterBasis>,
        coupling: Vec<Option<DenseMatrix>>,
    ) -> Result<Self> {
        if !Arc::ptr_eq(blocks.row_tree(), row_basis.tree()) || !Arc::ptr_eq(blocks.col_tree(), col_basis.tree()) {
            return Err(Error::Mismatch("cluster trees"));
        }
        if coupling.len() != blocks.len() {
            return Err(Error::Mismatch("block counts"));
        }
        let shape = (row_basis.rank(), col_basis.rank());
        for b in blocks.blocks() {
            let ok = match &coupling[b.id] {
                Some(s) => b.is_leaf() && s.shape() == shape && s.is_finite(),
                None => !b.is_leaf(),
            };
            if !ok {
                return Err(Error::Shape {
                    op: "coupling matrices",
                    expected: format!("{}x{} at every leaf block", shape.0, shape.1),
                    got: format!("invalid entry at block {}", b.id),
                });
            }
        }
        Ok(Self {
            blocks,
            row_basis,
            col_basis,
            coupling,
        })
    }

    pub fn block_tree(&self) -> &Arc<BlockTree> {
        &self.blocks
    }

    pub fn row_basis(&self) -> &Arc<ClusterBasis> {
        &self.row_basis
    }

    pub fn col_basis(&self) -> &Arc<ClusterBasis> {
        &self.col_basis
    }

    /// `k_A`, the row basis rank.
    pub fn rank(&self) -> usize {
        self.row_basis.rank()
    }

    pub fn coupling(&self, b: usize) -> &DenseMatrix {
        self.coupling[b].as_ref().expect("coupling matrix of a non-leaf block")
    }

    pub fn coupling_mut(&mut self, b: usize) -> &mut DenseMatrix {
        self.coupling[b].as_mut().expect("coupling matrix of a non-leaf block")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.blocks.row_tree().n(), self.blocks.col_tree().n())
    }

    /// Dense expansion in tree order.
    pub fn to_dense(&self) -> DenseMatrix {
        let (n, m) = self.shape();
        let f = FlopCounter::new();
        let vt = materialize_all(&self.row_basis);
        let ws = materialize_all(&self.col_basis);
        let mut out = DenseMatrix::zeros(n, m);
        for b in self.blocks.leaves() {
            let vs = matmul(&vt[b.row], self.coupling(b.id), &f).unwrap();
            let blk = matmul(&vs, &ws[b.col].transpose(), &f).unwrap();
            out.set_block(
                self.blocks.row_tree().cluster(b.row).begin,
                self.blocks.col_tree().cluster(b.col).begin,
                &blk,
            );
        }
        out
    }
}

/// Explicit basis matrices of every cluster.
pub fn materialize_all(basis: &ClusterBasis) -> Vec<DenseMatrix> {
    let tree = basis.tree();
    let f = FlopCounter::new();
    let mut out: Vec<Option<DenseMatrix>> = vec![None; tree.len()];
    for t in (0..tree.len()).rev() {
        let c = tree.cluster(t);
        out[t] = Some(if c.is_leaf() {
            basis.leaf_matrix(t).clone()
        } else {
            let mut m = DenseMatrix::zeros(c.size(), basis.rank());
            for &s in &c.sons {
                let son = matmul(out[s].as_ref().unwrap(), basis.transfer(s), &f).unwrap();
                m.set_block(tree.cluster(s).begin - c.begin, 0, &son);
            }
            m
        });
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Orthogonal projection of a dense matrix (tree order) onto the H²-format:
/// `S_b = Q_t^T A|_{t x s} Q_s`. Also returns the Frobenius error.
pub fn compress_dense(
    a: &DenseMatrix,
    row_q: &Arc<ClusterBasis>,
    col_q: &Arc<ClusterBasis>,
    blocks: &Arc<BlockTree>,
) -> Result<(H2Matrix, f64)> {
    require_isometric(row_q)?;
    require_isometric(col_q)?;
    if a.shape() != (blocks.row_tree().n(), blocks.col_tree().n()) {
        return Err(Error::Shape {
            op: "compress_dense",
            expected: format!("{}x{}", blocks.row_tree().n(), blocks.col_tree().n()),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let f = FlopCounter::new();
    let qt = materialize_all(row_q);
    let qs = materialize_all(col_q);
    let mut coupling = vec![None; blocks.len()];
    for b in blocks.leaves() {
        let t = blocks.row_tree().cluster(b.row);
        let s = blocks.col_tree().cluster(b.col);
        let ab = a.block(t.begin, s.begin, t.size(), s.size());
        let aq = matmul(&ab, &qs[b.col], &f)?;
        coupling[b.id] = Some(matmul_tn(&qt[b.row], &aq, &f)?);
    }
    let m = H2Matrix::new(Arc::clone(blocks), Arc::clone(row_q), Arc::clone(col_q), coupling)?;
    let err = m.to_dense().sub(a).norm_fro();
    Ok((m, err))
}

/// Coupling matrices with seeded uniform entries in `[-scale, scale]`.
pub fn random_h2(
    blocks: &Arc<BlockTree>,
    row_basis: &Arc<ClusterBasis>,
    col_basis: &Arc<ClusterBasis>,
    seed: u64,
    scale: f64,
) -> Result<H2Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ka, kb) = (row_basis.rank(), col_basis.rank());
    let coupling = blocks
        .blocks()
        .iter()
        .map(|b| {
            b.is_leaf()
                .then(|| DenseMatrix::from_fn(ka, kb, |_, _| scale * rng.gen_range(-1.0..=1.0)))
        })
        .collect();
    H2Matrix::new(
        Arc::clone(blocks),
        Arc::clone(row_basis),
        Arc::clone(col_basis),
        coupling,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{orthogonalize, random_isometric_basis, random_nested_basis};
    use crate::cluster::build_geometric_tree;
    use crate::polynomial::build_polynomial_basis;

    fn line(n: usize, leaf: usize) -> Arc<ClusterTree> {
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
        Arc::new(build_geometric_tree(&pts, leaf).unwrap())
    }

    #[test]
    fn single_block() {
        let t = line(1, 1);
        let bt = BlockTree::build(&t, &t, 1.0).unwrap();
        assert_eq!(bt.len(), 1);
        assert!(bt.block(0).is_leaf());
        assert_eq!(bt.sparsity_constant(), 1);
    }

    #[test]
    fn line_of_eight() {
        let t = line(8, 1);
        let bt = BlockTree::build(&t, &t, 1.0).unwrap();
        assert!(bt.check_partition());
        assert!(bt.leaves().any(|b| b.admissible && t.cluster(b.row).level < t.depth()));
        // Direct count of blocks per cluster.
        let mut count = vec![0; t.len()];
        for b in bt.blocks() {
            count[b.row] += 1;
        }
        assert_eq!(bt.sparsity_constant(), *count.iter().max().unwrap());
        assert!(bt.sparsity_constant() <= 4);
    }

    #[test]
    fn zero_eta_gives_leaf_pairs() {
        let t = line(16, 2);
        let bt = BlockTree::build(&t, &t, 0.0).unwrap();
        let leaves = t.leaves().count();
        assert_eq!(bt.leaves().count(), leaves * leaves);
        assert!(bt.leaves().all(|b| t.is_leaf(b.row) && t.is_leaf(b.col)));
        assert_eq!(bt.sparsity_constant(), leaves);
        assert!(bt.check_partition());
    }

    #[test]
    fn depth_mismatch() {
        assert!(matches!(
            BlockTree::build(&line(8, 2), &line(8, 4), 1.0),
            Err(Error::Mismatch("tree depths"))
        ));
    }

    #[test]
    fn sparsity_is_bounded_in_n() {
        let mut prev = usize::MAX;
        for (i, n) in [64, 128, 256, 512, 1024, 2048, 4096].into_iter().enumerate() {
            let t = line(n, 4);
            let c = BlockTree::build(&t, &t, 1.0).unwrap().sparsity_constant();
            if i >= 2 {
                assert!(c <= prev, "C_sp grew from {prev} to {c} at n={n}");
            }
            prev = c;
        }
    }

    #[test]
    fn compressing_an_expansion_is_exact() {
        let t = line(32, 4);
        let bt = Arc::new(BlockTree::build(&t, &t, 1.0).unwrap());
        let q = Arc::new(random_isometric_basis(&t, 3, 1).unwrap());
        let m = random_h2(&bt, &q, &q, 2, 1.0).unwrap();
        let a = m.to_dense();
        let (c, err) = compress_dense(&a, &q, &q, &bt).unwrap();
        assert!(err <= 1e-12 * a.norm_fro());
        for b in bt.leaves() {
            assert!(c.coupling(b.id).sub(m.coupling(b.id)).max_abs() <= 1e-13);
        }
    }

    #[test]
    fn identity_with_full_rank_leaves() {
        let t = line(16, 4);
        let bt = Arc::new(BlockTree::build(&t, &t, 0.0).unwrap());
        let q = Arc::new(random_isometric_basis(&t, 4, 3).unwrap());
        let (_, err) = compress_dense(&DenseMatrix::identity(16), &q, &q, &bt).unwrap();
        assert!(err <= 1e-12);
    }

    #[test]
    fn smooth_kernel_improves_with_degree() {
        let n = 128;
        let t = line(n, 16);
        let bt = Arc::new(BlockTree::build(&t, &t, 1.0).unwrap());
        let x: Vec<f64> = (0..n).map(|i| t.point(i)[0]).collect();
        let a = DenseMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + (x[i] - x[j]).powi(2)));
        let mut last = f64::INFINITY;
        for p in 1..=4 {
            let v = build_polynomial_basis(&t, p).unwrap();
            let q = Arc::new(orthogonalize(&v, &FlopCounter::new()).unwrap().0);
            let (_, err) = compress_dense(&a, &q, &q, &bt).unwrap();
            assert!(err < last, "p={p}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn random_generator() {
        let t = line(32, 4);
        let bt = Arc::new(BlockTree::build(&t, &t, 1.0).unwrap());
        let v = Arc::new(random_nested_basis(&t, 2, 1));
        let a = random_h2(&bt, &v, &v, 5, 1.0).unwrap().to_dense();
        let b = random_h2(&bt, &v, &v, 5, 1.0).unwrap().to_dense();
        assert_eq!(a, b);
        assert_eq!(random_h2(&bt, &v, &v, 5, 0.0).unwrap().to_dense().max_abs(), 0.0);
        // Leafwise oracle with separately materialized bases.
        let m = random_h2(&bt, &v, &v, 5, 1.0).unwrap();
        let f = FlopCounter::new();
        for blk in bt.leaves() {
            let (tc, sc) = (t.cluster(blk.row), t.cluster(blk.col));
            let expect = matmul(
                &matmul(&v.materialize(blk.row), m.coupling(blk.id), &f).unwrap(),
                &v.materialize(blk.col).transpose(),
                &f,
            )
            .unwrap();
            assert!(a.block(tc.begin, sc.begin, tc.size(), sc.size()).sub(&expect).max_abs() <= 1e-13);
        }
    }
}
