//! Exact error factors of an isometric cluster basis: the reflections over
//! the stacked transfer matrices for coarsening, and the triangular `Z_t`
//! for projecting another basis into it.

use std::sync::Arc;

use crate::basis::{require_isometric, ClusterBasis};
use crate::cluster::ClusterTree;
use crate::dense::{matmul, norm2, DenseMatrix, FlopCounter};
use crate::error::{Error, Result};
use crate::householder::{extend_to_orthonormal, r_factor, Complement};

/// For every non-leaf cluster `t`, the orthogonal extension of the stacked
/// son transfers `Q^_t = [F_t1; F_t2; ...]`.
#[derive(Clone, Debug)]
pub struct CoarseningFactors {
    tree: Arc<ClusterTree>,
    rank: usize,
    stacks: Vec<Option<Complement>>,
}

impl CoarseningFactors {
    pub fn tree(&self) -> &Arc<ClusterTree> {
        &self.tree
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn complement(&self, t: usize) -> Option<&Complement> {
        self.stacks[t].as_ref()
    }

    /// Coarsens the son coefficients of `t`, stacked in son order. Returns
    /// the optimal father coefficients and the exact error norm.
    pub fn coarsen(&self, t: usize, stacked: &[f64], flops: &FlopCounter) -> Result<(Vec<f64>, f64)> {
        let c = self.stacks[t].as_ref().ok_or(Error::Subtree {
            cluster: t,
            reason: "leaf clusters cannot be coarsened",
        })?;
        let full = c.stack().apply_q_transpose(stacked, flops)?;
        let err = norm2(&full[self.rank..]);
        flops.add((full.len() - self.rank) as u64);
        Ok((full[..self.rank].to_vec(), err))
    }
}

pub fn coarsening_factors(iso: &ClusterBasis, flops: &FlopCounter) -> Result<CoarseningFactors> {
    require_isometric(iso)?;
    let tree = iso.tree();
    let k = iso.rank();
    let mut stacks = vec![None; tree.len()];
    for c in tree.clusters() {
        if c.is_leaf() {
            continue;
        }
        let parts: Vec<&DenseMatrix> = c.sons.iter().map(|&s| iso.transfer(s)).collect();
        stacks[c.id] = Some(extend_to_orthonormal(&DenseMatrix::vstack(&parts)?, flops)?);
    }
    Ok(CoarseningFactors {
        tree: Arc::clone(tree),
        rank: k,
        stacks,
    })
}

/// Projection of a source basis `V` (rank `l`) into an isometric target
/// basis `Q` (rank `k`): `||V_t x - Q_t Q_t^T V_t x|| = ||Z_t x||` with
/// `Z_t` upper triangular `l x l`, and the cross terms `Q_t^T V_t`.
#[derive(Clone, Debug)]
pub struct ProjectionFactors {
    tree: Arc<ClusterTree>,
    z: Vec<DenseMatrix>,
    cross: Vec<DenseMatrix>,
}

impl ProjectionFactors {
    pub fn tree(&self) -> &Arc<ClusterTree> {
        &self.tree
    }

    pub fn z(&self, t: usize) -> &DenseMatrix {
        &self.z[t]
    }

    /// `Q_t^T V_t`.
    pub fn cross(&self, t: usize) -> &DenseMatrix {
        &self.cross[t]
    }

    /// Exact projection error `||Z_t x||` of source coefficients `x`.
    pub fn error(&self, t: usize, x: &[f64], flops: &FlopCounter) -> Result<f64> {
        let zx = crate::dense::matvec(&self.z[t], x, flops)?;
        Ok(norm2(&zx))
    }

    /// Target coefficients `Q_t^T V_t x` of the best approximation.
    pub fn project(&self, t: usize, x: &[f64], flops: &FlopCounter) -> Result<Vec<f64>> {
        crate::dense::matvec(&self.cross[t], x, flops)
    }
}

pub fn projection_factors(v: &ClusterBasis, q: &ClusterBasis, flops: &FlopCounter) -> Result<ProjectionFactors> {
    if !v.same_tree(q) {
        return Err(Error::Mismatch("cluster trees"));
    }
    require_isometric(q)?;
    let coarse = coarsening_factors(q, flops)?;
    let tree = q.tree();
    let k = q.rank();
    let l = v.rank();
    let mut z: Vec<Option<DenseMatrix>> = vec![None; tree.len()];
    let mut cross: Vec<Option<DenseMatrix>> = vec![None; tree.len()];
    for t in (0..tree.len()).rev() {
        let c = tree.cluster(t);
        let (full, own) = if c.is_leaf() {
            let ext = extend_to_orthonormal(q.leaf_matrix(t), flops)?;
            (ext.stack().apply_q_transpose_mat(v.leaf_matrix(t), flops)?, Vec::new())
        } else {
            let mut hat = Vec::with_capacity(c.sons.len());
            let mut own = Vec::with_capacity(c.sons.len());
            for &s in &c.sons {
                hat.push(matmul(cross[s].as_ref().unwrap(), v.transfer(s), flops)?);
                own.push(matmul(z[s].as_ref().unwrap(), v.transfer(s), flops)?);
            }
            let refs: Vec<&DenseMatrix> = hat.iter().collect();
            let stack = coarse.complement(t).unwrap().stack();
            (stack.apply_q_transpose_mat(&DenseMatrix::vstack(&refs)?, flops)?, own)
        };
        let tail = full.row_range(k, full.rows() - k);
        let mut parts: Vec<&DenseMatrix> = own.iter().collect();
        parts.push(&tail);
        z[t] = Some(r_factor(&DenseMatrix::vstack(&parts)?, flops)?);
        cross[t] = Some(full.row_range(0, k));
        debug_assert_eq!(z[t].as_ref().unwrap().shape(), (l, l));
    }
    Ok(ProjectionFactors {
        tree: Arc::clone(tree),
        z: z.into_iter().map(Option::unwrap).collect(),
        cross: cross.into_iter().map(Option::unwrap).collect(),
    })
}
