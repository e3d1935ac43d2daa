//! Hierarchical vectors: coefficient vectors on the leaves of a subtree,
//! together with refinement, coarsening, addition and inner products.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{require_isometric, ClusterBasis};
use crate::cluster::Subtree;
use crate::dense::{dot, gemv, matvec, matvec_t, norm2, DenseMatrix, FlopCounter};
use crate::error::{Error, Result};
use crate::factors::CoarseningFactors;

/// A vector `x` with `x|_t = V_t x_t` on every leaf `t` of its subtree.
#[derive(Clone, Debug, PartialEq)]
pub struct HVector {
    basis: Arc<ClusterBasis>,
    subtree: Subtree,
    coeffs: Vec<Option<Vec<f64>>>,
}

impl HVector {
    /// Zero vector on the minimal subtree.
    pub fn zeros(basis: &Arc<ClusterBasis>) -> Self {
        Self::zeros_on(basis, Subtree::minimal(basis.tree())).expect("minimal subtree matches its tree")
    }

    /// Zero vector on a given subtree.
    pub fn zeros_on(basis: &Arc<ClusterBasis>, subtree: Subtree) -> Result<Self> {
        if !Arc::ptr_eq(subtree.tree(), basis.tree()) {
            return Err(Error::Mismatch("cluster trees"));
        }
        let k = basis.rank();
        let coeffs = (0..basis.tree().len())
            .map(|t| subtree.is_leaf(t).then(|| vec![0.0; k]))
            .collect();
        Ok(Self {
            basis: Arc::clone(basis),
            subtree,
            coeffs,
        })
    }

    /// Random coefficients in `[-1, 1]` on a given subtree.
    pub fn random(basis: &Arc<ClusterBasis>, subtree: Subtree, seed: u64) -> Result<Self> {
        let mut x = Self::zeros_on(basis, subtree)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in x.coeffs.iter_mut().flatten() {
            c.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        Ok(x)
    }

    pub fn basis(&self) -> &Arc<ClusterBasis> {
        &self.basis
    }

    pub fn subtree(&self) -> &Subtree {
        &self.subtree
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// Coefficients of a subtree leaf.
    pub fn coeff(&self, t: usize) -> Option<&[f64]> {
        self.coeffs[t].as_deref()
    }

    pub fn set_coeff(&mut self, t: usize, values: &[f64]) -> Result<()> {
        let k = self.rank();
        match self.coeffs[t].as_mut() {
            Some(c) if values.len() == k => {
                c.copy_from_slice(values);
                Ok(())
            }
            Some(_) => Err(Error::Shape {
                op: "set_coeff",
                expected: format!("{k}"),
                got: format!("{}", values.len()),
            }),
            None => Err(Error::Subtree {
                cluster: t,
                reason: "not a leaf of the subtree",
            }),
        }
    }

    pub fn scale(&mut self, alpha: f64, flops: &FlopCounter) {
        for c in self.coeffs.iter_mut().flatten() {
            c.iter_mut().for_each(|v| *v *= alpha);
            flops.add(c.len() as u64);
        }
    }

    /// Replaces the leaf `t` by its sons without changing the represented vector.
    pub fn refine(&mut self, t: usize, flops: &FlopCounter) -> Result<()> {
        self.subtree.expand(t)?;
        let xt = self.coeffs[t].take().unwrap();
        for &s in self.basis.tree().sons(t) {
            self.coeffs[s] = Some(matvec(self.basis.transfer(s), &xt, flops)?);
        }
        Ok(())
    }

    /// Refines until every cluster of `target` is a member.
    pub fn refine_to(&mut self, target: &Subtree, flops: &FlopCounter) -> Result<()> {
        for t in target.members() {
            if !target.is_leaf(t) && self.subtree.is_leaf(t) {
                self.refine(t, flops)?;
            }
        }
        Ok(())
    }

    /// Merges the sons of `t` into `t` with the best approximation in the
    /// range of `Q_t` and returns the exact error of this step.
    pub fn coarsen(&mut self, t: usize, factors: &CoarseningFactors, flops: &FlopCounter) -> Result<f64> {
        require_isometric(&self.basis)?;
        if !Arc::ptr_eq(factors.tree(), self.basis.tree()) || factors.rank() != self.rank() {
            return Err(Error::Mismatch("coarsening factors"));
        }
        let tree = Arc::clone(self.basis.tree());
        if !self.subtree.contains(t) || self.subtree.is_leaf(t) {
            return Err(Error::Subtree {
                cluster: t,
                reason: "not an inner cluster of the subtree",
            });
        }
        if tree.sons(t).iter().any(|&s| !self.subtree.is_leaf(s)) {
            return Err(Error::Subtree {
                cluster: t,
                reason: "sons are not all leaves",
            });
        }
        let stacked: Vec<f64> = tree
            .sons(t)
            .iter()
            .flat_map(|&s| self.coeffs[s].as_ref().unwrap().iter().copied())
            .collect();
        let (coef, err) = factors.coarsen(t, &stacked, flops)?;
        self.subtree.contract(t)?;
        for &s in tree.sons(t) {
            self.coeffs[s] = None;
        }
        self.coeffs[t] = Some(coef);
        Ok(err)
    }

    /// The represented vector in tree order.
    pub fn to_dense(&self) -> Vec<f64> {
        let tree = self.basis.tree();
        let mut out = vec![0.0; tree.n()];
        let f = FlopCounter::new();
        for t in self.subtree.leaves() {
            self.expand_into(t, self.coeffs[t].clone().unwrap(), &mut out, &f);
        }
        out
    }

    fn expand_into(&self, t: usize, coef: Vec<f64>, out: &mut [f64], f: &FlopCounter) {
        let tree = self.basis.tree();
        let c = tree.cluster(t);
        if c.is_leaf() {
            gemv(1.0, self.basis.leaf_matrix(t), &coef, &mut out[c.range()], f).unwrap();
            return;
        }
        for &s in &c.sons {
            let son = matvec(self.basis.transfer(s), &coef, f).unwrap();
            self.expand_into(s, son, out, f);
        }
    }

    /// Best approximation of `v` (tree order) on `subtree` in an isometric
    /// basis, together with the exact error `||v - x||`.
    pub fn from_dense(v: &[f64], subtree: Subtree, basis: &Arc<ClusterBasis>) -> Result<(Self, f64)> {
        require_isometric(basis)?;
        let tree = basis.tree();
        if v.len() != tree.n() {
            return Err(Error::Shape {
                op: "from_dense",
                expected: format!("{}", tree.n()),
                got: format!("{}", v.len()),
            });
        }
        let mut x = Self::zeros_on(basis, subtree)?;
        let f = FlopCounter::new();
        let proj = forward_dense(basis, v, &x.subtree, &f)?;
        for t in x.subtree.leaves().collect::<Vec<_>>() {
            x.coeffs[t] = proj[t].clone();
        }
        let err = norm2(&v.iter().zip(x.to_dense()).map(|(a, b)| a - b).collect::<Vec<_>>());
        Ok((x, err))
    }
}

/// `V_t^T v|_t` for every member of `subtree`.
fn forward_dense(basis: &ClusterBasis, v: &[f64], subtree: &Subtree, f: &FlopCounter) -> Result<Vec<Option<Vec<f64>>>> {
    let tree = basis.tree();
    let mut out: Vec<Option<Vec<f64>>> = vec![None; tree.len()];
    // Every cluster below a subtree member is needed, so walk the full tree.
    for t in (0..tree.len()).rev() {
        let c = tree.cluster(t);
        let coef = if c.is_leaf() {
            matvec_t(basis.leaf_matrix(t), &v[c.range()], f)?
        } else {
            let mut acc = vec![0.0; basis.rank()];
            for &s in &c.sons {
                crate::dense::gemv_t(1.0, basis.transfer(s), out[s].as_ref().unwrap(), &mut acc, f)?;
            }
            acc
        };
        out[t] = Some(coef);
    }
    for (t, o) in out.iter_mut().enumerate() {
        if !subtree.contains(t) {
            *o = None;
        }
    }
    Ok(out)
}

fn check_same(x: &HVector, y: &HVector) -> Result<()> {
    if !Arc::ptr_eq(&x.basis, &y.basis) {
        return Err(Error::Mismatch("cluster bases"));
    }
    Ok(())
}

/// `y <- y + alpha x`, refining `y` where `x` is finer. The result is exact.
pub fn axpy(alpha: f64, x: &HVector, y: &mut HVector, flops: &FlopCounter) -> Result<()> {
    check_same(x, y)?;
    add(alpha, x, y, 0, flops)
}

fn add(alpha: f64, x: &HVector, y: &mut HVector, t: usize, flops: &FlopCounter) -> Result<()> {
    if x.subtree.is_leaf(t) {
        let z: Vec<f64> = x.coeffs[t].as_ref().unwrap().iter().map(|v| alpha * v).collect();
        flops.add(z.len() as u64);
        return add_leaf(y, t, z, flops);
    }
    if y.subtree.is_leaf(t) {
        y.refine(t, flops)?;
    }
    let tree = Arc::clone(x.basis.tree());
    for &s in tree.sons(t) {
        add(alpha, x, y, s, flops)?;
    }
    Ok(())
}

/// Adds `V_t z` to `y`, pushing `z` down to the leaves of `y` below `t`.
fn add_leaf(y: &mut HVector, t: usize, z: Vec<f64>, flops: &FlopCounter) -> Result<()> {
    if y.subtree.is_leaf(t) {
        let yt = y.coeffs[t].as_mut().unwrap();
        crate::dense::axpy(1.0, &z, yt, flops)?;
        return Ok(());
    }
    let basis = Arc::clone(&y.basis);
    for &s in basis.tree().sons(t) {
        let zs = matvec(basis.transfer(s), &z, flops)?;
        add_leaf(y, s, zs, flops)?;
    }
    Ok(())
}

/// `<x, y>` using the Gram matrices `C_t = V_t^T V_t` of the shared basis.
pub fn dot_hv(x: &HVector, y: &HVector, gram: &[DenseMatrix], flops: &FlopCounter) -> Result<f64> {
    check_same(x, y)?;
    if gram.len() != x.basis.tree().len() {
        return Err(Error::Mismatch("gram family"));
    }
    dot_rec(x, y, gram, 0, flops)
}

fn dot_rec(x: &HVector, y: &HVector, gram: &[DenseMatrix], t: usize, flops: &FlopCounter) -> Result<f64> {
    match (x.subtree.is_leaf(t), y.subtree.is_leaf(t)) {
        (true, _) => dot_leaf(x.coeffs[t].as_ref().unwrap(), y, gram, t, flops),
        (false, true) => dot_leaf(y.coeffs[t].as_ref().unwrap(), x, gram, t, flops),
        (false, false) => {
            let mut sum = 0.0;
            for &s in x.basis.tree().sons(t) {
                sum += dot_rec(x, y, gram, s, flops)?;
            }
            Ok(sum)
        }
    }
}

/// `<V_t z, y|_t>`.
fn dot_leaf(z: &[f64], y: &HVector, gram: &[DenseMatrix], t: usize, flops: &FlopCounter) -> Result<f64> {
    if y.subtree.is_leaf(t) {
        let cz = matvec(&gram[t], z, flops)?;
        return dot(&cz, y.coeffs[t].as_ref().unwrap(), flops);
    }
    let mut sum = 0.0;
    for &s in y.basis.tree().sons(t) {
        let zs = matvec(y.basis.transfer(s), z, flops)?;
        sum += dot_leaf(&zs, y, gram, s, flops)?;
    }
    Ok(sum)
}

/// Euclidean norm; tiny negative round-off is clamped to zero.
pub fn norm_hv(x: &HVector, gram: &[DenseMatrix], flops: &FlopCounter) -> Result<f64> {
    Ok(dot_hv(x, x, gram, flops)?.max(0.0).sqrt())
}
