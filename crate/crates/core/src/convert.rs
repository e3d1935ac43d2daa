//! Adaptive conversion of a hierarchical vector into an isometric target
//! basis, refining until the projection error is small enough and
//! coarsening where the error budget allows.

use std::sync::Arc;

use crate::basis::{require_isometric, ClusterBasis};
use crate::dense::{matvec, norm2, FlopCounter};
use crate::error::{Error, Result};
use crate::factors::{CoarseningFactors, ProjectionFactors};
use crate::hvector::HVector;

/// Relative floor below which projection errors count as round-off.
const ROUNDOFF_FLOOR: f64 = 1e-13;

/// Global tolerance `eps`, split as `eps_t = eps sqrt(#t / #I)`, together
/// with the accumulated error bound `acc(t)` of every committed cluster.
#[derive(Clone, Debug)]
pub struct ToleranceBudget {
    eps: f64,
    n: usize,
    acc: Vec<f64>,
}

impl ToleranceBudget {
    pub fn new(eps: f64, basis: &ClusterBasis) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("tolerance {eps}")));
        }
        let tree = basis.tree();
        Ok(Self {
            eps,
            n: tree.n(),
            acc: vec![0.0; tree.len()],
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `eps sqrt(size / #I)` for a cluster with `size` indices.
    pub fn threshold(&self, size: usize) -> f64 {
        self.eps * (size as f64 / self.n as f64).sqrt()
    }

    /// Current error bound attached to cluster `t`.
    pub fn acc(&self, t: usize) -> f64 {
        self.acc[t]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// `||Z_t x_t||` at a committed cluster.
    Projection,
    /// Projection error above the threshold at a tree leaf.
    Forced,
    /// Exact coarsening error of an accepted coarsening step.
    Coarsening,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalError {
    pub cluster: usize,
    pub kind: ErrorKind,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct ConvertOutput {
    pub y: HVector,
    /// Upper bound `acc(root)` for `||x - y||`.
    pub bound: f64,
    pub report: Vec<LocalError>,
}

struct Converter<'a> {
    source: &'a ClusterBasis,
    z: &'a ProjectionFactors,
    p: &'a CoarseningFactors,
    budget: &'a mut ToleranceBudget,
    y: HVector,
    report: Vec<LocalError>,
    flops: &'a FlopCounter,
}

/// Converts `x` (any basis `V`) into the isometric basis `target`.
/// `z` must be built for `(V, target)` and `p` for `target`.
pub fn convert(
    x: &HVector,
    target: &Arc<ClusterBasis>,
    z: &ProjectionFactors,
    p: &CoarseningFactors,
    budget: &mut ToleranceBudget,
    flops: &FlopCounter,
) -> Result<ConvertOutput> {
    require_isometric(target)?;
    let tree = target.tree();
    if !Arc::ptr_eq(x.basis().tree(), tree) || !Arc::ptr_eq(z.tree(), tree) || !Arc::ptr_eq(p.tree(), tree) {
        return Err(Error::Mismatch("cluster trees"));
    }
    if z.z(0).cols() != x.rank() || z.cross(0).rows() != target.rank() || p.rank() != target.rank() {
        return Err(Error::Mismatch("error factors"));
    }
    if budget.acc.len() != tree.len() {
        return Err(Error::Mismatch("tolerance budget"));
    }
    let mut c = Converter {
        source: x.basis(),
        z,
        p,
        budget,
        y: HVector::zeros(target),
        report: Vec::new(),
        flops,
    };
    c.descend(x, 0)?;
    let bound = c.budget.acc[0];
    Ok(ConvertOutput {
        y: c.y,
        bound,
        report: c.report,
    })
}

impl Converter<'_> {
    fn descend(&mut self, x: &HVector, t: usize) -> Result<()> {
        if x.subtree().is_leaf(t) {
            return self.convert_leaf(t, x.coeff(t).unwrap().to_vec());
        }
        self.y.refine(t, self.flops)?;
        let tree = Arc::clone(self.y.basis().tree());
        for &s in tree.sons(t) {
            self.descend(x, s)?;
        }
        self.try_coarsen(t)
    }

    fn convert_leaf(&mut self, t: usize, xt: Vec<f64>) -> Result<()> {
        let tree = Arc::clone(self.y.basis().tree());
        let err = self.z.error(t, &xt, self.flops)?;
        let coef = self.z.project(t, &xt, self.flops)?;
        let local = (norm2(&coef).powi(2) + err * err).sqrt();
        let eps_t = self.budget.threshold(tree.cluster(t).size());
        let accept = err <= eps_t.max(ROUNDOFF_FLOOR * local);
        if accept || tree.is_leaf(t) {
            self.y.set_coeff(t, &coef)?;
            self.budget.acc[t] = err;
            self.report.push(LocalError {
                cluster: t,
                kind: if accept {
                    ErrorKind::Projection
                } else {
                    ErrorKind::Forced
                },
                value: err,
            });
            return Ok(());
        }
        self.y.refine(t, self.flops)?;
        for &s in tree.sons(t) {
            let xs = matvec(self.source.transfer(s), &xt, self.flops)?;
            self.convert_leaf(s, xs)?;
        }
        let sons = self.sons_bound(t);
        self.budget.acc[t] = sons;
        Ok(())
    }

    fn sons_bound(&self, t: usize) -> f64 {
        let tree = self.y.basis().tree();
        tree.sons(t)
            .iter()
            .map(|&s| self.budget.acc[s].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn try_coarsen(&mut self, t: usize) -> Result<()> {
        if let Some(err) = coarsen_if_affordable(&mut self.y, t, self.p, self.budget, self.flops)? {
            self.report.push(LocalError {
                cluster: t,
                kind: ErrorKind::Coarsening,
                value: err,
            });
        }
        Ok(())
    }
}

/// Coarsens `y` at `t` when all sons are leaves and the bound stays within
/// `eps_t`; returns the exact coarsening error on success.
fn coarsen_if_affordable(
    y: &mut HVector,
    t: usize,
    p: &CoarseningFactors,
    budget: &mut ToleranceBudget,
    flops: &FlopCounter,
) -> Result<Option<f64>> {
    let tree = Arc::clone(y.basis().tree());
    let sons = tree.sons(t).iter().map(|&s| budget.acc[s].powi(2)).sum::<f64>().sqrt();
    if tree.sons(t).iter().any(|&s| !y.subtree().is_leaf(s)) {
        budget.acc[t] = sons;
        return Ok(None);
    }
    let stacked: Vec<f64> = tree
        .sons(t)
        .iter()
        .flat_map(|&s| y.coeff(s).unwrap().iter().copied())
        .collect();
    let (_, err) = p.coarsen(t, &stacked, flops)?;
    if err + sons > budget.threshold(tree.cluster(t).size()) {
        budget.acc[t] = sons;
        return Ok(None);
    }
    y.coarsen(t, p, flops)?;
    budget.acc[t] = err + sons;
    Ok(Some(err))
}

/// Greedy bottom-up coarsening of `y` under the budget. Returns the bound
/// for the root. Applying it twice changes nothing.
pub fn coarsen_pass(
    y: &mut HVector,
    p: &CoarseningFactors,
    budget: &mut ToleranceBudget,
    flops: &FlopCounter,
) -> Result<f64> {
    require_isometric(y.basis())?;
    let members: Vec<usize> = y.subtree().members().collect();
    for &t in members.iter().rev() {
        if y.subtree().is_leaf(t) {
            continue;
        }
        coarsen_if_affordable(y, t, p, budget, flops)?;
    }
    Ok(budget.acc[0])
}
