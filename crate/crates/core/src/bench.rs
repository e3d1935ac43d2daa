//! Flop and time measurements of the matrix-vector product on random
//! H²-matrices over uniformly distributed points.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::random_isometric_basis;
use crate::cluster::{build_geometric_tree, ClusterTree, Subtree};
use crate::dense::FlopCounter;
use crate::error::{Error, Result};
use crate::h2matrix::{random_h2, BlockTree, H2Matrix};
use crate::hvector::HVector;
use crate::matvec::{eval, MatvecPlan};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub k: usize,
    pub ka: usize,
    pub eta: f64,
    pub seed: u64,
    /// Requested leaf size; raised to `2 max(k, k_A)` if smaller.
    pub leaf_size: usize,
    /// Dimension of the random point cloud.
    pub dim: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k: 4,
            ka: 4,
            eta: 1.0,
            seed: 1,
            leaf_size: 16,
            dim: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub n: usize,
    pub k: usize,
    pub ka: usize,
    /// `#T_x`.
    pub clusters: usize,
    /// `#T_y`.
    pub result_clusters: usize,
    pub sparsity: usize,
    pub max_induced_rank: usize,
    pub flops_forward: u64,
    pub flops_coupling: u64,
    pub flops_backward: u64,
    pub seconds: f64,
}

impl BenchRecord {
    pub fn flops(&self) -> u64 {
        self.flops_forward + self.flops_coupling + self.flops_backward
    }
}

/// A random instance: tree, matrix, plan and input basis.
pub struct Instance {
    pub tree: Arc<ClusterTree>,
    pub matrix: H2Matrix,
    pub plan: MatvecPlan,
}

/// Uniform random points in the unit cube of dimension `dim`.
pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
}

pub fn random_instance(n: usize, cfg: &BenchConfig) -> Result<Instance> {
    if cfg.k == 0 || cfg.ka == 0 {
        return Err(Error::InvalidParameter("ranks must be positive".into()));
    }
    let leaf = cfg.leaf_size.max(2 * cfg.k.max(cfg.ka));
    if n < leaf {
        return Err(Error::InvalidParameter(format!(
            "n = {n} is smaller than the leaf size {leaf}"
        )));
    }
    let tree = Arc::new(build_geometric_tree(&random_points(n, cfg.dim, cfg.seed), leaf)?);
    let v = Arc::new(random_isometric_basis(&tree, cfg.ka, cfg.seed.wrapping_add(1))?);
    let w = Arc::new(random_isometric_basis(&tree, cfg.ka, cfg.seed.wrapping_add(2))?);
    let q = Arc::new(random_isometric_basis(&tree, cfg.k, cfg.seed.wrapping_add(3))?);
    let blocks = Arc::new(BlockTree::build(&tree, &tree, cfg.eta)?);
    let matrix = random_h2(&blocks, &v, &w, cfg.seed.wrapping_add(4), 1.0)?;
    let plan = MatvecPlan::new(&matrix, &q, &FlopCounter::new())?;
    Ok(Instance { tree, matrix, plan })
}

/// Measures one product with the input vector `x`.
pub fn measure(inst: &Instance, x: &HVector) -> Result<BenchRecord> {
    let f = FlopCounter::new();
    let start = Instant::now();
    let y = eval(&inst.matrix, &inst.plan, x, &f)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchRecord {
        n: inst.tree.n(),
        k: inst.plan.input_basis().rank(),
        ka: inst.matrix.rank(),
        clusters: x.subtree().count_clusters(),
        result_clusters: y.subtree().count_clusters(),
        sparsity: inst.matrix.block_tree().sparsity_constant(),
        max_induced_rank: inst.plan.max_induced_rank(),
        flops_forward: f.phase("forward"),
        flops_coupling: f.phase("coupling"),
        flops_backward: f.phase("backward"),
        seconds,
    })
}

/// Random input on the full cluster tree.
pub fn random_input(inst: &Instance, seed: u64) -> Result<HVector> {
    HVector::random(inst.plan.input_basis(), Subtree::full(&inst.tree), seed)
}

/// The zero vector on the minimal subtree.
pub fn zero_input(inst: &Instance) -> HVector {
    HVector::zeros(inst.plan.input_basis())
}

/// One record per size, random input on the full tree.
pub fn bench_matvec(sizes: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    sizes
        .iter()
        .map(|&n| {
            let inst = random_instance(n, cfg)?;
            measure(&inst, &random_input(&inst, cfg.seed.wrapping_add(5))?)
        })
        .collect()
}

/// Random inputs on the level subtrees `2..=depth` of one fixed instance.
pub fn level_sweep(inst: &Instance, seed: u64) -> Result<Vec<BenchRecord>> {
    (2..=inst.tree.depth())
        .map(|l| {
            let x = HVector::random(inst.plan.input_basis(), Subtree::to_level(&inst.tree, l), seed)?;
            measure(inst, &x)
        })
        .collect()
}

/// `flops(next) / flops(previous)` together with `#T_x(next) / #T_x(previous)`.
pub fn growth_ratios(records: &[BenchRecord]) -> Vec<(f64, f64)> {
    records
        .windows(2)
        .map(|w| {
            (
                w[1].flops() as f64 / w[0].flops() as f64,
                w[1].clusters as f64 / w[0].clusters as f64,
            )
        })
        .collect()
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(
        "n,k,ka,clusters,result_clusters,sparsity,max_induced_rank,flops_forward,flops_coupling,flops_backward,flops_total,seconds\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{:.16e}",
            r.n,
            r.k,
            r.ka,
            r.clusters,
            r.result_clusters,
            r.sparsity,
            r.max_induced_rank,
            r.flops_forward,
            r.flops_coupling,
            r.flops_backward,
            r.flops(),
            r.seconds
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every block column holds the diagonal block and one admissible sibling.
    fn weak() -> BenchConfig {
        BenchConfig {
            eta: 1e6,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn flops_grow_with_clusters() {
        let recs = bench_matvec(&[64, 128, 256, 512], &weak()).unwrap();
        for (flops, clusters) in growth_ratios(&recs) {
            assert!(clusters > 1.5);
            assert!((1.6..=2.5).contains(&flops), "{flops}");
        }
    }

    #[test]
    fn level_sweep_is_linear_at_fixed_sparsity() {
        let inst = random_instance(1024, &weak()).unwrap();
        let recs = level_sweep(&inst, 2).unwrap();
        assert_eq!(recs.len(), inst.tree.depth() - 1);
        for (flops, _) in growth_ratios(&recs) {
            assert!((1.6..=2.5).contains(&flops), "{flops}");
        }
    }

    #[test]
    fn doubling_ranks_roughly_quadruples_flops() {
        let small = bench_matvec(&[1024], &weak()).unwrap();
        let large = bench_matvec(&[1024], &BenchConfig { k: 8, ka: 8, ..weak() }).unwrap();
        assert_eq!(small[0].clusters, large[0].clusters);
        let ratio = large[0].flops() as f64 / small[0].flops() as f64;
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn zero_vector_is_cheap() {
        let inst = random_instance(256, &BenchConfig::default()).unwrap();
        let zero = measure(&inst, &zero_input(&inst)).unwrap();
        let full = measure(&inst, &random_input(&inst, 3).unwrap()).unwrap();
        assert!(zero.flops_coupling as f64 <= 0.05 * full.flops_coupling as f64);
    }

    #[test]
    fn tree_and_rank_bounds() {
        let inst = random_instance(512, &BenchConfig::default()).unwrap();
        let r = measure(&inst, &random_input(&inst, 1).unwrap()).unwrap();
        assert!(r.result_clusters <= r.sparsity * r.clusters);
        assert!(r.max_induced_rank <= r.ka + r.sparsity * r.k);
    }

    #[test]
    fn csv_has_one_row_per_size() {
        let recs = bench_matvec(&[64, 128], &BenchConfig::default()).unwrap();
        assert_eq!(to_csv(&recs).lines().count(), 3);
    }
}
