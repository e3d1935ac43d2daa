//! Seeded randomized trials that compare every algorithm with a dense
//! oracle. The command line selftest and the acceptance suite share them.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{gram_family, random_isometric_basis, random_nested_basis, ClusterBasis};
use crate::bench::random_points;
use crate::cluster::{build_geometric_tree, ClusterTree, Subtree};
use crate::convert::{coarsen_pass, convert, ToleranceBudget};
use crate::dense::{matmul, matvec, matvec_t, norm2, DenseMatrix, FlopCounter};
use crate::error::Result;
use crate::factors::{coarsening_factors, projection_factors};
use crate::h2matrix::{random_h2, BlockTree};
use crate::householder::{extend_to_orthonormal, isometry_defect, thin_qr};
use crate::hvector::{axpy, dot_hv, norm_hv, HVector};
use crate::matvec::{eval, materialize_induced, MatvecPlan};

/// Tolerances of the individual suites.
pub const EVAL_TOL: f64 = 1e-11;
pub const THEOREM_TOL: f64 = 1e-11;
pub const ALGEBRA_TOL: f64 = 1e-12;
pub const QR_TOL: f64 = 1e-13;
/// Conversion tolerances, from coarse to fine.
pub const CONVERT_EPS: [f64; 3] = [1e-4, 1e-6, 1e-8];
/// Absolute round-off allowance for `||x - y|| <= bound` at `||x|| = 1`.
pub const CONVERT_SLACK: f64 = 1e-13;

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize, leaf: usize) -> Result<Arc<ClusterTree>> {
    let dim = rng.gen_range(1..=3);
    let pts = random_points(n, dim, rng.gen());
    Ok(Arc::new(build_geometric_tree(&pts, leaf)?))
}

/// Subtrees of varying shape: minimal, full, a level cut or a random growth.
pub fn random_subtree(tree: &Arc<ClusterTree>, rng: &mut ChaCha8Rng) -> Result<Subtree> {
    Ok(match rng.gen_range(0..4) {
        0 => Subtree::minimal(tree),
        1 => Subtree::full(tree),
        2 => Subtree::to_level(tree, rng.gen_range(0..=tree.depth())),
        _ => {
            let mut s = Subtree::minimal(tree);
            let steps = rng.gen_range(1..=tree.len() / 2 + 1);
            for _ in 0..steps {
                let open: Vec<usize> = s.leaves().filter(|&t| !tree.is_leaf(t)).collect();
                match open.choose(rng) {
                    Some(&t) => s.expand(t)?,
                    None => break,
                }
            }
            s
        }
    })
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

#[derive(Clone, Debug)]
pub struct EvalTrial {
    pub n: usize,
    pub k: usize,
    pub ka: usize,
    /// `||dense(eval(x)) - A dense(x)|| / ||A dense(x)||`, with `dense` taken
    /// both from the definition of the induced basis and from its
    /// materialization.
    pub rel_error: f64,
    /// The same for `eval(alpha x + z)` against `alpha eval(x) + eval(z)`.
    pub linearity: f64,
    pub input_clusters: usize,
    pub result_clusters: usize,
    pub sparsity: usize,
    pub max_induced_rank: usize,
}

impl EvalTrial {
    pub fn tree_bound_holds(&self) -> bool {
        self.result_clusters <= self.sparsity * self.input_clusters
    }

    pub fn rank_bound_holds(&self) -> bool {
        self.max_induced_rank <= self.ka + self.sparsity * self.k
    }

    pub fn passed(&self) -> bool {
        self.rel_error <= EVAL_TOL && self.linearity <= EVAL_TOL && self.tree_bound_holds() && self.rank_bound_holds()
    }
}

/// One random H²-matrix product with `64 <= n <= max_n` and ranks in `1..=8`.
/// With `corrupt`, one coupling matrix is perturbed after the dense
/// reference has been taken.
pub fn eval_trial(seed: u64, max_n: usize, corrupt: bool) -> Result<EvalTrial> {
    let mut rng = rng(seed, 1);
    let n = rng.gen_range(64..=max_n.max(64));
    let (k, ka) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
    let leaf = 2 * k.max(ka) + rng.gen_range(0..=8);
    let eta = *[0.5, 1.0, 2.0, 1e6].choose(&mut rng).unwrap();
    let tree = random_tree(&mut rng, n, leaf)?;
    let v = Arc::new(random_nested_basis(&tree, ka, rng.gen()));
    let w = Arc::new(random_nested_basis(&tree, ka, rng.gen()));
    let q = Arc::new(if rng.gen() {
        random_isometric_basis(&tree, k, rng.gen())?
    } else {
        random_nested_basis(&tree, k, rng.gen())
    });
    let blocks = Arc::new(BlockTree::build(&tree, &tree, eta)?);
    let mut m = random_h2(&blocks, &v, &w, rng.gen(), 1.0)?;
    let a = m.to_dense();
    if corrupt {
        let leaves: Vec<usize> = blocks.leaves().map(|b| b.id).collect();
        let b = *leaves.choose(&mut rng).unwrap();
        m.coupling_mut(b).add_to(0, 0, 1.0);
    }
    let f = FlopCounter::new();
    let plan = MatvecPlan::new(&m, &q, &f)?;

    let x = HVector::random(&q, random_subtree(&tree, &mut rng)?, rng.gen())?;
    let z = HVector::random(&q, random_subtree(&tree, &mut rng)?, rng.gen())?;
    let alpha = rng.gen_range(-2.0..2.0);

    let ax = matvec(&a, &x.to_dense(), &f)?;
    let yx = eval(&m, &plan, &x, &f)?;
    let dx = yx.to_dense(&m, &plan, &a);
    // The materialized induced basis is built from the couplings in use.
    let u = Arc::new(materialize_induced(&m, &plan, &f)?);
    let dm = yx.to_hvector(&u)?.to_dense();
    let rel_error = diff(&dx, &ax).max(diff(&dm, &ax)) / norm2(&ax);

    let mut sum = z.clone();
    axpy(alpha, &x, &mut sum, &f)?;
    let ds = eval(&m, &plan, &sum, &f)?.to_dense(&m, &plan, &a);
    let dz = eval(&m, &plan, &z, &f)?.to_dense(&m, &plan, &a);
    let expect: Vec<f64> = dx.iter().zip(&dz).map(|(p, q)| alpha * p + q).collect();
    let linearity = diff(&ds, &expect) / norm2(&expect).max(f64::MIN_POSITIVE);

    Ok(EvalTrial {
        n: tree.n(),
        k,
        ka,
        rel_error,
        linearity,
        input_clusters: x.subtree().count_clusters(),
        result_clusters: yx.subtree().count_clusters(),
        sparsity: blocks.sparsity_constant(),
        max_induced_rank: plan.max_induced_rank(),
    })
}

/// Reported against dense value of an error quantity.
#[derive(Clone, Copy, Debug)]
pub struct ErrorCheck {
    pub reported: f64,
    pub dense: f64,
    /// Deviation of the new coefficients from the dense projection, relative
    /// to the projected vector.
    pub coeff_error: f64,
    /// Norm of the vector being projected.
    pub scale: f64,
    /// `#t <= k`: the target basis spans everything and the error vanishes.
    pub trivial: bool,
}

impl ErrorCheck {
    /// Relative deviation; for trivial clusters relative to the projected vector.
    pub fn rel(&self) -> f64 {
        let d = (self.reported - self.dense).abs();
        if self.trivial {
            d / self.scale.max(f64::MIN_POSITIVE)
        } else {
            d / self.dense.max(f64::MIN_POSITIVE)
        }
    }

    pub fn worst(&self) -> f64 {
        self.rel().max(self.coeff_error)
    }
}

/// `Q_t Q_t^T v`.
fn dense_projection(qt: &DenseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    let f = FlopCounter::new();
    matvec(qt, &matvec_t(qt, v, &f)?, &f)
}

/// Coarsens a random vector at a random inner cluster and compares the
/// reported error with `||v_t - Q_t Q_t^T v_t||`.
pub fn coarsening_trial(seed: u64, max_n: usize) -> Result<ErrorCheck> {
    let mut rng = rng(seed, 2);
    let n = rng.gen_range(32..=max_n.max(32));
    let k = rng.gen_range(1..=6);
    let leaf = 2 * k + rng.gen_range(1..=6);
    let tree = random_tree(&mut rng, n, leaf)?;
    let q = Arc::new(random_isometric_basis(&tree, k, rng.gen())?);
    let f = FlopCounter::new();
    let p = coarsening_factors(&q, &f)?;

    let inner: Vec<usize> = (0..tree.len()).filter(|&t| !tree.is_leaf(t)).collect();
    let t = *inner.choose(&mut rng).unwrap();
    let mut path = vec![t];
    while let Some(father) = tree.cluster(*path.last().unwrap()).father {
        path.push(father);
    }
    let mut sub = Subtree::minimal(&tree);
    for &c in path.iter().rev() {
        sub.expand(c)?;
    }
    let mut x = HVector::random(&q, sub, rng.gen())?;
    let range = tree.cluster(t).range();
    let v = x.to_dense()[range.clone()].to_vec();
    let proj = dense_projection(&q.materialize(t), &v)?;
    let dense = diff(&v, &proj);

    let reported = x.coarsen(t, &p, &f)?;
    let after = x.to_dense()[range].to_vec();
    Ok(ErrorCheck {
        reported,
        dense,
        coeff_error: diff(&after, &proj) / norm2(&proj).max(f64::MIN_POSITIVE),
        scale: norm2(&v),
        trivial: tree.cluster(t).size() <= k,
    })
}

/// `||Z_t x||` against the dense projection error of `V_t x` on every
/// cluster of a random tree.
pub fn projection_trial(seed: u64, max_n: usize) -> Result<Vec<ErrorCheck>> {
    let mut rng = rng(seed, 3);
    let n = rng.gen_range(32..=max_n.max(32));
    let (kv, k) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let leaf = 2 * k.max(kv) + rng.gen_range(1..=6);
    let tree = random_tree(&mut rng, n, leaf)?;
    let v = random_nested_basis(&tree, kv, rng.gen());
    let q = random_isometric_basis(&tree, k, rng.gen())?;
    let f = FlopCounter::new();
    let z = projection_factors(&v, &q, &f)?;
    (0..tree.len())
        .map(|t| {
            let xh: Vec<f64> = (0..kv).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vt = v.materialize(t);
            let qt = q.materialize(t);
            let w = matvec(&vt, &xh, &f)?;
            let proj = dense_projection(&qt, &w)?;
            let coeffs = z.project(t, &xh, &f)?;
            let dense_coeffs = matvec_t(&qt, &w, &f)?;
            Ok(ErrorCheck {
                reported: z.error(t, &xh, &f)?,
                dense: diff(&w, &proj),
                coeff_error: diff(&coeffs, &dense_coeffs) / norm2(&w).max(f64::MIN_POSITIVE),
                scale: norm2(&w),
                trivial: tree.cluster(t).size() <= k,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct AlgebraTrial {
    pub axpy: f64,
    pub dot: f64,
    pub norm: f64,
    pub refine: f64,
    /// `x - x` coarsened to the minimal subtree with zero reported error.
    pub cancellation: bool,
}

impl AlgebraTrial {
    pub fn worst(&self) -> f64 {
        self.axpy.max(self.dot).max(self.norm).max(self.refine)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= ALGEBRA_TOL && self.cancellation
    }
}

/// `axpy`, `dot`, `norm` and `refine` against dense vectors. The dot product
/// error is taken relative to `||x|| ||y||`.
pub fn algebra_trial(seed: u64, max_n: usize) -> Result<AlgebraTrial> {
    let mut rng = rng(seed, 4);
    let n = rng.gen_range(16..=max_n.max(16));
    let k = rng.gen_range(1..=6);
    let leaf = 2 * k + rng.gen_range(0..=6);
    let tree = random_tree(&mut rng, n, leaf)?;
    let f = FlopCounter::new();
    let basis = Arc::new(if rng.gen() {
        random_isometric_basis(&tree, k, rng.gen())?
    } else {
        random_nested_basis(&tree, k, rng.gen())
    });
    let gram = gram_family(&basis, &f)?;
    let x = HVector::random(&basis, random_subtree(&tree, &mut rng)?, rng.gen())?;
    let y = HVector::random(&basis, random_subtree(&tree, &mut rng)?, rng.gen())?;
    let (dx, dy) = (x.to_dense(), y.to_dense());
    let alpha = rng.gen_range(-2.0..2.0);

    let mut z = y.clone();
    axpy(alpha, &x, &mut z, &f)?;
    let expect: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| alpha * a + b).collect();
    let axpy_err = diff(&z.to_dense(), &expect) / norm2(&expect).max(f64::MIN_POSITIVE);

    let dense_dot: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    let dot = (dot_hv(&x, &y, &gram, &f)? - dense_dot).abs() / (norm2(&dx) * norm2(&dy)).max(f64::MIN_POSITIVE);
    let norm = (norm_hv(&x, &gram, &f)? - norm2(&dx)).abs() / norm2(&dx).max(f64::MIN_POSITIVE);

    let mut r = x.clone();
    let open: Vec<usize> = r.subtree().leaves().filter(|&t| !tree.is_leaf(t)).collect();
    if let Some(&t) = open.choose(&mut rng) {
        r.refine(t, &f)?;
    }
    let refine = diff(&r.to_dense(), &dx) / norm2(&dx).max(f64::MIN_POSITIVE);

    let q = Arc::new(random_isometric_basis(&tree, k, rng.gen())?);
    let p = coarsening_factors(&q, &f)?;
    let u = HVector::random(&q, random_subtree(&tree, &mut rng)?, rng.gen())?;
    let mut d = u.clone();
    axpy(-1.0, &u, &mut d, &f)?;
    let mut budget = ToleranceBudget::new(0.0, &q)?;
    let bound = coarsen_pass(&mut d, &p, &mut budget, &f)?;
    let cancellation = bound == 0.0 && d.subtree().count_clusters() == 1 && d.to_dense().iter().all(|&v| v == 0.0);

    Ok(AlgebraTrial {
        axpy: axpy_err,
        dot,
        norm,
        refine,
        cancellation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// A nested basis close to the target.
    Nested,
    /// The induced basis of a matrix-vector product.
    Induced,
    /// The target basis itself.
    Target,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvertLevel {
    pub eps: f64,
    pub error: f64,
    pub bound: f64,
    pub clusters: usize,
}

#[derive(Clone, Debug)]
pub struct ConvertTrial {
    pub source: Source,
    pub levels: Vec<ConvertLevel>,
}

impl ConvertTrial {
    pub fn sound(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.error <= l.bound + CONVERT_SLACK && l.bound <= l.eps)
    }

    /// `#T_y` does not shrink as the tolerance decreases.
    pub fn monotone(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].clusters >= w[0].clusters)
    }

    pub fn passed(&self) -> bool {
        self.sound() && self.monotone()
    }
}

/// `basis` with every leaf matrix perturbed by `delta` times uniform noise.
fn perturbed(basis: &ClusterBasis, delta: f64, rng: &mut ChaCha8Rng) -> Result<ClusterBasis> {
    let tree = basis.tree();
    let mut leaf = vec![None; tree.len()];
    let mut transfer = vec![None; tree.len()];
    for c in tree.clusters() {
        if c.is_leaf() {
            let v = basis.leaf_matrix(c.id);
            leaf[c.id] = Some(DenseMatrix::from_fn(v.rows(), v.cols(), |i, j| {
                v.get(i, j) + delta * rng.gen_range(-1.0..1.0)
            }));
        }
        if c.father.is_some() {
            transfer[c.id] = Some(basis.transfer(c.id).clone());
        }
    }
    ClusterBasis::new(Arc::clone(tree), basis.rank(), leaf, transfer, false)
}

/// A random coefficient at the root, refined along `sub` with fresh
/// contributions of size `gamma^level` added at every level.
fn layered_vector(basis: &Arc<ClusterBasis>, sub: &Subtree, gamma: f64, rng: &mut ChaCha8Rng) -> Result<HVector> {
    let f = FlopCounter::new();
    let tree = basis.tree();
    let mut x = HVector::random(basis, Subtree::minimal(tree), rng.gen())?;
    for t in sub.members().collect::<Vec<_>>() {
        if sub.is_leaf(t) {
            continue;
        }
        x.refine(t, &f)?;
        for &s in tree.sons(t) {
            let scale = gamma.powi(tree.cluster(s).level as i32);
            let c: Vec<f64> = x
                .coeff(s)
                .unwrap()
                .iter()
                .map(|v| v + scale * rng.gen_range(-1.0..1.0))
                .collect();
            x.set_coeff(s, &c)?;
        }
    }
    Ok(x)
}

/// Converts a unit vector into a random isometric basis whose leaves hold
/// exactly `k` indices, so that every tolerance is attainable. The source
/// is close to the target range, with details decaying geometrically down
/// the tree, so that different tolerances stop at different levels.
pub fn convert_trial(seed: u64, max_n: usize) -> Result<ConvertTrial> {
    let mut rng = rng(seed, 5);
    let k = rng.gen_range(1..=5);
    let mut depth_max = 2;
    while k << (depth_max + 1) <= max_n && depth_max < 7 {
        depth_max += 1;
    }
    let n = k << rng.gen_range(2..=depth_max);
    let tree = random_tree(&mut rng, n, k)?;
    let f = FlopCounter::new();
    let q = Arc::new(random_isometric_basis(&tree, k, rng.gen())?);
    let p = coarsening_factors(&q, &f)?;
    let delta = 10f64.powf(rng.gen_range(-11.0..-2.0));
    let gamma = 10f64.powf(rng.gen_range(-3.0..-0.5));
    let source = [Source::Nested, Source::Induced, Source::Target][(seed % 3) as usize];
    let mut x = match source {
        Source::Nested => {
            let v = Arc::new(perturbed(&q, delta, &mut rng)?);
            let sub = random_subtree(&tree, &mut rng)?;
            layered_vector(&v, &sub, gamma, &mut rng)?
        }
        Source::Target => {
            let sub = random_subtree(&tree, &mut rng)?;
            layered_vector(&q, &sub, gamma, &mut rng)?
        }
        Source::Induced => {
            let v = Arc::new(perturbed(&q, delta, &mut rng)?);
            let w = Arc::new(random_nested_basis(&tree, k, rng.gen()));
            let qin = Arc::new(random_isometric_basis(&tree, rng.gen_range(1..=k), rng.gen())?);
            let eta = *[0.5, 1.0, 2.0].choose(&mut rng).unwrap();
            let blocks = Arc::new(BlockTree::build(&tree, &tree, eta)?);
            let mut m = random_h2(&blocks, &v, &w, rng.gen(), 1.0)?;
            for b in blocks.leaves() {
                let level = tree.cluster(b.row).level as i32;
                m.coupling_mut(b.id).scale(gamma.powi(level));
            }
            let plan = MatvecPlan::new(&m, &qin, &f)?;
            let u = Arc::new(materialize_induced(&m, &plan, &f)?);
            let xin = HVector::random(&qin, random_subtree(&tree, &mut rng)?, rng.gen())?;
            eval(&m, &plan, &xin, &f)?.to_hvector(&u)?
        }
    };
    let scale = norm2(&x.to_dense());
    if scale > 0.0 {
        x.scale(1.0 / scale, &f);
    }
    let dx = x.to_dense();
    let z = projection_factors(x.basis(), &q, &f)?;
    let levels = CONVERT_EPS
        .iter()
        .map(|&eps| {
            let mut budget = ToleranceBudget::new(eps, &q)?;
            let out = convert(&x, &q, &z, &p, &mut budget, &f)?;
            Ok(ConvertLevel {
                eps,
                error: diff(&out.y.to_dense(), &dx),
                bound: out.bound,
                clusters: out.y.subtree().count_clusters(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConvertTrial { source, levels })
}

/// Random point sets including duplicates; returns whether the tree validates.
pub fn tree_trial(seed: u64, max_n: usize) -> Result<bool> {
    let mut rng = rng(seed, 6);
    let n = rng.gen_range(1..=max_n.max(1));
    let dim = rng.gen_range(1..=3);
    let leaf = rng.gen_range(1..=20);
    let mut pts = random_points(n, dim, rng.gen());
    if rng.gen_bool(0.3) {
        for i in 0..n {
            if rng.gen_bool(0.5) {
                pts[i] = pts[rng.gen_range(0..=i)].clone();
            }
        }
    }
    let tree = build_geometric_tree(&pts, leaf)?;
    let leaves_ok = tree.leaf_size() <= leaf.max(2)
        && tree
            .leaves()
            .all(|t| tree.cluster(t).size() <= tree.leaf_size() && tree.cluster(t).level == tree.depth());
    Ok(tree.validate().is_ok() && leaves_ok)
}

/// Householder QR and orthonormal completion of a random tall matrix.
pub fn qr_trial(seed: u64) -> Result<f64> {
    let mut rng = rng(seed, 7);
    let cols = rng.gen_range(1..=12);
    let rows = cols + rng.gen_range(0..=20);
    let a = DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let f = FlopCounter::new();
    let (q, r) = thin_qr(&a, &f)?;
    let mut worst = matmul(&q, &r, &f)?.sub(&a).norm_fro() / a.norm_fro();
    worst = worst.max(isometry_defect(&q));
    for j in 0..cols {
        for i in j + 1..cols {
            worst = worst.max(r.get(i, j).abs());
        }
    }
    let c = extend_to_orthonormal(&q, &f)?;
    if c.dim() + cols != rows {
        return Ok(f64::INFINITY);
    }
    if c.dim() > 0 {
        let cq = c.to_dense(&f)?;
        worst = worst.max(isometry_defect(&cq));
        let cross = crate::dense::matmul_tn(&q, &cq, &f)?;
        worst = worst.max(cross.max_abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub worst: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<12} {:>4}/{:<4} passed  worst {:.3e}  {}",
            self.name,
            self.trials - self.failures,
            self.trials,
            self.worst,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Perturbs one coupling matrix behind the dense reference's back.
    CorruptCoupling,
}

#[derive(Clone, Debug)]
pub struct SelftestConfig {
    pub seed: u64,
    pub trials: usize,
    pub max_n: usize,
    pub fault: Fault,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            max_n: 512,
            fault: Fault::None,
        }
    }
}

fn suite(name: &'static str, cfg: &SelftestConfig, mut trial: impl FnMut(u64) -> Result<(bool, f64)>) -> SuiteReport {
    let mut report = SuiteReport {
        name,
        trials: cfg.trials,
        failures: 0,
        worst: 0.0,
    };
    for i in 0..cfg.trials {
        match trial(cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)) {
            Ok((ok, worst)) => {
                report.failures += usize::from(!ok);
                report.worst = report.worst.max(worst);
            }
            Err(_) => report.failures += 1,
        }
    }
    report
}

/// Runs every suite and returns one report each.
pub fn run_selftest(cfg: &SelftestConfig) -> Vec<SuiteReport> {
    let n = cfg.max_n;
    let corrupt = cfg.fault == Fault::CorruptCoupling;
    vec![
        suite("dense", cfg, |s| qr_trial(s).map(|w| (w <= QR_TOL, w))),
        suite("cluster", cfg, |s| tree_trial(s, n).map(|ok| (ok, 0.0))),
        suite("hvector", cfg, |s| algebra_trial(s, n).map(|t| (t.passed(), t.worst()))),
        suite("coarsen", cfg, |s| {
            coarsening_trial(s, n).map(|c| (c.worst() <= THEOREM_TOL, c.worst()))
        }),
        suite("projection", cfg, |s| {
            projection_trial(s, n).map(|cs| {
                let w = cs.iter().map(ErrorCheck::worst).fold(0.0, f64::max);
                (w <= THEOREM_TOL, w)
            })
        }),
        suite("eval", cfg, |s| {
            eval_trial(s, n, corrupt).map(|t| (t.passed(), t.rel_error.max(t.linearity)))
        }),
        suite("convert", cfg, |s| {
            convert_trial(s, n).map(|t| {
                let w = t
                    .levels
                    .iter()
                    .map(|l| l.error - l.bound)
                    .fold(f64::NEG_INFINITY, f64::max);
                (t.passed(), w.max(0.0))
            })
        }),
    ]
}
