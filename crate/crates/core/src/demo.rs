//! Inverse iteration for the smallest eigenvalue of the L-shape Poisson
//! problem, run side by side with hierarchical vectors and dense vectors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::basis::{gram_family, ClusterBasis};
use crate::cluster::{build_geometric_tree, ClusterTree, Subtree};
use crate::convert::{convert, ToleranceBudget};
use crate::dense::{matvec, norm2, DenseMatrix, FlopCounter};
use crate::error::{Error, Result};
use crate::factors::{coarsening_factors, projection_factors, CoarseningFactors, ProjectionFactors};
use crate::h2matrix::{compress_dense, BlockTree, H2Matrix};
use crate::hvector::{dot_hv, norm_hv, HVector};
use crate::matvec::{eval, eval_accumulators, materialize_induced, standard_backward, MatvecPlan};
use crate::poisson::{assemble_poisson_lshape, PoissonProblem};
use crate::polynomial::build_isometric_polynomial_basis;

/// Extra relative margin on the power-iteration estimate of `||A||_2`.
const NORM_MARGIN: f64 = 1e-8;
/// Absolute slack per step for round-off when comparing against the dense run.
pub const ROUNDOFF_SLACK: f64 = 1e-11;

#[derive(Clone, Debug)]
pub struct DemoConfig {
    pub grid: usize,
    pub degree: usize,
    pub eta: f64,
    pub eps: f64,
    pub steps: usize,
    pub leaf_size: usize,
    pub backward: Backward,
}

/// How the product is brought into the induced basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backward {
    /// Induced backward transformation on the implicit basis.
    Induced,
    /// Standard backward transformation on the materialized basis.
    Standard,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            degree: 3,
            eta: 2.0,
            eps: 1e-5,
            steps: 20,
            leaf_size: 32,
            backward: Backward::Induced,
        }
    }
}

/// Everything that does not depend on the tolerance: the compressed inverse,
/// its induced basis and the error factors for converting back.
pub struct DemoSetup {
    pub config: DemoConfig,
    pub problem: PoissonProblem,
    pub tree: Arc<ClusterTree>,
    pub basis: Arc<ClusterBasis>,
    pub matrix: H2Matrix,
    /// The compressed matrix in dense form (tree order).
    pub dense: DenseMatrix,
    pub plan: MatvecPlan,
    pub induced: Arc<ClusterBasis>,
    pub projection: ProjectionFactors,
    pub coarsening: CoarseningFactors,
    gram_induced: Vec<DenseMatrix>,
    gram_basis: Vec<DenseMatrix>,
    /// `||M - A^{-1}||_F / ||A^{-1}||_F`.
    pub compression_error: f64,
    /// Upper estimate of `||M||_2`.
    pub norm_bound: f64,
    pub setup_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    /// Clusters of the input vector's subtree.
    pub clusters: usize,
    pub leaves: usize,
    pub flops_forward: u64,
    pub flops_coupling: u64,
    pub flops_backward: u64,
    pub flops_convert: u64,
    pub seconds_eval: f64,
    pub seconds_convert: f64,
    pub seconds_dense: f64,
    /// `||M x||` for the hierarchical iterate.
    pub nu: f64,
    /// `||M d|| / ||d||` for the dense iterate.
    pub nu_dense: f64,
    /// Rayleigh quotient `<x, M x>` of the hierarchical iterate (after conversion).
    pub rayleigh: f64,
    pub rayleigh_dense: f64,
    /// Reported conversion bound of this step.
    pub bound: f64,
    /// Conversion error measured against the dense product.
    pub conversion_error: f64,
    /// Propagated bound for `||x - d||` after this step.
    pub accumulated_bound: f64,
    /// Measured `||x - d||` after this step.
    pub deviation: f64,
}

pub struct DemoRun {
    pub eps: f64,
    pub steps: Vec<StepRecord>,
    pub x: HVector,
}

impl DemoRun {
    pub fn final_record(&self) -> &StepRecord {
        self.steps.last().expect("at least one step")
    }

    /// `|nu - nu_dense| / nu_dense` after the last step.
    pub fn eigenvalue_agreement(&self) -> f64 {
        let r = self.final_record();
        (r.nu - r.nu_dense).abs() / r.nu_dense
    }

    /// Whether every conversion bound and every accumulated bound held.
    pub fn bounds_hold(&self) -> bool {
        self.steps.iter().all(|r| {
            r.conversion_error <= r.bound + ROUNDOFF_SLACK
                && r.deviation <= r.accumulated_bound + r.step as f64 * ROUNDOFF_SLACK
        })
    }
}

impl DemoSetup {
    pub fn new(config: DemoConfig) -> Result<Self> {
        let start = Instant::now();
        if config.steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        let problem = assemble_poisson_lshape(config.grid)?;
        let inverse = problem.dense_inverse()?;
        let points: Vec<Vec<f64>> = problem.points.iter().map(|p| p.to_vec()).collect();
        let f = FlopCounter::new();

        let tree = Arc::new(build_geometric_tree(&points, config.leaf_size)?);
        let basis = Arc::new(build_isometric_polynomial_basis(&tree, config.degree, &f)?);

        let perm = tree.perm();
        let n = problem.dim();
        let a = DenseMatrix::from_fn(n, n, |i, j| inverse.get(perm[i], perm[j]));
        let blocks = Arc::new(BlockTree::build(&tree, &tree, config.eta)?);
        let (matrix, err) = compress_dense(&a, &basis, &basis, &blocks)?;
        let compression_error = err / a.norm_fro();
        let dense = matrix.to_dense();
        let plan = MatvecPlan::new(&matrix, &basis, &f)?;
        let induced = Arc::new(materialize_induced(&matrix, &plan, &f)?);
        let projection = projection_factors(&induced, &basis, &f)?;
        let coarsening = coarsening_factors(&basis, &f)?;
        let gram_induced = gram_family(&induced, &f)?;
        let gram_basis = gram_family(&basis, &f)?;
        let norm_bound = spectral_norm_estimate(&dense) * (1.0 + NORM_MARGIN);
        Ok(Self {
            config,
            problem,
            tree,
            basis,
            matrix,
            dense,
            plan,
            induced,
            projection,
            coarsening,
            gram_induced,
            gram_basis,
            compression_error,
            norm_bound,
            setup_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// The normalized constant vector, exactly representable at the root.
    pub fn start_vector(&self) -> Result<(HVector, Vec<f64>)> {
        let n = self.tree.n();
        let ones = vec![1.0 / (n as f64).sqrt(); n];
        let (x, _) = HVector::from_dense(&ones, Subtree::minimal(&self.tree), &self.basis)?;
        Ok((x, ones))
    }

    /// Runs `steps` inverse-iteration steps with conversion tolerance `eps`.
    ///
    /// The dense run uses the same scaling factors as the hierarchical run,
    /// so both iterates can be compared entrywise.
    pub fn run(&self, eps: f64, steps: usize) -> Result<DemoRun> {
        let check = FlopCounter::new();
        let (mut x, mut d) = self.start_vector()?;
        let mut records = Vec::with_capacity(steps);
        let mut acc_bound = 0.0;
        for step in 1..=steps {
            let f = FlopCounter::new();
            let clusters = x.subtree().count_clusters();
            let leaves = x.subtree().leaves().count();

            let t0 = Instant::now();
            let mut y = match self.config.backward {
                Backward::Induced => eval(&self.matrix, &self.plan, &x, &f)?.to_hvector(&self.induced)?,
                Backward::Standard => {
                    let acc = eval_accumulators(&self.matrix, &self.plan, &x, &f)?;
                    f.in_phase("backward", || standard_backward(&self.induced, acc, &f))?
                }
            };
            let nu = norm_hv(&y, &self.gram_induced, &check)?;
            let seconds_eval = t0.elapsed().as_secs_f64();
            if !(nu > 0.0) {
                return Err(Error::NonFinite("iterate vanished"));
            }
            y.scale(1.0 / nu, &check);

            let t1 = Instant::now();
            let mut budget = ToleranceBudget::new(eps, &self.induced)?;
            let out = f.in_phase("convert", || {
                convert(&y, &self.basis, &self.projection, &self.coarsening, &mut budget, &f)
            })?;
            let seconds_convert = t1.elapsed().as_secs_f64();

            // Dense verification of the conversion error.
            let exact = matvec(&self.dense, &x.to_dense(), &check)?;
            let converted = out.y.to_dense();
            let conversion_error = diff_norm(&converted, &exact.iter().map(|v| v / nu).collect::<Vec<_>>());

            let rayleigh = nu * dot_hv(&x, &out.y, &self.gram_basis, &check)?;
            let mut next = out.y;
            let mu = norm_hv(&next, &self.gram_basis, &check)?;
            next.scale(1.0 / mu, &check);

            let t2 = Instant::now();
            let md = matvec(&self.dense, &d, &check)?;
            let dd = norm2(&d);
            let nu_dense = norm2(&md) / dd;
            let rayleigh_dense = md.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / (dd * dd);
            let d_next: Vec<f64> = md.iter().map(|v| v / (nu * mu)).collect();
            let seconds_dense = t2.elapsed().as_secs_f64();

            acc_bound = (self.norm_bound * acc_bound / nu + out.bound) / mu;
            x = next;
            d = d_next;
            let deviation = diff_norm(&x.to_dense(), &d);

            records.push(StepRecord {
                step,
                clusters,
                leaves,
                flops_forward: f.phase("forward"),
                flops_coupling: f.phase("coupling"),
                flops_backward: f.phase("backward"),
                flops_convert: f.phase("convert"),
                seconds_eval,
                seconds_convert,
                seconds_dense,
                nu,
                nu_dense,
                rayleigh,
                rayleigh_dense,
                bound: out.bound,
                conversion_error,
                accumulated_bound: acc_bound,
                deviation,
            });
        }
        Ok(DemoRun { eps, steps: records, x })
    }

    /// Leaf tiles of the final iterate's partition.
    pub fn tiles(&self, x: &HVector) -> Vec<LeafTile> {
        let raster = Raster::new(&self.problem, &self.tree);
        let cell_area = raster.cell * raster.cell;
        let mut area = vec![0usize; self.tree.len()];
        let leaf_of = leaf_map(x.subtree());
        for &pos in raster.owner.iter().flatten() {
            area[leaf_of[pos]] += 1;
        }
        x.subtree()
            .leaves()
            .map(|t| {
                let c = self.tree.cluster(t);
                LeafTile {
                    cluster: t,
                    level: c.level,
                    size: c.size(),
                    area: area[t] as f64 * cell_area,
                    corner_distance: c.distance_to_point(&[0.5, 0.5]),
                    bmin: [c.bmin[0], c.bmin[1]],
                    bmax: [c.bmax[0], c.bmax[1]],
                }
            })
            .collect()
    }

    /// Writes `PREFIX-runtime.csv`, `PREFIX-clusters.csv`,
    /// `PREFIX-eigen.csv` and `PREFIX-partition.svg`.
    pub fn write_outputs(&self, run: &DemoRun, prefix: &Path) -> Result<Vec<PathBuf>> {
        let stamp = timestamp();
        let path = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(format!("-{suffix}"));
            PathBuf::from(s)
        };

        let mut runtime = format!("# generated {stamp}\n");
        runtime.push_str("step,clusters,leaves,flops_forward,flops_coupling,flops_backward,flops_convert,seconds_eval,seconds_convert,seconds_dense\n");
        for r in &run.steps {
            let _ = writeln!(
                runtime,
                "{},{},{},{},{},{},{},{:.16e},{:.16e},{:.16e}",
                r.step,
                r.clusters,
                r.leaves,
                r.flops_forward,
                r.flops_coupling,
                r.flops_backward,
                r.flops_convert,
                r.seconds_eval,
                r.seconds_convert,
                r.seconds_dense
            );
        }

        let mut eigen = format!("# generated {stamp}\n");
        eigen.push_str("step,nu,nu_dense,rayleigh,rayleigh_dense,lambda,lambda_dense,bound,conversion_error,accumulated_bound,deviation\n");
        for r in &run.steps {
            let _ = writeln!(
                eigen,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.step,
                r.nu,
                r.nu_dense,
                r.rayleigh,
                r.rayleigh_dense,
                1.0 / r.nu,
                1.0 / r.nu_dense,
                r.bound,
                r.conversion_error,
                r.accumulated_bound,
                r.deviation
            );
        }

        let tiles = self.tiles(&run.x);
        let mut clusters = format!("# generated {stamp}\n");
        clusters.push_str("cluster,level,size,area,corner_distance,xmin,xmax,ymin,ymax\n");
        for t in &tiles {
            let _ = writeln!(
                clusters,
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t.cluster, t.level, t.size, t.area, t.corner_distance, t.bmin[0], t.bmax[0], t.bmin[1], t.bmax[1]
            );
        }

        let files = [
            (path("runtime.csv"), runtime),
            (path("clusters.csv"), clusters),
            (path("eigen.csv"), eigen),
            (path("partition.svg"), self.partition_svg(&run.x)),
        ];
        let mut written = Vec::new();
        for (p, content) in files {
            std::fs::write(&p, content)?;
            written.push(p);
        }
        Ok(written)
    }

    /// SVG of the L-shape, each half-cell filled by the leaf owning it.
    pub fn partition_svg(&self, x: &HVector) -> String {
        let raster = Raster::new(&self.problem, &self.tree);
        let leaf_of = leaf_map(x.subtree());
        let size = 512.0;
        let px = size / raster.cells as f64;
        let depth = self.tree.depth().max(1) as f64;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
        );
        let shade = |t: usize| {
            let v = 235.0 - 170.0 * self.tree.cluster(t).level as f64 / depth;
            format!("rgb({0:.0},{0:.0},255)", v)
        };
        // Runs of equal owners along each raster row.
        for b in 0..raster.cells {
            let mut a = 0;
            while a < raster.cells {
                let Some(pos) = raster.owner[b * raster.cells + a] else {
                    a += 1;
                    continue;
                };
                let leaf = leaf_of[pos];
                let start = a;
                while a < raster.cells && raster.owner[b * raster.cells + a].map(|p| leaf_of[p]) == Some(leaf) {
                    a += 1;
                }
                let y = size - (b + 1) as f64 * px;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\"/>",
                    start as f64 * px,
                    y,
                    (a - start) as f64 * px,
                    px,
                    shade(leaf)
                );
            }
        }
        // Leaf boundaries.
        let owner_leaf = |a: usize, b: usize| raster.owner[b * raster.cells + a].map(|p| leaf_of[p]);
        for b in 0..raster.cells {
            for a in 0..raster.cells {
                let here = owner_leaf(a, b);
                if here.is_none() {
                    continue;
                }
                if a + 1 < raster.cells && owner_leaf(a + 1, b) != here {
                    let xx = (a + 1) as f64 * px;
                    let _ = writeln!(
                        svg,
                        "<line x1=\"{xx:.3}\" y1=\"{:.3}\" x2=\"{xx:.3}\" y2=\"{:.3}\" stroke=\"black\" stroke-width=\"0.5\"/>",
                        size - b as f64 * px,
                        size - (b + 1) as f64 * px
                    );
                }
                if b + 1 < raster.cells && owner_leaf(a, b + 1) != here {
                    let yy = size - (b + 1) as f64 * px;
                    let _ = writeln!(
                        svg,
                        "<line x1=\"{:.3}\" y1=\"{yy:.3}\" x2=\"{:.3}\" y2=\"{yy:.3}\" stroke=\"black\" stroke-width=\"0.5\"/>",
                        a as f64 * px,
                        (a + 1) as f64 * px
                    );
                }
            }
        }
        svg.push_str(&format!(
            "<path d=\"M0,0 H{h} V{h} H{s} V{s} H0 Z\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>\n",
            h = size / 2.0,
            s = size
        ));
        svg.push_str("</svg>\n");
        svg
    }
}

/// One leaf of an adaptive partition, drawn as the union of its half-cells.
#[derive(Clone, Debug)]
pub struct LeafTile {
    pub cluster: usize,
    pub level: usize,
    pub size: usize,
    pub area: f64,
    /// Distance from the re-entrant corner to the leaf's bounding box.
    pub corner_distance: f64,
    pub bmin: [f64; 2],
    pub bmax: [f64; 2],
}

/// Mean tile area within `radius` of the re-entrant corner and elsewhere.
pub fn corner_area_means(tiles: &[LeafTile], radius: f64) -> (f64, f64) {
    let mean = |near: bool| {
        let sel: Vec<f64> = tiles
            .iter()
            .filter(|t| (t.corner_distance <= radius) == near)
            .map(|t| t.area)
            .collect();
        if sel.is_empty() {
            f64::NAN
        } else {
            sel.iter().sum::<f64>() / sel.len() as f64
        }
    };
    (mean(true), mean(false))
}

/// Raster of `2N x 2N` half-cells over the unit square. Every half-cell of
/// the L-shape is owned by one interior grid point (by tree position).
struct Raster {
    cells: usize,
    cell: f64,
    owner: Vec<Option<usize>>,
}

impl Raster {
    fn new(problem: &PoissonProblem, tree: &ClusterTree) -> Self {
        let grid = problem.grid;
        let half = grid / 2;
        let cells = 2 * grid;
        let mut position = vec![usize::MAX; (grid + 1) * (grid + 1)];
        for (pos, &orig) in tree.perm().iter().enumerate() {
            let (i, j) = problem.indices[orig];
            position[j * (grid + 1) + i] = pos;
        }
        let nearest = |a: usize| a.div_ceil(2).clamp(1, grid - 1);
        let mut owner = vec![None; cells * cells];
        for b in 0..cells {
            for a in 0..cells {
                if a >= grid && b >= grid {
                    continue;
                }
                let (mut i, mut j) = (nearest(a), nearest(b));
                if i >= half && j >= half {
                    if a < grid {
                        i = half - 1;
                    } else {
                        j = half - 1;
                    }
                }
                owner[b * cells + a] = Some(position[j * (grid + 1) + i]);
            }
        }
        Self {
            cells,
            cell: 0.5 / grid as f64,
            owner,
        }
    }
}

/// Maps each tree position to the subtree leaf containing it.
fn leaf_map(subtree: &Subtree) -> Vec<usize> {
    let tree = subtree.tree();
    let mut out = vec![0; tree.n()];
    for t in subtree.leaves() {
        for pos in tree.cluster(t).range() {
            out[pos] = t;
        }
    }
    out
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `A^T A`.
fn spectral_norm_estimate(a: &DenseMatrix) -> f64 {
    let f = FlopCounter::new();
    let at = a.transpose();
    let mut v = vec![1.0 / (a.cols() as f64).sqrt(); a.cols()];
    let mut sigma = 0.0;
    for _ in 0..100 {
        let av = matvec(a, &v, &f).unwrap();
        sigma = norm2(&av);
        let w = matvec(&at, &av, &f).unwrap();
        let nw = norm2(&w);
        if nw == 0.0 {
            break;
        }
        v = w.iter().map(|x| x / nw).collect();
    }
    sigma
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
