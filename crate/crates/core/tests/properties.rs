use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use h2vec::basis::{gram_family, orthogonalize, random_nested_basis};
use h2vec::cluster::{build_geometric_tree, ClusterTree, Subtree};
use h2vec::dense::{matmul, DenseMatrix, FlopCounter};
use h2vec::hvector::{axpy, dot_hv, HVector};
use h2vec::selftest::{
    algebra_trial, coarsening_trial, convert_trial, eval_trial, projection_trial, ErrorCheck, THEOREM_TOL,
};

fn points(n: usize, dim: usize, seed: u64, duplicates: bool) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
    if duplicates {
        for i in 1..n {
            if rng.gen_bool(0.5) {
                pts[i] = pts[rng.gen_range(0..i)].clone();
            }
        }
    }
    pts
}

fn tree(n: usize, leaf: usize, seed: u64) -> Arc<ClusterTree> {
    Arc::new(build_geometric_tree(&points(n, 2, seed, false), leaf).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trees_are_valid(n in 1usize..600, dim in 1usize..=3, leaf in 1usize..=24, seed: u64, dup: bool) {
        let t = build_geometric_tree(&points(n, dim, seed, dup), leaf).unwrap();
        prop_assert!(t.validate().is_ok());
        let mut perm = t.perm().to_vec();
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..n).collect::<Vec<_>>());
        // Uniform leaf depth stops at one split per index bit.
        prop_assert!(t.leaf_size() <= leaf.max(2));
        for l in t.leaves() {
            prop_assert!(t.cluster(l).size() <= t.leaf_size());
            prop_assert_eq!(t.cluster(l).level, t.depth());
        }
    }

    #[test]
    fn expand_then_contract_restores_the_root(n in 8usize..400, seed: u64, steps in 1usize..40) {
        let t = tree(n, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Subtree::minimal(&t);
        let mut done = Vec::new();
        for _ in 0..steps {
            let open: Vec<usize> = s.leaves().filter(|&c| !t.is_leaf(c)).collect();
            if open.is_empty() {
                break;
            }
            let c = open[rng.gen_range(0..open.len())];
            s.expand(c).unwrap();
            done.push(c);
            prop_assert!(s.check_partition());
        }
        for &c in done.iter().rev() {
            s.contract(c).unwrap();
            prop_assert!(s.check_partition());
        }
        prop_assert_eq!(s.count_clusters(), 1);
    }

    #[test]
    fn bases_are_nested_and_orthogonalization_keeps_ranges(n in 16usize..300, k in 1usize..5, seed: u64) {
        let t = tree(n, 2 * k, seed);
        let f = FlopCounter::new();
        let v = random_nested_basis(&t, k, seed);
        let (q, r) = orthogonalize(&v, &f).unwrap();
        prop_assert!(q.isometry_defect() <= 1e-12);
        for c in t.clusters() {
            let vt = v.materialize(c.id);
            if !c.is_leaf() {
                let parts: Vec<DenseMatrix> = c.sons.iter()
                    .map(|&s| matmul(&v.materialize(s), v.transfer(s), &f).unwrap())
                    .collect();
                let refs: Vec<&DenseMatrix> = parts.iter().collect();
                let stacked = DenseMatrix::vstack(&refs).unwrap();
                prop_assert!(stacked.sub(&vt).norm_fro() <= 1e-12 * vt.norm_fro());
            }
            let qr = matmul(&q.materialize(c.id), &r[c.id], &f).unwrap();
            prop_assert!(qr.sub(&vt).norm_fro() <= 1e-11 * vt.norm_fro());
        }
    }

    #[test]
    fn dot_is_symmetric(n in 16usize..300, k in 1usize..5, seed: u64) {
        let t = tree(n, 2 * k, seed);
        let f = FlopCounter::new();
        let b = Arc::new(random_nested_basis(&t, k, seed));
        let g = gram_family(&b, &f).unwrap();
        let x = HVector::random(&b, Subtree::to_level(&t, 1.min(t.depth())), seed).unwrap();
        let y = HVector::random(&b, Subtree::full(&t), seed ^ 1).unwrap();
        let (a, c) = (dot_hv(&x, &y, &g, &f).unwrap(), dot_hv(&y, &x, &g, &f).unwrap());
        prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(c.abs()).max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn coarsening_error_is_exact(seed: u64) {
        let c = coarsening_trial(seed, 512).unwrap();
        prop_assert!(c.worst() <= THEOREM_TOL, "{:?}", c);
    }

    #[test]
    fn projection_error_is_exact(seed: u64) {
        for c in projection_trial(seed, 256).unwrap() {
            prop_assert!(c.worst() <= THEOREM_TOL, "{:?}", c);
        }
    }

    #[test]
    fn reported_projection_errors_never_exceed_the_vector(seed: u64) {
        for c in projection_trial(seed, 128).unwrap() {
            let ErrorCheck { reported, scale, .. } = c;
            prop_assert!(reported <= scale * (1.0 + 1e-12));
        }
    }

    #[test]
    fn products_are_exact_and_bounded(seed: u64) {
        let t = eval_trial(seed, 512, false).unwrap();
        prop_assert!(t.passed(), "{:?}", t);
    }

    #[test]
    fn vector_algebra_matches_dense(seed: u64) {
        let t = algebra_trial(seed, 512).unwrap();
        prop_assert!(t.passed(), "{:?}", t);
    }

    #[test]
    fn conversion_is_sound_and_monotone(seed: u64) {
        let t = convert_trial(seed, 512).unwrap();
        prop_assert!(t.passed(), "{:?}", t);
    }
}

/// Flops of `y += x` with `x` on level `l` and `y` on level `l - 1`.
fn axpy_flops(t: &Arc<ClusterTree>, b: &Arc<h2vec::basis::ClusterBasis>, l: usize) -> u64 {
    let f = FlopCounter::new();
    let x = HVector::random(b, Subtree::to_level(t, l), 1).unwrap();
    let mut y = HVector::random(b, Subtree::to_level(t, l - 1), 2).unwrap();
    axpy(0.5, &x, &mut y, &f).unwrap();
    f.total()
}

#[test]
fn axpy_flops_are_linear_in_the_subtrees() {
    for k in [1, 3, 6] {
        let t = tree(1 << 12, 2 * k, 3);
        let b = Arc::new(random_nested_basis(&t, k, 4));
        for l in 3..t.depth() {
            let ratio = axpy_flops(&t, &b, l + 1) as f64 / axpy_flops(&t, &b, l) as f64;
            assert!((1.7..=2.4).contains(&ratio), "k {k} level {l}: {ratio}");
        }
    }
}
