//! End-to-end: compress a kernel matrix, multiply, convert back and store.

use std::sync::Arc;

use h2vec::basis::gram_family;
use h2vec::cluster::{build_geometric_tree, ClusterTree, Subtree};
use h2vec::convert::{convert, ToleranceBudget};
use h2vec::dense::{matvec, norm2, DenseMatrix, FlopCounter};
use h2vec::factors::{coarsening_factors, projection_factors};
use h2vec::h2matrix::{compress_dense, BlockTree};
use h2vec::hvector::{norm_hv, HVector};
use h2vec::io::{hvector_from_text, hvector_to_text, induced_from_text, induced_to_text};
use h2vec::matvec::{eval, materialize_induced, MatvecPlan};
use h2vec::polynomial::build_isometric_polynomial_basis;

fn circle(n: usize, leaf: usize) -> Arc<ClusterTree> {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
            vec![a.cos(), a.sin()]
        })
        .collect();
    Arc::new(build_geometric_tree(&pts, leaf).unwrap())
}

/// `log |x - y|` off the diagonal, tree order.
fn log_kernel(tree: &ClusterTree) -> DenseMatrix {
    let n = tree.n();
    DenseMatrix::from_fn(n, n, |i, j| {
        let (p, q) = (tree.point(i), tree.point(j));
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        if i == j {
            1.0
        } else {
            -d.ln()
        }
    })
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

#[test]
fn kernel_product_then_conversion() {
    let f = FlopCounter::new();
    let tree = circle(512, 32);
    let q = build_isometric_polynomial_basis(&tree, 3, &f).unwrap();
    let q = Arc::new(q);
    let blocks = Arc::new(BlockTree::build(&tree, &tree, 1.0).unwrap());
    let a = log_kernel(&tree);
    let (m, err) = compress_dense(&a, &q, &q, &blocks).unwrap();
    assert!(err.is_finite());
    let md = m.to_dense();

    let plan = MatvecPlan::new(&m, &q, &f).unwrap();
    let x = HVector::random(&q, Subtree::to_level(&tree, 2), 5).unwrap();
    let y = eval(&m, &plan, &x, &f).unwrap();
    let exact = matvec(&md, &x.to_dense(), &f).unwrap();
    assert!(diff(&y.to_dense(&m, &plan, &md), &exact) <= 1e-11 * norm2(&exact));

    // Back into the row basis.
    let u = Arc::new(materialize_induced(&m, &plan, &f).unwrap());
    let yu = y.to_hvector(&u).unwrap();
    let z = projection_factors(&u, &q, &f).unwrap();
    let p = coarsening_factors(&q, &f).unwrap();
    let eps = 1e-6 * norm2(&exact);
    let mut budget = ToleranceBudget::new(eps, &q).unwrap();
    let out = convert(&yu, &q, &z, &p, &mut budget, &f).unwrap();
    let true_err = diff(&out.y.to_dense(), &exact);
    assert!(true_err <= out.bound * (1.0 + 1e-10) + 1e-13 * norm2(&exact));
    assert!(out.bound <= eps);

    let gram = gram_family(&q, &f).unwrap();
    let nrm = norm_hv(&out.y, &gram, &f).unwrap();
    assert!((nrm - norm2(&out.y.to_dense())).abs() <= 1e-12 * nrm);
}

#[test]
fn results_survive_a_text_round_trip() {
    let f = FlopCounter::new();
    let tree = circle(256, 16);
    let q = build_isometric_polynomial_basis(&tree, 2, &f).unwrap();
    let q = Arc::new(q);
    let blocks = Arc::new(BlockTree::build(&tree, &tree, 2.0).unwrap());
    let (m, _) = compress_dense(&log_kernel(&tree), &q, &q, &blocks).unwrap();
    let plan = MatvecPlan::new(&m, &q, &f).unwrap();
    let x = HVector::random(&q, Subtree::full(&tree), 9).unwrap();
    let y = eval(&m, &plan, &x, &f).unwrap();

    let y2 = induced_from_text(&induced_to_text(&y, &plan), &plan).unwrap();
    let md = m.to_dense();
    assert_eq!(y.to_dense(&m, &plan, &md), y2.to_dense(&m, &plan, &md));

    let x2 = hvector_from_text(&hvector_to_text(&x), &q).unwrap();
    assert_eq!(x.to_dense(), x2.to_dense());
}

#[test]
fn quadratics_are_represented_at_the_root() {
    // A quadratic lies in the range of a degree-2 basis on every cluster.
    let f = FlopCounter::new();
    let tree = circle(256, 16);
    let q = build_isometric_polynomial_basis(&tree, 2, &f).unwrap();
    let q = Arc::new(q);
    let v: Vec<f64> = (0..tree.n())
        .map(|i| {
            let p = tree.point(i);
            1.0 + p[0] - 2.0 * p[1] * p[1] + p[0] * p[1]
        })
        .collect();
    let (x, err) = HVector::from_dense(&v, Subtree::minimal(&tree), &q).unwrap();
    assert!(err <= 1e-12 * norm2(&v));
    assert!(diff(&x.to_dense(), &v) <= 1e-12 * norm2(&v));
}
