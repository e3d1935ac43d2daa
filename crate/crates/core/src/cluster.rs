//! Cluster trees over contiguous index ranges and the subtrees describing
//! the active partition of a hierarchical vector.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One node of a cluster tree. Its index set is `perm[begin..end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub id: usize,
    pub level: usize,
    pub begin: usize,
    pub end: usize,
    pub sons: Vec<usize>,
    pub father: Option<usize>,
    pub bmin: Vec<f64>,
    pub bmax: Vec<f64>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_leaf(&self) -> bool {
        self.sons.is_empty()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.begin..self.end
    }

    pub fn diameter(&self) -> f64 {
        self.bmin
            .iter()
            .zip(&self.bmax)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance between two bounding boxes.
    pub fn distance(&self, other: &Cluster) -> f64 {
        let mut s = 0.0;
        for i in 0..self.bmin.len() {
            let gap = (other.bmin[i] - self.bmax[i])
                .max(self.bmin[i] - other.bmax[i])
                .max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    /// Euclidean distance from a point to the bounding box.
    pub fn distance_to_point(&self, p: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.bmin.len() {
            let gap = (self.bmin[i] - p[i]).max(p[i] - self.bmax[i]).max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    pub fn area(&self) -> f64 {
        self.bmin.iter().zip(&self.bmax).map(|(a, b)| b - a).product()
    }
}

/// Hierarchical partition of `0..n`. Clusters are numbered in depth-first
/// pre-order, so every son has a larger id than its father and the root is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTree {
    clusters: Vec<Cluster>,
    perm: Vec<usize>,
    /// Point coordinates in tree order, `dim` values per point.
    points: Vec<f64>,
    dim: usize,
    leaf_size: usize,
}

/// First structural defect found by [`ClusterTree::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RootRange { begin: usize, end: usize, n: usize },
    NotPermutation,
    BadSonLink { cluster: usize },
    SonUnion { cluster: usize },
    SonOverlap { cluster: usize },
    NonUniformLeaves { min_level: usize, max_level: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RootRange { begin, end, n } => {
                write!(f, "root covers {begin}..{end} instead of 0..{n}")
            }
            Violation::NotPermutation => write!(f, "index map is not a permutation"),
            Violation::BadSonLink { cluster } => write!(f, "cluster {cluster} has an invalid son"),
            Violation::SonUnion { cluster } => write!(f, "sons of cluster {cluster} do not cover it"),
            Violation::SonOverlap { cluster } => write!(f, "sons of cluster {cluster} overlap"),
            Violation::NonUniformLeaves { min_level, max_level } => {
                write!(f, "leaves on levels {min_level}..={max_level}")
            }
        }
    }
}

impl ClusterTree {
    /// Assembles a tree from raw parts without checking it; see [`validate`](Self::validate).
    pub fn from_parts(
        clusters: Vec<Cluster>,
        perm: Vec<usize>,
        points: Vec<f64>,
        dim: usize,
        leaf_size: usize,
    ) -> Self {
        Self {
            clusters,
            perm,
            points,
            dim,
            leaf_size,
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Leaf size actually used, which may exceed the requested one.
    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster(&self, t: usize) -> &Cluster {
        &self.clusters[t]
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn sons(&self, t: usize) -> &[usize] {
        &self.clusters[t].sons
    }

    pub fn is_leaf(&self, t: usize) -> bool {
        self.clusters[t].sons.is_empty()
    }

    /// `perm[i]` is the original index stored at tree position `i`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn point(&self, pos: usize) -> &[f64] {
        &self.points[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Largest leaf level.
    pub fn depth(&self) -> usize {
        self.clusters
            .iter()
            .filter(|c| c.is_leaf())
            .map(|c| c.level)
            .max()
            .unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.clusters.iter().filter(|c| c.is_leaf()).map(|c| c.id)
    }

    /// Reorders a vector given in original numbering into tree order.
    pub fn to_tree_order(&self, v: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&i| v[i]).collect()
    }

    /// Inverse of [`to_tree_order`](Self::to_tree_order).
    pub fn to_original_order(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (pos, &i) in self.perm.iter().enumerate() {
            out[i] = v[pos];
        }
        out
    }

    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let n = self.n();
        let Some(root) = self.clusters.first() else {
            return Err(Violation::RootRange { begin: 0, end: 0, n });
        };
        if root.begin != 0 || root.end != n {
            return Err(Violation::RootRange {
                begin: root.begin,
                end: root.end,
                n,
            });
        }
        let mut seen = vec![false; n];
        for &i in &self.perm {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Violation::NotPermutation);
            }
        }
        for c in &self.clusters {
            if c.sons.is_empty() {
                continue;
            }
            if c.sons.iter().any(|&s| s >= self.clusters.len() || s <= c.id) {
                return Err(Violation::BadSonLink { cluster: c.id });
            }
            let mut ranges: Vec<(usize, usize)> = c
                .sons
                .iter()
                .map(|&s| (self.clusters[s].begin, self.clusters[s].end))
                .collect();
            ranges.sort_unstable();
            for w in ranges.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Violation::SonOverlap { cluster: c.id });
                }
            }
            let covered: usize = ranges.iter().map(|(b, e)| e.saturating_sub(*b)).sum();
            let contiguous = ranges.windows(2).all(|w| w[0].1 == w[1].0);
            if ranges[0].0 != c.begin || ranges.last().unwrap().1 != c.end || !contiguous || covered != c.size() {
                return Err(Violation::SonUnion { cluster: c.id });
            }
        }
        let levels = self.clusters.iter().filter(|c| c.is_leaf()).map(|c| c.level);
        let (lo, hi) = levels.fold((usize::MAX, 0), |(lo, hi), l| (lo.min(l), hi.max(l)));
        if lo != hi {
            return Err(Violation::NonUniformLeaves {
                min_level: lo,
                max_level: hi,
            });
        }
        Ok(())
    }
}

/// Binary geometric cluster tree: bisection along the longest bounding-box
/// axis at the coordinate median. All leaves end on the same level; when
/// `leaf_size` cannot be met without splitting singletons the effective
/// leaf size is raised (see [`ClusterTree::leaf_size`]).
pub fn build_geometric_tree(points: &[Vec<f64>], leaf_size: usize) -> Result<ClusterTree> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    if leaf_size == 0 {
        return Err(Error::InvalidParameter("leaf size must be at least 1".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidParameter("points must share a positive dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point coordinates"));
    }

    let mut depth = 0;
    while n.div_ceil(1 << depth) > leaf_size {
        depth += 1;
    }
    // Never split below one index per leaf.
    let max_depth = usize::BITS as usize - 1 - n.leading_zeros() as usize;
    let depth = depth.min(max_depth);
    let effective = n.div_ceil(1 << depth);

    let mut perm: Vec<usize> = (0..n).collect();
    let mut clusters = Vec::new();
    split(points, &mut perm, 0, n, 0, depth, None, &mut clusters);
    let flat = perm.iter().flat_map(|&i| points[i].iter().copied()).collect();
    Ok(ClusterTree {
        clusters,
        perm,
        points: flat,
        dim,
        leaf_size: effective,
    })
}

#[allow(clippy::too_many_arguments)]
fn split(
    points: &[Vec<f64>],
    perm: &mut [usize],
    begin: usize,
    end: usize,
    level: usize,
    depth: usize,
    father: Option<usize>,
    out: &mut Vec<Cluster>,
) -> usize {
    let dim = points[0].len();
    let mut bmin = vec![f64::INFINITY; dim];
    let mut bmax = vec![f64::NEG_INFINITY; dim];
    for &i in &perm[begin..end] {
        for j in 0..dim {
            bmin[j] = bmin[j].min(points[i][j]);
            bmax[j] = bmax[j].max(points[i][j]);
        }
    }
    let id = out.len();
    out.push(Cluster {
        id,
        level,
        begin,
        end,
        sons: Vec::new(),
        father,
        bmin,
        bmax,
    });
    if level < depth {
        let c = &out[id];
        let axis = (0..dim)
            .max_by(|&a, &b| {
                (c.bmax[a] - c.bmin[a])
                    .total_cmp(&(c.bmax[b] - c.bmin[b]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        // Stable sort keeps ties in their current order.
        perm[begin..end].sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let mid = begin + (end - begin) / 2;
        let left = split(points, perm, begin, mid, level + 1, depth, Some(id), out);
        let right = split(points, perm, mid, end, level + 1, depth, Some(id), out);
        out[id].sons = vec![left, right];
    }
    id
}

/// Subtree of a cluster tree: a set of member clusters containing the root
/// in which every member is either a leaf or has all its tree sons as members.
#[derive(Clone, Debug, PartialEq)]
pub struct Subtree {
    tree: Arc<ClusterTree>,
    member: Vec<bool>,
    leaf: Vec<bool>,
    count: usize,
}

impl Subtree {
    /// The subtree consisting only of the root.
    pub fn minimal(tree: &Arc<ClusterTree>) -> Self {
        let mut member = vec![false; tree.len()];
        let mut leaf = vec![false; tree.len()];
        member[0] = true;
        leaf[0] = true;
        Self {
            tree: Arc::clone(tree),
            member,
            leaf,
            count: 1,
        }
    }

    /// The whole cluster tree.
    pub fn full(tree: &Arc<ClusterTree>) -> Self {
        Self::to_level(tree, usize::MAX)
    }

    /// All clusters up to `level`, or to the tree leaves if they come first.
    pub fn to_level(tree: &Arc<ClusterTree>, level: usize) -> Self {
        let member: Vec<bool> = tree.clusters().iter().map(|c| c.level <= level).collect();
        let leaf = tree
            .clusters()
            .iter()
            .map(|c| c.level <= level && (c.is_leaf() || c.level == level))
            .collect();
        let count = member.iter().filter(|&&m| m).count();
        Self {
            tree: Arc::clone(tree),
            member,
            leaf,
            count,
        }
    }

    pub fn tree(&self) -> &Arc<ClusterTree> {
        &self.tree
    }

    pub fn contains(&self, t: usize) -> bool {
        self.member[t]
    }

    pub fn is_leaf(&self, t: usize) -> bool {
        self.leaf[t]
    }

    /// Number of member clusters.
    pub fn count_clusters(&self) -> usize {
        self.count
    }

    /// Member clusters in pre-order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.member.len()).filter(move |&t| self.member[t])
    }

    /// Subtree leaves in pre-order, i.e. ordered by index range.
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.leaf.len()).filter(move |&t| self.leaf[t])
    }

    /// Replaces the leaf `t` by its tree sons.
    pub fn expand(&mut self, t: usize) -> Result<()> {
        if !self.leaf[t] {
            return Err(Error::Subtree {
                cluster: t,
                reason: "not a leaf of the subtree",
            });
        }
        if self.tree.is_leaf(t) {
            return Err(Error::Subtree {
                cluster: t,
                reason: "cluster has no sons",
            });
        }
        self.leaf[t] = false;
        for &s in self.tree.sons(t) {
            self.member[s] = true;
            self.leaf[s] = true;
        }
        self.count += self.tree.sons(t).len();
        Ok(())
    }

    /// Removes the sons of `t`, which must all be subtree leaves.
    pub fn contract(&mut self, t: usize) -> Result<()> {
        if !self.member[t] || self.leaf[t] {
            return Err(Error::Subtree {
                cluster: t,
                reason: "not an inner cluster of the subtree",
            });
        }
        if self.tree.sons(t).iter().any(|&s| !self.leaf[s]) {
            return Err(Error::Subtree {
                cluster: t,
                reason: "sons are not all leaves",
            });
        }
        for &s in self.tree.sons(t) {
            self.member[s] = false;
            self.leaf[s] = false;
        }
        self.leaf[t] = true;
        self.count -= self.tree.sons(t).len();
        Ok(())
    }

    /// Checks that the leaves partition the index set.
    pub fn check_partition(&self) -> bool {
        let mut ranges: Vec<_> = self.leaves().map(|t| self.tree.cluster(t).range()).collect();
        ranges.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in ranges {
            if r.start != next {
                return false;
            }
            next = r.end;
        }
        next == self.tree.n()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / n as f64]).collect()
    }

    #[test]
    fn eight_points_on_a_line() {
        let tree = build_geometric_tree(&line(8), 2).unwrap();
        assert_eq!(tree.len(), 7);
        assert_eq!(tree.depth() + 1, 3);
        assert!(tree.leaves().all(|t| tree.cluster(t).size() == 2));
        assert_eq!(tree.validate(), Ok(()));
    }

    #[test]
    fn unit_square_corners() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let tree = build_geometric_tree(&pts, 1).unwrap();
        assert_eq!(tree.depth(), 2);
        assert_eq!(tree.leaves().count(), 4);
        assert!(tree.leaves().all(|t| tree.cluster(t).size() == 1));
    }

    #[test]
    fn leaf_size_is_raised_instead_of_splitting_singletons() {
        let tree = build_geometric_tree(&line(5), 1).unwrap();
        assert_eq!(tree.depth(), 2);
        assert_eq!(tree.leaf_size(), 2);
        assert_eq!(tree.validate(), Ok(()));
    }

    #[test]
    fn empty_input() {
        assert_eq!(build_geometric_tree(&[], 4), Err(Error::EmptyPointSet));
    }

    #[test]
    fn permutation_round_trip() {
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![((i * 7) % 9) as f64]).collect();
        let tree = build_geometric_tree(&pts, 2).unwrap();
        let v: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(tree.to_original_order(&tree.to_tree_order(&v)), v);
        // Tree order sorts the line.
        let sorted = tree.to_tree_order(&pts.iter().map(|p| p[0]).collect::<Vec<_>>());
        assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    }

    fn two_leaf_tree(second: (usize, usize)) -> ClusterTree {
        let mk = |id, level, begin, end, sons: Vec<usize>| Cluster {
            id,
            level,
            begin,
            end,
            sons,
            father: if id == 0 { None } else { Some(0) },
            bmin: vec![0.0],
            bmax: vec![1.0],
        };
        ClusterTree::from_parts(
            vec![
                mk(0, 0, 0, 4, vec![1, 2]),
                mk(1, 1, 0, 2, vec![]),
                mk(2, 1, second.0, second.1, vec![]),
            ],
            (0..4).collect(),
            vec![0.0; 4],
            1,
            2,
        )
    }

    #[test]
    fn validator_reports_overlap_and_gaps() {
        assert_eq!(two_leaf_tree((2, 4)).validate(), Ok(()));
        assert_eq!(
            two_leaf_tree((1, 4)).validate(),
            Err(Violation::SonOverlap { cluster: 0 })
        );
        assert_eq!(
            two_leaf_tree((2, 3)).validate(),
            Err(Violation::SonUnion { cluster: 0 })
        );
    }

    #[test]
    fn subtree_expand_contract() {
        let tree = Arc::new(build_geometric_tree(&line(8), 2).unwrap());
        let mut st = Subtree::minimal(&tree);
        assert_eq!(st.count_clusters(), 1);
        assert!(st.is_leaf(0));
        st.expand(0).unwrap();
        assert_eq!(st.count_clusters(), 3);
        let sizes: Vec<usize> = st.leaves().map(|t| tree.cluster(t).size()).collect();
        assert_eq!(sizes, vec![4, 4]);
        assert!(st.expand(0).is_err());

        let minimal = Subtree::minimal(&tree);
        let mut full = Subtree::full(&tree);
        assert_eq!(full.count_clusters(), 7);
        for t in (0..tree.len()).rev() {
            if !tree.is_leaf(t) {
                full.contract(t).unwrap();
            }
        }
        assert_eq!(full, minimal);
    }

    #[test]
    fn full_binary_depth_three_has_fifteen() {
        let tree = Arc::new(build_geometric_tree(&line(16), 2).unwrap());
        assert_eq!(Subtree::full(&tree).count_clusters(), 15);
    }

    #[test]
    fn contract_rejects_deep_sons() {
        let tree = Arc::new(build_geometric_tree(&line(8), 2).unwrap());
        let mut st = Subtree::full(&tree);
        assert!(st.contract(0).is_err());
        assert!(st.contract(tree.sons(0)[0]).is_ok());
        assert!(st.check_partition());
    }
}
