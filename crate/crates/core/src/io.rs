//! Line-based text dumps. A file is a sequence of sections (`tree`,
//! `basis`, `hvector`, `h2matrix`, `induced`), each closed by `end`; every
//! reader picks the first section of its kind. Reals are written with 17
//! significant digits, so reading a dump back is bit-exact.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::basis::ClusterBasis;
use crate::cluster::{Cluster, ClusterTree, Subtree};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::h2matrix::{BlockTree, H2Matrix};
use crate::hvector::HVector;
use crate::matvec::{InducedHVector, MatvecPlan};

fn real(out: &mut String, v: f64) {
    let _ = write!(out, " {v:.16e}");
}

fn matrix(out: &mut String, m: &DenseMatrix) {
    let _ = write!(out, " {} {}", m.rows(), m.cols());
    for &v in m.as_slice() {
        real(out, v);
    }
}

fn subtree_leaves(out: &mut String, s: &Subtree) {
    let leaves: Vec<usize> = s.leaves().collect();
    let _ = write!(out, "leaves {}", leaves.len());
    for t in leaves {
        let _ = write!(out, " {t}");
    }
    out.push('\n');
}

pub fn tree_to_text(tree: &ClusterTree) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "tree {} {} {} {}",
        tree.n(),
        tree.dim(),
        tree.leaf_size(),
        tree.len()
    );
    out.push_str("perm");
    for p in tree.perm() {
        let _ = write!(out, " {p}");
    }
    out.push('\n');
    for pos in 0..tree.n() {
        let _ = write!(out, "point {pos}");
        for &v in tree.point(pos) {
            real(&mut out, v);
        }
        out.push('\n');
    }
    for c in tree.clusters() {
        let father = c.father.map_or("-".to_string(), |f| f.to_string());
        let _ = write!(
            out,
            "cluster {} {} {} {} {} {}",
            c.id,
            c.level,
            c.begin,
            c.end,
            father,
            c.sons.len()
        );
        for s in &c.sons {
            let _ = write!(out, " {s}");
        }
        for &v in c.bmin.iter().chain(&c.bmax) {
            real(&mut out, v);
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn basis_to_text(basis: &ClusterBasis) -> String {
    let tree = basis.tree();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "basis {} {} {}",
        tree.len(),
        basis.rank(),
        u8::from(basis.is_isometric())
    );
    for c in tree.clusters() {
        if c.is_leaf() {
            let _ = write!(out, "leaf {}", c.id);
            matrix(&mut out, basis.leaf_matrix(c.id));
            out.push('\n');
        }
        if c.father.is_some() {
            let _ = write!(out, "transfer {}", c.id);
            matrix(&mut out, basis.transfer(c.id));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn hvector_to_text(x: &HVector) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "hvector {} {}", x.basis().tree().len(), x.rank());
    subtree_leaves(&mut out, x.subtree());
    for t in x.subtree().leaves() {
        let _ = write!(out, "coeff {t}");
        for &v in x.coeff(t).unwrap() {
            real(&mut out, v);
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn h2matrix_to_text(m: &H2Matrix) -> String {
    let bt = m.block_tree();
    let mut out = String::new();
    let _ = write!(out, "h2matrix {}", bt.len());
    real(&mut out, bt.eta());
    out.push('\n');
    for b in bt.blocks() {
        let _ = write!(
            out,
            "block {} {} {} {} {}",
            b.id,
            b.row,
            b.col,
            u8::from(b.admissible),
            b.sons.len()
        );
        for s in &b.sons {
            let _ = write!(out, " {s}");
        }
        out.push('\n');
    }
    for b in bt.leaves() {
        let _ = write!(out, "coupling {}", b.id);
        matrix(&mut out, m.coupling(b.id));
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

/// Leaf list plus the partitioned coefficients `(y_t | y_{t,s_1} | ...)`.
pub fn induced_to_text(y: &InducedHVector, plan: &MatvecPlan) -> String {
    let mut out = String::new();
    let tree = y.subtree().tree();
    let _ = writeln!(
        out,
        "induced {} {} {}",
        tree.len(),
        plan.row_rank(),
        plan.input_basis().rank()
    );
    subtree_leaves(&mut out, y.subtree());
    for t in y.subtree().leaves() {
        let blocks = plan.row_minus(t);
        let _ = write!(out, "coeff {t} {}", blocks.len());
        for b in blocks {
            let _ = write!(out, " {b}");
        }
        for &v in y.coeff(t).unwrap() {
            real(&mut out, v);
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

/// Tokenized lines of one section, with 1-based line numbers.
struct Section<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Section<'a> {
    fn find(text: &'a str, kind: &str) -> Result<Self> {
        let mut lines = Vec::new();
        let mut inside = false;
        for (i, line) in text.lines().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() || toks[0].starts_with('#') {
                continue;
            }
            if !inside {
                if toks[0] == kind {
                    inside = true;
                    lines.push((i + 1, toks));
                }
                continue;
            }
            if toks[0] == "end" {
                return Ok(Self { lines, pos: 0 });
            }
            lines.push((i + 1, toks));
        }
        Err(Error::Parse {
            line: text.lines().count(),
            msg: if inside {
                format!("unterminated {kind} section")
            } else {
                format!("no {kind} section")
            },
        })
    }

    fn next(&mut self, keyword: &str) -> Result<Line<'a>> {
        let Some((line, toks)) = self.lines.get(self.pos).cloned() else {
            let line = self.lines.last().map_or(0, |l| l.0);
            return Err(Error::Parse {
                line,
                msg: format!("expected `{keyword}`, found end of section"),
            });
        };
        if toks[0] != keyword {
            return Err(Error::Parse {
                line,
                msg: format!("expected `{keyword}`, found `{}`", toks[0]),
            });
        }
        self.pos += 1;
        Ok(Line { line, toks, pos: 1 })
    }

    fn peek(&self) -> Option<&str> {
        self.lines.get(self.pos).map(|l| l.1[0])
    }

    fn finish(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            None => Ok(()),
            Some((line, toks)) => Err(Error::Parse {
                line: *line,
                msg: format!("unexpected `{}`", toks[0]),
            }),
        }
    }
}

struct Line<'a> {
    line: usize,
    toks: Vec<&'a str>,
    pos: usize,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err("line too short"))?;
        self.pos += 1;
        Ok(t)
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse().map_err(|_| self.err(format!("invalid integer `{t}`")))
    }

    fn real(&mut self) -> Result<f64> {
        let t = self.token()?;
        t.parse().map_err(|_| self.err(format!("invalid number `{t}`")))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.real()).collect()
    }

    fn usizes(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.usize()).collect()
    }

    fn matrix(&mut self) -> Result<DenseMatrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let data = self.reals(rows * cols)?;
        DenseMatrix::from_col_major(rows, cols, data)
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            Err(self.err("trailing tokens"))
        }
    }
}

pub fn tree_from_text(text: &str) -> Result<ClusterTree> {
    let mut sec = Section::find(text, "tree")?;
    let mut head = sec.next("tree")?;
    let (n, dim, leaf_size, count) = (head.usize()?, head.usize()?, head.usize()?, head.usize()?);
    head.done()?;
    let mut line = sec.next("perm")?;
    let perm = line.usizes(n)?;
    line.done()?;
    let mut points = Vec::with_capacity(n * dim);
    for pos in 0..n {
        let mut line = sec.next("point")?;
        if line.usize()? != pos {
            return Err(line.err("points out of order"));
        }
        points.extend(line.reals(dim)?);
        line.done()?;
    }
    let mut clusters = Vec::with_capacity(count);
    for id in 0..count {
        let mut line = sec.next("cluster")?;
        if line.usize()? != id {
            return Err(line.err("clusters out of order"));
        }
        let level = line.usize()?;
        let begin = line.usize()?;
        let end = line.usize()?;
        let father = match line.token()? {
            "-" => None,
            t => Some(t.parse().map_err(|_| line.err(format!("invalid father `{t}`")))?),
        };
        let nsons = line.usize()?;
        let sons = line.usizes(nsons)?;
        let bmin = line.reals(dim)?;
        let bmax = line.reals(dim)?;
        line.done()?;
        clusters.push(Cluster {
            id,
            level,
            begin,
            end,
            sons,
            father,
            bmin,
            bmax,
        });
    }
    sec.finish()?;
    let tree = ClusterTree::from_parts(clusters, perm, points, dim, leaf_size);
    tree.validate().map_err(|v| Error::Parse {
        line: 0,
        msg: format!("invalid tree: {v:?}"),
    })?;
    Ok(tree)
}

pub fn basis_from_text(text: &str, tree: &Arc<ClusterTree>) -> Result<ClusterBasis> {
    let mut sec = Section::find(text, "basis")?;
    let mut head = sec.next("basis")?;
    let (count, rank, iso) = (head.usize()?, head.usize()?, head.usize()?);
    head.done()?;
    if count != tree.len() {
        return Err(head.err("cluster count does not match the tree"));
    }
    let mut leaf = vec![None; count];
    let mut transfer = vec![None; count];
    while let Some(kind) = sec.peek() {
        let kind = kind.to_string();
        let mut line = sec.next(&kind)?;
        let t = line.usize()?;
        if t >= count {
            return Err(line.err(format!("cluster {t} out of range")));
        }
        let m = line.matrix()?;
        line.done()?;
        match kind.as_str() {
            "leaf" => leaf[t] = Some(m),
            "transfer" => transfer[t] = Some(m),
            _ => return Err(line.err(format!("unexpected `{kind}`"))),
        }
    }
    ClusterBasis::new(Arc::clone(tree), rank, leaf, transfer, iso == 1)
}

/// Rebuilds a subtree from its leaves: members are the leaves and all their ancestors.
fn subtree_from_leaves(line: &mut Line, tree: &Arc<ClusterTree>) -> Result<Subtree> {
    let count = line.usize()?;
    let leaves = line.usizes(count)?;
    line.done()?;
    let mut member = vec![false; tree.len()];
    for &t in &leaves {
        if t >= tree.len() {
            return Err(line.err(format!("cluster {t} out of range")));
        }
        let mut c = Some(t);
        while let Some(u) = c {
            member[u] = true;
            c = tree.cluster(u).father;
        }
    }
    let mut s = Subtree::minimal(tree);
    for t in 0..tree.len() {
        if member[t] && !leaves.contains(&t) {
            s.expand(t).map_err(|e| line.err(format!("invalid leaf list: {e}")))?;
        }
    }
    if s.leaves().count() != leaves.len() {
        return Err(line.err("leaf list does not describe a subtree"));
    }
    Ok(s)
}

pub fn hvector_from_text(text: &str, basis: &Arc<ClusterBasis>) -> Result<HVector> {
    let tree = basis.tree();
    let mut sec = Section::find(text, "hvector")?;
    let mut head = sec.next("hvector")?;
    let (count, rank) = (head.usize()?, head.usize()?);
    head.done()?;
    if count != tree.len() || rank != basis.rank() {
        return Err(head.err("header does not match the basis"));
    }
    let subtree = subtree_from_leaves(&mut sec.next("leaves")?, tree)?;
    let mut x = HVector::zeros_on(basis, subtree)?;
    for t in x.subtree().leaves().collect::<Vec<_>>() {
        let mut line = sec.next("coeff")?;
        if line.usize()? != t {
            return Err(line.err("coefficients out of order"));
        }
        let c = line.reals(rank)?;
        line.done()?;
        x.set_coeff(t, &c)?;
    }
    sec.finish()?;
    Ok(x)
}

/// Reads coupling matrices for the block tree `blocks`; the block list in
/// the dump must match it exactly.
pub fn h2matrix_from_text(
    text: &str,
    blocks: &Arc<BlockTree>,
    row_basis: &Arc<ClusterBasis>,
    col_basis: &Arc<ClusterBasis>,
) -> Result<H2Matrix> {
    let mut sec = Section::find(text, "h2matrix")?;
    let mut head = sec.next("h2matrix")?;
    let count = head.usize()?;
    let eta = head.real()?;
    head.done()?;
    if count != blocks.len() || eta.to_bits() != blocks.eta().to_bits() {
        return Err(head.err("block tree does not match"));
    }
    for b in blocks.blocks() {
        let mut line = sec.next("block")?;
        let id = line.usize()?;
        let row = line.usize()?;
        let col = line.usize()?;
        let adm = line.usize()? == 1;
        let nsons = line.usize()?;
        let sons = line.usizes(nsons)?;
        line.done()?;
        if (id, row, col, adm, sons.as_slice()) != (b.id, b.row, b.col, b.admissible, b.sons.as_slice()) {
            return Err(line.err(format!("block {id} does not match the block tree")));
        }
    }
    let mut coupling = vec![None; count];
    for b in blocks.leaves() {
        let mut line = sec.next("coupling")?;
        if line.usize()? != b.id {
            return Err(line.err("couplings out of order"));
        }
        coupling[b.id] = Some(line.matrix()?);
        line.done()?;
    }
    sec.finish()?;
    H2Matrix::new(
        Arc::clone(blocks),
        Arc::clone(row_basis),
        Arc::clone(col_basis),
        coupling,
    )
}

pub fn induced_from_text(text: &str, plan: &MatvecPlan) -> Result<InducedHVector> {
    let tree = plan.row_tree();
    let mut sec = Section::find(text, "induced")?;
    let mut head = sec.next("induced")?;
    let (count, ka, k) = (head.usize()?, head.usize()?, head.usize()?);
    head.done()?;
    if count != tree.len() || ka != plan.row_rank() || k != plan.input_basis().rank() {
        return Err(head.err("header does not match the plan"));
    }
    let subtree = subtree_from_leaves(&mut sec.next("leaves")?, tree)?;
    let mut coeffs = vec![None; tree.len()];
    for t in subtree.leaves() {
        let mut line = sec.next("coeff")?;
        if line.usize()? != t {
            return Err(line.err("coefficients out of order"));
        }
        let nb = line.usize()?;
        let blocks = line.usizes(nb)?;
        if blocks != plan.row_minus(t) {
            return Err(line.err("block list does not match the plan"));
        }
        coeffs[t] = Some(line.reals(ka + k * nb)?);
        line.done()?;
    }
    sec.finish()?;
    Ok(InducedHVector::from_parts(subtree, coeffs))
}
