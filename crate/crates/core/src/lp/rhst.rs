//! Hierarchically well-separated trees over the label set.
//!
//! Each non-root node `T` owns the labels of the leaves below it. The tree
//! metric between labels `i` and `j` is the length of the leaf-to-leaf path;
//! equivalently, the sum of `c_T / 2` over subtrees containing exactly one of
//! the two labels, with `c_T = 2 * edge_length(T)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{CrfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RHSTree {
    parent: Vec<Option<usize>>,
    edge_length: Vec<f64>,
    leaf_label: Vec<Option<usize>>,
    // Sorted labels under each node.
    labels_below: Vec<Vec<usize>>,
    // Node ids as given by the caller (for round-tripping the text form).
    ids: Vec<i64>,
    n_labels: usize,
}

/// A subtree `T` together with its weight `c_T` and label set `L(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subtree<'a> {
    pub node: usize,
    pub weight: f64,
    pub labels: &'a [usize],
}

impl RHSTree {
    /// Builds a tree from parent pointers (`None` for the root), edge lengths
    /// to the parent, and leaf labels.
    pub fn new(parent: Vec<Option<usize>>, edge_length: Vec<f64>, leaf_label: Vec<Option<usize>>) -> Result<Self> {
        let ids = (0..parent.len() as i64).collect();
        Self::with_ids(parent, edge_length, leaf_label, ids)
    }

    fn with_ids(
        parent: Vec<Option<usize>>,
        edge_length: Vec<f64>,
        leaf_label: Vec<Option<usize>>,
        ids: Vec<i64>,
    ) -> Result<Self> {
        let n = parent.len();
        if n == 0 || edge_length.len() != n || leaf_label.len() != n {
            return Err(CrfError::InvalidInput("tree arrays must be non-empty and of equal length".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&v| parent[v].is_none()).collect();
        if roots.len() != 1 {
            return Err(CrfError::InvalidInput(format!("tree must have exactly one root, found {}", roots.len())));
        }
        let root = roots[0];
        for v in 0..n {
            if let Some(p) = parent[v] {
                if p >= n {
                    return Err(CrfError::InvalidInput(format!("node {} has unknown parent", ids[v])));
                }
            }
            if v != root && (!edge_length[v].is_finite() || edge_length[v] < 0.0) {
                return Err(CrfError::InvalidInput(format!(
                    "node {} has invalid edge length {}",
                    ids[v], edge_length[v]
                )));
            }
        }
        // Every node must reach the root within n steps.
        for v in 0..n {
            let mut cur = v;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(CrfError::InvalidInput(format!("node {} lies on a cycle", ids[v])));
                }
            }
        }
        let mut has_child = vec![false; n];
        for p in parent.iter().flatten() {
            has_child[*p] = true;
        }
        let mut seen = HashMap::new();
        for v in 0..n {
            match (has_child[v], leaf_label[v]) {
                (false, None) => {
                    return Err(CrfError::InvalidInput(format!("leaf {} has no label", ids[v])));
                }
                (true, Some(_)) => {
                    return Err(CrfError::InvalidInput(format!("internal node {} carries a label", ids[v])));
                }
                (false, Some(l)) => {
                    if let Some(other) = seen.insert(l, v) {
                        return Err(CrfError::InvalidInput(format!(
                            "label {l} appears on leaves {} and {}",
                            ids[other], ids[v]
                        )));
                    }
                }
                (true, None) => {}
            }
        }
        let n_labels = seen.len();
        if let Some(l) = seen.keys().find(|&&l| l >= n_labels) {
            return Err(CrfError::InvalidInput(format!(
                "leaf labels must cover 0..{n_labels} exactly, found label {l}"
            )));
        }
        let mut labels_below = vec![Vec::new(); n];
        for v in 0..n {
            if let Some(l) = leaf_label[v] {
                let mut cur = Some(v);
                while let Some(c) = cur {
                    labels_below[c].push(l);
                    cur = parent[c];
                }
            }
        }
        labels_below.iter_mut().for_each(|ls| ls.sort_unstable());
        let tree = Self { parent, edge_length, leaf_label, labels_below, ids, n_labels };
        let metric = tree.metric();
        for i in 0..n_labels {
            for j in 0..n_labels {
                if i != j && !(metric[[i, j]] > 0.0) {
                    return Err(CrfError::InvalidInput(format!(
                        "labels {i} and {j} are at zero tree distance"
                    )));
                }
            }
        }
        Ok(tree)
    }

    /// Root with `m` leaf children, each at edge length `w`. The induced
    /// metric is `2 w` times Potts.
    pub fn star(m: usize, w: f64) -> Self {
        let mut parent = vec![None];
        parent.extend((0..m).map(|_| Some(0)));
        let mut edge = vec![0.0];
        edge.extend((0..m).map(|_| w));
        let mut labels = vec![None];
        labels.extend((0..m).map(Some));
        if m == 0 {
            labels[0] = Some(0);
        }
        Self::new(parent, edge, labels).expect("star tree is well formed")
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_nodes(&self) -> usize {
        self.parent.len()
    }

    /// Checks that edge lengths shrink by at least `r` from parent to child
    /// along every root-to-leaf path.
    pub fn validate_separation(&self, r: f64) -> Result<()> {
        if !(r > 1.0) {
            return Err(CrfError::InvalidParameter(format!("separation factor must exceed 1, got {r}")));
        }
        for v in 0..self.n_nodes() {
            if let Some(p) = self.parent[v] {
                if self.parent[p].is_some() && self.edge_length[v] * r > self.edge_length[p] * (1.0 + 1e-12) {
                    return Err(CrfError::InvalidInput(format!(
                        "edge {} -> {} has length {} but its parent edge has {}; need a decay factor of {r}",
                        self.ids[p], self.ids[v], self.edge_length[v], self.edge_length[p]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Subtrees whose label set is a strict subset of all labels. Subtrees
    /// covering every label have `y_a(T) = 1` on the feasible set and
    /// contribute nothing.
    pub fn subtrees(&self) -> Vec<Subtree<'_>> {
        (0..self.n_nodes())
            .filter(|&v| self.parent[v].is_some() && self.labels_below[v].len() < self.n_labels)
            .map(|v| Subtree { node: v, weight: 2.0 * self.edge_length[v], labels: &self.labels_below[v] })
            .collect()
    }

    /// Tree distance between every pair of labels.
    pub fn metric(&self) -> Array2<f64> {
        let m = self.n_labels;
        let mut leaf_of = vec![0; m];
        for (v, l) in self.leaf_label.iter().enumerate() {
            if let Some(l) = l {
                leaf_of[*l] = v;
            }
        }
        let path_to_root = |mut v: usize| {
            let mut p = vec![v];
            while let Some(u) = self.parent[v] {
                p.push(u);
                v = u;
            }
            p
        };
        let mut d = Array2::zeros((m, m));
        for i in 0..m {
            let pi = path_to_root(leaf_of[i]);
            for j in i + 1..m {
                let pj = path_to_root(leaf_of[j]);
                let mut dist = 0.0;
                for v in pi.iter().chain(&pj) {
                    // Edges above the common ancestor appear on both paths.
                    let on_both = pi.contains(v) && pj.contains(v);
                    if !on_both {
                        dist += self.edge_length[*v];
                    }
                }
                d[[i, j]] = dist;
                d[[j, i]] = dist;
            }
        }
        d
    }

    /// Parses the line format `node_id parent_id edge_length [label=k]`, with
    /// `parent_id = -1` for the root. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CrfError::InvalidInput(format!("tree line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(err(format!("expected 'node parent length [label=k]', got '{line}'")));
            }
            let id: i64 = fields[0].parse().map_err(|_| err(format!("bad node id '{}'", fields[0])))?;
            let parent: i64 = fields[1].parse().map_err(|_| err(format!("bad parent id '{}'", fields[1])))?;
            let len: f64 = fields[2].parse().map_err(|_| err(format!("bad edge length '{}'", fields[2])))?;
            let label = match fields.get(3) {
                None => None,
                Some(f) => {
                    let v = f
                        .strip_prefix("label=")
                        .ok_or_else(|| err(format!("expected label=<k>, got '{f}'")))?;
                    Some(v.parse::<usize>().map_err(|_| err(format!("bad label '{v}'")))?)
                }
            };
            rows.push((lineno + 1, id, parent, len, label));
        }
        let mut index = HashMap::new();
        for (i, (lineno, id, ..)) in rows.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(CrfError::InvalidInput(format!("tree line {lineno}: duplicate node id {id}")));
            }
        }
        let mut parent = Vec::with_capacity(rows.len());
        for (lineno, _, p, ..) in &rows {
            parent.push(if *p == -1 {
                None
            } else {
                Some(*index.get(p).ok_or_else(|| {
                    CrfError::InvalidInput(format!("tree line {lineno}: unknown parent id {p}"))
                })?)
            });
        }
        let edge = rows.iter().map(|r| r.3).collect();
        let labels = rows.iter().map(|r| r.4).collect();
        let ids = rows.iter().map(|r| r.1).collect();
        Self::with_ids(parent, edge, labels, ids)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in 0..self.n_nodes() {
            let p = self.parent[v].map(|p| self.ids[p]).unwrap_or(-1);
            let _ = write!(s, "{} {} {}", self.ids[v], p, self.edge_length[v]);
            if let Some(l) = self.leaf_label[v] {
                let _ = write!(s, " label={l}");
            }
            s.push('\n');
        }
        s
    }
}
