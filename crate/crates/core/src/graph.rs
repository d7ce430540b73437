//! Attributed, possibly multi-relational graphs and their Laplacians.
//!
//! Every relation is stored as a symmetric [`EdgeSet`] in compressed sparse
//! row layout with implicit unit weights. Laplacians are matrix-free
//! operators over one edge set; nothing here ever materializes an `N x N`
//! matrix except [`Laplacian::to_dense`], which exists for small-graph
//! oracles and eigendecomposition.

use std::collections::VecDeque;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-node ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomalous,
    Unlabeled,
}

impl Label {
    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }

    /// 1.0 for anomalies, 0.0 for normal nodes, `None` when unlabeled.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Normal => Some(0.0),
            Label::Anomalous => Some(1.0),
            Label::Unlabeled => None,
        }
    }
}

/// Counters reported while cleaning an edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub self_loops: usize,
    pub duplicates: usize,
}

/// Symmetric unit-weight adjacency of one relation in CSR form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl EdgeSet {
    /// Builds an edge set from undirected pairs. Pairs may appear in either
    /// or both orientations; the result is symmetrized and deduplicated and
    /// self-loops are dropped.
    pub fn from_pairs<I>(num_nodes: usize, pairs: I) -> Result<(Self, IngestStats)>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut stats = IngestStats::default();
        let mut directed = Vec::new();
        for (u, v) in pairs {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::IndexOutOfRange {
                        what: "node",
                        index: node,
                        limit: num_nodes,
                    });
                }
            }
            if u == v {
                stats.self_loops += 1;
                continue;
            }
            directed.push((u, v));
            directed.push((v, u));
        }
        directed.sort_unstable();
        let before = directed.len();
        directed.dedup();
        // Each repeated undirected edge leaves two redundant directed entries.
        stats.duplicates = (before - directed.len()) / 2;
        if stats.self_loops > 0 {
            warn!("dropped {} self-loop(s)", stats.self_loops);
        }

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &directed {
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let indices = directed.into_iter().map(|(_, v)| v).collect();
        Ok((Self { offsets, indices }, stats))
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            offsets: vec![0; num_nodes + 1],
            indices: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.indices[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Checks the CSR invariants: monotone offsets, sorted unique columns,
    /// no self-loops, symmetry.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.offsets[0] != 0 || *self.offsets.last().unwrap() != self.indices.len() {
            return Err(Error::invalid("edge set offsets do not span the index array"));
        }
        for u in 0..n {
            if self.offsets[u] > self.offsets[u + 1] {
                return Err(Error::invalid("edge set offsets are not monotone"));
            }
            let row = self.neighbors(u);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("row {u} is not strictly sorted")));
            }
            for &v in row {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "node",
                        index: v,
                        limit: n,
                    });
                }
                if v == u {
                    return Err(Error::invalid(format!("self-loop at node {u}")));
                }
                if self.neighbors(v).binary_search(&u).is_err() {
                    return Err(Error::invalid(format!("edge ({u},{v}) has no reverse")));
                }
            }
        }
        Ok(())
    }

    /// Union of several edge sets over the same node set.
    pub fn union(sets: &[EdgeSet]) -> Result<Self> {
        let n = sets.first().map(EdgeSet::num_nodes).ok_or(Error::EmptyGraph)?;
        if let Some(bad) = sets.iter().find(|s| s.num_nodes() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.num_nodes(),
            });
        }
        let pairs = sets.iter().flat_map(|s| s.undirected_edges());
        Ok(Self::from_pairs(n, pairs)?.0)
    }
}

/// An attributed graph: node features, optional labels, one or more relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    relations: Vec<EdgeSet>,
    features: DMatrix<f64>,
    labels: Vec<Label>,
}

impl Graph {
    pub fn new(relations: Vec<EdgeSet>, features: DMatrix<f64>, labels: Vec<Label>) -> Result<Self> {
        let num_nodes = features.nrows();
        if relations.is_empty() {
            return Err(Error::invalid("graph needs at least one relation"));
        }
        for rel in &relations {
            if rel.num_nodes() != num_nodes {
                return Err(Error::DimensionMismatch {
                    expected: num_nodes,
                    found: rel.num_nodes(),
                });
            }
        }
        if labels.len() != num_nodes {
            return Err(Error::DimensionMismatch {
                expected: num_nodes,
                found: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self {
            num_nodes,
            relations,
            features,
            labels,
        })
    }

    /// Single-relation graph with all nodes unlabeled.
    pub fn unlabeled(edges: EdgeSet, features: DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        Self::new(vec![edges], features, vec![Label::Unlabeled; n])
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relation(&self, index: usize) -> Result<&EdgeSet> {
        self.relations.get(index).ok_or(Error::IndexOutOfRange {
            what: "relation",
            index,
            limit: self.relations.len(),
        })
    }

    pub fn relations(&self) -> &[EdgeSet] {
        &self.relations
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn set_features(&mut self, features: DMatrix<f64>) -> Result<()> {
        if features.nrows() != self.num_nodes {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes,
                found: features.nrows(),
            });
        }
        self.features = features;
        Ok(())
    }

    pub fn set_labels(&mut self, labels: Vec<Label>) -> Result<()> {
        if labels.len() != self.num_nodes {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes,
                found: labels.len(),
            });
        }
        self.labels = labels;
        Ok(())
    }

    pub fn anomalies(&self) -> Vec<usize> {
        self.nodes_with(Label::Anomalous)
    }

    pub fn nodes_with(&self, label: Label) -> Vec<usize> {
        (0..self.num_nodes).filter(|&i| self.labels[i] == label).collect()
    }

    /// Union of all relations as a single edge set.
    pub fn union_edges(&self) -> EdgeSet {
        if self.relations.len() == 1 {
            return self.relations[0].clone();
        }
        EdgeSet::union(&self.relations).expect("relations share the node set")
    }

    /// Subgraph induced by `keep` (which must be sorted and unique). Node `keep[k]`
    /// becomes node `k`; degrees are those of the induced graph.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Graph> {
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("induced subgraph node list must be sorted and unique"));
        }
        if let Some(&last) = keep.last() {
            if last >= self.num_nodes {
                return Err(Error::IndexOutOfRange {
                    what: "node",
                    index: last,
                    limit: self.num_nodes,
                });
            }
        }
        let mut new_id = vec![usize::MAX; self.num_nodes];
        for (k, &old) in keep.iter().enumerate() {
            new_id[old] = k;
        }
        let relations = self
            .relations
            .iter()
            .map(|rel| {
                let pairs = rel.undirected_edges().filter_map(|(u, v)| {
                    (new_id[u] != usize::MAX && new_id[v] != usize::MAX).then(|| (new_id[u], new_id[v]))
                });
                EdgeSet::from_pairs(keep.len(), pairs).map(|(e, _)| e)
            })
            .collect::<Result<Vec<_>>>()?;
        let features = self.features.select_rows(keep);
        let labels = keep.iter().map(|&i| self.labels[i]).collect();
        Graph::new(relations, features, labels)
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes;
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: perm.len(),
            });
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("not a permutation"));
            }
        }
        let relations = self
            .relations
            .iter()
            .map(|rel| {
                EdgeSet::from_pairs(n, rel.undirected_edges().map(|(u, v)| (perm[u], perm[v])))
                    .map(|(e, _)| e)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut features = DMatrix::zeros(n, self.feature_dim());
        let mut labels = vec![Label::Unlabeled; n];
        for i in 0..n {
            features.set_row(perm[i], &self.features.row(i));
            labels[perm[i]] = self.labels[i];
        }
        Graph::new(relations, features, labels)
    }
}

/// Which Laplacian to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianKind {
    /// `D - A`
    Regular,
    /// `I - D^{-1/2} A D^{-1/2}`; isolated nodes get identity rows.
    Normalized,
}

impl std::str::FromStr for LaplacianKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(LaplacianKind::Regular),
            "normalized" => Ok(LaplacianKind::Normalized),
            other => Err(Error::invalid(format!("unknown laplacian kind '{other}'"))),
        }
    }
}

/// A square linear map applied matrix-free.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `y = A x`. Both slices must have length [`dim`](Self::dim).
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    /// Applies the operator to every column of `x`.
    fn apply_columns(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.nrows(),
            });
        }
        let mut y = DMatrix::zeros(x.nrows(), x.ncols());
        for (src, mut dst) in x.column_iter().zip(y.column_iter_mut()) {
            self.apply_into(src.as_slice(), dst.as_mut_slice());
        }
        Ok(y)
    }
}

/// Matrix-free graph Laplacian over one edge set.
#[derive(Debug, Clone)]
pub struct Laplacian {
    kind: LaplacianKind,
    edges: EdgeSet,
    degree: Vec<f64>,
    // D^{-1/2} with zeros on isolated nodes; unused for Regular.
    inv_sqrt_degree: Vec<f64>,
}

impl Laplacian {
    pub fn new(edges: EdgeSet, kind: LaplacianKind) -> Result<Self> {
        let n = edges.num_nodes();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let degree: Vec<f64> = (0..n).map(|i| edges.degree(i) as f64).collect();
        let inv_sqrt_degree = degree
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        Ok(Self {
            kind,
            edges,
            degree,
            inv_sqrt_degree,
        })
    }

    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    /// Dense copy, for small graphs only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            match self.kind {
                LaplacianKind::Regular => {
                    m[(i, i)] = self.degree[i];
                    for &j in self.edges.neighbors(i) {
                        m[(i, j)] = -1.0;
                    }
                }
                LaplacianKind::Normalized => {
                    m[(i, i)] = 1.0;
                    for &j in self.edges.neighbors(i) {
                        m[(i, j)] = -self.inv_sqrt_degree[i] * self.inv_sqrt_degree[j];
                    }
                }
            }
        }
        m
    }

    /// Rayleigh numerator `x^T L x`, computed edge-wise.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (u, v) in self.edges.undirected_edges() {
            let diff = match self.kind {
                LaplacianKind::Regular => x[u] - x[v],
                LaplacianKind::Normalized => {
                    x[u] * self.inv_sqrt_degree[u] - x[v] * self.inv_sqrt_degree[v]
                }
            };
            acc += diff * diff;
        }
        if self.kind == LaplacianKind::Normalized {
            // Isolated nodes carry an identity row.
            for (i, &d) in self.degree.iter().enumerate() {
                if d == 0.0 {
                    acc += x[i] * x[i];
                }
            }
        }
        acc
    }
}

impl LinearOperator for Laplacian {
    fn dim(&self) -> usize {
        self.degree.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let offsets = self.edges.offsets();
        let indices = self.edges.indices();
        match self.kind {
            LaplacianKind::Regular => {
                for i in 0..y.len() {
                    let mut s = 0.0;
                    for &j in &indices[offsets[i]..offsets[i + 1]] {
                        s += x[j];
                    }
                    y[i] = self.degree[i] * x[i] - s;
                }
            }
            LaplacianKind::Normalized => {
                let w = &self.inv_sqrt_degree;
                // One gather per edge instead of two.
                let scaled: Vec<f64> = w.iter().zip(x).map(|(a, b)| a * b).collect();
                for i in 0..y.len() {
                    let mut s = 0.0;
                    for &j in &indices[offsets[i]..offsets[i + 1]] {
                        s += scaled[j];
                    }
                    y[i] = x[i] - w[i] * s;
                }
            }
        }
    }
}

/// Builds the Laplacian of one relation of `g`.
pub fn build_laplacian(g: &Graph, relation_index: usize, kind: LaplacianKind) -> Result<Laplacian> {
    if g.num_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    Laplacian::new(g.relation(relation_index)?.clone(), kind)
}

/// `L x` with a dimension check.
pub fn laplacian_apply(l: &Laplacian, x: &[f64]) -> Result<Vec<f64>> {
    l.apply(x)
}

/// BFS hop distances from `src`; `None` marks unreachable nodes.
pub fn shortest_hop_distance(g: &Graph, relation_index: usize, src: usize) -> Result<Vec<Option<usize>>> {
    hop_distances(g.relation(relation_index)?, src)
}

pub fn hop_distances(edges: &EdgeSet, src: usize) -> Result<Vec<Option<usize>>> {
    let n = edges.num_nodes();
    if src >= n {
        return Err(Error::IndexOutOfRange {
            what: "node",
            index: src,
            limit: n,
        });
    }
    let mut dist = vec![None; n];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let next = dist[u].unwrap() + 1;
        for &v in edges.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    Ok(dist)
}

/// True when every node is reachable from node 0.
pub fn is_connected(edges: &EdgeSet) -> bool {
    match edges.num_nodes() {
        0 => true,
        _ => hop_distances(edges, 0)
            .map(|d| d.iter().all(Option::is_some))
            .unwrap_or(false),
    }
}
