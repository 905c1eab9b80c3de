//! Feature-node transformation and the all-pairs shortcut baseline.
//!
//! The transformation adds one hub node per (used) feature column and links
//! every graph node to the hubs of the features it carries. Hub features are
//! the mean of their members' feature rows. The baseline instead links every
//! pair of graph nodes that share a feature, which costs `Θ(|V|²)` edges in the
//! worst case.

use thiserror::Error;

use crate::graph::{FeatureMatrix, Graph, GraphError};
use crate::tensor::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("feature column {0} has no ones and dropping unused columns is disabled")]
    UnusedFeature(usize),
    #[error("graph has {nodes} nodes, above the all-pairs cap of {cap}")]
    TooManyNodes { nodes: usize, cap: usize },
    #[error("node {node} is not a graph node (|V| = {num_nodes})")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("transformed graph was not produced from the given graph")]
    ProvenanceMismatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformOptions {
    pub drop_unused_features: bool,
    /// Replace graph-node rows of the feature matrix with zeros.
    pub zero_graph_node_features: bool,
    /// Scale graph-node rows to unit L1 norm.
    pub row_normalize_graph_node_features: bool,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            drop_unused_features: true,
            zero_graph_node_features: false,
            row_normalize_graph_node_features: false,
        }
    }
}

/// A graph augmented with feature nodes.
///
/// Nodes `0..|V|` are the original graph nodes; node `|V| + k` is feature
/// node `k`, which stands for original feature column `column_map[k]`.
/// Columns of `x_star` are the retained columns, in `column_map` order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedGraph {
    base: Graph,
    column_map: Vec<usize>,
    /// `(graph node, feature node)` sorted by graph node then feature node.
    feature_edges: Vec<(usize, usize)>,
    /// Offsets into `feature_edges` per graph node.
    node_offsets: Vec<usize>,
    /// Graph nodes incident to each feature node, sorted.
    members: Vec<Vec<usize>>,
    x_star: Matrix,
}

impl TransformedGraph {
    pub fn base(&self) -> &Graph {
        &self.base
    }

    pub fn num_graph_nodes(&self) -> usize {
        self.base.num_nodes()
    }

    pub fn num_feature_nodes(&self) -> usize {
        self.column_map.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_graph_nodes() + self.num_feature_nodes()
    }

    pub fn num_edges(&self) -> usize {
        self.base.num_edges() + self.feature_edges.len()
    }

    /// Global index of feature node `k` in `V*`.
    pub fn feature_node_index(&self, k: usize) -> usize {
        self.num_graph_nodes() + k
    }

    pub fn column_map(&self) -> &[usize] {
        &self.column_map
    }

    pub fn graph_edges(&self) -> &[(usize, usize)] {
        self.base.edges()
    }

    pub fn feature_edges(&self) -> &[(usize, usize)] {
        &self.feature_edges
    }

    /// Feature nodes adjacent to graph node `v`, sorted.
    pub fn feature_neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.feature_edges[self.node_offsets[v]..self.node_offsets[v + 1]]
            .iter()
            .map(|&(_, k)| k)
    }

    pub fn feature_degree(&self, v: usize) -> usize {
        self.node_offsets[v + 1] - self.node_offsets[v]
    }

    /// Graph nodes adjacent to feature node `k`.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn x_star(&self) -> &Matrix {
        &self.x_star
    }

    /// All edges of `E*` over global `V*` indices, graph edges first.
    pub fn all_edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_graph_nodes();
        self.base
            .edges()
            .iter()
            .copied()
            .chain(self.feature_edges.iter().map(|&(v, k)| (v, n + k)))
            .collect()
    }

    /// The graph as-is, with no feature nodes. `x_star` holds the dense
    /// original features over every column.
    pub fn without_feature_nodes(g: &Graph) -> Self {
        let x_star = dense_features(g.features(), &(0..g.num_features()).collect::<Vec<_>>());
        Self {
            base: g.clone(),
            column_map: Vec::new(),
            feature_edges: Vec::new(),
            node_offsets: vec![0; g.num_nodes() + 1],
            members: Vec::new(),
            x_star,
        }
    }

    /// Reassembles a transformed graph from stored parts, recomputing the
    /// derived indices. Used by the file loader.
    pub fn from_parts(
        base: Graph,
        column_map: Vec<usize>,
        feature_edges: Vec<(usize, usize)>,
        x_star: Matrix,
    ) -> Result<Self, TransformError> {
        let n = base.num_nodes();
        let num_fn = column_map.len();
        let mut feature_edges = feature_edges;
        feature_edges.sort_unstable();
        feature_edges.dedup();
        let mut node_offsets = vec![0usize; n + 1];
        let mut members = vec![Vec::new(); num_fn];
        for &(v, k) in &feature_edges {
            if v >= n {
                return Err(TransformError::NodeOutOfRange { node: v, num_nodes: n });
            }
            if k >= num_fn {
                return Err(TransformError::NodeOutOfRange {
                    node: n + k,
                    num_nodes: n + num_fn,
                });
            }
            node_offsets[v + 1] += 1;
            members[k].push(v);
        }
        for i in 0..n {
            node_offsets[i + 1] += node_offsets[i];
        }
        if x_star.rows() != n + num_fn {
            return Err(GraphError::RowCountMismatch {
                expected: n + num_fn,
                got: x_star.rows(),
            }
            .into());
        }
        Ok(Self {
            base,
            column_map,
            feature_edges,
            node_offsets,
            members,
            x_star,
        })
    }
}

fn dense_features(x: &FeatureMatrix, columns: &[usize]) -> Matrix {
    let mut position = vec![usize::MAX; x.num_cols()];
    for (new, &old) in columns.iter().enumerate() {
        position[old] = new;
    }
    let mut dense = Matrix::zeros(x.num_rows(), columns.len());
    for (r, row) in x.rows().enumerate() {
        for &c in row {
            if position[c] != usize::MAX {
                dense.set(r, position[c], 1.0);
            }
        }
    }
    dense
}

/// Builds `G* = (V ∪ V_X, E ∪ E_X, X*)`.
pub fn graphite_transform(g: &Graph, opts: TransformOptions) -> Result<TransformedGraph, TransformError> {
    let x = g.features();
    let counts = x.column_counts();
    let mut column_map = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            column_map.push(c);
        } else if !opts.drop_unused_features {
            return Err(TransformError::UnusedFeature(c));
        }
    }
    let mut feature_of_column = vec![usize::MAX; x.num_cols()];
    for (k, &c) in column_map.iter().enumerate() {
        feature_of_column[c] = k;
    }

    let n = g.num_nodes();
    let num_fn = column_map.len();
    let mut feature_edges = Vec::with_capacity(x.nnz());
    let mut members = vec![Vec::new(); num_fn];
    let mut node_offsets = Vec::with_capacity(n + 1);
    node_offsets.push(0);
    for v in 0..n {
        for &c in x.row(v) {
            let k = feature_of_column[c];
            feature_edges.push((v, k));
            members[k].push(v);
        }
        node_offsets.push(feature_edges.len());
    }

    let graph_rows = dense_features(x, &column_map);
    let mut x_star = Matrix::zeros(n + num_fn, num_fn);
    for v in 0..n {
        x_star.row_mut(v).copy_from_slice(graph_rows.row(v));
    }
    for (k, nodes) in members.iter().enumerate() {
        // An isolated feature node (impossible once unused columns are
        // dropped) keeps an all-zero row.
        if nodes.is_empty() {
            continue;
        }
        let count = nodes.len() as f64;
        let row = x_star.row_mut(n + k);
        for &v in nodes {
            for (dst, src) in row.iter_mut().zip(graph_rows.row(v)) {
                *dst += src;
            }
        }
        for value in row.iter_mut() {
            *value /= count;
        }
    }

    // Graph-node rows are adjusted only after the feature-node rows exist.
    if opts.zero_graph_node_features {
        for v in 0..n {
            x_star.row_mut(v).fill(0.0);
        }
    } else if opts.row_normalize_graph_node_features {
        for v in 0..n {
            let row = x_star.row_mut(v);
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|value| *value /= total);
            }
        }
    }

    Ok(TransformedGraph {
        base: g.clone(),
        column_map,
        feature_edges,
        node_offsets,
        members,
        x_star,
    })
}

/// Default node cap for [`nhb_transform`].
pub const DEFAULT_NHB_NODE_CAP: usize = 10_000;

/// Adds an edge between every pair of distinct nodes sharing a feature.
pub fn nhb_transform(g: &Graph, node_cap: usize) -> Result<Graph, TransformError> {
    if g.num_nodes() > node_cap {
        return Err(TransformError::TooManyNodes {
            nodes: g.num_nodes(),
            cap: node_cap,
        });
    }
    let mut edges = g.edges().to_vec();
    for nodes in g.features().transpose_lists() {
        for (i, &u) in nodes.iter().enumerate() {
            edges.extend(nodes[i + 1..].iter().map(|&v| (u, v)));
        }
    }
    Ok(g.with_edges(edges)?)
}

/// A feature node `k` with `u → x_k → v` in `G*`, if `u` and `v` share one.
pub fn two_hop_witness(t: &TransformedGraph, u: usize, v: usize) -> Result<Option<usize>, TransformError> {
    let n = t.num_graph_nodes();
    for node in [u, v] {
        if node >= n {
            return Err(TransformError::NodeOutOfRange { node, num_nodes: n });
        }
    }
    let fu = &t.feature_edges[t.node_offsets[u]..t.node_offsets[u + 1]];
    let fv = &t.feature_edges[t.node_offsets[v]..t.node_offsets[v + 1]];
    let (mut i, mut j) = (0, 0);
    while i < fu.len() && j < fv.len() {
        match fu[i].1.cmp(&fv[j].1) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return Ok(Some(fu[i].1)),
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeReport {
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    /// Ones in the retained feature columns, i.e. `|E_X|`.
    pub feature_nnz: usize,
}

pub fn size_report(g: &Graph, t: &TransformedGraph) -> Result<SizeReport, TransformError> {
    if t.base() != g {
        return Err(TransformError::ProvenanceMismatch);
    }
    let counts = g.features().column_counts();
    let feature_nnz = t.column_map().iter().map(|&c| counts[c]).sum();
    Ok(SizeReport {
        nodes_before: g.num_nodes(),
        nodes_after: t.num_nodes(),
        edges_before: g.num_edges(),
        edges_after: t.num_edges(),
        feature_nnz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::figure_one;

    #[test]
    fn figure_one_transform() {
        let g = figure_one();
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        assert_eq!(t.num_feature_nodes(), 2);
        assert_eq!(t.feature_edges(), &[(0, 0), (1, 0), (2, 1), (3, 1), (4, 1)]);
        assert_eq!(t.num_nodes(), 7);
        assert_eq!(t.num_edges(), 5 + 5);
        for k in 0..2 {
            assert_eq!(t.x_star().get(t.feature_node_index(k), k), 1.0);
        }
        assert_eq!(t.members(1), &[2, 3, 4]);
    }

    #[test]
    fn feature_rows_are_member_means() {
        let x = FeatureMatrix::from_rows(3, vec![vec![0, 1], vec![0], vec![1, 2]]).unwrap();
        let g = Graph::build(3, [(0, 1)], x, None).unwrap();
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        // Feature 0 members: rows (1,1,0) and (1,0,0).
        assert_eq!(t.x_star().row(3), &[1.0, 0.5, 0.0]);
        // Feature 1 members: (1,1,0) and (0,1,1).
        assert_eq!(t.x_star().row(4), &[0.5, 1.0, 0.5]);
        assert_eq!(t.x_star().row(5), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn all_zero_features() {
        let g = Graph::build(3, [(0, 1), (1, 2)], FeatureMatrix::empty(3, 4), None).unwrap();
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        assert_eq!(t.num_feature_nodes(), 0);
        assert_eq!(t.num_nodes(), 3);
        assert_eq!(t.all_edges(), g.edges());
        assert_eq!(t.x_star().shape(), (3, 0));
    }

    #[test]
    fn unused_column_without_dropping_is_an_error() {
        let x = FeatureMatrix::from_rows(2, vec![vec![0], vec![0]]).unwrap();
        let g = Graph::build(2, [(0, 1)], x, None).unwrap();
        let opts = TransformOptions {
            drop_unused_features: false,
            ..Default::default()
        };
        assert_eq!(
            graphite_transform(&g, opts).unwrap_err(),
            TransformError::UnusedFeature(1)
        );
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        assert_eq!(t.column_map(), &[0]);
    }

    #[test]
    fn graph_row_options_apply_after_feature_rows() {
        let x = FeatureMatrix::from_rows(2, vec![vec![0, 1], vec![0]]).unwrap();
        let g = Graph::build(2, [(0, 1)], x, None).unwrap();
        let zeroed = graphite_transform(
            &g,
            TransformOptions {
                zero_graph_node_features: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(zeroed.x_star().row(0).iter().all(|&v| v == 0.0));
        assert_eq!(zeroed.x_star().row(2), &[1.0, 0.5]);

        let normalized = graphite_transform(
            &g,
            TransformOptions {
                row_normalize_graph_node_features: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(normalized.x_star().row(0), &[0.5, 0.5]);
        assert_eq!(normalized.x_star().row(2), &[1.0, 0.5]);
    }

    #[test]
    fn nhb_on_figure_one() {
        let g = figure_one();
        let nhb = nhb_transform(&g, DEFAULT_NHB_NODE_CAP).unwrap();
        // Exhaustive pair scan over shared features, minus the existing (2, 3).
        let mut expected = g.edges().to_vec();
        for u in 0..5 {
            for v in u + 1..5 {
                if g.features().rows_intersect(u, v) && !g.has_edge(u, v) {
                    expected.push((u, v));
                }
            }
        }
        expected.sort_unstable();
        assert_eq!(nhb.edges(), expected.as_slice());
        assert_eq!(nhb.num_edges(), 5 + 3);
        assert!(nhb.has_edge(0, 1) && nhb.has_edge(2, 4) && nhb.has_edge(3, 4));
        assert_eq!(nhb.features(), g.features());
        assert_eq!(nhb.labels(), g.labels());
    }

    #[test]
    fn nhb_without_shared_features_is_identity() {
        let x = FeatureMatrix::from_rows(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        let g = Graph::build(3, [(0, 1)], x, None).unwrap();
        assert_eq!(nhb_transform(&g, 10).unwrap(), g);
    }

    #[test]
    fn nhb_complete_when_everyone_shares() {
        let n = 6;
        let x = FeatureMatrix::from_rows(1, vec![vec![0]; n]).unwrap();
        let g = Graph::build(n, [(0, 1)], x, None).unwrap();
        assert_eq!(nhb_transform(&g, 10).unwrap().num_edges(), n * (n - 1) / 2);
    }

    #[test]
    fn nhb_respects_cap() {
        let g = figure_one();
        assert_eq!(
            nhb_transform(&g, 4).unwrap_err(),
            TransformError::TooManyNodes { nodes: 5, cap: 4 }
        );
    }

    #[test]
    fn witnesses_on_figure_one() {
        let t = graphite_transform(&figure_one(), TransformOptions::default()).unwrap();
        assert_eq!(two_hop_witness(&t, 0, 1).unwrap(), Some(0));
        assert_eq!(two_hop_witness(&t, 0, 2).unwrap(), None);
        assert_eq!(two_hop_witness(&t, 3, 4).unwrap(), Some(1));
        assert!(two_hop_witness(&t, 0, 5).is_err());
    }

    #[test]
    fn size_report_counts() {
        let g = figure_one();
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        let r = size_report(&g, &t).unwrap();
        assert_eq!((r.nodes_before, r.nodes_after), (5, 7));
        assert_eq!((r.edges_before, r.edges_after, r.feature_nnz), (5, 10, 5));

        let bare = Graph::build(2, [(0, 1)], FeatureMatrix::empty(2, 0), None).unwrap();
        let tb = graphite_transform(&bare, TransformOptions::default()).unwrap();
        let rb = size_report(&bare, &tb).unwrap();
        assert_eq!(
            (rb.nodes_before, rb.nodes_after, rb.edges_before, rb.edges_after),
            (2, 2, 1, 1)
        );

        assert_eq!(size_report(&bare, &t).unwrap_err(), TransformError::ProvenanceMismatch);
    }

    #[test]
    fn from_parts_round_trip() {
        let g = figure_one();
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        let rebuilt = TransformedGraph::from_parts(
            t.base().clone(),
            t.column_map().to_vec(),
            t.feature_edges().to_vec(),
            t.x_star().clone(),
        )
        .unwrap();
        assert_eq!(rebuilt, t);
    }
}
