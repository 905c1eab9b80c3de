//! Undirected graphs with binary discrete node features and optional labels.
//!
//! A [`Graph`] is immutable once built. Edges are stored canonically as
//! `(lo, hi)` pairs with `lo < hi`, sorted and deduplicated; self-loops in the
//! raw input are dropped (message passing adds its own self term).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({u}, {v}) references a node outside 0..{num_nodes}")]
    EdgeOutOfRange { u: usize, v: usize, num_nodes: usize },
    #[error("feature entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    FeatureOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("feature entry ({row}, {col}) has non-binary value {value}")]
    NonBinaryFeature { row: usize, col: usize, value: f64 },
    #[error("label {label} of node {node} is outside 0..{num_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("expected {expected} rows, got {got}")]
    RowCountMismatch { expected: usize, got: usize },
    #[error("the edge set is empty")]
    EmptyEdgeSet,
}

/// Sparse binary matrix: each row is a sorted list of the columns holding a 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureMatrix {
    num_cols: usize,
    rows: Vec<Vec<usize>>,
}

impl FeatureMatrix {
    pub fn empty(num_rows: usize, num_cols: usize) -> Self {
        Self {
            num_cols,
            rows: vec![Vec::new(); num_rows],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Zeros are skipped,
    /// duplicates collapse to a single 1, anything else is rejected.
    pub fn from_entries(
        num_rows: usize,
        num_cols: usize,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        let mut rows = vec![Vec::new(); num_rows];
        for (row, col, value) in entries {
            if row >= num_rows || col >= num_cols {
                return Err(GraphError::FeatureOutOfRange {
                    row,
                    col,
                    rows: num_rows,
                    cols: num_cols,
                });
            }
            if value == 0.0 {
                continue;
            }
            if value != 1.0 {
                return Err(GraphError::NonBinaryFeature { row, col, value });
            }
            rows[row].push(col);
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self { num_cols, rows })
    }

    /// Builds a matrix from per-row column lists (unsorted, possibly repeated).
    pub fn from_rows(num_cols: usize, rows: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let num_rows = rows.len();
        let entries = rows
            .into_iter()
            .enumerate()
            .flat_map(|(r, cols)| cols.into_iter().map(move |c| (r, c, 1.0)));
        Self::from_entries(num_rows, num_cols, entries)
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.rows[r]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].binary_search(&c).is_ok()
    }

    /// Number of ones, i.e. both the L0 and the L1 norm of a binary matrix.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Number of ones in every column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_cols];
        for row in &self.rows {
            for &c in row {
                counts[c] += 1;
            }
        }
        counts
    }

    /// For every column, the sorted list of rows holding a 1.
    pub fn transpose_lists(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.num_cols];
        for (r, row) in self.rows.iter().enumerate() {
            for &c in row {
                cols[c].push(r);
            }
        }
        cols
    }

    /// Whether the two rows share at least one column (`‖a ∧ b‖∞ > 0`).
    pub fn rows_intersect(&self, a: usize, b: usize) -> bool {
        first_common(&self.rows[a], &self.rows[b]).is_some()
    }
}

/// Smallest common element of two sorted slices.
pub(crate) fn first_common(a: &[usize], b: &[usize]) -> Option<usize> {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return Some(a[i]),
        }
    }
    None
}

/// Per-node class labels. `None` marks a node outside the labelled set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    num_classes: usize,
    classes: Vec<Option<usize>>,
}

impl Labels {
    pub fn new(num_classes: usize, classes: Vec<Option<usize>>) -> Result<Self, GraphError> {
        for (node, c) in classes.iter().enumerate() {
            if let Some(label) = *c {
                if label >= num_classes {
                    return Err(GraphError::LabelOutOfRange {
                        node,
                        label,
                        num_classes,
                    });
                }
            }
        }
        Ok(Self { num_classes, classes })
    }

    /// Every node labelled.
    pub fn full(num_classes: usize, classes: Vec<usize>) -> Result<Self, GraphError> {
        Self::new(num_classes, classes.into_iter().map(Some).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, node: usize) -> Option<usize> {
        self.classes[node]
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.classes
    }

    pub fn mask(&self) -> Vec<bool> {
        self.classes.iter().map(Option::is_some).collect()
    }

    pub fn is_fully_labelled(&self) -> bool {
        self.classes.iter().all(Option::is_some)
    }

    pub fn labelled_nodes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&v| self.classes[v].is_some()).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: FeatureMatrix,
    labels: Option<Labels>,
}

impl Graph {
    /// Validates the inputs and canonicalizes the edge list.
    pub fn build(
        num_nodes: usize,
        raw_edges: impl IntoIterator<Item = (usize, usize)>,
        features: FeatureMatrix,
        labels: Option<Labels>,
    ) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for (u, v) in raw_edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::EdgeOutOfRange { u, v, num_nodes });
            }
            if u != v {
                edges.push((u.min(v), u.max(v)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        if features.num_rows() != num_nodes {
            return Err(GraphError::RowCountMismatch {
                expected: num_nodes,
                got: features.num_rows(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != num_nodes {
                return Err(GraphError::RowCountMismatch {
                    expected: num_nodes,
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            num_nodes,
            edges,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.num_cols()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(Labels::num_classes)
    }

    /// Canonical `(lo, hi)` edges in sorted order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        Self::build(self.num_nodes, edges, self.features.clone(), self.labels.clone())
    }

    pub fn with_labels(mut self, labels: Option<Labels>) -> Result<Self, GraphError> {
        if let Some(l) = &labels {
            if l.len() != self.num_nodes {
                return Err(GraphError::RowCountMismatch {
                    expected: self.num_nodes,
                    got: l.len(),
                });
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn to_csr(&self, weight: f64) -> CsrAdjacency {
        CsrAdjacency::from_graph(self, weight)
    }
}

/// Symmetric compressed-sparse-row adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrAdjacency {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Option<Vec<f64>>,
}

impl CsrAdjacency {
    /// Builds the CSR form of `g` with every stored entry equal to `weight`
    /// (weights are omitted when `weight == 1`).
    pub fn from_graph(g: &Graph, weight: f64) -> Self {
        let n = g.num_nodes();
        let mut offsets = vec![0usize; n + 1];
        for &(u, v) in g.edges() {
            offsets[u + 1] += 1;
            offsets[v + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut indices = vec![0usize; offsets[n]];
        let mut by_target: Vec<(usize, usize)> = g.edges().iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        by_target.sort_unstable();
        for (u, v) in by_target {
            indices[cursor[u]] = v;
            cursor[u] += 1;
        }
        let weights = (weight != 1.0).then(|| vec![weight; indices.len()]);
        Self {
            offsets,
            indices,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.indices[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn weight(&self, pos: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[pos])
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Rows sorted and every `(u, v)` mirrored by `(v, u)` with equal weight.
    pub fn is_symmetric(&self) -> bool {
        for u in 0..self.num_nodes() {
            let row = self.neighbors(u);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            for (i, &v) in row.iter().enumerate() {
                let pos = self.offsets[u] + i;
                let back = match self.neighbors(v).binary_search(&u) {
                    Ok(j) => self.offsets[v] + j,
                    Err(_) => return false,
                };
                if self.weight(pos) != self.weight(back) {
                    return false;
                }
            }
        }
        true
    }
}

/// Outcome of checking the heterophily and sparsity assumptions on a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// AND-similarity homophily over the graph edges.
    pub and_homophily: f64,
    pub hom_lt_one: bool,
    pub exists_similar_nonadjacent_pair: bool,
    /// `|X| / |V|`.
    pub feature_count_ratio: f64,
    /// `‖X‖₀ / |E|`.
    pub feature_nnz_ratio: f64,
    pub feature_count_ratio_ok: bool,
    pub feature_nnz_ratio_ok: bool,
    pub every_feature_used: bool,
}

impl AssumptionReport {
    /// The graph is heterophilic and its features are not too dense. Unused
    /// feature columns are tolerated; the transformation drops them.
    pub fn passes(&self) -> bool {
        self.hom_lt_one
            && self.exists_similar_nonadjacent_pair
            && self.feature_count_ratio_ok
            && self.feature_nnz_ratio_ok
    }
}

/// Default bound on `|X| / |V|` used by the CLI and the verification suites.
pub const DEFAULT_FEATURE_COUNT_BOUND: f64 = 4.0;
/// Default bound on `‖X‖₀ / |E|`.
pub const DEFAULT_FEATURE_NNZ_BOUND: f64 = 10.0;

pub fn check_assumptions(
    g: &Graph,
    max_feature_count_ratio: f64,
    max_feature_nnz_ratio: f64,
) -> Result<AssumptionReport, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::EmptyEdgeSet);
    }
    let x = g.features();
    let similar_edges = g.edges().iter().filter(|&&(u, v)| x.rows_intersect(u, v)).count();
    let and_homophily = similar_edges as f64 / g.num_edges() as f64;

    let members = x.transpose_lists();
    let exists_pair = members.iter().any(|nodes| {
        nodes
            .iter()
            .enumerate()
            .any(|(i, &u)| nodes[i + 1..].iter().any(|&v| !g.has_edge(u, v)))
    });

    let feature_count_ratio = g.num_features() as f64 / g.num_nodes().max(1) as f64;
    let feature_nnz_ratio = x.nnz() as f64 / g.num_edges() as f64;
    Ok(AssumptionReport {
        and_homophily,
        hom_lt_one: similar_edges < g.num_edges(),
        exists_similar_nonadjacent_pair: exists_pair,
        feature_count_ratio,
        feature_nnz_ratio,
        feature_count_ratio_ok: feature_count_ratio <= max_feature_count_ratio,
        feature_nnz_ratio_ok: feature_nnz_ratio <= max_feature_nnz_ratio,
        every_feature_used: x.column_counts().iter().all(|&c| c > 0),
    })
}
