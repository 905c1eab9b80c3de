//! Homophily metrics over an edge set.
//!
//! Every metric here is a mean of a pairwise similarity over undirected
//! edges. Edges are summed in canonical sorted order so results do not depend
//! on how the caller ordered them.
//!
//! Feature nodes carry no label of their own. For label-based metrics each
//! feature node gets a soft label (the class distribution of its labelled
//! neighbours, uniform when it has none); similarity between label
//! distributions is their dot product, and a feature node contributes
//! `deg · p(c)` to the class degree mass `D_c`.

use thiserror::Error;

use crate::graph::Graph;
use crate::tensor::{dot, Matrix};
use crate::transform::TransformedGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomophilyError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("homophily is undefined on an empty edge set")]
    EmptyEdgeSet,
    #[error("adjusted homophily is undefined: class degree mass is concentrated in one class")]
    DegenerateDenominator,
    #[error("graph nodes are not fully labelled")]
    MissingLabels,
    #[error("lemma precondition violated: {0}")]
    Precondition(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilarityKind {
    /// Cosine of the two rows; 0 if either row is all zeros.
    Cosine,
    /// `max_k min(u_k, v_k)`, the infinity norm of the AND for binary rows.
    BinaryAndInf,
    /// Probability that labels drawn from the two class distributions agree;
    /// the equality indicator for one-hot rows.
    LabelMatch,
}

impl SimilarityKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::BinaryAndInf => "and",
            Self::LabelMatch => "label",
        }
    }
}

pub fn similarity(kind: SimilarityKind, u: &[f64], v: &[f64]) -> Result<f64, HomophilyError> {
    if u.len() != v.len() {
        return Err(HomophilyError::DimensionMismatch(u.len(), v.len()));
    }
    Ok(similarity_unchecked(kind, u, v))
}

fn similarity_unchecked(kind: SimilarityKind, u: &[f64], v: &[f64]) -> f64 {
    match kind {
        SimilarityKind::Cosine => {
            let nu = dot(u, u).sqrt();
            let nv = dot(v, v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                0.0
            } else {
                dot(u, v) / (nu * nv)
            }
        }
        SimilarityKind::BinaryAndInf => u.iter().zip(v).map(|(a, b)| a.min(*b)).fold(0.0, f64::max),
        SimilarityKind::LabelMatch => dot(u, v),
    }
}

fn canonical(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut sorted: Vec<_> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    sorted.sort_unstable();
    sorted
}

/// Mean similarity of `rows[u]` and `rows[v]` over the undirected `edges`.
pub fn graph_homophily(edges: &[(usize, usize)], rows: &Matrix, kind: SimilarityKind) -> Result<f64, HomophilyError> {
    if edges.is_empty() {
        return Err(HomophilyError::EmptyEdgeSet);
    }
    let total: f64 = canonical(edges)
        .iter()
        .map(|&(u, v)| similarity_unchecked(kind, rows.row(u), rows.row(v)))
        .sum();
    Ok(total / edges.len() as f64)
}

/// Adjusted homophily from per-node class distributions (`n × C`).
pub fn adjusted_homophily(edges: &[(usize, usize)], label_rows: &Matrix) -> Result<f64, HomophilyError> {
    let h_edge = graph_homophily(edges, label_rows, SimilarityKind::LabelMatch)?;
    let mut degree = vec![0usize; label_rows.rows()];
    for &(u, v) in edges {
        degree[u] += 1;
        degree[v] += 1;
    }
    let mut class_mass = vec![0.0; label_rows.cols()];
    for (node, &d) in degree.iter().enumerate() {
        if d == 0 {
            continue;
        }
        for (mass, p) in class_mass.iter_mut().zip(label_rows.row(node)) {
            *mass += d as f64 * p;
        }
    }
    let two_e = 2.0 * edges.len() as f64;
    let expected: f64 = class_mass.iter().map(|m| (m / two_e).powi(2)).sum();
    let denominator = 1.0 - expected;
    if denominator.abs() < 1e-12 {
        return Err(HomophilyError::DegenerateDenominator);
    }
    Ok((h_edge - expected) / denominator)
}

/// One-hot class rows for a fully labelled graph.
pub fn one_hot_labels(g: &Graph) -> Result<Matrix, HomophilyError> {
    let labels = g.labels().ok_or(HomophilyError::MissingLabels)?;
    let mut rows = Matrix::zeros(g.num_nodes(), labels.num_classes());
    for v in 0..g.num_nodes() {
        let c = labels.get(v).ok_or(HomophilyError::MissingLabels)?;
        rows.set(v, c, 1.0);
    }
    Ok(rows)
}

/// Class distributions assigned to feature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    /// `num_feature_nodes × C`; each row sums to 1.
    pub probs: Matrix,
}

/// Distribution of labelled neighbour classes per feature node, uniform if
/// a feature node has no labelled neighbour.
pub fn soft_labels(t: &TransformedGraph) -> Result<SoftLabels, HomophilyError> {
    let labels = t.base().labels().ok_or(HomophilyError::MissingLabels)?;
    let c = labels.num_classes();
    let mut probs = Matrix::zeros(t.num_feature_nodes(), c);
    for k in 0..t.num_feature_nodes() {
        let row = probs.row_mut(k);
        let mut seen = 0usize;
        for &v in t.members(k) {
            if let Some(class) = labels.get(v) {
                row[class] += 1.0;
                seen += 1;
            }
        }
        if seen == 0 {
            row.fill(1.0 / c as f64);
        } else {
            row.iter_mut().for_each(|p| *p /= seen as f64);
        }
    }
    Ok(SoftLabels { probs })
}

/// Class rows over all of `V*`: one-hot for graph nodes, soft for feature nodes.
pub fn transformed_label_rows(t: &TransformedGraph) -> Result<Matrix, HomophilyError> {
    let graph_rows = one_hot_labels(t.base())?;
    let soft = soft_labels(t)?;
    let n = t.num_graph_nodes();
    let mut rows = Matrix::zeros(t.num_nodes(), graph_rows.cols());
    for v in 0..n {
        rows.row_mut(v).copy_from_slice(graph_rows.row(v));
    }
    for k in 0..t.num_feature_nodes() {
        rows.row_mut(n + k).copy_from_slice(soft.probs.row(k));
    }
    Ok(rows)
}

/// Entries > 0 become 1.
pub fn binarize(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Which edge set a report was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeUniverse {
    /// Original graph edges `E`.
    Original,
    /// `E` plus all-pairs shortcut edges.
    Nhb,
    /// `E` plus feature edges.
    Transformed,
}

impl EdgeUniverse {
    pub fn name(self) -> &'static str {
        match self {
            Self::Original => "E",
            Self::Nhb => "E_nhb",
            Self::Transformed => "E_star",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomophilyReport {
    pub h_feature: f64,
    /// `None` when the graph is not fully labelled.
    pub h_edge: Option<f64>,
    /// `None` when unlabelled or when the adjustment is degenerate.
    pub h_adjusted: Option<f64>,
    pub h_and: f64,
    pub edge_universe: EdgeUniverse,
}

fn dense_binary(g: &Graph) -> Matrix {
    let mut m = Matrix::zeros(g.num_nodes(), g.num_features());
    for (v, row) in g.features().rows().enumerate() {
        for &c in row {
            m.set(v, c, 1.0);
        }
    }
    m
}

fn assemble(
    edges: &[(usize, usize)],
    features: &Matrix,
    and_rows: &Matrix,
    label_rows: Option<Matrix>,
    universe: EdgeUniverse,
) -> Result<HomophilyReport, HomophilyError> {
    let h_feature = graph_homophily(edges, features, SimilarityKind::Cosine)?;
    let h_and = graph_homophily(edges, and_rows, SimilarityKind::BinaryAndInf)?;
    let (h_edge, h_adjusted) = match label_rows {
        Some(rows) => (
            Some(graph_homophily(edges, &rows, SimilarityKind::LabelMatch)?),
            adjusted_homophily(edges, &rows).ok(),
        ),
        None => (None, None),
    };
    Ok(HomophilyReport {
        h_feature,
        h_edge,
        h_adjusted,
        h_and,
        edge_universe: universe,
    })
}

/// Report over the edges of a plain graph (original or all-pairs augmented).
pub fn graph_report(g: &Graph, universe: EdgeUniverse) -> Result<HomophilyReport, HomophilyError> {
    let x = dense_binary(g);
    let labels = one_hot_labels(g).ok();
    assemble(g.edges(), &x, &x, labels, universe)
}

/// Report over a transformed graph, either over its graph edges only
/// (`Original`) or over graph plus feature edges (`Transformed`). The AND
/// metric uses the binarized augmented feature matrix.
pub fn transformed_report(t: &TransformedGraph, universe: EdgeUniverse) -> Result<HomophilyReport, HomophilyError> {
    let and_rows = binarize(t.x_star());
    let labels = transformed_label_rows(t).ok();
    match universe {
        EdgeUniverse::Transformed => assemble(&t.all_edges(), t.x_star(), &and_rows, labels, universe),
        _ => assemble(t.graph_edges(), t.x_star(), &and_rows, labels, EdgeUniverse::Original),
    }
}

/// After/before ratios plus absolute differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementRatio {
    /// `None` when the baseline is exactly zero.
    pub feature_ratio: Option<f64>,
    /// `None` when the baseline is zero or either side is undefined. May be
    /// negative when the baseline is negative; read it with `delta_adjusted`.
    pub adjusted_ratio: Option<f64>,
    pub delta_feature: f64,
    pub delta_adjusted: Option<f64>,
}

pub fn improvement_ratio(before: &HomophilyReport, after: &HomophilyReport) -> ImprovementRatio {
    let ratio = |b: f64, a: f64| (b != 0.0).then(|| a / b);
    let adjusted = before.h_adjusted.zip(after.h_adjusted);
    ImprovementRatio {
        feature_ratio: ratio(before.h_feature, after.h_feature),
        adjusted_ratio: adjusted.and_then(|(b, a)| ratio(b, a)),
        delta_feature: after.h_feature - before.h_feature,
        delta_adjusted: adjusted.map(|(b, a)| a - b),
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Checks that appending `added` (every element above `mean(base)`) raises
/// the mean. Comparisons are cross-multiplied so that inputs on a dyadic grid
/// are compared exactly.
pub fn lemma4_check(base: &[f64], added: &[f64]) -> Result<bool, HomophilyError> {
    if base.is_empty() || added.is_empty() {
        return Err(HomophilyError::Precondition("both multisets must be nonempty"));
    }
    let (na, nb) = (base.len() as f64, added.len() as f64);
    let sum_a = compensated_sum(base);
    if added.iter().any(|&z| z * na <= sum_a) {
        return Err(HomophilyError::Precondition(
            "every added element must exceed the base mean",
        ));
    }
    let sum_b = compensated_sum(added);
    // mean(A ⊔ B) > mean(A)  ⇔  (ΣA + ΣB)·|A| > ΣA·(|A| + |B|)  ⇔  ΣB·|A| > ΣA·|B|
    Ok(sum_b * na > sum_a * nb)
}
