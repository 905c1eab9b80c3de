//! Brute-force reference implementations used as test oracles. Each one
//! recomputes its quantity from raw graph data with dense double loops and
//! shares no code with the library beyond the input types.
#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use std::collections::HashSet;

use graphite::graph::{FeatureMatrix, Graph, Labels};
use rand::Rng;

/// Dense 0/1 features.
pub fn dense_x(g: &Graph) -> Vec<Vec<f64>> {
    (0..g.num_nodes())
        .map(|v| {
            (0..g.num_features())
                .map(|c| if g.features().get(v, c) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

pub fn and_sim(a: &[f64], b: &[f64]) -> f64 {
    if a.iter().zip(b).any(|(x, y)| *x > 0.0 && *y > 0.0) {
        1.0
    } else {
        0.0
    }
}

/// Dense symmetric adjacency over `num_nodes` from an edge list.
pub fn adjacency(num_nodes: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; num_nodes]; num_nodes];
    for &(u, v) in edges {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

/// Mean of `sim(rows[u], rows[v])` over adjacent pairs `u < v`.
pub fn mean_over_pairs(adj: &[Vec<bool>], rows: &[Vec<f64>], sim: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for u in 0..adj.len() {
        for v in u + 1..adj.len() {
            if adj[u][v] {
                total += sim(&rows[u], &rows[v]);
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Adjusted homophily from per-node class distributions.
pub fn adjusted(adj: &[Vec<bool>], dist: &[Vec<f64>]) -> f64 {
    let classes = dist[0].len();
    let h_edge = mean_over_pairs(adj, dist, |a, b| a.iter().zip(b).map(|(x, y)| x * y).sum());
    let mut edges = 0usize;
    let mut mass = vec![0.0; classes];
    for u in 0..adj.len() {
        let deg = adj[u].iter().filter(|&&x| x).count();
        for c in 0..classes {
            mass[c] += deg as f64 * dist[u][c];
        }
        for v in u + 1..adj.len() {
            if adj[u][v] {
                edges += 1;
            }
        }
    }
    let s: f64 = mass.iter().map(|m| (m / (2.0 * edges as f64)).powi(2)).sum();
    (h_edge - s) / (1.0 - s)
}

pub fn one_hot(labels: &Labels) -> Vec<Vec<f64>> {
    (0..labels.len())
        .map(|v| {
            let mut row = vec![0.0; labels.num_classes()];
            row[labels.get(v).expect("fully labelled")] = 1.0;
            row
        })
        .collect()
}

/// The feature-node augmentation rebuilt from scratch: used columns in
/// ascending order become nodes `n, n+1, …`.
pub struct DenseStar {
    pub num_nodes: usize,
    pub adj: Vec<Vec<bool>>,
    /// Adjacency restricted to feature edges.
    pub feature_adj: Vec<Vec<bool>>,
    pub x_star: Vec<Vec<f64>>,
    /// Class distributions over `V*` when the graph is fully labelled.
    pub dist: Option<Vec<Vec<f64>>>,
}

pub fn dense_star(g: &Graph) -> DenseStar {
    let n = g.num_nodes();
    let x = dense_x(g);
    let used: Vec<usize> = (0..g.num_features())
        .filter(|&c| (0..n).any(|v| x[v][c] > 0.0))
        .collect();
    let total = n + used.len();
    let mut adj = vec![vec![false; total]; total];
    let mut feature_adj = vec![vec![false; total]; total];
    for &(u, v) in g.edges() {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    let mut x_star: Vec<Vec<f64>> = x.iter().map(|row| used.iter().map(|&c| row[c]).collect()).collect();
    for (k, &c) in used.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&v| x[v][c] > 0.0).collect();
        for &v in &members {
            adj[v][n + k] = true;
            adj[n + k][v] = true;
            feature_adj[v][n + k] = true;
            feature_adj[n + k][v] = true;
        }
        let mut row = vec![0.0; used.len()];
        for &v in &members {
            for (j, &cc) in used.iter().enumerate() {
                row[j] += x[v][cc];
            }
        }
        for value in &mut row {
            *value /= members.len() as f64;
        }
        x_star.push(row);
    }
    let dist = g.labels().filter(|l| l.is_fully_labelled()).map(|labels| {
        let mut d = one_hot(labels);
        for (k, _) in used.iter().enumerate() {
            let mut row = vec![0.0; labels.num_classes()];
            let mut seen = 0.0;
            for v in 0..n {
                if adj[v][n + k] {
                    row[labels.get(v).unwrap()] += 1.0;
                    seen += 1.0;
                }
            }
            for value in &mut row {
                *value /= seen;
            }
            d.push(row);
        }
        d
    });
    DenseStar {
        num_nodes: total,
        adj,
        feature_adj,
        x_star,
        dist,
    }
}

/// Dense `N* × N*` matrix of gated, degree-normalized coefficients, applied
/// to `h`. Gates are `tanh((a·[h_u; h_v] + b) / τ)` with the feature-edge
/// gate always ordered (graph node, feature node).
pub fn dense_aggregate(
    star: &DenseStar,
    num_graph_nodes: usize,
    h: &[Vec<f64>],
    a: &[f64],
    b: f64,
    tau: f64,
    w_x: f64,
    w_0: f64,
) -> Vec<Vec<f64>> {
    let total = star.num_nodes;
    let m = h[0].len();
    let weight = |u: usize, v: usize| if star.feature_adj[u][v] { w_x } else { 1.0 };
    let degree: Vec<f64> = (0..total)
        .map(|u| {
            w_0 + (0..total)
                .filter(|&v| star.adj[u][v])
                .map(|v| weight(u, v))
                .sum::<f64>()
        })
        .collect();
    let gate = |u: usize, v: usize| {
        let mut z = b;
        for i in 0..m {
            z += a[i] * h[u][i] + a[m + i] * h[v][i];
        }
        (z / tau).tanh()
    };
    let mut coef = vec![vec![0.0; total]; total];
    for u in 0..total {
        coef[u][u] = w_0 * gate(u, u) / degree[u];
        for v in 0..total {
            if !star.adj[u][v] {
                continue;
            }
            let alpha = if star.feature_adj[u][v] {
                let (graph_node, feature_node) = if u < num_graph_nodes { (u, v) } else { (v, u) };
                gate(graph_node, feature_node)
            } else {
                gate(u, v)
            };
            coef[u][v] = weight(u, v) * alpha / (degree[u].sqrt() * degree[v].sqrt());
        }
    }
    (0..total)
        .map(|u| (0..m).map(|i| (0..total).map(|v| coef[u][v] * h[v][i]).sum()).collect())
        .collect()
}

/// Uniform random graph with independent edges and features.
pub fn random_graph(
    rng: &mut impl Rng,
    n: usize,
    f: usize,
    edge_p: f64,
    feature_p: f64,
    classes: Option<usize>,
) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(edge_p) {
                edges.push((u, v));
            }
        }
    }
    let rows = (0..n)
        .map(|_| (0..f).filter(|_| rng.gen_bool(feature_p)).collect())
        .collect();
    let x = FeatureMatrix::from_rows(f, rows).unwrap();
    let labels = classes.map(|c| Labels::full(c, (0..n).map(|_| rng.gen_range(0..c)).collect()).unwrap());
    Graph::build(n, edges, x, labels).unwrap()
}

/// Fraction of (positive, negative) pairs ordered correctly, ties 1/2.
pub fn pairwise_auc(scores: &[f64], positive: &[bool], index: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for &i in index {
        for &j in index {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                total += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    total / pairs
}

/// Accuracy with the first maximal logit as the prediction.
pub fn brute_accuracy(logits: &[Vec<f64>], labels: &[usize], index: &[usize]) -> f64 {
    let mut correct = 0usize;
    for &i in index {
        let max = logits[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pred = logits[i].iter().position(|&v| v == max).unwrap();
        if pred == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / index.len() as f64
}

pub fn edge_set(edges: &[(usize, usize)]) -> HashSet<(usize, usize)> {
    edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect()
}
