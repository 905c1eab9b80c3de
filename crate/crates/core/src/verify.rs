//! Randomized verification suites for the transformation's guarantees.
//!
//! Each suite draws seeded graphs, checks one property exactly and counts
//! failures. Strict homophily comparisons use integer counts of similar
//! edges, so no float tolerance is involved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{FeatureMatrix, Graph, Labels};
use crate::homophily::{binarize, graph_homophily, lemma4_check, similarity, SimilarityKind};
use crate::model::{Model, ModelConfig, ModelError};
use crate::synth::{synth_heterophilic, SynthError, SynthParams};
use crate::tensor::{Matrix, Tape};
use crate::train::worker_pool;
use crate::transform::{
    graphite_transform, nhb_transform, size_report, two_hop_witness, TransformError, TransformOptions,
    TransformedGraph, DEFAULT_NHB_NODE_CAP,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("could not draw {wanted} valid graphs in {attempts} attempts")]
    TooFewGraphs { wanted: usize, attempts: usize },
}

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// First failing trial, if any.
    pub first_failure: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}\t{}\ttrials={}\tfailures={}{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.failures,
            self.first_failure
                .as_deref()
                .map(|f| format!("\tfirst_failure={f}"))
                .unwrap_or_default()
        )
    }

    fn collect(name: &'static str, outcomes: Vec<Option<String>>) -> Self {
        let failures = outcomes.iter().filter(|o| o.is_some()).count();
        Self {
            name,
            trials: outcomes.len(),
            failures,
            first_failure: outcomes.into_iter().flatten().next(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    /// Graphs for the Theorem 1 and Theorem 3 suites.
    pub trials: usize,
    pub seed: u64,
    /// Graphs for the exhaustive two-hop suite.
    pub witness_graphs: usize,
    pub witness_max_nodes: usize,
    pub lemma_cases: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 500,
            seed: 0,
            witness_graphs: 100,
            witness_max_nodes: 200,
            lemma_cases: 100_000,
        }
    }
}

/// Random generator parameters for trial `index`; graphs have between
/// `min_nodes` and `max_nodes` nodes.
pub fn trial_params(seed: u64, index: usize, min_nodes: usize, max_nodes: usize) -> SynthParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let num_nodes = rng.gen_range(min_nodes..=max_nodes);
    let num_classes = rng.gen_range(2..=5);
    let features_per_class = rng.gen_range(2..=8);
    let num_features = num_classes * features_per_class + rng.gen_range(0..=10);
    let p_out = rng.gen_range(0.02..0.15);
    let p_in = p_out * rng.gen_range(0.0..0.5);
    SynthParams {
        num_nodes,
        num_classes,
        num_features,
        p_in,
        p_out,
        features_per_class,
        features_per_node: if rng.gen_bool(0.5) {
            None
        } else {
            Some(rng.gen_range(1..=4))
        },
        feature_noise: rng.gen_range(0.0..0.4),
        seed: rng.gen(),
        max_retries: 16,
    }
}

/// Draws `count` graphs that pass the assumption check, in trial order.
pub fn trial_graphs(seed: u64, count: usize, min_nodes: usize, max_nodes: usize) -> Result<Vec<Graph>, VerifyError> {
    let attempts = count * 4 + 16;
    let drawn: Vec<Option<Graph>> = worker_pool().install(|| {
        (0..attempts)
            .into_par_iter()
            .map(|i| synth_heterophilic(&trial_params(seed, i, min_nodes, max_nodes)).ok())
            .collect()
    });
    let graphs: Vec<Graph> = drawn.into_iter().flatten().take(count).collect();
    if graphs.len() < count {
        return Err(VerifyError::TooFewGraphs {
            wanted: count,
            attempts,
        });
    }
    Ok(graphs)
}

fn count_and_similar(edges: &[(usize, usize)], rows: &Matrix) -> u128 {
    edges
        .iter()
        .filter(|&&(u, v)| {
            similarity(SimilarityKind::BinaryAndInf, rows.row(u), rows.row(v)).expect("rows share a width") >= 1.0
        })
        .count() as u128
}

/// `s1 / m1 > s0 / m0` for counts.
fn strictly_greater(s1: u128, m1: u128, s0: u128, m0: u128) -> bool {
    s1 * m0 > s0 * m1
}

fn similar_count(g: &Graph, edges: &[(usize, usize)]) -> u128 {
    edges
        .iter()
        .filter(|&&(u, v)| g.features().rows_intersect(u, v))
        .count() as u128
}

/// Strict AND-homophily increase on `G*` with binarized `x_star`.
pub fn theorem3_trial(g: &Graph) -> Result<Option<String>, VerifyError> {
    let t = graphite_transform(g, TransformOptions::default())?;
    let s0 = similar_count(g, g.edges());
    let m0 = g.num_edges() as u128;
    let rows = binarize(t.x_star());
    let all = t.all_edges();
    let s1 = count_and_similar(&all, &rows);
    let m1 = all.len() as u128;
    if !strictly_greater(s1, m1, s0, m0) {
        return Ok(Some(format!("hom(G*)={s1}/{m1} not above hom(G)={s0}/{m0}")));
    }
    let h1 = graph_homophily(&all, &rows, SimilarityKind::BinaryAndInf).expect("E* is nonempty");
    if (h1 - s1 as f64 / m1 as f64).abs() > 1e-12 {
        return Ok(Some(format!("float homophily {h1} disagrees with count {s1}/{m1}")));
    }
    Ok(None)
}

/// Exact node and edge counts of `G*`.
pub fn size_bound_trial(g: &Graph) -> Result<Option<String>, VerifyError> {
    let t = graphite_transform(g, TransformOptions::default())?;
    let r = size_report(g, &t)?;
    let retained = g.features().column_counts().iter().filter(|&&c| c > 0).count();
    let nnz = g.features().nnz();
    if r.nodes_after != g.num_nodes() + retained || t.num_nodes() != r.nodes_after {
        return Ok(Some(format!(
            "|V*|={} but |V|+|X_retained|={}",
            t.num_nodes(),
            g.num_nodes() + retained
        )));
    }
    if r.edges_after != g.num_edges() + nnz || t.num_edges() != r.edges_after {
        return Ok(Some(format!(
            "|E*|={} but |E|+nnz={}",
            t.num_edges(),
            g.num_edges() + nnz
        )));
    }
    Ok(None)
}

/// `x_star[x_k, k] = 1` for every feature node.
pub fn identity_trial(t: &TransformedGraph) -> Option<String> {
    let n = t.num_graph_nodes();
    (0..t.num_feature_nodes())
        .find(|&k| t.x_star().get(n + k, k) != 1.0)
        .map(|k| format!("x_star[x_{k}, {k}] = {}", t.x_star().get(n + k, k)))
}

/// Strict increase for the all-pairs booster plus its edge bound, and every
/// added edge has a two-hop witness in `G*`.
pub fn theorem1_trial(g: &Graph) -> Result<Option<String>, VerifyError> {
    let dagger = nhb_transform(g, DEFAULT_NHB_NODE_CAP)?;
    let n = g.num_nodes() as u128;
    let added = (dagger.num_edges() - g.num_edges()) as u128;
    if added > n * (n - 1) / 2 {
        return Ok(Some(format!("{added} added edges exceed C(|V|, 2)")));
    }
    let s0 = similar_count(g, g.edges());
    let s1 = similar_count(&dagger, dagger.edges());
    let (m0, m1) = (g.num_edges() as u128, dagger.num_edges() as u128);
    if !strictly_greater(s1, m1, s0, m0) {
        return Ok(Some(format!("hom(G†)={s1}/{m1} not above hom(G)={s0}/{m0}")));
    }
    let t = graphite_transform(g, TransformOptions::default())?;
    for &(u, v) in dagger.edges() {
        if !g.has_edge(u, v) && two_hop_witness(&t, u, v)?.is_none() {
            return Ok(Some(format!("added edge ({u},{v}) has no two-hop witness")));
        }
    }
    Ok(None)
}

/// Exhaustive pair scan: a witness exists iff the rows share a feature, and
/// any returned witness is a shared feature.
pub fn witness_trial(g: &Graph) -> Result<Option<String>, VerifyError> {
    let t = graphite_transform(g, TransformOptions::default())?;
    let n = g.num_nodes();
    let dense: Vec<Vec<bool>> = (0..n)
        .map(|v| {
            let mut row = vec![false; g.num_features()];
            for &c in g.features().row(v) {
                row[c] = true;
            }
            row
        })
        .collect();
    for u in 0..n {
        for v in u + 1..n {
            let shares = dense[u].iter().zip(&dense[v]).any(|(a, b)| *a && *b);
            match two_hop_witness(&t, u, v)? {
                Some(k) => {
                    let col = t.column_map()[k];
                    if !(dense[u][col] && dense[v][col]) {
                        return Ok(Some(format!("witness x_{k} for ({u},{v}) is not shared")));
                    }
                }
                None if shares => return Ok(Some(format!("({u},{v}) share a feature but have no witness"))),
                None => {}
            }
        }
    }
    Ok(None)
}

/// Random multisets on the grid `k / 1024`; added values exceed the base mean.
pub fn lemma4_case(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    const GRID: f64 = 1024.0;
    let base: Vec<f64> = (0..rng.gen_range(1..=20))
        .map(|_| rng.gen_range(-2048i64..=2048) as f64 / GRID)
        .collect();
    let sum_ticks: i64 = base.iter().map(|v| (v * GRID) as i64).sum();
    let na = base.len() as i64;
    // Smallest tick count z with z·|A| > ΣA.
    let floor = sum_ticks.div_euclid(na) + 1;
    let added: Vec<f64> = (0..rng.gen_range(1..=20))
        .map(|_| (floor + rng.gen_range(0..=2048)) as f64 / GRID)
        .collect();
    (base, added)
}

pub fn lemma4_suite(seed: u64, cases: usize) -> SuiteReport {
    let chunk = 1000;
    let outcomes: Vec<Option<String>> = worker_pool().install(|| {
        (0..cases.div_ceil(chunk))
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let len = chunk.min(cases - c * chunk);
                (0..len)
                    .map(|_| {
                        let (base, added) = lemma4_case(&mut rng);
                        match lemma4_check(&base, &added) {
                            Ok(true) => None,
                            Ok(false) => Some(format!("mean did not rise: {base:?} + {added:?}")),
                            Err(e) => Some(format!("{e}: {base:?} + {added:?}")),
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    });
    SuiteReport::collect("lemma4", outcomes)
}

fn run_on<F>(name: &'static str, graphs: &[Graph], check: F) -> Result<SuiteReport, VerifyError>
where
    F: Fn(&Graph) -> Result<Option<String>, VerifyError> + Sync,
{
    let outcomes: Result<Vec<Option<String>>, VerifyError> = worker_pool().install(|| {
        graphs
            .par_iter()
            .enumerate()
            .map(|(i, g)| Ok(check(g)?.map(|f| format!("trial {i}: {f}"))))
            .collect()
    });
    Ok(SuiteReport::collect(name, outcomes?))
}

/// Runs every suite.
pub fn verify_all(cfg: &VerifyConfig) -> Result<Vec<SuiteReport>, VerifyError> {
    let graphs = trial_graphs(cfg.seed, cfg.trials, 10, 120)?;
    let witness_graphs = trial_graphs(cfg.seed ^ 0x5eed, cfg.witness_graphs, 10, cfg.witness_max_nodes)?;
    Ok(vec![
        run_on("theorem3", &graphs, theorem3_trial)?,
        run_on("theorem3_size", &graphs, size_bound_trial)?,
        run_on("theorem1", &graphs, theorem1_trial)?,
        run_on("observation2", &witness_graphs, witness_trial)?,
        run_on("x_star_identity", &graphs, |g| {
            Ok(identity_trial(&graphite_transform(g, TransformOptions::default())?))
        })?,
        lemma4_suite(cfg.seed, cfg.lemma_cases),
    ])
}

/// A 20-node, 3-class graph for gradient checks.
pub fn gradcheck_fixture() -> Graph {
    let p = SynthParams {
        num_nodes: 20,
        num_classes: 3,
        num_features: 12,
        p_in: 0.05,
        p_out: 0.3,
        features_per_class: 4,
        features_per_node: Some(2),
        feature_noise: 0.2,
        seed: 20,
        max_retries: 64,
    };
    synth_heterophilic(&p).expect("gradcheck fixture parameters are valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_tensor: usize,
    pub worst_index: usize,
    pub checked: usize,
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` per parameter tensor.
    pub tensor_rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_tensor_rel_error(&self) -> f64 {
        self.tensor_rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Mean cross-entropy over all labelled graph nodes, dropout off.
pub fn full_loss(
    model: &Model,
    params: &crate::model::Params,
    labels: &Labels,
) -> Result<(Tape, crate::model::ForwardPass, crate::tensor::Var), VerifyError> {
    let rows: Vec<usize> = labels.labelled_nodes();
    let targets: Vec<usize> = rows.iter().map(|&i| labels.get(i).expect("labelled")).collect();
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, params, None)?;
    let loss = tape.softmax_cross_entropy(pass.logits, rows.into(), targets.into())?;
    Ok((tape, pass, loss))
}

/// Compares reverse-mode gradients with central differences of step `h` for
/// every parameter scalar.
pub fn gradient_check(
    t: &TransformedGraph,
    cfg: &ModelConfig,
    seed: u64,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport, VerifyError> {
    let labels = t
        .base()
        .labels()
        .ok_or(ModelError::InvalidConfig("gradient check needs labels".into()))?;
    let model = Model::new(t, labels.num_classes(), cfg.clone())?;
    let params = model.init_params(seed);
    let (tape, pass, loss) = full_loss(&model, &params, labels)?;
    let grads = tape.backward(loss)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_tensor: 0,
        worst_index: 0,
        checked: 0,
        tensor_rel_errors: Vec::with_capacity(pass.params.len()),
    };
    let eval = |p: &crate::model::Params| -> Result<f64, VerifyError> {
        let (tape, _, loss) = full_loss(&model, p, labels)?;
        Ok(tape.value(loss).item())
    };
    for (ti, &var) in pass.params.iter().enumerate() {
        let analytic = grads.get(var, params.tensors[ti].shape());
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for k in 0..analytic.data().len() {
            let mut plus = params.clone();
            plus.tensors[ti].data_mut()[k] += h;
            let mut minus = params.clone();
            minus.tensors[ti].data_mut()[k] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic.data()[k];
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
            let rel = relative_error(a, numeric, floor);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = ti;
                report.worst_index = k;
            }
            report.checked += 1;
        }
        let scale = a_sq.max(n_sq).sqrt();
        report
            .tensor_rel_errors
            .push(if scale == 0.0 { 0.0 } else { diff_sq.sqrt() / scale });
    }
    Ok(report)
}

/// Graph with `n` nodes and every pair of rows drawn independently; used by
/// tests that need graphs outside the generator's heterophilic regime.
pub fn random_graph(rng: &mut impl Rng, n: usize, num_features: usize, edge_p: f64, feature_p: f64) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|_| rng.gen_bool(edge_p))
        .collect();
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..num_features).filter(|_| rng.gen_bool(feature_p)).collect())
        .collect();
    let x = FeatureMatrix::from_rows(num_features, rows).expect("columns in range");
    Graph::build(n, edges, x, None).expect("edges in range")
}
