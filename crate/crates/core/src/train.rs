//! Full-graph training with Adam, split generation and evaluation metrics.

use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::Graph;
use crate::model::{Model, ModelConfig, ModelError, Params};
use crate::tensor::{Matrix, Tape};
use crate::transform::TransformedGraph;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("graph has no labels")]
    MissingLabels,
    #[error("too few labelled nodes ({0}) for a train/val/test split")]
    TooFewLabelled(usize),
    #[error("index set is empty")]
    EmptyIndexSet,
    #[error("ROC-AUC needs both classes in the index set")]
    SingleClass,
    #[error("ROC-AUC needs exactly two classes, found {0}")]
    NotBinary(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("gradient count {found} does not match parameter count {expected}")]
    GradientCount { expected: usize, found: usize },
    #[error("split node {0} is out of range or unlabelled")]
    BadSplitNode(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRatio {
    /// 48% / 32% / 20%.
    Standard,
    /// 60% / 20% / 20%.
    Sixty,
}

impl SplitRatio {
    pub fn fractions(self) -> (f64, f64) {
        match self {
            Self::Standard => (0.48, 0.32),
            Self::Sixty => (0.60, 0.20),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "48/32/20",
            Self::Sixty => "60/20/20",
        }
    }
}

impl std::str::FromStr for SplitRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "48/32/20" | "48-32-20" | "standard" => Ok(Self::Standard),
            "60/20/20" | "60-20-20" | "sixty" => Ok(Self::Sixty),
            other => Err(format!("unknown split ratio `{other}` (use 48/32/20 or 60/20/20)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio: SplitRatio,
    pub seed: u64,
    /// 1-based replicate index.
    pub replicate: usize,
}

/// Random splits of the labelled nodes; replicate `r` uses stream `r` of a
/// ChaCha generator seeded with `seed`.
pub fn make_splits(g: &Graph, ratio: SplitRatio, seed: u64, replicates: usize) -> Result<Vec<SplitSpec>, TrainError> {
    let labels = g.labels().ok_or(TrainError::MissingLabels)?;
    let labelled = labels.labelled_nodes();
    let n = labelled.len();
    let (f_train, f_val) = ratio.fractions();
    let n_train = (n as f64 * f_train).round() as usize;
    let n_val = (n as f64 * f_val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(TrainError::TooFewLabelled(n));
    }
    Ok((1..=replicates)
        .map(|replicate| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replicate as u64);
            let mut order = labelled.clone();
            order.shuffle(&mut rng);
            let mut train = order[..n_train].to_vec();
            let mut val = order[n_train..n_train + n_val].to_vec();
            let mut test = order[n_train + n_val..].to_vec();
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
            SplitSpec {
                train,
                val,
                test,
                ratio,
                seed,
                replicate,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds parameter initialization and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            steps: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(TrainError::InvalidConfig("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut Params,
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::GradientCount {
            expected: params.len(),
            found: grads.len(),
        });
    }
    for (i, (p, g)) in params.tensors.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return Err(ModelError::ParamShape {
                index: i,
                expected: p.shape(),
                found: g.shape(),
            }
            .into());
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let p = params.tensors[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Row-wise argmax with the lowest index winning ties.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn accuracy(logits: &Matrix, labels: &[usize], index: &[usize]) -> Result<f64, TrainError> {
    if index.is_empty() {
        return Err(TrainError::EmptyIndexSet);
    }
    let correct = index
        .iter()
        .filter(|&&i| argmax_row(logits.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / index.len() as f64)
}

/// Mann–Whitney estimate of `P(score_pos > score_neg)`, ties counted 1/2.
pub fn roc_auc(scores: &[f64], labels: &[bool], index: &[usize]) -> Result<f64, TrainError> {
    if index.is_empty() {
        return Err(TrainError::EmptyIndexSet);
    }
    let mut items: Vec<(f64, bool)> = index.iter().map(|&i| (scores[i], labels[i])).collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = items.iter().filter(|x| x.1).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TrainError::SingleClass);
    }
    // Sum of positive ranks, with tied groups sharing their average rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j < items.len() && items[j].0 == items[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * items[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    /// Binary tasks only; the score is `logit[1] − logit[0]`.
    RocAuc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::RocAuc => "roc_auc",
        }
    }
}

fn evaluate(metric: Metric, logits: &Matrix, labels: &[usize], index: &[usize]) -> Result<f64, TrainError> {
    match metric {
        Metric::Accuracy => accuracy(logits, labels, index),
        Metric::RocAuc => {
            if logits.cols() != 2 {
                return Err(TrainError::NotBinary(logits.cols()));
            }
            let scores: Vec<f64> = (0..logits.rows())
                .map(|i| logits.get(i, 1) - logits.get(i, 0))
                .collect();
            let positive: Vec<bool> = labels.iter().map(|&c| c == 1).collect();
            roc_auc(&scores, &positive, index)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training loss at each step, computed before that step's update.
    pub losses: Vec<f64>,
    pub metric: Metric,
    pub final_train: f64,
    pub final_val: f64,
    pub final_test: f64,
    /// Number of updates applied to the selected parameters.
    pub best_step: usize,
    pub best_val: f64,
    pub test_at_best_val: f64,
    pub seed: u64,
    pub replicate: usize,
    pub ratio: SplitRatio,
    /// SHA-256 over the model config, training config and split.
    pub config_hash: String,
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("\"{v}\"")
    }
}

impl TrainReport {
    /// JSON Lines: one `step` record per step, then one `summary` record.
    /// Keys are sorted and floats use 17 significant digits.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (step, loss) in self.losses.iter().enumerate() {
            let _ = writeln!(
                out,
                "{{\"kind\":\"step\",\"loss\":{},\"replicate\":{},\"step\":{}}}",
                fmt_f64(*loss),
                self.replicate,
                step
            );
        }
        let _ = writeln!(
            out,
            "{{\"best_step\":{},\"best_val\":{},\"config_hash\":\"{}\",\"final_test\":{},\"final_train\":{},\"final_val\":{},\"kind\":\"summary\",\"metric\":\"{}\",\"ratio\":\"{}\",\"replicate\":{},\"seed\":{},\"steps\":{},\"test_at_best_val\":{}}}",
            self.best_step,
            fmt_f64(self.best_val),
            self.config_hash,
            fmt_f64(self.final_test),
            fmt_f64(self.final_train),
            fmt_f64(self.final_val),
            self.metric.name(),
            self.ratio.name(),
            self.replicate,
            self.seed,
            self.losses.len(),
            fmt_f64(self.test_at_best_val),
        );
        out
    }
}

/// Hex SHA-256 of a canonical text rendering of the run configuration.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig, split: &SplitSpec) -> String {
    let mut text = format!(
        "w_x={:e};w_0={:e};tau={:e};layers={};hidden={};dropout={:e};mlp={};lr={:e};steps={};b1={:e};b2={:e};eps={:e};seed={};ratio={};split_seed={};replicate={}",
        model.w_x,
        model.w_0,
        model.tau,
        model.num_layers,
        model.hidden_dim,
        model.dropout,
        model.mlp_layers_per_block,
        train.learning_rate,
        train.steps,
        train.beta1,
        train.beta2,
        train.epsilon,
        train.seed,
        split.ratio.name(),
        split.seed,
        split.replicate,
    );
    for (name, set) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let _ = write!(text, ";{name}=");
        for i in set {
            let _ = write!(text, "{i},");
        }
    }
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best_params: Params,
    pub final_params: Params,
}

/// Trains on `t` (use [`TransformedGraph::without_feature_nodes`] for the
/// original graph) and keeps the parameters with the best validation metric.
pub fn train(
    t: &TransformedGraph,
    split: &SplitSpec,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    metric: Metric,
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    let labels = t.base().labels().ok_or(TrainError::MissingLabels)?;
    let n = t.num_graph_nodes();
    let mut dense = vec![0usize; n];
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        dense[i] = labels.get(i).filter(|_| i < n).ok_or(TrainError::BadSplitNode(i))?;
    }
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(TrainError::EmptyIndexSet);
    }
    let model = Model::new(t, labels.num_classes(), model_cfg.clone())?;
    let mut params = model.init_params(train_cfg.seed);
    let mut state = AdamState::new(&params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    dropout_rng.set_stream(1);
    let rows: Rc<[usize]> = split.train.clone().into();
    let targets: Rc<[usize]> = split.train.iter().map(|&i| dense[i]).collect();

    let eval = |p: &Params| -> Result<(f64, f64, f64), TrainError> {
        let logits = model.logits(p)?;
        Ok((
            evaluate(metric, &logits, &dense, &split.train)?,
            evaluate(metric, &logits, &dense, &split.val)?,
            evaluate(metric, &logits, &dense, &split.test)?,
        ))
    };

    let (mut last, mut best_val, mut best_test) = {
        let (tr, va, te) = eval(&params)?;
        ((tr, va, te), va, te)
    };
    let mut best_step = 0;
    let mut best_params = params.clone();
    let mut losses = Vec::with_capacity(train_cfg.steps);
    for step in 0..train_cfg.steps {
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &params, Some(&mut dropout_rng))?;
        let loss = tape.softmax_cross_entropy(pass.logits, rows.clone(), targets.clone())?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(TrainError::Diverged { step, loss: loss_value });
        }
        losses.push(loss_value);
        let grads = tape.backward(loss)?;
        let grads: Vec<Matrix> = pass
            .params
            .iter()
            .zip(&params.tensors)
            .map(|(&v, p)| grads.get(v, p.shape()))
            .collect();
        adam_step(&mut params, &grads, &mut state, train_cfg)?;
        last = eval(&params)?;
        if last.1 > best_val {
            best_val = last.1;
            best_test = last.2;
            best_step = step + 1;
            best_params = params.clone();
        }
    }
    let report = TrainReport {
        losses,
        metric,
        final_train: last.0,
        final_val: last.1,
        final_test: last.2,
        best_step,
        best_val,
        test_at_best_val: best_test,
        seed: train_cfg.seed,
        replicate: split.replicate,
        ratio: split.ratio,
        config_hash: config_hash(model_cfg, train_cfg, split),
    };
    Ok(TrainOutcome {
        report,
        best_params,
        final_params: params,
    })
}

/// Worker pool sized by `GRAPHITE_THREADS` when set, otherwise rayon's default.
pub fn worker_pool() -> rayon::ThreadPool {
    let threads = std::env::var("GRAPHITE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build worker pool")
}

/// Trains one model per split in parallel. Replicate `i` uses seed
/// `train_cfg.seed + i`; results come back in split order.
pub fn train_replicates(
    t: &TransformedGraph,
    splits: &[SplitSpec],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    metric: Metric,
) -> Result<Vec<TrainOutcome>, TrainError> {
    worker_pool().install(|| {
        splits
            .par_iter()
            .enumerate()
            .map(|(i, split)| {
                let cfg = TrainConfig {
                    seed: train_cfg.seed.wrapping_add(i as u64),
                    ..train_cfg.clone()
                };
                train(t, split, model_cfg, &cfg, metric)
            })
            .collect()
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
