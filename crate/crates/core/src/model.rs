//! Self-gated, degree-normalized message passing over a transformed graph.
//!
//! Layout of one forward pass over the `N*` nodes of `V ∪ V_X`:
//!
//! ```text
//! h   = x_star · W_enc + b_enc
//! for each layer:
//!     α   = tanh((a_leftᵀ h_u + a_rightᵀ h_v + b) / τ)     per message pair
//!     agg = Σ coef · α · h_source                          self, graph, feature terms
//!     h   = dropout(agg + GELU(agg · W1 + b1) · W2 + b2)
//! logits = h[graph nodes] · W_dec + b_dec
//! ```
//!
//! Message coefficients are `w_0 / d_u` for the self term, `1 / √(d_u d_v)`
//! for graph edges and `w_X / √(d_u d_v)` for feature edges. A graph edge gets
//! one gate per direction; a feature edge `(v, x)` gets a single gate
//! evaluated as `α(v, x)` and used for both directions.

use std::io::{Read, Write};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Matrix, Message, Tape, TensorError, Var};
use crate::transform::TransformedGraph;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter shape mismatch for tensor {index}: expected {expected:?}, found {found:?}")]
    ParamShape {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("expected {expected} parameter tensors, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature-edge weight; graph edges have weight 1.
    pub w_x: f64,
    /// Self-loop weight.
    pub w_0: f64,
    /// Gate temperature.
    pub tau: f64,
    /// Number of aggregate + MLP blocks.
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Fixed at 2; stored so configs are self-describing.
    pub mlp_layers_per_block: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            w_x: 0.6,
            w_0: 1.0,
            tau: 1.0,
            num_layers: 8,
            hidden_dim: 512,
            dropout: 0.2,
            mlp_layers_per_block: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [("w_x", self.w_x), ("w_0", self.w_0), ("tau", self.tau)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.hidden_dim == 0 {
            return Err(ModelError::InvalidConfig("hidden_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.mlp_layers_per_block != 2 {
            return Err(ModelError::InvalidConfig(
                "only two-layer MLP blocks are supported".into(),
            ));
        }
        Ok(())
    }
}

/// Weighted degree of every node of `V*`, graph nodes first.
pub fn weighted_degrees(t: &TransformedGraph, cfg: &ModelConfig) -> Vec<f64> {
    let n = t.num_graph_nodes();
    let mut graph_degree = vec![0usize; n];
    for &(u, v) in t.graph_edges() {
        graph_degree[u] += 1;
        graph_degree[v] += 1;
    }
    let mut d = Vec::with_capacity(t.num_nodes());
    for (v, &gd) in graph_degree.iter().enumerate() {
        d.push(cfg.w_0 + gd as f64 + cfg.w_x * t.feature_degree(v) as f64);
    }
    for k in 0..t.num_feature_nodes() {
        d.push(cfg.w_0 + cfg.w_x * t.members(k).len() as f64);
    }
    d
}

/// `tanh((aᵀ(h_u ∥ h_v) + b) / τ)`.
pub fn gate_score(h_u: &[f64], h_v: &[f64], a: &[f64], b: f64, tau: f64) -> Result<f64, ModelError> {
    if h_u.len() != h_v.len() || a.len() != 2 * h_u.len() {
        return Err(ModelError::Dimension(format!(
            "|h_u|={}, |h_v|={}, |a|={}",
            h_u.len(),
            h_v.len(),
            a.len()
        )));
    }
    let m = h_u.len();
    let z = crate::tensor::dot(&a[..m], h_u) + crate::tensor::dot(&a[m..], h_v) + b;
    Ok((z / tau).tanh())
}

/// Gate pairs and weighted messages for one transformed graph.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub degrees: Vec<f64>,
    /// `(u, v)` evaluated as `α(u, v)`; one entry per gate.
    pub gate_pairs: Rc<[(usize, usize)]>,
    pub messages: Rc<[Message]>,
}

impl Propagation {
    pub fn new(t: &TransformedGraph, cfg: &ModelConfig) -> Self {
        let degrees = weighted_degrees(t, cfg);
        let n_star = t.num_nodes();
        let mut pairs = Vec::with_capacity(n_star + 2 * t.graph_edges().len() + t.feature_edges().len());
        let mut messages = Vec::with_capacity(n_star + 2 * t.graph_edges().len() + 2 * t.feature_edges().len());
        for (u, &d) in degrees.iter().enumerate() {
            messages.push(Message {
                target: u,
                source: u,
                gate: pairs.len(),
                coef: cfg.w_0 / d,
            });
            pairs.push((u, u));
        }
        for &(u, v) in t.graph_edges() {
            let coef = 1.0 / (degrees[u].sqrt() * degrees[v].sqrt());
            for (target, source) in [(u, v), (v, u)] {
                messages.push(Message {
                    target,
                    source,
                    gate: pairs.len(),
                    coef,
                });
                pairs.push((target, source));
            }
        }
        for &(v, k) in t.feature_edges() {
            let x = t.feature_node_index(k);
            let coef = cfg.w_x / (degrees[v].sqrt() * degrees[x].sqrt());
            let gate = pairs.len();
            pairs.push((v, x));
            messages.push(Message {
                target: v,
                source: x,
                gate,
                coef,
            });
            messages.push(Message {
                target: x,
                source: v,
                gate,
                coef,
            });
        }
        Self {
            degrees,
            gate_pairs: pairs.into(),
            messages: messages.into(),
        }
    }
}

/// Flattened model parameters.
///
/// Order: `W_enc, b_enc`, then per layer `a (2m×1), b (1×1), W1, b1, W2, b2`,
/// then `W_dec, b_dec`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Matrix>,
}

pub const TENSORS_PER_LAYER: usize = 6;

/// Expected parameter shapes for the given dimensions.
pub fn param_shapes(input_dim: usize, num_classes: usize, cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let m = cfg.hidden_dim;
    let mut shapes = vec![(input_dim, m), (1, m)];
    for _ in 0..cfg.num_layers {
        shapes.extend([(2 * m, 1), (1, 1), (m, m), (1, m), (m, m), (1, m)]);
    }
    shapes.extend([(m, num_classes), (1, num_classes)]);
    shapes
}

fn is_weight(index: usize, num_tensors: usize) -> bool {
    if index < 2 {
        return index == 0;
    }
    if index >= num_tensors - 2 {
        return index == num_tensors - 2;
    }
    matches!((index - 2) % TENSORS_PER_LAYER, 0 | 2 | 4)
}

impl Params {
    /// Glorot-uniform weights and gate vectors, zero biases.
    pub fn init(input_dim: usize, num_classes: usize, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = param_shapes(input_dim, num_classes, cfg);
        let count = shapes.len();
        let tensors = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (r, c))| {
                if is_weight(i, count) {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    Matrix::from_fn(r, c, |_, _| rng.gen_range(-limit..=limit))
                } else {
                    Matrix::zeros(r, c)
                }
            })
            .collect();
        Self { tensors }
    }

    pub fn zeros(input_dim: usize, num_classes: usize, cfg: &ModelConfig) -> Self {
        let tensors = param_shapes(input_dim, num_classes, cfg)
            .into_iter()
            .map(|(r, c)| Matrix::zeros(r, c))
            .collect();
        Self { tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn check_shapes(&self, expected: &[(usize, usize)]) -> Result<(), ModelError> {
        if self.tensors.len() != expected.len() {
            return Err(ModelError::ParamCount {
                expected: expected.len(),
                found: self.tensors.len(),
            });
        }
        for (index, (t, &e)) in self.tensors.iter().zip(expected).enumerate() {
            if t.shape() != e {
                return Err(ModelError::ParamShape {
                    index,
                    expected: e,
                    found: t.shape(),
                });
            }
        }
        Ok(())
    }

    /// Writes the checkpoint container (see the crate README for the layout).
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<(), ModelError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| ModelError::Checkpoint("tensor size overflow".into()))?;
            let mut data = Vec::with_capacity(len.min(1 << 24));
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push(Matrix::from_vec(rows, cols, data));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(ModelError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { tensors })
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRPHCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Tape handles produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `|V| × C` logits for graph nodes.
    pub logits: Var,
    /// One handle per parameter tensor, in [`Params`] order.
    pub params: Vec<Var>,
}

/// A model bound to one transformed graph.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    num_classes: usize,
    num_graph_nodes: usize,
    inputs: Matrix,
    propagation: Propagation,
}

impl Model {
    pub fn new(t: &TransformedGraph, num_classes: usize, cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        if num_classes == 0 {
            return Err(ModelError::InvalidConfig("num_classes must be at least 1".into()));
        }
        let propagation = Propagation::new(t, &cfg);
        Ok(Self {
            num_classes,
            num_graph_nodes: t.num_graph_nodes(),
            inputs: t.x_star().clone(),
            propagation,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn propagation(&self) -> &Propagation {
        &self.propagation
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_graph_nodes(&self) -> usize {
        self.num_graph_nodes
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        param_shapes(self.input_dim(), self.num_classes, &self.cfg)
    }

    pub fn init_params(&self, seed: u64) -> Params {
        Params::init(self.input_dim(), self.num_classes, &self.cfg, seed)
    }

    /// One aggregation step on the tape. `gate` is the `2m × 1` vector `a`,
    /// `bias` the `1 × 1` scalar `b`.
    pub fn aggregate(&self, tape: &mut Tape, h: Var, gate: Var, bias: Var) -> Result<Var, ModelError> {
        let m = tape.shape(h).1;
        let a_left = tape.slice_rows(gate, 0, m)?;
        let a_right = tape.slice_rows(gate, m, m)?;
        let left = tape.matmul(h, a_left)?;
        let right = tape.matmul(h, a_right)?;
        let gates = tape.pair_gate(left, right, bias, self.propagation.gate_pairs.clone(), self.cfg.tau)?;
        Ok(tape.gather_scatter(h, gates, self.propagation.messages.clone())?)
    }

    /// Records the forward pass. Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass, ModelError> {
        params.check_shapes(&self.param_shapes())?;
        let vars: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let x = tape.leaf(self.inputs.clone());
        let encoded = tape.matmul(x, vars[0])?;
        let mut h = tape.add_row_bias(encoded, vars[1])?;
        let mut rng = rng;
        for layer in 0..self.cfg.num_layers {
            let p = &vars[2 + layer * TENSORS_PER_LAYER..2 + (layer + 1) * TENSORS_PER_LAYER];
            let agg = self.aggregate(tape, h, p[0], p[1])?;
            let z = tape.matmul(agg, p[2])?;
            let z = tape.add_row_bias(z, p[3])?;
            let z = tape.gelu(z);
            let z = tape.matmul(z, p[4])?;
            let z = tape.add_row_bias(z, p[5])?;
            h = tape.add(agg, z)?;
            if let Some(rng) = rng.as_deref_mut() {
                h = tape.dropout(h, self.cfg.dropout, rng)?;
            }
        }
        let graph_rows = tape.slice_rows(h, 0, self.num_graph_nodes)?;
        let n = vars.len();
        let decoded = tape.matmul(graph_rows, vars[n - 2])?;
        let logits = tape.add_row_bias(decoded, vars[n - 1])?;
        Ok(ForwardPass { logits, params: vars })
    }

    /// Evaluation-mode logits for the graph nodes.
    pub fn logits(&self, params: &Params) -> Result<Matrix, ModelError> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, params, None)?;
        Ok(tape.value(pass.logits).clone())
    }
}

/// Applies one aggregation to fixed embeddings `h` (`N* × m`).
pub fn aggregate(t: &TransformedGraph, h: &Matrix, a: &[f64], b: f64, cfg: &ModelConfig) -> Result<Matrix, ModelError> {
    cfg.validate()?;
    if h.rows() != t.num_nodes() || a.len() != 2 * h.cols() {
        return Err(ModelError::Dimension(format!(
            "h is {:?}, expected {} rows and |a| = 2·{}",
            h.shape(),
            t.num_nodes(),
            h.cols()
        )));
    }
    let model = Model::new(t, 1, cfg.clone())?;
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let av = tape.leaf(Matrix::from_vec(a.len(), 1, a.to_vec()));
    let bv = tape.leaf(Matrix::scalar(b));
    let out = model.aggregate(&mut tape, hv, av, bv)?;
    Ok(tape.value(out).clone())
}
