#![allow(clippy::needless_range_loop)]

mod common;

use std::rc::Rc;

use graphite::graph::{FeatureMatrix, Graph, Labels};
use graphite::model::{aggregate, weighted_degrees, Model, ModelConfig, Params};
use graphite::tensor::{Matrix, Message, Tape, Var};
use graphite::transform::{graphite_transform, TransformOptions, TransformedGraph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type OpCase = (&'static str, Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>);

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

fn config(rng: &mut impl Rng, layers: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        w_x: [0.01, 0.1, 0.6, 8.0][rng.gen_range(0..4)],
        w_0: [0.1, 0.5, 1.0, 8.0][rng.gen_range(0..4)],
        tau: [0.1, 1.0, 3.0][rng.gen_range(0..3)],
        num_layers: layers,
        hidden_dim: hidden,
        dropout: 0.0,
        mlp_layers_per_block: 2,
    }
}

/// Central differences of a scalar tape function over every input scalar.
/// Returns the largest per-input norm-wise relative error.
fn check_op(inputs: &[Matrix], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |values: &[Matrix]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i], input.shape());
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for k in 0..input.data().len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            diff += (numeric - analytic.data()[k]).powi(2);
            norm = norm.max(numeric.abs()).max(analytic.data()[k].abs());
        }
        if norm > 0.0 {
            worst = worst.max(diff.sqrt() / norm);
        }
    }
    worst
}

/// `Σ out ⊙ w` for fixed weights, to reduce a matrix to a scalar.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.leaf(random_matrix(&mut rng, r, c, 1.0));
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

#[test]
fn tape_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 4, 3, 1.0);
    let b = random_matrix(&mut rng, 3, 2, 1.0);
    let c = random_matrix(&mut rng, 4, 3, 1.0);
    let bias = random_matrix(&mut rng, 1, 3, 1.0);
    let tol = 1e-6;

    let cases: Vec<OpCase> = vec![
        (
            "matmul",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| {
                let o = t.matmul(v[0], v[1]).unwrap();
                weighted_sum(t, o, 2)
            }),
        ),
        (
            "add",
            vec![a.clone(), c.clone()],
            Box::new(|t, v| {
                let o = t.add(v[0], v[1]).unwrap();
                weighted_sum(t, o, 3)
            }),
        ),
        (
            "mul",
            vec![a.clone(), c.clone()],
            Box::new(|t, v| {
                let o = t.mul(v[0], v[1]).unwrap();
                weighted_sum(t, o, 4)
            }),
        ),
        (
            "bias",
            vec![a.clone(), bias.clone()],
            Box::new(|t, v| {
                let o = t.add_row_bias(v[0], v[1]).unwrap();
                weighted_sum(t, o, 5)
            }),
        ),
        (
            "scale",
            vec![a.clone()],
            Box::new(|t, v| {
                let o = t.scale(v[0], -1.7);
                weighted_sum(t, o, 6)
            }),
        ),
        (
            "tanh",
            vec![a.clone()],
            Box::new(|t, v| {
                let o = t.tanh(v[0]);
                weighted_sum(t, o, 7)
            }),
        ),
        (
            "gelu",
            vec![a.clone()],
            Box::new(|t, v| {
                let o = t.gelu(v[0]);
                weighted_sum(t, o, 8)
            }),
        ),
        (
            "slice",
            vec![a.clone()],
            Box::new(|t, v| {
                let o = t.slice_rows(v[0], 1, 2).unwrap();
                weighted_sum(t, o, 9)
            }),
        ),
        (
            "cross_entropy",
            vec![a.clone()],
            Box::new(|t, v| {
                t.softmax_cross_entropy(v[0], Rc::from(vec![0, 2, 3]), Rc::from(vec![1, 0, 2]))
                    .unwrap()
            }),
        ),
        (
            "pair_gate",
            vec![
                random_matrix(&mut rng, 4, 1, 1.0),
                random_matrix(&mut rng, 4, 1, 1.0),
                Matrix::scalar(0.3),
            ],
            Box::new(|t, v| {
                let o = t
                    .pair_gate(v[0], v[1], v[2], Rc::from(vec![(0, 1), (1, 0), (2, 2), (3, 1)]), 0.7)
                    .unwrap();
                weighted_sum(t, o, 10)
            }),
        ),
        (
            "gather_scatter",
            vec![a.clone(), random_matrix(&mut rng, 3, 1, 1.0)],
            Box::new(|t, v| {
                let msgs = vec![
                    Message {
                        target: 0,
                        source: 1,
                        gate: 0,
                        coef: 0.5,
                    },
                    Message {
                        target: 1,
                        source: 0,
                        gate: 0,
                        coef: 0.5,
                    },
                    Message {
                        target: 2,
                        source: 2,
                        gate: 1,
                        coef: 1.5,
                    },
                    Message {
                        target: 3,
                        source: 2,
                        gate: 2,
                        coef: -0.25,
                    },
                ];
                let o = t.gather_scatter(v[0], v[1], Rc::from(msgs)).unwrap();
                weighted_sum(t, o, 11)
            }),
        ),
    ];
    for (name, inputs, build) in cases {
        let err = check_op(&inputs, build);
        assert!(err < tol, "{name}: relative error {err}");
    }
}

#[test]
fn dropout_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.leaf(Matrix::from_fn(200, 200, |_, _| 2.0));
    let d = tape.dropout(x, 0.3, &mut rng).unwrap();
    let mean = tape.value(d).data().iter().sum::<f64>() / 40_000.0;
    assert!((mean - 2.0).abs() < 0.03, "{mean}");
}

fn small_graph(seed: u64, n: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    common::random_graph(&mut rng, n, 5, 0.2, 0.3, Some(3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregate_matches_dense_oracle(seed in any::<u64>(), n in 2usize..=40, m in 1usize..=5) {
        let g = small_graph(seed, n);
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let cfg = config(&mut rng, 1, m);
        let h = random_matrix(&mut rng, t.num_nodes(), m, 1.0);
        let a: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let sparse = aggregate(&t, &h, &a, b, &cfg).unwrap();
        let star = common::dense_star(&g);
        let rows: Vec<Vec<f64>> = (0..t.num_nodes()).map(|r| h.row(r).to_vec()).collect();
        let dense = common::dense_aggregate(&star, n, &rows, &a, b, cfg.tau, cfg.w_x, cfg.w_0);
        for r in 0..t.num_nodes() {
            for c in 0..m {
                prop_assert!((sparse.get(r, c) - dense[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gates_bounded_and_degrees_positive(seed in any::<u64>(), n in 2usize..=30) {
        let g = small_graph(seed, n);
        let t = graphite_transform(&g, TransformOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let cfg = config(&mut rng, 2, 4);
        prop_assert!(weighted_degrees(&t, &cfg).iter().all(|&d| d > 0.0 && d.is_finite()));
        let model = Model::new(&t, 3, cfg.clone()).unwrap();
        let params = model.init_params(seed);
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &params, None).unwrap();
        prop_assert!(tape.value(pass.logits).is_finite());
        let h = random_matrix(&mut rng, t.num_nodes(), 4, 3.0);
        let hv = tape.leaf(h);
        let a = tape.leaf(random_matrix(&mut rng, 8, 1, 1.0));
        let left = tape.slice_rows(a, 0, 4).unwrap();
        let right = tape.slice_rows(a, 4, 4).unwrap();
        let l = tape.matmul(hv, left).unwrap();
        let r = tape.matmul(hv, right).unwrap();
        let b = tape.leaf(Matrix::scalar(0.1));
        let gates = tape.pair_gate(l, r, b, model.propagation().gate_pairs.clone(), cfg.tau).unwrap();
        // Strictly inside (-1, 1) wherever f64 tanh can represent it; beyond
        // |z| ≈ 19.06 tanh rounds to ±1.
        let (lv, rv) = (tape.value(l).clone(), tape.value(r).clone());
        for (p, &(u, v)) in model.propagation().gate_pairs.iter().enumerate() {
            let gate = tape.value(gates).get(p, 0);
            let z = (lv.get(u, 0) + rv.get(v, 0) + 0.1) / cfg.tau;
            prop_assert!(gate.abs() <= 1.0);
            if z.abs() < 19.0 {
                prop_assert!(gate.abs() < 1.0);
            }
        }
    }

    #[test]
    fn forward_is_permutation_equivariant(seed in any::<u64>(), n in 3usize..=25) {
        let g = small_graph(seed, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 5));
        let labels = g.labels().unwrap();
        let mut rows = vec![Vec::new(); n];
        let mut classes = vec![0; n];
        for v in 0..n {
            rows[perm[v]] = g.features().row(v).to_vec();
            classes[perm[v]] = labels.get(v).unwrap();
        }
        let h = Graph::build(
            n,
            g.edges().iter().map(|&(u, v)| (perm[u], perm[v])),
            FeatureMatrix::from_rows(g.num_features(), rows).unwrap(),
            Some(Labels::full(3, classes).unwrap()),
        ).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = config(&mut rng, 2, 4);
        let tg = graphite_transform(&g, TransformOptions::default()).unwrap();
        let th = graphite_transform(&h, TransformOptions::default()).unwrap();
        let mg = Model::new(&tg, 3, cfg.clone()).unwrap();
        let mh = Model::new(&th, 3, cfg).unwrap();
        let params = mg.init_params(seed);
        let lg = mg.logits(&params).unwrap();
        let lh = mh.logits(&params).unwrap();
        for v in 0..n {
            for c in 0..3 {
                prop_assert!((lg.get(v, c) - lh.get(perm[v], c)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn full_model_gradient_check() {
    let g = small_graph(9, 20);
    let t = graphite_transform(&g, TransformOptions::default()).unwrap();
    let cfg = ModelConfig {
        w_x: 0.6,
        w_0: 0.5,
        tau: 0.5,
        num_layers: 2,
        hidden_dim: 6,
        dropout: 0.0,
        mlp_layers_per_block: 2,
    };
    let model = Model::new(&t, 3, cfg).unwrap();
    let params = model.init_params(4);
    let labels = g.labels().unwrap();
    let rows: Rc<[usize]> = (0..20).collect();
    let targets: Rc<[usize]> = (0..20).map(|v| labels.get(v).unwrap()).collect();
    let loss_of = |p: &Params| {
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, p, None).unwrap();
        let loss = tape
            .softmax_cross_entropy(pass.logits, rows.clone(), targets.clone())
            .unwrap();
        (tape, pass, loss)
    };
    let (tape, pass, loss) = loss_of(&params);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-6;
    for (i, &var) in pass.params.iter().enumerate() {
        let analytic = grads.get(var, params.tensors[i].shape());
        let (mut diff, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for k in 0..analytic.data().len() {
            let mut plus = params.clone();
            plus.tensors[i].data_mut()[k] += h;
            let mut minus = params.clone();
            minus.tensors[i].data_mut()[k] -= h;
            let (tp, _, lp) = loss_of(&plus);
            let (tm, _, lm) = loss_of(&minus);
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
            diff += (numeric - analytic.data()[k]).powi(2);
            a_sq += analytic.data()[k].powi(2);
            n_sq += numeric * numeric;
        }
        let scale = f64::max(a_sq, n_sq).sqrt();
        let rel = if scale == 0.0 { 0.0 } else { diff.sqrt() / scale };
        assert!(rel < 1e-5, "tensor {i}: relative error {rel}");
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let t = TransformedGraph::without_feature_nodes(&small_graph(2, 10));
    let model = Model::new(
        &t,
        3,
        ModelConfig {
            hidden_dim: 4,
            num_layers: 1,
            ..ModelConfig::default()
        },
    )
    .unwrap();
    let params = model.init_params(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    params.write_checkpoint(std::fs::File::create(&path).unwrap()).unwrap();
    let loaded = Params::read_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(loaded, params);
    assert_eq!(model.logits(&loaded).unwrap(), model.logits(&params).unwrap());
    let bytes = std::fs::read(&path).unwrap();
    let expected_len = 8 + 4 + 4 + params.tensors.iter().map(|t| 16 + 8 * t.data().len()).sum::<usize>();
    assert_eq!(bytes.len(), expected_len);
}
