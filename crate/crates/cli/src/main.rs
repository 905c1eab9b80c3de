//! `graphite` command-line tool.
//!
//! Every command is deterministic for fixed seeds: outputs carry no
//! timestamps and floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use graphite::homophily::{graph_report, improvement_ratio, transformed_report, EdgeUniverse, HomophilyReport};
use graphite::io::{
    expected_stats, fmt_float, homophily_svg, homophily_table, load_dataset, save_graph, save_transformed,
    stats_warnings, Binarize, DatasetBundle,
};
use graphite::model::ModelConfig;
use graphite::synth::{synth_heterophilic, SynthParams};
use graphite::train::{make_splits, mean, std_dev, train_replicates, Metric, SplitRatio, TrainConfig};
use graphite::transform::{graphite_transform, nhb_transform, size_report, DEFAULT_NHB_NODE_CAP};
use graphite::verify::{gradcheck_fixture, gradient_check, verify_all, VerifyConfig};
use graphite::{Graph, TransformOptions, TransformedGraph};

#[derive(Parser)]
#[command(
    name = "graphite",
    version,
    about = "Feature-node graph transformation, homophily metrics and GNN training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded heterophilic graph.
    Synth(SynthArgs),
    /// Add feature nodes and write the transformed graph.
    Transform(TransformArgs),
    /// Connect every pair of nodes with overlapping features.
    Nhb(NhbArgs),
    /// Homophily before and after the transformation.
    Homophily(HomophilyArgs),
    /// Train the gated GNN on seeded splits.
    Train(TrainArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Run the randomized theorem suites.
    VerifyTheorems(VerifyArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Dataset directory with edges.tsv, features.tsv and optional labels.tsv.
    #[arg(long = "in", visible_alias = "dataset", value_name = "DIR")]
    input: PathBuf,
    /// Treatment of non-binary feature values: reject, threshold or onehot.
    #[arg(long, default_value = "reject")]
    binarize: Binarize,
    /// Override the class count from the labels header.
    #[arg(long)]
    classes: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> Result<Graph> {
        let mut bundle = DatasetBundle::from_dir(&self.input);
        bundle.num_classes = self.classes;
        let g = load_dataset(&bundle, self.binarize)
            .with_context(|| format!("loading dataset from {}", self.input.display()))?;
        if let Some(expected) = expected_stats(&bundle.name) {
            for w in stats_warnings(&g, &expected) {
                eprintln!("warning: {}: {w}", bundle.name);
            }
        }
        Ok(g)
    }
}

#[derive(Args)]
struct TransformFlags {
    /// Zero the graph-node rows of the feature matrix.
    #[arg(long, conflicts_with = "row_normalize")]
    zero_graph_features: bool,
    /// Scale graph-node feature rows to unit L1 norm.
    #[arg(long)]
    row_normalize: bool,
    /// Fail instead of dropping feature columns no node uses.
    #[arg(long)]
    keep_unused_features: bool,
}

impl TransformFlags {
    fn options(&self) -> TransformOptions {
        TransformOptions {
            drop_unused_features: !self.keep_unused_features,
            zero_graph_node_features: self.zero_graph_features,
            row_normalize_graph_node_features: self.row_normalize,
        }
    }
}

#[derive(Args)]
struct ModelFlags {
    /// Feature-edge weight.
    #[arg(long, default_value_t = ModelConfig::default().w_x)]
    wx: f64,
    /// Self-loop weight.
    #[arg(long, default_value_t = ModelConfig::default().w_0)]
    w0: f64,
    /// Gate temperature.
    #[arg(long, default_value_t = ModelConfig::default().tau)]
    tau: f64,
    #[arg(long, default_value_t = ModelConfig::default().num_layers)]
    layers: usize,
    #[arg(long, default_value_t = ModelConfig::default().hidden_dim)]
    hidden: usize,
    #[arg(long, default_value_t = ModelConfig::default().dropout)]
    dropout: f64,
}

impl ModelFlags {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            w_x: self.wx,
            w_0: self.w0,
            tau: self.tau,
            num_layers: self.layers,
            hidden_dim: self.hidden,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Use the standard 200-node training fixture with this generator seed.
    #[arg(long, conflicts_with_all = ["nodes", "classes", "features", "p_in", "p_out", "features_per_class", "features_per_node", "noise"])]
    fixture: Option<u64>,
    #[arg(long, default_value_t = SynthParams::default().num_nodes)]
    nodes: usize,
    #[arg(long, default_value_t = SynthParams::default().num_classes)]
    classes: usize,
    #[arg(long, default_value_t = SynthParams::default().num_features)]
    features: usize,
    #[arg(long, default_value_t = SynthParams::default().p_in)]
    p_in: f64,
    #[arg(long, default_value_t = SynthParams::default().p_out)]
    p_out: f64,
    #[arg(long, default_value_t = SynthParams::default().features_per_class)]
    features_per_class: usize,
    /// Draws per node from its class block; omit for the full block.
    #[arg(long)]
    features_per_node: Option<usize>,
    /// Probability that a feature draw is replaced by a random column.
    #[arg(long, default_value_t = SynthParams::default().feature_noise)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SynthParams::default().max_retries)]
    max_retries: usize,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    flags: TransformFlags,
}

#[derive(Args)]
struct NhbArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Refuse graphs with more nodes than this.
    #[arg(long, default_value_t = DEFAULT_NHB_NODE_CAP)]
    node_cap: usize,
}

#[derive(Args)]
struct HomophilyArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Write homophily.tsv, ratios.tsv and homophily.svg here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also report the all-pairs augmented graph.
    #[arg(long)]
    nhb: bool,
    #[command(flatten)]
    flags: TransformFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphChoice {
    Graphite,
    Original,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricChoice {
    /// ROC-AUC for two classes, accuracy otherwise.
    Auto,
    Accuracy,
    RocAuc,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Receives reports.jsonl, summary.tsv and one checkpoint per replicate.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "graphite")]
    graph: GraphChoice,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    flags: TransformFlags,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    steps: usize,
    /// Seeds the splits, initialization and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of split replicates.
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// Train/validation/test proportions: 48/32/20 or 60/20/20.
    #[arg(long, default_value = "48/32/20")]
    ratio: SplitRatio,
    #[arg(long, value_enum, default_value = "auto")]
    metric: MetricChoice,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Dataset directory; defaults to the built-in 20-node fixture.
    #[arg(long = "in", visible_alias = "dataset", value_name = "DIR")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "reject")]
    binarize: Binarize,
    #[arg(long, default_value_t = 0.6)]
    wx: f64,
    #[arg(long, default_value_t = 1.0)]
    w0: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    /// Largest accepted per-tensor relative error.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = VerifyConfig::default().trials)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = VerifyConfig::default().witness_graphs)]
    witness_graphs: usize,
    #[arg(long, default_value_t = VerifyConfig::default().witness_max_nodes)]
    witness_max_nodes: usize,
    #[arg(long, default_value_t = VerifyConfig::default().lemma_cases)]
    lemma_cases: usize,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<()> {
    let params = match args.fixture {
        Some(seed) => SynthParams::standard_fixture(seed),
        None => SynthParams {
            num_nodes: args.nodes,
            num_classes: args.classes,
            num_features: args.features,
            p_in: args.p_in,
            p_out: args.p_out,
            features_per_class: args.features_per_class,
            features_per_node: args.features_per_node,
            feature_noise: args.noise,
            seed: args.seed,
            max_retries: args.max_retries,
        },
    };
    let g = synth_heterophilic(&params)?;
    save_graph(&g, &args.out)?;
    println!(
        "nodes={} edges={} features={} classes={}",
        g.num_nodes(),
        g.num_edges(),
        g.num_features(),
        params.num_classes
    );
    Ok(())
}

fn transform(args: TransformArgs) -> Result<()> {
    let g = args.input.load()?;
    let t = graphite_transform(&g, args.flags.options())?;
    save_transformed(&t, &args.out)?;
    let r = size_report(&g, &t)?;
    println!(
        "nodes {} -> {}\nedges {} -> {}\nfeature_nodes {}",
        r.nodes_before,
        r.nodes_after,
        r.edges_before,
        r.edges_after,
        t.num_feature_nodes()
    );
    Ok(())
}

fn nhb(args: NhbArgs) -> Result<()> {
    let g = args.input.load()?;
    let augmented = nhb_transform(&g, args.node_cap)?;
    save_graph(&augmented, &args.out)?;
    println!("edges {} -> {}", g.num_edges(), augmented.num_edges());
    Ok(())
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_else(|| "NA".into())
}

fn homophily(args: HomophilyArgs) -> Result<()> {
    let g = args.input.load()?;
    let t = graphite_transform(&g, args.flags.options())?;
    let before = graph_report(&g, EdgeUniverse::Original)?;
    let after_graph_edges = transformed_report(&t, EdgeUniverse::Original)?;
    let after = transformed_report(&t, EdgeUniverse::Transformed)?;
    let nhb_report = if args.nhb {
        Some(graph_report(
            &nhb_transform(&g, DEFAULT_NHB_NODE_CAP)?,
            EdgeUniverse::Nhb,
        )?)
    } else {
        None
    };
    let mut rows: Vec<(&str, &HomophilyReport)> = vec![
        ("original", &before),
        ("graphite", &after_graph_edges),
        ("graphite", &after),
    ];
    if let Some(r) = &nhb_report {
        rows.push(("nhb", r));
    }
    let table = homophily_table(&rows);

    let ratio = improvement_ratio(&before, &after);
    let mut ratios = String::from("metric\tbefore\tafter\tratio\tdelta\n");
    let _ = writeln!(
        ratios,
        "h_feature\t{}\t{}\t{}\t{}",
        fmt_float(before.h_feature),
        fmt_float(after.h_feature),
        opt_float(ratio.feature_ratio),
        fmt_float(ratio.delta_feature)
    );
    let _ = writeln!(
        ratios,
        "h_adjusted\t{}\t{}\t{}\t{}",
        opt_float(before.h_adjusted),
        opt_float(after.h_adjusted),
        opt_float(ratio.adjusted_ratio),
        opt_float(ratio.delta_adjusted)
    );

    print!("{table}\n{ratios}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write(&out.join("homophily.tsv"), &table)?;
        write(&out.join("ratios.tsv"), &ratios)?;
        write(&out.join("homophily.svg"), &homophily_svg(&before, &after))?;
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let g = args.input.load()?;
    let num_classes = g.num_classes().context("training needs labels.tsv")?;
    let t = match args.graph {
        GraphChoice::Graphite => graphite_transform(&g, args.flags.options())?,
        GraphChoice::Original => {
            if args.flags.zero_graph_features || args.flags.row_normalize {
                bail!("--zero-graph-features and --row-normalize only apply with --graph graphite");
            }
            TransformedGraph::without_feature_nodes(&g)
        }
    };
    let metric = match args.metric {
        MetricChoice::Auto if num_classes == 2 => Metric::RocAuc,
        MetricChoice::Auto | MetricChoice::Accuracy => Metric::Accuracy,
        MetricChoice::RocAuc => Metric::RocAuc,
    };
    let model_cfg = args.model.config();
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        steps: args.steps,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let splits = make_splits(&g, args.ratio, args.seed, args.splits)?;
    let outcomes = train_replicates(&t, &splits, &model_cfg, &train_cfg, metric)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut jsonl = String::new();
    let mut summary = String::from("replicate\tseed\tbest_step\tbest_val\ttest_at_best_val\tfinal_test\tconfig_hash\n");
    for o in &outcomes {
        let r = &o.report;
        jsonl.push_str(&r.to_jsonl());
        let _ = writeln!(
            summary,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.replicate,
            r.seed,
            r.best_step,
            fmt_float(r.best_val),
            fmt_float(r.test_at_best_val),
            fmt_float(r.final_test),
            r.config_hash
        );
        let path = args.out.join(format!("checkpoint_{:02}.bin", r.replicate));
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        o.best_params
            .write_checkpoint(BufWriter::new(file))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let scores: Vec<f64> = outcomes.iter().map(|o| o.report.test_at_best_val).collect();
    let _ = writeln!(summary, "mean\t\t\t\t{}\t\t", fmt_float(mean(&scores)));
    let _ = writeln!(summary, "std\t\t\t\t{}\t\t", fmt_float(std_dev(&scores)));
    write(&args.out.join("reports.jsonl"), &jsonl)?;
    write(&args.out.join("summary.tsv"), &summary)?;
    println!(
        "{} over {} splits: {:.4} ± {:.4}",
        metric.name(),
        scores.len(),
        mean(&scores),
        std_dev(&scores)
    );
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let g = match &args.input {
        Some(dir) => load_dataset(&DatasetBundle::from_dir(dir), args.binarize)?,
        None => gradcheck_fixture(),
    };
    let t = graphite_transform(&g, TransformOptions::default())?;
    let cfg = ModelConfig {
        w_x: args.wx,
        w_0: args.w0,
        tau: args.tau,
        num_layers: args.layers,
        hidden_dim: args.hidden,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let report = gradient_check(&t, &cfg, args.seed, args.step, 0.0)?;
    for (i, e) in report.tensor_rel_errors.iter().enumerate() {
        println!("tensor {i}\t{}", fmt_float(*e));
    }
    let worst = report.max_tensor_rel_error();
    let ok = worst < args.tolerance;
    println!(
        "{}\tgradcheck\tparams={}\tmax_tensor_rel_error={}\tmax_elementwise_rel_error={}\tmax_abs_error={}",
        if ok { "PASS" } else { "FAIL" },
        report.checked,
        fmt_float(worst),
        fmt_float(report.max_rel_error),
        fmt_float(report.max_abs_error)
    );
    Ok(ok)
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let cfg = VerifyConfig {
        trials: args.trials,
        seed: args.seed,
        witness_graphs: args.witness_graphs,
        witness_max_nodes: args.witness_max_nodes,
        lemma_cases: args.lemma_cases,
    };
    let reports = verify_all(&cfg)?;
    let mut ok = true;
    for r in &reports {
        println!("{}", r.summary_line());
        ok &= r.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Transform(a) => transform(a).map(|_| true),
        Command::Nhb(a) => nhb(a).map(|_| true),
        Command::Homophily(a) => homophily(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::VerifyTheorems(a) => verify(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
