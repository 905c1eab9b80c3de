//! Plain-text dataset and transformed-graph files, plus report emitters.
//!
//! A dataset directory holds three tab-separated files. Each may start with
//! a header line `# key=value key=value` carrying counts; other lines
//! starting with `#` and blank lines are skipped.
//!
//! | file           | header keys        | line format                      |
//! |----------------|--------------------|----------------------------------|
//! | `edges.tsv`    | `nodes`, `edges`   | `u  v`                           |
//! | `features.tsv` | `nodes`, `features`| `node  feature [value]`          |
//! | `labels.tsv`   | `nodes`, `classes` | `node  class` (unlabelled: omit) |
//!
//! Floats are written with 17 significant digits so files round-trip
//! exactly and repeated runs are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::{FeatureMatrix, Graph, GraphError, Labels};
use crate::homophily::HomophilyReport;
use crate::tensor::Matrix;
use crate::transform::{size_report, TransformError, TransformedGraph};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// How non-binary feature values are treated on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Binarize {
    /// Any value other than 0 or 1 is an error.
    #[default]
    Reject,
    /// Values > 0 become 1.
    Threshold,
    /// Each distinct nonzero value of a column gets its own indicator column.
    OneHot,
}

impl std::str::FromStr for Binarize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" | "none" => Ok(Self::Reject),
            "threshold" => Ok(Self::Threshold),
            "onehot" | "one-hot" => Ok(Self::OneHot),
            other => Err(format!(
                "unknown binarize mode `{other}` (use reject, threshold or onehot)"
            )),
        }
    }
}

/// File locations for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
    /// Overrides the `classes` header when given.
    pub num_classes: Option<usize>,
}

impl DatasetBundle {
    /// `edges.tsv`, `features.tsv` and, if present, `labels.tsv` in `dir`.
    /// The dataset is named after the directory.
    pub fn from_dir(dir: &Path) -> Self {
        let labels = dir.join("labels.tsv");
        Self {
            name: dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            edges: dir.join("edges.tsv"),
            features: dir.join("features.tsv"),
            labels: labels.exists().then_some(labels),
            num_classes: None,
        }
    }
}

struct TableFile {
    path: PathBuf,
    header: BTreeMap<String, String>,
    /// `(1-based line number, fields)`.
    rows: Vec<(usize, Vec<String>)>,
}

impl TableFile {
    fn read(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?;
        let mut header = BTreeMap::new();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                if rows.is_empty() {
                    for pair in comment.split_whitespace() {
                        if let Some((k, v)) = pair.split_once('=') {
                            header.insert(k.to_string(), v.to_string());
                        }
                    }
                }
                continue;
            }
            rows.push((i + 1, trimmed.split('\t').map(|f| f.trim().to_string()).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn err(&self, line: usize, message: impl Into<String>) -> IoError {
        IoError::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn header_usize(&self, key: &str) -> Result<Option<usize>, IoError> {
        self.header
            .get(key)
            .map(|v| {
                v.parse().map_err(|_| IoError::Invalid {
                    path: self.path.clone(),
                    message: format!("header `{key}={v}` is not a count"),
                })
            })
            .transpose()
    }

    fn field<T: std::str::FromStr>(&self, line: usize, fields: &[String], i: usize, what: &str) -> Result<T, IoError> {
        let raw = fields
            .get(i)
            .ok_or_else(|| self.err(line, format!("missing {what} (column {})", i + 1)))?;
        raw.parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} `{raw}`")))
    }

    fn expect_columns(&self, line: usize, fields: &[String], allowed: &[usize]) -> Result<(), IoError> {
        if allowed.contains(&fields.len()) {
            Ok(())
        } else {
            Err(self.err(
                line,
                format!("expected {allowed:?} tab-separated columns, found {}", fields.len()),
            ))
        }
    }
}

/// Loads and validates a dataset.
pub fn load_dataset(bundle: &DatasetBundle, binarize: Binarize) -> Result<Graph, IoError> {
    let edges_file = TableFile::read(&bundle.edges)?;
    let features_file = TableFile::read(&bundle.features)?;
    let labels_file = bundle.labels.as_deref().map(TableFile::read).transpose()?;

    let mut edges = Vec::with_capacity(edges_file.rows.len());
    for (line, fields) in &edges_file.rows {
        edges_file.expect_columns(*line, fields, &[2])?;
        let u: usize = edges_file.field(*line, fields, 0, "node index")?;
        let v: usize = edges_file.field(*line, fields, 1, "node index")?;
        edges.push((u, v));
    }
    let mut entries = Vec::with_capacity(features_file.rows.len());
    for (line, fields) in &features_file.rows {
        features_file.expect_columns(*line, fields, &[2, 3])?;
        let node: usize = features_file.field(*line, fields, 0, "node index")?;
        let col: usize = features_file.field(*line, fields, 1, "feature index")?;
        let value: f64 = if fields.len() == 3 {
            features_file.field(*line, fields, 2, "feature value")?
        } else {
            1.0
        };
        if !value.is_finite() {
            return Err(features_file.err(*line, format!("non-finite feature value {value}")));
        }
        entries.push((*line, node, col, value));
    }
    let mut labels = Vec::new();
    if let Some(file) = &labels_file {
        for (line, fields) in &file.rows {
            file.expect_columns(*line, fields, &[2])?;
            let node: usize = file.field(*line, fields, 0, "node index")?;
            let class: usize = file.field(*line, fields, 1, "class")?;
            labels.push((*line, node, class));
        }
    }

    let mut num_nodes = None;
    for file in [Some(&edges_file), Some(&features_file), labels_file.as_ref()]
        .into_iter()
        .flatten()
    {
        if let Some(n) = file.header_usize("nodes")? {
            if num_nodes.is_some_and(|m| m != n) {
                return Err(IoError::Invalid {
                    path: file.path.clone(),
                    message: format!("header says {n} nodes, another file says {}", num_nodes.unwrap_or(0)),
                });
            }
            num_nodes = Some(n);
        }
    }
    let num_nodes = num_nodes.unwrap_or_else(|| {
        let max_edge = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        let max_feat = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        let max_label = labels.iter().map(|l| l.1 + 1).max().unwrap_or(0);
        max_edge.max(max_feat).max(max_label)
    });
    for &(u, v) in &edges {
        if u >= num_nodes || v >= num_nodes {
            let line = edges_file.rows[edges.iter().position(|&e| e == (u, v)).unwrap_or(0)].0;
            return Err(edges_file.err(line, format!("node {} out of range (nodes={num_nodes})", u.max(v))));
        }
    }

    let declared_cols = features_file.header_usize("features")?;
    let max_col = entries.iter().map(|e| e.2 + 1).max().unwrap_or(0);
    let raw_cols = declared_cols.unwrap_or(max_col);
    for &(line, node, col, _) in &entries {
        if node >= num_nodes {
            return Err(features_file.err(line, format!("node {node} out of range (nodes={num_nodes})")));
        }
        if col >= raw_cols {
            return Err(features_file.err(line, format!("feature {col} out of range (features={raw_cols})")));
        }
    }
    let x = binarize_entries(&features_file, &entries, raw_cols, num_nodes, binarize)?;

    let labels = match &labels_file {
        None => None,
        Some(file) => {
            let max_class = labels.iter().map(|l| l.2 + 1).max().unwrap_or(0);
            let num_classes = bundle
                .num_classes
                .or(file.header_usize("classes")?)
                .unwrap_or(max_class);
            let mut classes = vec![None; num_nodes];
            for &(line, node, class) in &labels {
                if node >= num_nodes {
                    return Err(file.err(line, format!("node {node} out of range (nodes={num_nodes})")));
                }
                if class >= num_classes {
                    return Err(file.err(line, format!("class {class} out of range (classes={num_classes})")));
                }
                if classes[node].is_some_and(|c| c != class) {
                    return Err(file.err(line, format!("node {node} has two different labels")));
                }
                classes[node] = Some(class);
            }
            Some(Labels::new(num_classes, classes)?)
        }
    };
    Ok(Graph::build(num_nodes, edges, x, labels)?)
}

fn binarize_entries(
    file: &TableFile,
    entries: &[(usize, usize, usize, f64)],
    num_cols: usize,
    num_nodes: usize,
    mode: Binarize,
) -> Result<FeatureMatrix, IoError> {
    match mode {
        Binarize::Reject => {
            for &(line, _, _, value) in entries {
                if value != 0.0 && value != 1.0 {
                    return Err(file.err(line, format!("non-binary feature value {value} (see --binarize)")));
                }
            }
            let triples = entries.iter().map(|&(_, n, c, v)| (n, c, v));
            Ok(FeatureMatrix::from_entries(num_nodes, num_cols, triples)?)
        }
        Binarize::Threshold => {
            let triples = entries
                .iter()
                .map(|&(_, n, c, v)| (n, c, if v > 0.0 { 1.0 } else { 0.0 }));
            Ok(FeatureMatrix::from_entries(num_nodes, num_cols, triples)?)
        }
        Binarize::OneHot => {
            let distinct: BTreeSet<(usize, u64)> = entries
                .iter()
                .filter(|e| e.3 != 0.0)
                .map(|&(_, _, c, v)| (c, ordered_bits(v)))
                .collect();
            let index: BTreeMap<(usize, u64), usize> =
                distinct.into_iter().enumerate().map(|(i, key)| (key, i)).collect();
            let triples = entries
                .iter()
                .filter(|e| e.3 != 0.0)
                .map(|&(_, n, c, v)| (n, index[&(c, ordered_bits(v))], 1.0));
            Ok(FeatureMatrix::from_entries(num_nodes, index.len(), triples)?)
        }
    }
}

/// Bit pattern whose unsigned order matches the numeric order of `v`.
fn ordered_bits(v: f64) -> u64 {
    let bits = (v + 0.0).to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Counts from the published dataset summary, used for warnings only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedStats {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub adjusted_homophily: f64,
}

pub fn expected_stats(name: &str) -> Option<ExpectedStats> {
    let s = |nodes, edges, features, classes, adjusted_homophily| ExpectedStats {
        nodes,
        edges,
        features,
        classes,
        adjusted_homophily,
    };
    match name.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
        "actor" => Some(s(7600, 33544, 931, 5, 0.0028)),
        "squirrel-f" | "squirrel-filtered" => Some(s(2223, 46998, 2089, 5, 0.0086)),
        "chameleon-f" | "chameleon-filtered" => Some(s(890, 8854, 2325, 5, 0.0295)),
        "minesweeper" => Some(s(10000, 39402, 7, 2, 0.0094)),
        "cora" => Some(s(2708, 5429, 1433, 7, 0.7711)),
        "citeseer" => Some(s(3327, 4732, 3703, 6, 0.6707)),
        _ => None,
    }
}

/// Human-readable mismatches between `g` and the expected counts.
pub fn stats_warnings(g: &Graph, expected: &ExpectedStats) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |what: &str, got: usize, want: usize| {
        if got != want {
            out.push(format!("{what}: loaded {got}, expected {want}"));
        }
    };
    check("nodes", g.num_nodes(), expected.nodes);
    check("edges", g.num_edges(), expected.edges);
    check("features", g.num_features(), expected.features);
    if let Some(c) = g.num_classes() {
        check("classes", c, expected.classes);
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `edges.tsv`, `features.tsv` and (when labelled) `labels.tsv`.
pub fn save_graph(g: &Graph, dir: &Path) -> Result<(), IoError> {
    create_dir(dir)?;
    let mut edges = format!("# nodes={} edges={}\n", g.num_nodes(), g.num_edges());
    for &(u, v) in g.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    write_file(&dir.join("edges.tsv"), &edges)?;
    let mut features = format!("# nodes={} features={}\n", g.num_nodes(), g.num_features());
    for (v, row) in g.features().rows().enumerate() {
        for c in row {
            let _ = writeln!(features, "{v}\t{c}");
        }
    }
    write_file(&dir.join("features.tsv"), &features)?;
    let label_path = dir.join("labels.tsv");
    if let Some(labels) = g.labels() {
        let mut text = format!("# nodes={} classes={}\n", g.num_nodes(), labels.num_classes());
        for (v, c) in labels.as_slice().iter().enumerate() {
            if let Some(c) = c {
                let _ = writeln!(text, "{v}\t{c}");
            }
        }
        write_file(&label_path, &text)?;
    } else if label_path.exists() {
        fs::remove_file(&label_path).map_err(|source| IoError::File {
            path: label_path,
            source,
        })?;
    }
    Ok(())
}

pub fn load_graph(dir: &Path) -> Result<Graph, IoError> {
    load_dataset(&DatasetBundle::from_dir(dir), Binarize::Reject)
}

/// Writes the base graph plus `column_map.tsv`, `feature_edges.tsv`,
/// `x_star.tsv` (nonzero entries) and `size_report.tsv`.
pub fn save_transformed(t: &TransformedGraph, dir: &Path) -> Result<(), IoError> {
    save_graph(t.base(), dir)?;
    let mut map = format!("# feature_nodes={}\n", t.num_feature_nodes());
    for (k, c) in t.column_map().iter().enumerate() {
        let _ = writeln!(map, "{k}\t{c}");
    }
    write_file(&dir.join("column_map.tsv"), &map)?;
    let mut fe = format!("# feature_edges={}\n", t.feature_edges().len());
    for &(v, k) in t.feature_edges() {
        let _ = writeln!(fe, "{v}\t{k}");
    }
    write_file(&dir.join("feature_edges.tsv"), &fe)?;
    let x = t.x_star();
    let mut xs = format!("# rows={} cols={}\n", x.rows(), x.cols());
    for r in 0..x.rows() {
        for (c, &v) in x.row(r).iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(xs, "{r}\t{c}\t{}", fmt_float(v));
            }
        }
    }
    write_file(&dir.join("x_star.tsv"), &xs)?;
    let report = size_report(t.base(), t)?;
    let sr = format!(
        "nodes_before\t{}\nnodes_after\t{}\nedges_before\t{}\nedges_after\t{}\nfeature_nnz\t{}\n",
        report.nodes_before, report.nodes_after, report.edges_before, report.edges_after, report.feature_nnz
    );
    write_file(&dir.join("size_report.tsv"), &sr)
}

pub fn load_transformed(dir: &Path) -> Result<TransformedGraph, IoError> {
    let base = load_graph(dir)?;
    let map = TableFile::read(&dir.join("column_map.tsv"))?;
    let mut column_map = Vec::with_capacity(map.rows.len());
    for (line, fields) in &map.rows {
        map.expect_columns(*line, fields, &[2])?;
        let k: usize = map.field(*line, fields, 0, "feature node")?;
        if k != column_map.len() {
            return Err(map.err(*line, format!("feature node {k} out of order")));
        }
        column_map.push(map.field(*line, fields, 1, "column")?);
    }
    let fe = TableFile::read(&dir.join("feature_edges.tsv"))?;
    let mut feature_edges = Vec::with_capacity(fe.rows.len());
    for (line, fields) in &fe.rows {
        fe.expect_columns(*line, fields, &[2])?;
        feature_edges.push((
            fe.field(*line, fields, 0, "graph node")?,
            fe.field(*line, fields, 1, "feature node")?,
        ));
    }
    let xs = TableFile::read(&dir.join("x_star.tsv"))?;
    let rows = xs.header_usize("rows")?.ok_or_else(|| IoError::Invalid {
        path: xs.path.clone(),
        message: "missing `rows` header".into(),
    })?;
    let cols = xs.header_usize("cols")?.ok_or_else(|| IoError::Invalid {
        path: xs.path.clone(),
        message: "missing `cols` header".into(),
    })?;
    let mut x_star = Matrix::zeros(rows, cols);
    for (line, fields) in &xs.rows {
        xs.expect_columns(*line, fields, &[3])?;
        let r: usize = xs.field(*line, fields, 0, "row")?;
        let c: usize = xs.field(*line, fields, 1, "column")?;
        if r >= rows || c >= cols {
            return Err(xs.err(*line, format!("entry ({r},{c}) outside {rows}×{cols}")));
        }
        x_star.set(r, c, xs.field(*line, fields, 2, "value")?);
    }
    Ok(TransformedGraph::from_parts(base, column_map, feature_edges, x_star)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_else(|| "NA".into())
}

/// One TSV row per report: `universe  h_feature  h_edge  h_adjusted  h_and`.
pub fn homophily_table(rows: &[(&str, &HomophilyReport)]) -> String {
    let mut out = String::from("graph\tuniverse\th_feature\th_edge\th_adjusted\th_and\n");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            r.edge_universe.name(),
            fmt_float(r.h_feature),
            opt(r.h_edge),
            opt(r.h_adjusted),
            fmt_float(r.h_and)
        );
    }
    out
}

/// Grouped bar chart comparing homophily metrics before and after.
pub fn homophily_svg(before: &HomophilyReport, after: &HomophilyReport) -> String {
    let metrics: [(&str, Option<f64>, Option<f64>); 4] = [
        ("feature", Some(before.h_feature), Some(after.h_feature)),
        ("edge", before.h_edge, after.h_edge),
        ("adjusted", before.h_adjusted, after.h_adjusted),
        ("and", Some(before.h_and), Some(after.h_and)),
    ];
    let (width, height, base_y, scale) = (480.0, 260.0, 210.0, 180.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"30\" y1=\"{base_y}\" x2=\"470\" y2=\"{base_y}\" stroke=\"black\"/>"
    );
    for (i, (name, b, a)) in metrics.iter().enumerate() {
        let x0 = 50.0 + i as f64 * 105.0;
        for (j, (value, color)) in [(b, "#8c8c8c"), (a, "#2b6cb0")].iter().enumerate() {
            let Some(v) = value else { continue };
            let h = v.clamp(-0.1, 1.0) * scale;
            let (y, h) = if h >= 0.0 { (base_y - h, h) } else { (base_y, -h) };
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{y:.3}\" width=\"36\" height=\"{h:.3}\" fill=\"{color}\"><title>{name} {}: {v:.4}</title></rect>",
                x0 + j as f64 * 40.0,
                if j == 0 { "before" } else { "after" }
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{name}</text>",
            x0 + 38.0,
            base_y + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<rect x=\"300\" y=\"8\" width=\"10\" height=\"10\" fill=\"#8c8c8c\"/><text x=\"314\" y=\"17\">before</text>"
    );
    let _ = writeln!(
        svg,
        "<rect x=\"370\" y=\"8\" width=\"10\" height=\"10\" fill=\"#2b6cb0\"/><text x=\"384\" y=\"17\">after</text>"
    );
    svg.push_str("</svg>\n");
    svg
}
