//! Small hand-built graphs shared by tests, examples and the CLI.

use crate::graph::{FeatureMatrix, Graph, Labels};

/// The five-node two-class example: v1, v2 carry feature 0 and class 0;
/// v3, v4, v5 carry feature 1 and class 1. Edges mostly cross classes; the
/// only intra-class edge is v3–v4.
pub fn figure_one() -> Graph {
    let x =
        FeatureMatrix::from_rows(2, vec![vec![0], vec![0], vec![1], vec![1], vec![1]]).expect("valid fixture features");
    let labels = Labels::full(2, vec![0, 0, 1, 1, 1]).expect("valid fixture labels");
    Graph::build(5, [(0, 2), (0, 3), (1, 3), (1, 4), (2, 3)], x, Some(labels)).expect("valid fixture graph")
}
