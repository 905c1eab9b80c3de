use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn graphite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphite"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_fixture(dir: &Path) {
    let out = graphite(&["synth", "--fixture", "1", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_theorems_prints_one_line_per_suite() {
    let out = graphite(&["verify-theorems", "--trials", "500", "--seed", "7"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    let names: Vec<&str> = text.lines().map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(
        names,
        [
            "theorem3",
            "theorem3_size",
            "theorem1",
            "observation2",
            "x_star_identity",
            "lemma4"
        ]
    );
    assert!(text.lines().all(|l| l.starts_with("PASS\t")));
    assert!(text.contains("theorem3\ttrials=500\tfailures=0"));
}

#[test]
fn transform_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    synth_fixture(&g);
    for out in ["a", "b"] {
        let o = graphite(&[
            "transform",
            "--in",
            g.to_str().unwrap(),
            "--out",
            dir.path().join(out).to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    for name in [
        "edges.tsv",
        "features.tsv",
        "labels.tsv",
        "column_map.tsv",
        "feature_edges.tsv",
        "x_star.tsv",
        "size_report.tsv",
    ] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(name)).unwrap(), "{name}");
    }
    let report = fs::read_to_string(dir.path().join("a/size_report.tsv")).unwrap();
    assert!(report.starts_with("nodes_before\t200\n"));
}

#[test]
fn homophily_reports_both_universes_and_writes_plot() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    synth_fixture(&g);
    let out_dir = dir.path().join("h");
    let o = graphite(&[
        "homophily",
        "--in",
        g.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let table = fs::read_to_string(out_dir.join("homophily.tsv")).unwrap();
    let universes: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(universes, ["E", "E", "E_star"]);
    assert!(fs::read_to_string(out_dir.join("homophily.svg"))
        .unwrap()
        .starts_with("<svg"));
    assert!(fs::read_to_string(out_dir.join("ratios.tsv"))
        .unwrap()
        .contains("h_adjusted\t"));
}

#[test]
fn train_writes_reports_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    synth_fixture(&g);
    let out = dir.path().join("run");
    let o = graphite(&[
        "train",
        "--in",
        g.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--hidden",
        "4",
        "--layers",
        "1",
        "--steps",
        "7",
        "--splits",
        "2",
        "--ratio",
        "60/20/20",
        "--graph",
        "original",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let jsonl = fs::read_to_string(out.join("reports.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2 * (7 + 1));
    assert!(jsonl
        .lines()
        .filter(|l| l.contains("\"kind\":\"summary\""))
        .all(|l| l.contains("\"ratio\":\"60/20/20\"")));
    for r in ["01", "02"] {
        assert!(fs::read(out.join(format!("checkpoint_{r}.bin")))
            .unwrap()
            .starts_with(b"GRPHCKPT"));
    }
}

#[test]
fn errors_exit_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    synth_fixture(&g);
    let gs = g.to_str().unwrap();
    let out = dir.path().join("x");
    let os = out.to_str().unwrap();

    let o = graphite(&["transform", "--in", gs, "--out", os, "--no-such-flag"]);
    assert!(!o.status.success());
    let o = graphite(&[
        "transform",
        "--in",
        gs,
        "--out",
        os,
        "--zero-graph-features",
        "--row-normalize",
    ]);
    assert!(!o.status.success());
    let o = graphite(&[
        "train",
        "--in",
        gs,
        "--out",
        os,
        "--graph",
        "original",
        "--row-normalize",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--graph graphite"));

    fs::write(g.join("edges.tsv"), "# nodes=200\n0\t1\n2\tthree\n").unwrap();
    let o = graphite(&["transform", "--in", gs, "--out", os]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("edges.tsv:3"));
}

#[test]
fn gradcheck_passes_on_builtin_fixture() {
    let o = graphite(&["gradcheck"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().last().unwrap().starts_with("PASS\tgradcheck"));
}
