//! Helpers for driving the `tckit` binary.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;

pub fn tckit(dir: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tckit"));
    cmd.arg("--out").arg(dir).env("TCKIT_LOG", "warn");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("binary runs")
}

/// Runs a step and panics with its stderr on failure.
pub fn step(dir: &Path, config: Option<&Path>, args: &[&str]) -> String {
    let out = tckit(dir, config, args);
    assert!(
        out.status.success(),
        "tckit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn pipeline(dir: &Path, config: Option<&Path>) {
    for args in [&["synth"][..], &["ingest"], &["tck"], &["embed"], &["classify"]] {
        step(dir, config, args);
    }
}

/// Ids, labels and the numeric block after the first `skip` columns.
pub fn read_table(path: &Path, skip: usize) -> (Vec<String>, Vec<u8>, DMatrix<f64>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let (mut ids, mut labels, mut flat, mut width) = (Vec::new(), Vec::new(), Vec::new(), 0);
    for rec in r.records() {
        let rec = rec.unwrap();
        ids.push(rec[0].to_string());
        labels.push(rec[1].parse().unwrap());
        width = rec.len() - skip;
        flat.extend(rec.iter().skip(skip).map(|v| v.parse::<f64>().unwrap()));
    }
    let n = ids.len();
    (ids, labels, DMatrix::from_row_slice(n, width, &flat))
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// Small, fast configuration for end-to-end checks.
pub const SMALL: &str = r#"
seed = 1

[synth]
n_per_cluster = 20

[tck]
max_components = 5
randomizations = 3

[dimred]
kpca_k = 10
ae_hidden = 32
ae_code = 8
ae_epochs = 150

[tsne]
perplexity = 5.0

[classify]
folds = 3
"#;
