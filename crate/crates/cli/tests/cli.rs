#[path = "../../core/tests/support/mod.rs"]
mod support;
mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use common::{pipeline, read_table, step, tckit, write, SMALL};
use nalgebra::DMatrix;
use tckit::data::{csv_attribute_names, read_dataset_csv};
use tckit::embed::Embedding2D;
use tckit::synth::{generate, SynthSpec};

struct Run {
    _root: tempfile::TempDir,
    config: PathBuf,
    dir: PathBuf,
}

/// One full pipeline with the small configuration, shared by the read-only checks.
fn shared() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let config = root.path().join("small.toml");
        write(&config, SMALL);
        let dir = root.path().join("a");
        pipeline(&dir, Some(&config));
        Run { config, dir, _root: root }
    })
}

fn small_config(root: &Path) -> PathBuf {
    let p = root.join("small.toml");
    write(&p, SMALL);
    p
}

#[test]
fn synth_writes_every_record() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let dir = root.path().join("s");
    step(&dir, Some(&cfg), &["synth"]);
    let path = dir.join("data.csv");
    let attrs = csv_attribute_names(&path).unwrap();
    let loaded = read_dataset_csv(&path, &attrs, 7).unwrap();
    let (expected, clusters) = generate(&SynthSpec::two_moons_mts(20, 0.0, 1)).unwrap();
    assert_eq!(loaded, expected);
    let truth = tckit::synth::read_ground_truth(dir.join("ground_truth.csv")).unwrap();
    assert_eq!(truth.len(), 40);
    assert!(truth.iter().zip(&clusters).all(|((_, c), e)| c == e));
}

#[test]
fn synth_accepts_a_spec_file_and_rejects_a_bad_one() {
    let root = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::two_moons_mts(6, 0.1, 0);
    spec.clusters[0].n = 4;
    let good = root.path().join("spec.json");
    write(&good, &serde_json::to_string(&spec).unwrap());
    step(root.path(), None, &["synth", "--spec", good.to_str().unwrap()]);
    let attrs = csv_attribute_names(root.path().join("data.csv")).unwrap();
    assert_eq!(read_dataset_csv(root.path().join("data.csv"), &attrs, 7).unwrap().n(), 10);

    spec.missing_rate = 1.5;
    let bad = root.path().join("bad.json");
    write(&bad, &serde_json::to_string(&spec).unwrap());
    let out = tckit(&root.path().join("x"), None, &["synth", "--spec", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing_rate"));
}

#[test]
fn steps_name_their_missing_predecessor() {
    let root = tempfile::tempdir().unwrap();
    for (args, needs) in [(&["tck"][..], "tckit ingest"), (&["embed"], "tckit tck"), (&["classify"], "tckit tck")] {
        let out = tckit(root.path(), None, args);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needs), "{args:?}: {err}");
    }
}

#[test]
fn tck_kernel_is_psd_and_reproducible() {
    let run = shared();
    let (ids, _, k) = read_table(&run.dir.join("kernel_train.csv"), 3);
    assert_eq!(k.nrows(), ids.len());
    assert!((&k - k.transpose()).amax() < 1e-12);
    let eig = nalgebra::SymmetricEigen::new(k.clone()).eigenvalues;
    assert!(eig.min() >= -1e-8 * eig.max());
    assert!((0..k.nrows()).all(|i| k[(i, i)] == 1.0));

    let root = tempfile::tempdir().unwrap();
    for f in ["train.csv", "test.csv"] {
        std::fs::copy(run.dir.join(f), root.path().join(f)).unwrap();
    }
    step(root.path(), Some(&run.config), &["tck"]);
    for f in ["kernel_train.csv", "kernel_test.csv", "tck_model.json"] {
        assert_eq!(std::fs::read(run.dir.join(f)).unwrap(), std::fs::read(root.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn tck_with_too_few_records_fails_clearly() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("c.toml");
    write(&cfg, "[synth]\nn_per_cluster = 20\n[tck]\nmax_components = 40\nrandomizations = 1\n");
    step(root.path(), Some(&cfg), &["synth"]);
    step(root.path(), Some(&cfg), &["ingest"]);
    let out = tckit(root.path(), Some(&cfg), &["tck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot support 40 components"));
}

#[test]
fn embed_rejects_unknown_method() {
    let run = shared();
    let out = tckit(&run.dir, Some(&run.config), &["embed", "--method", "umap"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown DR method"));
}

#[test]
fn embeddings_separate_the_generating_clusters() {
    let run = shared();
    let truth: HashMap<String, usize> =
        tckit::synth::read_ground_truth(run.dir.join("ground_truth.csv")).unwrap().into_iter().collect();
    for m in ["pca", "kpca", "ae"] {
        let (ids, _, repr) = read_table(&run.dir.join(format!("repr_{m}_train.csv")), 2);
        assert!(repr.ncols() >= 1 && repr.nrows() == ids.len());
        let emb = Embedding2D::read_csv(run.dir.join(format!("embedding_{m}.csv"))).unwrap();
        assert_eq!(emb.len(), 40);
        assert_eq!(emb.method, m.to_uppercase());
        let ids = emb.ids;
        let coords = DMatrix::from_fn(ids.len(), 2, |i, j| emb.coords[i][j]);
        let t: Vec<usize> = ids.iter().map(|id| truth[id]).collect();
        let purity = neighbour_purity(&coords, &t, 5);
        assert!(purity >= 0.95, "{m}: 5-NN purity {purity}");
        let (rids, _, repr) = read_table(&run.dir.join(format!("repr_{m}_train.csv")), 2);
        let rt: Vec<usize> = rids.iter().map(|id| truth[id]).collect();
        let agreement = support::cluster_agreement(&rt, &support::kmeans(&repr, 2, 5), 2);
        assert!(agreement >= 0.95, "{m}: k-means agreement on the representation {agreement}");
    }
}

/// Share of points whose `k` nearest neighbours are mostly from their own cluster.
fn neighbour_purity(x: &DMatrix<f64>, truth: &[usize], k: usize) -> f64 {
    let n = x.nrows();
    let hits = (0..n)
        .filter(|&i| {
            let mut d: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| ((x.row(i) - x.row(j)).norm_squared(), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            2 * d[..k].iter().filter(|(_, j)| truth[*j] == truth[i]).count() > k
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn raw_input_mode_reduces_flattened_values() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("raw.toml");
    write(&cfg, &SMALL.replace("[dimred]\n", "[dimred]\ninput = \"raw\"\nkpca_kernel = \"polynomial\"\n"));
    let dir = root.path().join("r");
    pipeline(&dir, Some(&cfg));
    let truth: HashMap<String, usize> =
        tckit::synth::read_ground_truth(dir.join("ground_truth.csv")).unwrap().into_iter().collect();
    let (_, _, pca) = read_table(&dir.join("repr_pca_train.csv"), 2);
    assert!(pca.ncols() <= 35);
    let (_, _, kpca) = read_table(&dir.join("repr_kpca_train.csv"), 2);
    assert_eq!(kpca.ncols(), 10);
    let emb = Embedding2D::read_csv(dir.join("embedding_pca.csv")).unwrap();
    let coords = DMatrix::from_fn(emb.len(), 2, |i, j| emb.coords[i][j]);
    let t: Vec<usize> = emb.ids.iter().map(|id| truth[id]).collect();
    assert!(neighbour_purity(&coords, &t, 5) >= 0.95);

    // Precomputed KPCA has no raw-space counterpart.
    let bad = root.path().join("bad.toml");
    write(&bad, &SMALL.replace("[dimred]\n", "[dimred]\ninput = \"raw\"\n"));
    let out = tckit(&dir, Some(&bad), &["embed"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("kpca_kernel"));
}

#[test]
fn classify_reports_every_pair_and_is_deterministic() {
    let run = shared();
    let report = std::fs::read(run.dir.join("report.csv")).unwrap();
    let mut r = csv::Reader::from_reader(report.as_slice());
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 21);
    for m in ["pca", "kpca", "ae"] {
        assert_eq!(rows.iter().filter(|row| &row[0] == m).count(), 7);
    }

    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("b");
    pipeline(&dir, Some(&run.config));
    for entry in std::fs::read_dir(&run.dir).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(run.dir.join(&name)).unwrap();
        let b = std::fs::read(dir.join(&name)).unwrap();
        assert!(a == b, "{} differs between identical runs", name.to_string_lossy());
    }
}

#[test]
fn report_consolidates_runs_and_summarises_a_selection() {
    let run = shared();
    let root = tempfile::tempdir().unwrap();
    let other = root.path().join("seed2");
    let cfg = small_config(root.path());
    for args in [&["synth"][..], &["ingest"], &["tck"], &["embed", "--method", "pca"], &["classify"]] {
        let mut a = args.to_vec();
        a.extend(["--seed", "2"]);
        step(&other, Some(&cfg), &a);
    }
    let out = root.path().join("out");
    let table = step(&out, None, &["report", run.dir.to_str().unwrap(), other.to_str().unwrap()]);
    let rows = csv::Reader::from_path(out.join("consolidated_report.csv")).unwrap().records().count();
    assert_eq!(rows, 28);
    assert_eq!(std::fs::read_to_string(out.join("consolidated_report.txt")).unwrap(), table);

    // Every bolded cell is its column's maximum, and each column has one.
    let body: Vec<Vec<String>> = table
        .lines()
        .skip(2)
        .map(|l| l.split('|').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
        .collect();
    for col in 0..4 {
        let cells: Vec<&String> = body.iter().map(|r| &r[r.len() - 4 + col]).collect();
        let value = |c: &str| c.trim_matches('*').parse::<f64>().unwrap();
        let max = cells.iter().map(|c| value(c)).fold(f64::NEG_INFINITY, f64::max);
        assert!(cells.iter().any(|c| c.starts_with("**")));
        for c in cells {
            assert_eq!(c.starts_with("**"), value(c) == max, "{c} vs max {max}");
        }
    }

    let missing = tckit(&out, None, &["report", root.path().join("nope").to_str().unwrap()]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));

    let ids = Embedding2D::read_csv(run.dir.join("embedding_pca.csv")).unwrap().ids;
    let sel = root.path().join("ids.txt");
    write(&sel, &ids[..5].join("\n"));
    let summary_dir = root.path().join("summary");
    step(&summary_dir, Some(&run.config), &["report", run.dir.to_str().unwrap(), "--selection", sel.to_str().unwrap()]);
    for m in ["pca", "kpca", "ae"] {
        let text = std::fs::read_to_string(summary_dir.join(format!("summary_{m}.csv"))).unwrap();
        assert!(text.starts_with("group,attribute,percent,count"));
        let sizes: usize = text
            .lines()
            .filter(|l| l.contains(",group_size,"))
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(sizes, 40);
    }
}
