use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::{info, warn};
use nalgebra::DMatrix;
use serde::Serialize;
use tckit::autoenc::{ae_encode, ae_train, AeModel, MinMaxScaler, NetSpec};
use tckit::classify::{
    compute_metrics, cross_validate, default_grid, fit, predict, EvalReport, KernelColumns, ReportRow, Samples,
};
use tckit::data::{
    balance_train, csv_attribute_names, load_raw_csv, read_dataset_csv, split_train_test, window_align,
    write_dataset_csv, MtsDataset,
};
use tckit::dimred::{kpca_fit, kpca_transform, pca_fit, pca_transform, KpcaInput, KpcaRows, PcaTarget, PolynomialKernel};
use tckit::embed::{cluster_summary, tsne, Embedding2D, Selection};
use tckit::nn::TrainConfig;
use tckit::synth::{generate, write_ground_truth, SynthSpec};
use tckit::tck::{build_tck, kernel_rows_with_diag};

use crate::config::{DrInput, DrMethod, KpcaMode, PipelineConfig};
use crate::table::{numbered_columns, Table};

pub const DATA: &str = "data.csv";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const TCK_MODEL: &str = "tck_model.json";
pub const KERNEL_TRAIN: &str = "kernel_train.csv";
pub const KERNEL_TEST: &str = "kernel_test.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

pub fn repr_file(m: DrMethod, split: &str) -> String {
    format!("repr_{m}_{split}.csv")
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))
}

fn require(path: PathBuf, step: &str) -> anyhow::Result<PathBuf> {
    if !path.exists() {
        bail!("{} not found; run `tckit {step}` first", path.display());
    }
    Ok(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_vec(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_split(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<(MtsDataset, MtsDataset)> {
    let train_path = require(out.join(TRAIN), "ingest")?;
    let test_path = require(out.join(TEST), "ingest")?;
    let attrs = csv_attribute_names(&train_path)?;
    let train = read_dataset_csv(&train_path, &attrs, cfg.window_len)?;
    let test = read_dataset_csv(&test_path, &attrs, cfg.window_len)?;
    Ok((train, test))
}

pub fn synth(cfg: &PipelineConfig, out: &Path, spec_path: Option<&Path>, seed_flag: Option<u64>) -> anyhow::Result<()> {
    let spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            let mut spec: SynthSpec = if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text)?
            } else {
                toml::from_str(&text)?
            };
            if let Some(s) = seed_flag {
                spec.seed = s;
            }
            spec
        }
        None => SynthSpec::two_moons_mts(cfg.synth.n_per_cluster, cfg.synth.missing_rate, cfg.seed),
    };
    spec.validate().context("invalid synthetic spec")?;
    let (ds, clusters) = generate(&spec)?;
    ensure_dir(out)?;
    write_dataset_csv(out.join(DATA), &ds)?;
    write_ground_truth(out.join(GROUND_TRUTH), &ds, &clusters)?;
    info!("wrote {} records ({} attributes, T={}) to {}", ds.n(), ds.n_attributes(), ds.window_len(), out.display());
    Ok(())
}

pub fn ingest(cfg: &PipelineConfig, out: &Path, input: Option<&Path>) -> anyhow::Result<()> {
    let input = match input.or(cfg.input.as_deref()) {
        Some(p) => p.to_path_buf(),
        None => require(out.join(DATA), "synth")?,
    };
    let attrs = csv_attribute_names(&input)?;
    let stays = load_raw_csv(&input, &attrs)?;
    let ds = window_align(&stays, &attrs, cfg.window_len)?;
    let (mut train, mut test) = split_train_test(&ds, cfg.train_frac, cfg.seed)?;
    if cfg.balance {
        (train, test) = balance_train(&train, &test, cfg.seed)?;
    }
    ensure_dir(out)?;
    write_dataset_csv(out.join(TRAIN), &train)?;
    write_dataset_csv(out.join(TEST), &test)?;
    let [n0, n1] = train.class_counts();
    let [t0, t1] = test.class_counts();
    info!("train: {n0} negative / {n1} positive; test: {t0} negative / {t1} positive");
    Ok(())
}

pub fn tck(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let (train, test) = load_split(cfg, out)?;
    let train = train.with_missing_policy(cfg.missing_policy);
    let test = test.with_missing_policy(cfg.missing_policy);
    let kernel = build_tck(&train, &cfg.tck, cfg.seed)?;
    info!("kernel from {} partitions, {} failed", kernel.n_partitions(), kernel.failures.len());
    let (rows, diag) = kernel_rows_with_diag(&kernel, &test)?;
    kernel.save_json(out.join(TCK_MODEL))?;
    let n = train.n();
    Table {
        ids: train.ids(),
        labels: train.labels(),
        diag: Some((0..n).map(|i| kernel.k[(i, i)]).collect()),
        columns: kernel.train_ids.clone(),
        values: kernel.k.clone(),
    }
    .write(&out.join(KERNEL_TRAIN))?;
    Table { ids: test.ids(), labels: test.labels(), diag: Some(diag), columns: kernel.train_ids.clone(), values: rows }
        .write(&out.join(KERNEL_TEST))?;
    Ok(())
}

#[derive(Serialize)]
struct AeBundle<'a> {
    scaler: &'a MinMaxScaler,
    model: &'a AeModel,
}

fn reduce(
    cfg: &PipelineConfig,
    out: &Path,
    method: DrMethod,
    xtr: &DMatrix<f64>,
    xte: &DMatrix<f64>,
) -> anyhow::Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = &cfg.dimred;
    let model_path = out.join(format!("model_{method}.json"));
    Ok(match method {
        DrMethod::Pca => {
            let m = pca_fit(xtr, PcaTarget::VarianceFraction(d.pca_variance))?;
            info!("pca keeps {} components ({:.4} of variance)", m.k(), m.captured_variance_fraction);
            write_json(&model_path, &m)?;
            (pca_transform(&m, xtr)?, pca_transform(&m, xte)?)
        }
        DrMethod::Kpca => {
            let k = d.kpca_k.min(xtr.nrows() - 1);
            if k < d.kpca_k {
                warn!("kpca_k={} exceeds n-1 for {} training records, using {k}", d.kpca_k, xtr.nrows());
            }
            let m = match d.kpca_kernel {
                KpcaMode::Precomputed => kpca_fit(KpcaInput::Precomputed(xtr), k)?,
                KpcaMode::Polynomial => {
                    let kernel = PolynomialKernel { gamma: d.kpca_gamma, degree: d.kpca_degree, coef0: d.kpca_coef0 };
                    kpca_fit(KpcaInput::Features { x: xtr, kernel }, k)?
                }
            };
            write_json(&model_path, &m)?;
            let rows = |x| match d.kpca_kernel {
                KpcaMode::Precomputed => KpcaRows::Kernel(x),
                KpcaMode::Polynomial => KpcaRows::Features(x),
            };
            (kpca_transform(&m, rows(xtr))?, kpca_transform(&m, rows(xte))?)
        }
        DrMethod::Ae => {
            let scaler = MinMaxScaler::fit(xtr);
            let (xtr, xte) = (scaler.transform(xtr)?, scaler.transform(xte)?);
            let spec = NetSpec { input: xtr.ncols(), hidden: vec![d.ae_hidden], code: d.ae_code };
            let batch_size = d.ae_batch_size.min(xtr.nrows());
            let train_cfg = TrainConfig {
                epochs: d.ae_epochs,
                batch_size,
                learning_rate: d.ae_learning_rate,
                decay: d.ae_decay,
                seed: cfg.seed,
                ..TrainConfig::default()
            };
            let m = ae_train(&xtr, &spec, &train_cfg)?;
            info!("autoencoder loss {:.6} -> {:.6}", m.history.initial_loss, m.history.final_loss());
            m.write_history_csv(out.join("ae_history.csv"))?;
            write_json(&model_path, &AeBundle { scaler: &scaler, model: &m })?;
            (ae_encode(&m, &xtr)?, ae_encode(&m, &xte)?)
        }
    })
}

pub fn embed(cfg: &PipelineConfig, out: &Path, methods: &[DrMethod]) -> anyhow::Result<()> {
    let ktr = Table::read(&require(out.join(KERNEL_TRAIN), "tck")?)?;
    let kte = Table::read(&require(out.join(KERNEL_TEST), "tck")?)?;
    if kte.columns != ktr.ids {
        bail!("{KERNEL_TEST} columns do not match the training ids in {KERNEL_TRAIN}");
    }
    let (xtr, xte) = match cfg.dimred.input {
        DrInput::Tck => (ktr.values.clone(), kte.values.clone()),
        DrInput::Raw => {
            let (train, test) = load_split(cfg, out)?;
            if train.ids() != ktr.ids || test.ids() != kte.ids {
                bail!("{TRAIN}/{TEST} do not match the kernel files; rerun `tckit tck`");
            }
            let flat = |ds: MtsDataset| ds.with_missing_policy(cfg.missing_policy).flattened();
            (flat(train), flat(test))
        }
    };
    for &method in methods {
        let (rtr, rte) = reduce(cfg, out, method, &xtr, &xte)?;
        let columns = numbered_columns(&format!("{method}_"), rtr.ncols());
        let train = Table { ids: ktr.ids.clone(), labels: ktr.labels.clone(), diag: None, columns: columns.clone(), values: rtr };
        let test = Table { ids: kte.ids.clone(), labels: kte.labels.clone(), diag: None, columns, values: rte };
        train.write(&out.join(repr_file(method, "train")))?;
        test.write(&out.join(repr_file(method, "test")))?;

        let all = DMatrix::from_fn(train.values.nrows() + test.values.nrows(), train.values.ncols(), |i, j| {
            if i < train.values.nrows() { train.values[(i, j)] } else { test.values[(i - train.values.nrows(), j)] }
        });
        let mut tsne_cfg = cfg.tsne.clone();
        tsne_cfg.seed = cfg.seed;
        let limit = (all.nrows() as f64 - 1.0) / 3.0;
        if tsne_cfg.perplexity >= limit {
            tsne_cfg.perplexity = (limit - 1.0).max(limit / 2.0);
            warn!("perplexity lowered to {:.3} for {} points", tsne_cfg.perplexity, all.nrows());
        }
        let result = tsne(&all, &tsne_cfg)?;
        let ids = [train.ids, test.ids].concat();
        let labels = [train.labels, test.labels].concat();
        let emb = Embedding2D::new(&result.coords, ids, labels, method.name().to_uppercase())?;
        emb.write_csv(out.join(format!("embedding_{method}.csv")))?;
        info!("{method}: {} components, final KL {:.4}", train.columns.len(), result.kl_trace.last().copied().unwrap_or(f64::NAN));
    }
    Ok(())
}

fn kernel_samples(x: DMatrix<f64>, k: &Table, reference: bool) -> anyhow::Result<Samples> {
    let n = k.ids.len();
    let columns = KernelColumns {
        rows: k.values.clone(),
        self_col: (0..n).map(|i| reference.then_some(i)).collect(),
        diag: k.diag.clone().unwrap_or_else(|| vec![1.0; n]),
    };
    Ok(Samples::with_kernel(x, columns)?)
}

pub fn classify(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<EvalReport> {
    let ktr = Table::read(&require(out.join(KERNEL_TRAIN), "tck")?)?;
    let kte = Table::read(&require(out.join(KERNEL_TEST), "tck")?)?;
    let mut rows = Vec::new();
    for &method in &cfg.dimred.methods {
        let (ptr, pte) = (out.join(repr_file(method, "train")), out.join(repr_file(method, "test")));
        if !ptr.exists() {
            warn!("no {method} representation in {}, skipping", out.display());
            continue;
        }
        let rtr = Table::read(&ptr)?;
        let rte = Table::read(&require(pte, "embed")?)?;
        if rtr.ids != ktr.ids || rte.ids != kte.ids {
            bail!("{method} representation ids do not match the kernel files");
        }
        let train = kernel_samples(rtr.values, &ktr, true)?;
        let test = kernel_samples(rte.values, &kte, false)?;
        for &kind in &cfg.classify.classifiers {
            let grid = cfg
                .classify
                .grids
                .get(&kind)
                .cloned()
                .unwrap_or_else(|| default_grid(kind, cfg.classify.use_tck_kernel));
            let cv = cross_validate(&grid, &train, &rtr.labels, cfg.classify.folds, cfg.seed)
                .with_context(|| format!("cross-validating {kind} on {method}"))?;
            let model = fit(&cv.best, &train, &rtr.labels, cfg.seed)?;
            let pred = predict(&model, &test)?;
            let metrics = compute_metrics(&rte.labels, &pred.labels, &pred.scores)?;
            info!("{method} / {kind}: test AUC {:.4} with {}", metrics.auc, cv.best.hyperparams_json());
            rows.push(ReportRow {
                dr_method: method.name().to_string(),
                classifier: kind,
                metrics,
                hyperparams: cv.best.hyperparams_json(),
                seed: cfg.seed,
            });
        }
    }
    if rows.is_empty() {
        bail!("no representations found in {}; run `tckit embed` first", out.display());
    }
    let report = EvalReport::new(rows);
    report.write_csv(&out.join(REPORT_CSV))?;
    std::fs::write(out.join(REPORT_TXT), report.render_table())?;
    Ok(report)
}

pub fn report(
    cfg: &PipelineConfig,
    out: &Path,
    runs: &[PathBuf],
    selection: Option<&Path>,
) -> anyhow::Result<EvalReport> {
    let mut rows = Vec::new();
    for run in runs {
        if !run.is_dir() {
            bail!("run directory {} does not exist", run.display());
        }
        let path = require(run.join(REPORT_CSV), "classify")?;
        rows.extend(EvalReport::read_csv(&path)?.rows);
    }
    let report = EvalReport::new(rows);
    ensure_dir(out)?;
    report.write_csv(&out.join("consolidated_report.csv"))?;
    std::fs::write(out.join("consolidated_report.txt"), report.render_table())?;

    if let Some(sel) = selection {
        for run in runs {
            let (train, test) = load_split(cfg, run)?;
            let ds = train.concat(&test)?;
            for method in DrMethod::ALL {
                let path = run.join(format!("embedding_{method}.csv"));
                if !path.exists() {
                    continue;
                }
                let emb = Embedding2D::read_csv(&path)?;
                let selected = Selection::from_file(sel, &emb)?;
                let summary = cluster_summary(&emb, &ds, &selected)
                    .with_context(|| format!("summarising {} with {}", path.display(), sel.display()))?;
                let target = if runs.len() == 1 { out.to_path_buf() } else { run.clone() };
                summary.write_csv(target.join(format!("summary_{method}.csv")))?;
                info!("{method}: {} of {} points selected", selected.0.len(), emb.len());
            }
        }
    }
    Ok(report)
}
