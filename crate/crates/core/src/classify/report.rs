use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierKind, Metrics};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dr_method: String,
    pub classifier: ClassifierKind,
    pub metrics: Metrics,
    pub hyperparams: serde_json::Value,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    dr_method: String,
    classifier: String,
    accuracy: f64,
    specificity: f64,
    sensitivity: f64,
    auc: f64,
    hyperparams_json: String,
    seed: u64,
}

/// Rows grouped by DR method (first-appearance order), classifiers in table order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

const COLUMNS: [&str; 4] = ["Accuracy", "Specificity", "Sensitivity", "AUC"];

fn values(m: &Metrics) -> [f64; 4] {
    [m.accuracy, m.specificity, m.sensitivity, m.auc]
}

impl EvalReport {
    pub fn new(mut rows: Vec<ReportRow>) -> Self {
        let mut group: HashMap<String, usize> = HashMap::new();
        for r in &rows {
            let next = group.len();
            group.entry(r.dr_method.clone()).or_insert(next);
        }
        rows.sort_by_key(|r| (group[&r.dr_method], r.classifier));
        Self { rows }
    }

    pub fn dr_methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.dr_method.as_str()) {
                out.push(&r.dr_method);
            }
        }
        out
    }

    pub fn best_auc(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.metrics.auc).reduce(f64::max)
    }

    /// Per-column maximum over all rows.
    pub fn column_maxima(&self) -> [f64; 4] {
        let mut max = [f64::NEG_INFINITY; 4];
        for r in &self.rows {
            for (m, v) in max.iter_mut().zip(values(&r.metrics)) {
                *m = m.max(v);
            }
        }
        max
    }

    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(CsvRow {
                dr_method: r.dr_method.clone(),
                classifier: r.classifier.display_name().to_string(),
                accuracy: r.metrics.accuracy,
                specificity: r.metrics.specificity,
                sensitivity: r.metrics.sensitivity,
                auc: r.metrics.auc,
                hyperparams_json: serde_json::to_string(&r.hyperparams)?,
                seed: r.seed,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    pub fn read_csv_from<R: Read>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, rec) in csv::Reader::from_reader(r).deserialize::<CsvRow>().enumerate() {
            let rec = rec?;
            let classifier = ClassifierKind::from_display_name(&rec.classifier)
                .ok_or_else(|| Error::Parse { row: i + 2, msg: format!("unknown classifier {:?}", rec.classifier) })?;
            rows.push(ReportRow {
                dr_method: rec.dr_method,
                classifier,
                metrics: Metrics {
                    accuracy: rec.accuracy,
                    specificity: rec.specificity,
                    sensitivity: rec.sensitivity,
                    auc: rec.auc,
                },
                hyperparams: serde_json::from_str(&rec.hyperparams_json)?,
                seed: rec.seed,
            });
        }
        Ok(Self::new(rows))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::read_csv_from(std::fs::File::open(path)?)
    }

    /// Markdown table with percentages to two decimals; the maximum of each
    /// metric column is wrapped in `**`.
    pub fn render_table(&self) -> String {
        let max = self.column_maxima();
        let mut cells: Vec<[String; 6]> = vec![[
            "DR Method".into(),
            "Classifier".into(),
            COLUMNS[0].into(),
            COLUMNS[1].into(),
            COLUMNS[2].into(),
            COLUMNS[3].into(),
        ]];
        let mut prev: Option<&str> = None;
        for r in &self.rows {
            let dr = if prev == Some(r.dr_method.as_str()) { String::new() } else { r.dr_method.to_uppercase() };
            prev = Some(&r.dr_method);
            let v = values(&r.metrics);
            let fmt = |c: usize| {
                let s = format!("{:.2}", 100.0 * v[c]);
                if v[c] == max[c] { format!("**{s}**") } else { s }
            };
            cells.push([dr, r.classifier.display_name().into(), fmt(0), fmt(1), fmt(2), fmt(3)]);
        }
        let widths: Vec<usize> = (0..6).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(&format!("| {} |\n", line.join(" | ")));
            if i == 0 {
                let rule: Vec<String> = widths
                    .iter()
                    .enumerate()
                    .map(|(c, &w)| if c < 2 { "-".repeat(w) } else { format!("{}:", "-".repeat(w - 1)) })
                    .collect();
                out.push_str(&format!("| {} |\n", rule.join(" | ")));
            }
        }
        out
    }
}
