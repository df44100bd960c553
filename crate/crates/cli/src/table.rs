//! Labelled numeric matrices as CSV: leading text columns, then one column
//! per matrix column. Floats are written in shortest round-trip form so a
//! reload is exact and reruns are byte-identical.

use std::path::Path;

use anyhow::{bail, Context};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    /// `k(x, x)` for kernel tables.
    pub diag: Option<Vec<f64>>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        let mut header = vec!["id".to_string(), "label".to_string()];
        if self.diag.is_some() {
            header.push("self".into());
        }
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.ids.len() {
            let mut rec = vec![self.ids[i].clone(), self.labels[i].to_string()];
            if let Some(d) = &self.diag {
                rec.push(d[i].to_string());
            }
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 || header[0] != "id" || header[1] != "label" {
            bail!("{}: header must start with id,label", path.display());
        }
        let has_diag = header.get(2).is_some_and(|h| h == "self");
        let skip = if has_diag { 3 } else { 2 };
        let columns = header[skip..].to_vec();
        let (mut ids, mut labels, mut diag, mut flat) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| format!("{}: row {}: bad {what}", path.display(), row + 2);
            ids.push(rec[0].to_string());
            labels.push(rec[1].parse::<u8>().with_context(|| bad("label"))?);
            if has_diag {
                diag.push(rec[2].parse::<f64>().with_context(|| bad("self value"))?);
            }
            for cell in rec.iter().skip(skip) {
                flat.push(cell.parse::<f64>().with_context(|| bad("value"))?);
            }
        }
        let values = DMatrix::from_row_slice(ids.len(), columns.len(), &flat);
        Ok(Self { ids, labels, diag: has_diag.then_some(diag), columns, values })
    }
}

pub fn numbered_columns(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("{prefix}{j}")).collect()
}
