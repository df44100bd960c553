//! MTS data model, CSV ingestion, window alignment, splitting and balancing.
//!
//! The CSV layout is one row per `(id, day)`:
//!
//! ```text
//! id,day,anchor,label,<attr1>,...,<attrD>
//! ```
//!
//! An empty attribute cell is a missing observation. Days absent from a stay
//! are missing in every attribute.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, streams};
use crate::{Error, Result};

/// Default window length in days.
pub const DEFAULT_WINDOW: usize = 7;

const FIXED_COLUMNS: [&str; 4] = ["id", "day", "anchor", "label"];

/// One subject's `D x T` values with an observation mask and a binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtsRecord {
    pub id: String,
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    label: u8,
}

impl MtsRecord {
    /// Builds a record; masked-out cells are forced to `0.0`.
    pub fn new(
        id: impl Into<String>,
        mut values: DMatrix<f64>,
        mask: DMatrix<bool>,
        label: u8,
    ) -> Result<Self> {
        let id = id.into();
        if values.shape() != mask.shape() {
            return Err(Error::InvalidDataset(format!(
                "record {id:?}: values are {:?} but mask is {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        if label > 1 {
            return Err(Error::InvalidDataset(format!(
                "record {id:?}: label must be 0 or 1, got {label}"
            )));
        }
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidDataset(format!(
                    "record {id:?}: observed value is not finite"
                )));
            }
        }
        Ok(Self { id, values, mask, label })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn n_attributes(&self) -> usize {
        self.values.nrows()
    }

    pub fn window_len(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn observed(&self, attribute: usize, t: usize) -> Option<f64> {
        self.mask[(attribute, t)].then(|| self.values[(attribute, t)])
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Values flattened attribute-major (`attr0 t0..tT, attr1 ...`).
    pub fn flattened(&self) -> Vec<f64> {
        let (d, t) = self.values.shape();
        (0..d)
            .flat_map(|a| (0..t).map(move |s| (a, s)))
            .map(|(a, s)| self.values[(a, s)])
            .collect()
    }
}

/// How zero-filled cells reach the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Zero-filled cells count as observed zeros.
    #[default]
    ObservedZeros,
    /// Zero-filled cells stay masked out.
    Masked,
}

/// A collection of records sharing `D` and `T`, with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtsDataset {
    records: Vec<MtsRecord>,
    attribute_names: Vec<String>,
    window_len: usize,
}

impl MtsDataset {
    pub fn new(
        records: Vec<MtsRecord>,
        attribute_names: Vec<String>,
        window_len: usize,
    ) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::InvalidDataset("window length must be positive".into()));
        }
        let d = attribute_names.len();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.n_attributes() != d || r.window_len() != window_len {
                return Err(Error::InvalidDataset(format!(
                    "record {:?} is {}x{}, expected {d}x{window_len}",
                    r.id,
                    r.n_attributes(),
                    r.window_len()
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate id {:?}", r.id)));
            }
        }
        Ok(Self { records, attribute_names, window_len })
    }

    pub fn records(&self) -> &[MtsRecord] {
        &self.records
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(MtsRecord::label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for r in &self.records {
            counts[r.label as usize] += 1;
        }
        counts
    }

    /// Records at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            attribute_names: self.attribute_names.clone(),
            window_len: self.window_len,
        }
    }

    /// Row-per-record matrix of flattened values.
    pub fn flattened(&self) -> DMatrix<f64> {
        let p = self.n_attributes() * self.window_len;
        let mut m = DMatrix::zeros(self.n(), p);
        for (i, r) in self.records.iter().enumerate() {
            for (j, v) in r.flattened().into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Under [`MissingPolicy::ObservedZeros`] every mask becomes all ones;
    /// masked-out values are already zero so nothing else changes.
    pub fn with_missing_policy(&self, policy: MissingPolicy) -> Self {
        match policy {
            MissingPolicy::Masked => self.clone(),
            MissingPolicy::ObservedZeros => {
                let records = self
                    .records
                    .iter()
                    .map(|r| MtsRecord {
                        id: r.id.clone(),
                        values: r.values.clone(),
                        mask: DMatrix::from_element(r.mask.nrows(), r.mask.ncols(), true),
                        label: r.label,
                    })
                    .collect();
                Self { records, ..self.clone() }
            }
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.attribute_names != other.attribute_names || self.window_len != other.window_len
        {
            return Err(Error::Shape("datasets do not share attributes and window".into()));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Self::new(records, self.attribute_names.clone(), self.window_len)
    }
}

/// One observed day of a raw stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRow {
    pub day: i64,
    /// One entry per schema attribute; `None` is a missing cell.
    pub values: Vec<Option<f64>>,
}

/// A stay before windowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStay {
    pub id: String,
    /// Strictly increasing in `day`.
    pub days: Vec<DayRow>,
    pub anchor_day: Option<i64>,
    pub label: u8,
}

pub fn load_raw_csv(path: impl AsRef<Path>, schema: &[String]) -> Result<Vec<RawStay>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_raw_csv(file, schema)
}

/// Reads the stay CSV. Stays are returned in order of first appearance.
pub fn read_raw_csv<R: Read>(reader: R, schema: &[String]) -> Result<Vec<RawStay>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let [id_col, day_col, anchor_col, label_col] = [
        position(FIXED_COLUMNS[0])?,
        position(FIXED_COLUMNS[1])?,
        position(FIXED_COLUMNS[2])?,
        position(FIXED_COLUMNS[3])?,
    ];
    let attr_cols = schema.iter().map(|a| position(a)).collect::<Result<Vec<_>>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut stays: HashMap<String, RawStay> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        // Header is row 1.
        let row = i + 2;
        let rec = rec?;
        let field = |col: usize| rec.get(col).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::Parse { row, msg: "empty id".into() });
        }
        let day = parse_int(field(day_col), row, "day")?;
        let anchor = match field(anchor_col) {
            "" => None,
            s => Some(parse_int(s, row, "anchor")?),
        };
        let label = match field(label_col) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse { row, msg: format!("label must be 0 or 1, got {other:?}") })
            }
        };
        let values = attr_cols
            .iter()
            .zip(schema)
            .map(|(&c, name)| match field(c) {
                "" => Ok(None),
                s => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or_else(|| {
                    Error::Parse { row, msg: format!("non-numeric value {s:?} in column {name:?}") }
                }),
            })
            .collect::<Result<Vec<_>>>()?;

        let stay = stays.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            RawStay { id: id.clone(), days: Vec::new(), anchor_day: anchor, label }
        });
        if stay.label != label {
            return Err(Error::Parse { row, msg: format!("label conflicts with earlier rows of {id:?}") });
        }
        match (stay.anchor_day, anchor) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Parse {
                    row,
                    msg: format!("anchor conflicts with earlier rows of {id:?}"),
                })
            }
            (None, Some(b)) => stay.anchor_day = Some(b),
            _ => {}
        }
        if stay.days.iter().any(|d| d.day == day) {
            return Err(Error::DuplicateRow { id, day });
        }
        stay.days.push(DayRow { day, values });
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let mut stay = stays.remove(&id).expect("id recorded on insert");
            stay.days.sort_by_key(|d| d.day);
            stay
        })
        .collect())
}

fn parse_int(s: &str, row: usize, column: &str) -> Result<i64> {
    s.parse::<i64>()
        .map_err(|_| Error::Parse { row, msg: format!("non-integer value {s:?} in column {column:?}") })
}

pub fn write_raw_csv(path: impl AsRef<Path>, stays: &[RawStay], schema: &[String]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_raw_csv_to(file, stays, schema)
}

pub fn write_raw_csv_to<W: Write>(writer: W, stays: &[RawStay], schema: &[String]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(schema.iter().map(String::as_str));
    wtr.write_record(&header)?;
    for stay in stays {
        let anchor = stay.anchor_day.map(|a| a.to_string()).unwrap_or_default();
        for day in &stay.days {
            let mut row = vec![
                stay.id.clone(),
                day.day.to_string(),
                anchor.clone(),
                stay.label.to_string(),
            ];
            // `{}` on f64 prints the shortest string that parses back exactly.
            row.extend(day.values.iter().map(|v| v.map(|x| format!("{x}")).unwrap_or_default()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Cuts every stay to a `window_len`-day window.
///
/// Positive stays use the `window_len` days ending at the anchor (first
/// positive detection); negative stays use the `window_len` days starting at
/// the anchor (admission). Days without a row are zero-filled and masked.
pub fn window_align(
    stays: &[RawStay],
    attribute_names: &[String],
    window_len: usize,
) -> Result<MtsDataset> {
    if window_len == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let d = attribute_names.len();
    let t_len = window_len as i64;
    let mut records = Vec::with_capacity(stays.len());
    for stay in stays {
        let anchor = stay.anchor_day.ok_or_else(|| Error::Alignment {
            id: stay.id.clone(),
            msg: "anchor day is absent".into(),
        })?;
        if stay.days.is_empty() {
            return Err(Error::Alignment { id: stay.id.clone(), msg: "stay has no rows".into() });
        }
        if stay.days.windows(2).any(|w| w[0].day >= w[1].day) {
            return Err(Error::Alignment {
                id: stay.id.clone(),
                msg: "day indices are not strictly increasing".into(),
            });
        }
        let start = if stay.label == 1 { anchor - t_len + 1 } else { anchor };
        let mut values = DMatrix::zeros(d, window_len);
        let mut mask = DMatrix::from_element(d, window_len, false);
        for row in &stay.days {
            let offset = row.day - start;
            if !(0..t_len).contains(&offset) {
                continue;
            }
            if row.values.len() != d {
                return Err(Error::Alignment {
                    id: stay.id.clone(),
                    msg: format!("day {} has {} values, expected {d}", row.day, row.values.len()),
                });
            }
            for (a, v) in row.values.iter().enumerate() {
                if let Some(v) = v {
                    values[(a, offset as usize)] = *v;
                    mask[(a, offset as usize)] = true;
                }
            }
        }
        records.push(MtsRecord::new(stay.id.clone(), values, mask, stay.label)?);
    }
    MtsDataset::new(records, attribute_names.to_vec(), window_len)
}

/// Inverse of [`window_align`]: one row per window day, anchored so that
/// re-aligning with the same window length reproduces `ds` exactly.
pub fn dataset_to_stays(ds: &MtsDataset) -> Vec<RawStay> {
    let t_len = ds.window_len();
    ds.records()
        .iter()
        .map(|r| {
            let days = (0..t_len)
                .map(|t| DayRow {
                    day: t as i64 + 1,
                    values: (0..r.n_attributes()).map(|a| r.observed(a, t)).collect(),
                })
                .collect();
            let anchor = if r.label() == 1 { t_len as i64 } else { 1 };
            RawStay { id: r.id.clone(), days, anchor_day: Some(anchor), label: r.label() }
        })
        .collect()
}

pub fn read_dataset_csv(
    path: impl AsRef<Path>,
    attribute_names: &[String],
    window_len: usize,
) -> Result<MtsDataset> {
    window_align(&load_raw_csv(path, attribute_names)?, attribute_names, window_len)
}

pub fn write_dataset_csv(path: impl AsRef<Path>, ds: &MtsDataset) -> Result<()> {
    write_raw_csv(path, &dataset_to_stays(ds), ds.attribute_names())
}

/// Attribute names from a CSV header: every column after the fixed four.
pub fn csv_attribute_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path.as_ref())?;
    Ok(rdr
        .headers()?
        .iter()
        .filter(|h| !FIXED_COLUMNS.contains(h))
        .map(str::to_string)
        .collect())
}

/// Stratified split into `(train, test)`. Each side keeps the input order.
pub fn split_train_test(ds: &MtsDataset, train_frac: f64, seed: u64) -> Result<(MtsDataset, MtsDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {train_frac}")));
    }
    let mut rng = rng::stream(seed, streams::SPLIT);
    let mut in_train = vec![false; ds.n()];
    for class in [0u8, 1] {
        let mut members: Vec<usize> =
            (0..ds.n()).filter(|&i| ds.records[i].label == class).collect();
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} member(s), at least 2 are required",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let take = ((train_frac * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let train: Vec<usize> = (0..ds.n()).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..ds.n()).filter(|&i| !in_train[i]).collect();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Equalises the training class counts by moving randomly chosen majority
/// records from `train` to the end of `test`.
pub fn balance_train(train: &MtsDataset, test: &MtsDataset, seed: u64) -> Result<(MtsDataset, MtsDataset)> {
    let [neg, pos] = train.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::Stratification("training set must contain both classes".into()));
    }
    if neg == pos {
        return Ok((train.clone(), test.clone()));
    }
    let majority = if neg > pos { 0u8 } else { 1 };
    let excess = neg.abs_diff(pos);
    let mut rng = rng::stream(seed, streams::BALANCE);
    let mut candidates: Vec<usize> =
        (0..train.n()).filter(|&i| train.records[i].label == majority).collect();
    candidates.shuffle(&mut rng);
    let moved: HashSet<usize> = candidates[..excess].iter().copied().collect();

    let keep: Vec<usize> = (0..train.n()).filter(|i| !moved.contains(i)).collect();
    let mut moved_sorted: Vec<usize> = moved.into_iter().collect();
    moved_sorted.sort_unstable();
    let new_test = test.concat(&train.subset(&moved_sorted))?;
    Ok((train.subset(&keep), new_test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|a| format!("a{a}")).collect()
    }

    fn record(id: &str, label: u8) -> MtsRecord {
        MtsRecord::new(
            id,
            DMatrix::from_element(2, 3, 1.0),
            DMatrix::from_element(2, 3, true),
            label,
        )
        .unwrap()
    }

    fn dataset(n: usize, positives: usize) -> MtsDataset {
        let records = (0..n).map(|i| record(&format!("r{i}"), u8::from(i < positives))).collect();
        MtsDataset::new(records, names(2), 3).unwrap()
    }

    fn stay(id: &str, days: &[i64], anchor: Option<i64>, label: u8) -> RawStay {
        RawStay {
            id: id.into(),
            days: days
                .iter()
                .map(|&d| DayRow { day: d, values: vec![Some(d as f64), None] })
                .collect(),
            anchor_day: anchor,
            label,
        }
    }

    #[test]
    fn masked_cells_are_zeroed() {
        let values = DMatrix::from_element(1, 2, 5.0);
        let mask = DMatrix::from_row_slice(1, 2, &[true, false]);
        let r = MtsRecord::new("x", values, mask, 0).unwrap();
        assert_eq!(r.values()[(0, 1)], 0.0);
        assert_eq!(r.observed(0, 0), Some(5.0));
        assert_eq!(r.observed(0, 1), None);
    }

    #[test]
    fn record_rejects_bad_label_and_shape() {
        let v = DMatrix::zeros(1, 2);
        assert!(MtsRecord::new("x", v.clone(), DMatrix::from_element(1, 2, true), 2).is_err());
        assert!(MtsRecord::new("x", v, DMatrix::from_element(2, 2, true), 0).is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let err = MtsDataset::new(vec![record("a", 0), record("a", 1)], names(2), 3);
        assert!(matches!(err, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn csv_days_are_sorted() {
        let csv = "id,day,anchor,label,a0\nx,2,1,0,2.0\nx,1,1,0,1.0\nx,3,1,0,3.0\n";
        let stays = read_raw_csv(csv.as_bytes(), &names(1)).unwrap();
        assert_eq!(stays.len(), 1);
        let days: Vec<i64> = stays[0].days.iter().map(|d| d.day).collect();
        assert_eq!(days, vec![1, 2, 3]);
        assert_eq!(stays[0].days[0].values, vec![Some(1.0)]);
    }

    #[test]
    fn csv_missing_label_column_is_schema_error() {
        let csv = "id,day,anchor,a0\nx,1,1,2.0\n";
        match read_raw_csv(csv.as_bytes(), &names(1)) {
            Err(Error::Schema(msg)) => assert!(msg.contains("label")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn csv_non_numeric_cell_reports_row() {
        let csv = "id,day,anchor,label,a0\nx,1,1,0,1.0\nx,2,1,0,abc\n";
        match read_raw_csv(csv.as_bytes(), &names(1)) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_duplicate_day_is_rejected() {
        let csv = "id,day,anchor,label,a0\nx,1,1,0,1.0\nx,1,1,0,2.0\n";
        assert!(matches!(
            read_raw_csv(csv.as_bytes(), &names(1)),
            Err(Error::DuplicateRow { day: 1, .. })
        ));
    }

    #[test]
    fn csv_empty_cell_is_missing() {
        let csv = "id,day,anchor,label,a0,a1\nx,1,1,0,,4.5\n";
        let stays = read_raw_csv(csv.as_bytes(), &names(2)).unwrap();
        assert_eq!(stays[0].days[0].values, vec![None, Some(4.5)]);
    }

    #[test]
    fn negative_stay_is_zero_filled_after_short_stay() {
        let ds = window_align(&[stay("n", &[1, 2, 3], Some(1), 0)], &names(2), 7).unwrap();
        let r = &ds.records()[0];
        for t in 0..7 {
            assert_eq!(r.mask()[(0, t)], t < 3);
            assert_eq!(r.values()[(0, t)], if t < 3 { (t + 1) as f64 } else { 0.0 });
            assert!(!r.mask()[(1, t)]);
        }
    }

    #[test]
    fn positive_stay_uses_days_before_detection() {
        let days: Vec<i64> = (1..=10).collect();
        let ds = window_align(&[stay("p", &days, Some(10), 1)], &names(2), 7).unwrap();
        let r = &ds.records()[0];
        let window: Vec<f64> = (0..7).map(|t| r.values()[(0, t)]).collect();
        assert_eq!(window, vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        assert!((0..7).all(|t| r.mask()[(0, t)]));
    }

    #[test]
    fn full_window_is_copied_verbatim() {
        let ds = window_align(&[stay("n", &[5, 6, 7], Some(5), 0)], &names(2), 3).unwrap();
        let r = &ds.records()[0];
        assert_eq!(r.values().row(0).iter().copied().collect::<Vec<_>>(), vec![5.0, 6.0, 7.0]);
        assert!(r.mask().row(0).iter().all(|&m| m));
    }

    #[test]
    fn absent_anchor_is_alignment_error() {
        let err = window_align(&[stay("q", &[1], None, 0)], &names(2), 7);
        assert!(matches!(err, Err(Error::Alignment { id, .. }) if id == "q"));
    }

    #[test]
    fn stays_round_trip_through_window_align() {
        let ds = window_align(
            &[stay("a", &[1, 3], Some(1), 0), stay("b", &[2, 4, 5], Some(5), 1)],
            &names(2),
            4,
        )
        .unwrap();
        let again = window_align(&dataset_to_stays(&ds), &names(2), 4).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn split_is_stratified() {
        let ds = dataset(100, 20);
        let (train, test) = split_train_test(&ds, 0.7, 1).unwrap();
        assert_eq!(train.n(), 70);
        assert_eq!(test.n(), 30);
        assert_eq!(train.class_counts(), [56, 14]);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let ds = dataset(100, 20);
        let (a, _) = split_train_test(&ds, 0.7, 1).unwrap();
        let (b, _) = split_train_test(&ds, 0.7, 1).unwrap();
        assert_eq!(a.ids(), b.ids());
        for seed in 2..7 {
            let (c, _) = split_train_test(&ds, 0.7, seed).unwrap();
            assert_ne!(a.ids(), c.ids(), "seed {seed} reproduced seed 1");
        }
    }

    #[test]
    fn split_rejects_tiny_class() {
        assert!(matches!(split_train_test(&dataset(10, 1), 0.7, 0), Err(Error::Stratification(_))));
        assert!(matches!(split_train_test(&dataset(10, 3), 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn balance_moves_majority_to_test() {
        let records: Vec<MtsRecord> =
            (0..84).map(|i| record(&format!("t{i}"), u8::from(i < 14))).collect();
        let train = MtsDataset::new(records, names(2), 3).unwrap();
        let test = MtsDataset::new(vec![record("z", 1)], names(2), 3).unwrap();
        let (bt, bte) = balance_train(&train, &test, 3).unwrap();
        assert_eq!(bt.class_counts(), [14, 14]);
        assert_eq!(bte.n(), 57);
        assert_eq!(bte.records()[0].id, "z");
        assert!(bte.records()[1..].iter().all(|r| r.label() == 0));
    }

    #[test]
    fn balanced_train_is_a_fixed_point() {
        let train = dataset(10, 5);
        let test = dataset(2, 1).subset(&[0]);
        let (bt, bte) = balance_train(&train, &test, 9).unwrap();
        assert_eq!(bt, train);
        assert_eq!(bte, test);
    }

    #[test]
    fn observed_zeros_policy_unmasks_everything() {
        let mask = DMatrix::from_row_slice(1, 2, &[true, false]);
        let r = MtsRecord::new("x", DMatrix::from_element(1, 2, 3.0), mask, 0).unwrap();
        let ds = MtsDataset::new(vec![r], names(1), 2).unwrap();
        let z = ds.with_missing_policy(MissingPolicy::ObservedZeros);
        assert_eq!(z.records()[0].observed(0, 1), Some(0.0));
        assert_eq!(ds.with_missing_policy(MissingPolicy::Masked), ds);
    }
}
