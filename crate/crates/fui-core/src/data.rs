//! Dataset ingestion and partitioning.
//!
//! Three sources feed the simulator: a synthetic Gaussian-blob generator, a
//! schema-driven CSV loader for tabular data, and an even partitioner that
//! spreads samples across clients. CSV ingestion standardizes numeric
//! columns (z-score with statistics from the fitted rows), one-hot encodes
//! categorical columns in header order, and maps labels to dense ids in
//! first-appearance order.

use crate::error::{Error, Result};
use crate::models::LabeledDataset;
use crate::vecnum::RngStream;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Separation between adjacent class means in the synthetic generator, in
/// units of the feature space; `spread` is the per-class Gaussian std.
const BLOB_MEAN_SCALE: f64 = 3.0;

/// Assignment of every sample index to a client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub client_sizes: Vec<usize>,
    /// sample index -> client id
    pub assignment: Vec<usize>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.client_sizes.len()
    }

    pub fn client_indices(&self, client: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == client)
            .map(|(i, _)| i)
            .collect()
    }

    /// The smallest client dataset size, the `m` of the privacy parameters.
    pub fn min_client_size(&self) -> usize {
        self.client_sizes.iter().copied().min().unwrap_or(0)
    }

    /// Total samples held by everyone except `target`.
    pub fn rest_size(&self, target: usize) -> usize {
        self.assignment.len() - self.client_sizes[target]
    }
}

/// `n` samples from `num_classes` isotropic Gaussians with distinct means;
/// class counts differ by at most one. Deterministic given the stream.
pub fn gen_synthetic(
    num_classes: usize,
    input_dim: usize,
    n: usize,
    spread: f64,
    stream: &RngStream,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::InvalidParam("num_classes must be >= 2".into()));
    }
    if input_dim == 0 {
        return Err(Error::InvalidParam("input_dim must be >= 1".into()));
    }
    if n < num_classes {
        return Err(Error::InvalidParam(format!(
            "need at least one sample per class: n {n} < {num_classes} classes"
        )));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::InvalidParam("spread must be > 0".into()));
    }

    let means = class_means(num_classes, input_dim);
    let normal = Normal::new(0.0, spread).expect("positive spread");
    let mut rng = stream.rng();
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        for &m in &means[class] {
            features.push(m + normal.sample(&mut rng));
        }
        labels.push(class);
    }
    LabeledDataset::new(features, labels, input_dim)
}

/// Distinct class means: simplex corners when the dimension allows, a circle
/// in the first two coordinates otherwise, evenly spaced points in 1-D.
fn class_means(num_classes: usize, input_dim: usize) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut m = vec![0.0; input_dim];
            if input_dim >= num_classes {
                m[c] = BLOB_MEAN_SCALE;
            } else if input_dim >= 2 {
                let theta = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                m[0] = BLOB_MEAN_SCALE * theta.cos();
                m[1] = BLOB_MEAN_SCALE * theta.sin();
            } else {
                m[0] = BLOB_MEAN_SCALE * (c as f64 - (num_classes as f64 - 1.0) / 2.0);
            }
            m
        })
        .collect()
}

/// Random shuffle followed by round-robin assignment: sizes differ by at
/// most one, remainder samples land on the lowest client ids.
pub fn partition_even(
    data: &LabeledDataset,
    num_clients: usize,
    stream: &RngStream,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::InvalidParam("num_clients must be >= 1".into()));
    }
    if num_clients > data.len() {
        return Err(Error::InvalidParam(format!(
            "cannot split {} samples across {num_clients} clients",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream.rng());
    let mut assignment = vec![0usize; data.len()];
    let mut client_sizes = vec![0usize; num_clients];
    for (pos, &sample) in order.iter().enumerate() {
        let client = pos % num_clients;
        assignment[sample] = client;
        client_sizes[client] += 1;
    }
    Ok(PartitionPlan { client_sizes, assignment })
}

/// Split off a held-out test set; `test_fraction` of the rows, at least one
/// row kept on each side. Deterministic given the stream.
pub fn split_train_test(
    data: &LabeledDataset,
    test_fraction: f64,
    stream: &RngStream,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&test_fraction) || !test_fraction.is_finite() {
        return Err(Error::InvalidParam("test_fraction must be in [0, 1)".into()));
    }
    if data.len() < 2 {
        return Err(Error::InvalidParam("need at least 2 samples to split".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream.rng());
    let n_test = ((data.len() as f64 * test_fraction).round() as usize)
        .clamp(if test_fraction == 0.0 { 0 } else { 1 }, data.len() - 1);
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train_sorted = train_idx.to_vec();
    let mut test_sorted = test_idx.to_vec();
    train_sorted.sort_unstable();
    test_sorted.sort_unstable();
    Ok((data.subset(&train_sorted), data.subset(&test_sorted)))
}

// ---------------------------------------------------------------------------
// Schema and CSV ingestion
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnType {
    Numeric,
    Categorical,
    Label,
}

/// Column typing for a CSV file, parsed from flat `column = type` lines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    columns: HashMap<String, ColumnType>,
}

impl Schema {
    pub fn column_type(&self, name: &str) -> Option<ColumnType> {
        self.columns.get(name).copied()
    }

    pub fn label_column(&self) -> Option<&str> {
        self.columns
            .iter()
            .find(|(_, &t)| t == ColumnType::Label)
            .map(|(name, _)| name.as_str())
    }
}

/// Parse a schema file: `column = numeric|categorical|label` per line, `#`
/// comments, at most one label column.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut columns = HashMap::new();
    let mut label_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, ty) = line
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("line {}: expected `column = type`", lineno + 1)))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Schema(format!("line {}: empty column name", lineno + 1)));
        }
        let ty = match ty.trim() {
            "numeric" => ColumnType::Numeric,
            "categorical" => ColumnType::Categorical,
            "label" => ColumnType::Label,
            other => {
                return Err(Error::Schema(format!(
                    "line {}: unknown column type `{other}`",
                    lineno + 1
                )))
            }
        };
        if ty == ColumnType::Label {
            if label_seen {
                return Err(Error::Schema(format!("line {}: second label column", lineno + 1)));
            }
            label_seen = true;
        }
        if columns.insert(name.to_string(), ty).is_some() {
            return Err(Error::Schema(format!("line {}: duplicate column `{name}`", lineno + 1)));
        }
    }
    Ok(Schema { columns })
}

/// Raw parsed CSV: header plus string cells, with 1-based source line
/// numbers for error reporting.
struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_raw(text: &str) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(format!("header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Csv("empty file".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.position() {
            Some(pos) => Error::CsvLine { line: pos.line() as usize, msg: e.to_string() },
            None => Error::Csv(e.to_string()),
        })?;
        rows.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }
    Ok(RawTable { header, rows })
}

enum ColumnPlan {
    Numeric { col: usize },
    Categorical { col: usize, categories: Vec<String> },
}

/// Fitted featurization: per-column stats and category/label maps. Fit on
/// training rows and reused verbatim on held-out rows.
pub struct TableCodec {
    plans: Vec<ColumnPlan>,
    /// (mean, std) per numeric plan index, population std.
    stats: Vec<(f64, f64)>,
    label_col: usize,
    labels: Vec<String>,
    input_dim: usize,
}

impl TableCodec {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_names(&self) -> &[String] {
        &self.labels
    }

    fn fit(table: &RawTable, rows: &[usize], label_column: &str, schema: &Schema) -> Result<Self> {
        let label_col = table
            .header
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| Error::Csv(format!("label column `{label_column}` not in header")))?;

        let mut plans = Vec::new();
        for (col, name) in table.header.iter().enumerate() {
            let ty = schema
                .column_type(name)
                .ok_or_else(|| Error::Schema(format!("column `{name}` missing from schema")))?;
            match ty {
                ColumnType::Label => {
                    if col != label_col {
                        return Err(Error::Schema(format!(
                            "column `{name}` typed label, but label column is `{label_column}`"
                        )));
                    }
                }
                ColumnType::Numeric => plans.push(ColumnPlan::Numeric { col }),
                ColumnType::Categorical => {
                    let mut categories = Vec::new();
                    for &r in rows {
                        let v = &table.rows[r][col];
                        if !categories.iter().any(|c| c == v) {
                            categories.push(v.clone());
                        }
                    }
                    plans.push(ColumnPlan::Categorical { col, categories });
                }
            }
        }
        if schema.column_type(label_column) != Some(ColumnType::Label) {
            return Err(Error::Schema(format!(
                "label column `{label_column}` must be typed `label` in the schema"
            )));
        }

        let mut stats = Vec::new();
        for plan in &plans {
            if let ColumnPlan::Numeric { col } = plan {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for &r in rows {
                    let v = parse_numeric(table, r, *col)?;
                    sum += v;
                    sum_sq += v * v;
                }
                let n = rows.len() as f64;
                let mean = sum / n;
                let var = (sum_sq / n - mean * mean).max(0.0);
                stats.push((mean, var.sqrt()));
            }
        }

        let mut labels = Vec::new();
        for &r in rows {
            let v = &table.rows[r][label_col];
            if !labels.iter().any(|l| l == v) {
                labels.push(v.clone());
            }
        }

        let input_dim: usize = plans
            .iter()
            .map(|p| match p {
                ColumnPlan::Numeric { .. } => 1,
                ColumnPlan::Categorical { categories, .. } => categories.len(),
            })
            .sum();
        if input_dim == 0 {
            return Err(Error::Csv("no feature columns".into()));
        }

        Ok(TableCodec { plans, stats, label_col, labels, input_dim })
    }

    /// Transform rows into a dataset. Labels unseen during fit are an error
    /// when `strict_labels` (the held-out split); unseen categorical values
    /// encode as an all-zero block.
    fn transform(&self, table: &RawTable, rows: &[usize], strict_labels: bool) -> Result<LabeledDataset> {
        let mut features = Vec::with_capacity(rows.len() * self.input_dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            let mut stat_idx = 0;
            for plan in &self.plans {
                match plan {
                    ColumnPlan::Numeric { col } => {
                        let v = parse_numeric(table, r, *col)?;
                        let (mean, std) = self.stats[stat_idx];
                        stat_idx += 1;
                        features.push(if std > 0.0 { (v - mean) / std } else { 0.0 });
                    }
                    ColumnPlan::Categorical { col, categories } => {
                        let v = &table.rows[r][*col];
                        for c in categories {
                            features.push(if c == v { 1.0 } else { 0.0 });
                        }
                    }
                }
            }
            let raw_label = &table.rows[r][self.label_col];
            match self.labels.iter().position(|l| l == raw_label) {
                Some(id) => labels.push(id),
                None if strict_labels => {
                    return Err(Error::CsvLine {
                        line: r + 2,
                        msg: format!("unknown label value `{raw_label}` in test split"),
                    })
                }
                None => {
                    return Err(Error::CsvLine {
                        line: r + 2,
                        msg: format!("unknown label value `{raw_label}`"),
                    })
                }
            }
        }
        LabeledDataset::new(features, labels, self.input_dim)
    }
}

fn parse_numeric(table: &RawTable, row: usize, col: usize) -> Result<f64> {
    let cell = &table.rows[row][col];
    let v: f64 = cell.parse().map_err(|_| Error::CsvLine {
        // +2: header occupies line 1, rows are 0-indexed from line 2.
        line: row + 2,
        msg: format!("cannot parse `{cell}` as a number in column {}", table.header[col]),
    })?;
    if !v.is_finite() {
        return Err(Error::CsvLine { line: row + 2, msg: "non-finite numeric value".into() });
    }
    Ok(v)
}

/// Load a whole CSV file as one dataset, standardizing on all of its rows.
pub fn load_csv(path: &Path, label_column: &str, schema: &Schema) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    load_csv_str(&text, label_column, schema)
}

/// [`load_csv`] over in-memory text.
pub fn load_csv_str(text: &str, label_column: &str, schema: &Schema) -> Result<LabeledDataset> {
    let table = read_raw(text)?;
    let rows: Vec<usize> = (0..table.rows.len()).collect();
    let codec = TableCodec::fit(&table, &rows, label_column, schema)?;
    codec.transform(&table, &rows, false)
}

/// Split rows into train/test, fit the featurization on the training rows
/// only, and transform both. Unknown label values in the test split are an
/// error.
pub fn ingest_csv_split(
    text: &str,
    label_column: &str,
    schema: &Schema,
    test_fraction: f64,
    stream: &RngStream,
) -> Result<(LabeledDataset, LabeledDataset, TableCodec)> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::InvalidParam("test_fraction must be in (0, 1)".into()));
    }
    let table = read_raw(text)?;
    if table.rows.len() < 2 {
        return Err(Error::Csv("need at least 2 rows to split".into()));
    }
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    order.shuffle(&mut stream.rng());
    let n_test = ((table.rows.len() as f64 * test_fraction).round() as usize)
        .clamp(1, table.rows.len() - 1);
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train_rows = train_idx.to_vec();
    let mut test_rows = test_idx.to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    let codec = TableCodec::fit(&table, &train_rows, label_column, schema)?;
    let train = codec.transform(&table, &train_rows, false)?;
    let test = codec.transform(&table, &test_rows, true)?;
    Ok((train, test, codec))
}
