//! Columnar dataset representation and the preprocessing primitives used by
//! every model evaluation: CSV ingestion with column-kind inference,
//! train/test splitting, fold generation, min-max scaling and one-hot
//! encoding (both fitted on training rows only).

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symbol used for empty categorical cells.
pub const MISSING_CATEGORY: &str = "\u{27e8}missing\u{27e9}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// One named column. Numeric columns store `f64` with `NaN` marking missing
/// cells; categorical columns store symbol codes into a per-column table
/// ordered by first appearance.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical { codes: Vec<u32>, cats: Vec<String> },
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    pub fn categorical_from_strings(name: impl Into<String>, values: &[&str]) -> Self {
        let mut cats: Vec<String> = Vec::new();
        let mut codes = Vec::with_capacity(values.len());
        for v in values {
            let code = match cats.iter().position(|c| c == v) {
                Some(i) => i as u32,
                None => {
                    cats.push((*v).to_string());
                    (cats.len() - 1) as u32
                }
            };
            codes.push(code);
        }
        Column {
            name: name.into(),
            data: ColumnData::Categorical { codes, cats },
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean of the non-missing numeric values over `rows`; 0 when all missing.
    pub fn numeric_mean(&self, rows: &[usize]) -> Result<f64> {
        let values = self.numeric_values()?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for &r in rows {
            let v = values[r];
            if v.is_finite() {
                sum += v;
                count += 1;
            }
        }
        Ok(if count == 0 { 0.0 } else { sum / count as f64 })
    }

    pub fn numeric_values(&self) -> Result<&[f64]> {
        match &self.data {
            ColumnData::Numeric(v) => Ok(v),
            ColumnData::Categorical { .. } => Err(Error::data(format!(
                "column '{}' is categorical, expected numeric",
                self.name
            ))),
        }
    }

    pub fn categorical_codes(&self) -> Result<(&[u32], &[String])> {
        match &self.data {
            ColumnData::Numeric(_) => Err(Error::data(format!(
                "column '{}' is numeric, expected categorical",
                self.name
            ))),
            ColumnData::Categorical { codes, cats } => Ok((codes, cats)),
        }
    }

    fn take_rows(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { codes, cats } => ColumnData::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                cats: cats.clone(),
            },
        };
        Column {
            name: self.name.clone(),
            data,
        }
    }
}

/// A loaded dataset: ordered columns, an optional designated target, and the
/// task kind. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<Column>,
    pub target: Option<String>,
    pub task: TaskKind,
    pub n_rows: usize,
}

impl Table {
    pub fn new(columns: Vec<Column>, target: Option<String>, task: TaskKind) -> Result<Table> {
        let n_rows = columns.first().map(|c| c.len()).unwrap_or(0);
        let mut seen = HashSet::new();
        for c in &columns {
            if c.len() != n_rows {
                return Err(Error::data(format!(
                    "column '{}' has {} rows, expected {}",
                    c.name,
                    c.len(),
                    n_rows
                )));
            }
            if !seen.insert(c.name.clone()) {
                return Err(Error::data(format!("duplicate column name '{}'", c.name)));
            }
        }
        if let Some(t) = &target {
            if !seen.contains(t) {
                return Err(Error::data(format!("target column '{t}' not found")));
            }
        }
        Ok(Table {
            columns,
            target,
            task,
            n_rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::data(format!("no column named '{name}'")))
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::data(format!("no column named '{name}'")))
    }

    pub fn target_column(&self) -> Result<&Column> {
        let name = self
            .target
            .as_ref()
            .ok_or_else(|| Error::data("table has no designated target"))?;
        self.column(name)
    }

    /// Names of the non-target columns, in table order.
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| Some(&c.name) != self.target.as_ref())
            .map(|c| c.name.clone())
            .collect()
    }

    /// New table containing the given rows, in the given order. Categorical
    /// symbol tables are shared, so codes stay comparable across subsets.
    pub fn take_rows(&self, rows: &[usize]) -> Table {
        Table {
            columns: self.columns.iter().map(|c| c.take_rows(rows)).collect(),
            target: self.target.clone(),
            task: self.task,
            n_rows: rows.len(),
        }
    }
}

/// Optional sidecar overriding inferred column kinds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, String>,
}

impl Schema {
    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        for (name, kind) in &schema.columns {
            if kind != "numeric" && kind != "categorical" {
                return Err(Error::config(format!(
                    "schema column '{name}': kind must be \"numeric\" or \"categorical\", got \"{kind}\""
                )));
            }
        }
        Ok(schema)
    }
}

fn parse_numeric(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn build_numeric_column(name: &str, raw: &[String], forced: bool) -> Result<Column> {
    let mut values = Vec::with_capacity(raw.len());
    for cell in raw {
        if cell.trim().is_empty() {
            values.push(f64::NAN);
        } else {
            match parse_numeric(cell) {
                Some(v) => values.push(v),
                None => {
                    return Err(Error::data(format!(
                        "column '{name}': cell '{cell}' is not numeric{}",
                        if forced {
                            " (forced numeric by schema)"
                        } else {
                            ""
                        }
                    )))
                }
            }
        }
    }
    Ok(Column::numeric(name, values))
}

fn build_categorical_column(name: &str, raw: &[String]) -> Column {
    let values: Vec<&str> = raw
        .iter()
        .map(|c| {
            let t = c.trim();
            if t.is_empty() {
                MISSING_CATEGORY
            } else {
                t
            }
        })
        .collect();
    Column::categorical_from_strings(name, &values)
}

/// Infers a column's kind: numeric-parseable with more than `max_cat_card`
/// distinct raw values is Numeric, everything else Categorical. Empty cells
/// are missing and don't count against parseability.
fn infer_kind(raw: &[String], max_cat_card: usize) -> ColumnKind {
    let mut distinct = HashSet::new();
    let mut any_value = false;
    for cell in raw {
        let t = cell.trim();
        if t.is_empty() {
            continue;
        }
        any_value = true;
        if parse_numeric(t).is_none() {
            return ColumnKind::Categorical;
        }
        distinct.insert(t.to_string());
    }
    if any_value && distinct.len() > max_cat_card {
        ColumnKind::Numeric
    } else {
        ColumnKind::Categorical
    }
}

fn read_csv_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    if headers.is_empty() {
        return Err(Error::data("csv file has no header row"));
    }
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        for (i, cell) in record.iter().enumerate() {
            raw[i].push(cell.to_string());
        }
    }
    Ok((headers, raw))
}

fn assemble_columns(
    headers: &[String],
    raw: &[Vec<String>],
    max_cat_card: usize,
    schema: Option<&Schema>,
) -> Result<Vec<Column>> {
    let mut columns = Vec::with_capacity(headers.len());
    for (name, cells) in headers.iter().zip(raw) {
        let forced = schema.and_then(|s| s.columns.get(name)).map(String::as_str);
        let kind = match forced {
            Some("numeric") => ColumnKind::Numeric,
            Some("categorical") => ColumnKind::Categorical,
            _ => infer_kind(cells, max_cat_card),
        };
        let column = match kind {
            ColumnKind::Numeric => build_numeric_column(name, cells, forced.is_some())?,
            ColumnKind::Categorical => build_categorical_column(name, cells),
        };
        columns.push(column);
    }
    Ok(columns)
}

/// Loads a labeled CSV. The target column is forced to the kind the task
/// requires (categorical for classification, numeric for regression), and
/// rows with a missing target cell are dropped.
pub fn load_csv(
    path: &Path,
    target: &str,
    task: TaskKind,
    max_cat_card: usize,
    schema: Option<&Schema>,
) -> Result<Table> {
    let (headers, mut raw) = read_csv_columns(path)?;
    let target_idx = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::data(format!("target column '{target}' not found in {path:?}")))?;

    let keep: Vec<usize> = raw[target_idx]
        .iter()
        .enumerate()
        .filter(|(_, cell)| !cell.trim().is_empty())
        .map(|(i, _)| i)
        .collect();
    if keep.len() != raw[target_idx].len() {
        for col in raw.iter_mut() {
            *col = keep.iter().map(|&i| col[i].clone()).collect();
        }
    }
    if keep.is_empty() {
        return Err(Error::data("no rows with a target value"));
    }

    let mut columns = Vec::with_capacity(headers.len());
    for (i, name) in headers.iter().enumerate() {
        let column = if i == target_idx {
            match task {
                TaskKind::Classification => build_categorical_column(name, &raw[i]),
                TaskKind::Regression => build_numeric_column(name, &raw[i], true)?,
            }
        } else {
            let forced = schema.and_then(|s| s.columns.get(name)).map(String::as_str);
            let kind = match forced {
                Some("numeric") => ColumnKind::Numeric,
                Some("categorical") => ColumnKind::Categorical,
                _ => infer_kind(&raw[i], max_cat_card),
            };
            match kind {
                ColumnKind::Numeric => build_numeric_column(name, &raw[i], forced.is_some())?,
                ColumnKind::Categorical => build_categorical_column(name, &raw[i]),
            }
        };
        columns.push(column);
    }

    if task == TaskKind::Classification {
        let (_, cats) = columns[target_idx].categorical_codes()?;
        if cats.len() > 1000 {
            return Err(Error::data(format!(
                "classification target '{target}' has {} classes (limit 1000)",
                cats.len()
            )));
        }
    }

    Table::new(columns, Some(target.to_string()), task)
}

/// Loads a CSV without a designated target (used by the transform command).
pub fn load_csv_unlabeled(
    path: &Path,
    max_cat_card: usize,
    schema: Option<&Schema>,
) -> Result<Table> {
    let (headers, raw) = read_csv_columns(path)?;
    let columns = assemble_columns(&headers, &raw, max_cat_card, schema)?;
    Table::new(columns, None, TaskKind::Regression)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Seeded shuffle split. Train gets ceil(n * (1 - f)) rows, test the rest.
pub fn train_test_split(table: &Table, spec: &SplitSpec) -> Result<(Table, Table)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test_fraction must be in (0, 1), got {}",
            spec.test_fraction
        )));
    }
    let n = table.n_rows;
    if n < 5 {
        return Err(Error::data(format!(
            "need at least 5 rows to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    // ceil(n*(1-f)) == n - floor(n*f); the epsilon keeps exact products like
    // 10 * 0.2 from falling on the wrong side of the floor.
    let n_test = (n as f64 * spec.test_fraction + 1e-9).floor() as usize;
    let n_train = n - n_test;
    if n_train == 0 || n_test == 0 {
        return Err(Error::config(format!(
            "degenerate split: {n} rows with test_fraction {}",
            spec.test_fraction
        )));
    }
    let train = table.take_rows(&order[..n_train]);
    let test = table.take_rows(&order[n_train..]);
    Ok((train, test))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_rows(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (row, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                val.push(row);
            } else {
                train.push(row);
            }
        }
        (train, val)
    }
}

/// Deterministic k-fold assignment; fold sizes differ by at most one.
pub fn make_folds(n_rows: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("fold count must be >= 2, got {k}")));
    }
    if k > n_rows {
        return Err(Error::config(format!(
            "fold count {k} exceeds row count {n_rows}"
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n_rows / k;
    let extra = n_rows % k;
    let mut assignments = vec![0usize; n_rows];
    let mut cursor = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &order[cursor..cursor + size] {
            assignments[row] = fold;
        }
        cursor += size;
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

/// Per-column (min, max) learned on training rows. A constant column maps to
/// 0 everywhere; test values outside the training range are not clipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalerState {
    pub ranges: Vec<(f64, f64)>,
}

pub fn fit_minmax(train_columns: &[Vec<f64>]) -> ScalerState {
    let ranges = train_columns
        .iter()
        .map(|col| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in col {
                if v.is_finite() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if lo > hi {
                (0.0, 0.0)
            } else {
                (lo, hi)
            }
        })
        .collect();
    ScalerState { ranges }
}

pub fn apply_minmax(state: &ScalerState, columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .zip(&state.ranges)
        .map(|(col, &(lo, hi))| {
            let span = hi - lo;
            col.iter()
                .map(|&v| {
                    if span == 0.0 {
                        0.0
                    } else {
                        let scaled = (v - lo) / span;
                        if scaled.is_finite() {
                            scaled
                        } else {
                            0.0
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// One-hot encoder state: categories observed in training, ordered by first
/// appearance. Unseen categories encode to an all-zero row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderState {
    pub categories: Vec<String>,
}

pub fn fit_onehot(train_codes: &[u32], cats: &[String]) -> EncoderState {
    let mut seen = vec![false; cats.len()];
    let mut categories = Vec::new();
    for &code in train_codes {
        let idx = code as usize;
        if !seen[idx] {
            seen[idx] = true;
            categories.push(cats[idx].clone());
        }
    }
    EncoderState { categories }
}

pub fn apply_onehot(state: &EncoderState, codes: &[u32], cats: &[String]) -> Vec<Vec<f64>> {
    let slot_of: Vec<Option<usize>> = cats
        .iter()
        .map(|c| state.categories.iter().position(|s| s == c))
        .collect();
    let mut out = vec![vec![0.0; codes.len()]; state.categories.len()];
    for (row, &code) in codes.iter().enumerate() {
        if let Some(slot) = slot_of[code as usize] {
            out[slot][row] = 1.0;
        }
    }
    out
}
