//! Tabular CSV ingestion, categorical encoding and environment splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSchema {
    pub feature_columns: Vec<String>,
    pub target_column: String,
    #[serde(default)]
    pub environment_column: Option<String>,
    pub task: Task,
    /// Features to one-hot encode (first level, in sorted order, dropped).
    #[serde(default)]
    pub categorical_columns: Vec<String>,
}

impl TabularSchema {
    pub fn validate(&self) -> Result<()> {
        if self.feature_columns.is_empty() {
            return Err(Error::invalid("schema needs at least one feature column"));
        }
        let mut seen = BTreeSet::new();
        for f in &self.feature_columns {
            if !seen.insert(f) {
                return Err(Error::invalid(format!("feature `{f}` listed twice")));
            }
        }
        if seen.contains(&self.target_column) {
            return Err(Error::invalid(format!(
                "target `{}` is also a feature",
                self.target_column
            )));
        }
        if let Some(env) = &self.environment_column {
            if seen.contains(env) || *env == self.target_column {
                return Err(Error::invalid(format!(
                    "environment column `{env}` must not be a feature or the target"
                )));
            }
        }
        if let Some(c) = self.categorical_columns.iter().find(|c| !seen.contains(c)) {
            return Err(Error::invalid(format!(
                "categorical column `{c}` is not a feature"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Encoded feature names, e.g. `workclass=private` for one-hot columns.
    pub feature_names: Vec<String>,
    pub env: Option<Vec<String>>,
    /// Rows dropped because a schema column was missing.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            env: self
                .env
                .as_ref()
                .map(|e| idx.iter().map(|&i| e[i].clone()).collect()),
            dropped_rows: 0,
        }
    }
}

fn is_missing(v: &str) -> bool {
    matches!(v, "" | "?" | "NA" | "na" | "N/A" | "NaN" | "nan" | "null")
}

pub fn load_csv(path: impl AsRef<Path>, schema: &TabularSchema) -> Result<Dataset> {
    load_csv_reader(File::open(path)?, schema)
}

pub fn load_csv_reader<R: Read>(input: R, schema: &TabularSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let feature_pos = schema
        .feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let target_pos = find(&schema.target_column)?;
    let env_pos = schema.environment_column.as_deref().map(find).transpose()?;
    let categorical: Vec<bool> = schema
        .feature_columns
        .iter()
        .map(|c| schema.categorical_columns.contains(c))
        .collect();

    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    let mut y = Vec::new();
    let mut env = Vec::new();
    let mut dropped = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let needed = feature_pos
            .iter()
            .chain([&target_pos])
            .chain(env_pos.as_ref());
        if needed.into_iter().any(|&i| is_missing(field(i))) {
            dropped += 1;
            continue;
        }
        let t = field(target_pos);
        let target: f64 = t.parse().map_err(|_| Error::NonNumeric {
            column: schema.target_column.clone(),
            row,
            value: t.to_string(),
        })?;
        if schema.task == Task::BinaryClassification && target != 0.0 && target != 1.0 {
            return Err(Error::InvalidTarget { row, value: target });
        }
        for (k, &i) in feature_pos.iter().enumerate() {
            if !categorical[k] && field(i).parse::<f64>().map_or(true, |v| !v.is_finite()) {
                return Err(Error::NonNumeric {
                    column: schema.feature_columns[k].clone(),
                    row,
                    value: field(i).to_string(),
                });
            }
        }
        raw_rows.push(feature_pos.iter().map(|&i| field(i).to_string()).collect());
        y.push(target);
        if let Some(e) = env_pos {
            env.push(field(e).to_string());
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    if raw_rows.is_empty() {
        return Err(Error::EmptyDataset(
            "dropping rows with missing values".into(),
        ));
    }

    // one-hot levels are fixed on the whole file so every split shares columns
    let levels: Vec<Vec<String>> = (0..feature_pos.len())
        .map(|k| {
            if categorical[k] {
                let set: BTreeSet<&str> = raw_rows.iter().map(|r| r[k].as_str()).collect();
                set.into_iter().skip(1).map(str::to_string).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut feature_names = Vec::new();
    for (k, name) in schema.feature_columns.iter().enumerate() {
        if categorical[k] {
            feature_names.extend(levels[k].iter().map(|l| format!("{name}={l}")));
        } else {
            feature_names.push(name.clone());
        }
    }
    if feature_names.is_empty() {
        return Err(Error::invalid("encoding produced no feature columns"));
    }
    let mut data = Vec::with_capacity(raw_rows.len() * feature_names.len());
    for r in &raw_rows {
        for (k, v) in r.iter().enumerate() {
            if categorical[k] {
                data.extend(levels[k].iter().map(|l| if l == v { 1.0 } else { 0.0 }));
            } else {
                data.push(v.parse::<f64>().expect("checked above"));
            }
        }
    }
    Ok(Dataset {
        x: Matrix::new(raw_rows.len(), feature_names.len(), data)?,
        y,
        feature_names,
        env: env_pos.map(|_| env),
        dropped_rows: dropped,
    })
}

/// Partitions rows by environment value.
pub fn split_environments(
    ds: &Dataset,
    schema: &TabularSchema,
) -> Result<BTreeMap<String, Dataset>> {
    let column = schema
        .environment_column
        .clone()
        .ok_or_else(|| Error::invalid("schema has no environment column"))?;
    let env = ds
        .env
        .as_ref()
        .ok_or_else(|| Error::MissingColumn(column.clone()))?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in env.iter().enumerate() {
        groups.entry(e.clone()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::SingleEnvironment(column));
    }
    Ok(groups
        .into_iter()
        .map(|(k, idx)| (k, ds.select_rows(&idx)))
        .collect())
}

/// Standardised training and test designs sharing the training statistics.
#[derive(Debug, Clone)]
pub struct ScaledSplit {
    pub train: Matrix,
    pub tests: Vec<Matrix>,
    pub scaler: Standardizer,
    /// Encoded columns kept after dropping those constant on the training split.
    pub kept_columns: Vec<usize>,
}

/// Fits centring/scaling on `train` only and applies it unchanged to each
/// test design. Columns constant on the training split carry no information
/// for the fit and are removed from every design.
pub fn standardize_on_train(train: &Matrix, tests: &[&Matrix]) -> Result<ScaledSplit> {
    let kept: Vec<usize> = (0..train.cols())
        .filter(|&j| {
            let first = train.get(0, j);
            train.row_iter().any(|r| r[j] != first)
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::ZeroVariance {
            column: "every training column".into(),
        });
    }
    if kept.len() < train.cols() {
        log::info!(
            "dropping {} columns constant on the training split",
            train.cols() - kept.len()
        );
    }
    let train_k = train.select_columns(&kept);
    let scaler = Standardizer::fit(&train_k)?;
    let tests = tests
        .iter()
        .map(|t| {
            if t.cols() != train.cols() {
                return Err(Error::mismatch(
                    "test design columns",
                    train.cols(),
                    t.cols(),
                ));
            }
            scaler.transform(&t.select_columns(&kept))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaledSplit {
        train: scaler.transform(&train_k)?,
        tests,
        scaler,
        kept_columns: kept,
    })
}
