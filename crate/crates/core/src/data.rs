//! Survival records, dataset schema and CSV ingestion.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Missing feature values are stored as NaN.
pub const MISSING: f64 = f64::NAN;

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Numerical,
    /// Levels are encoded as their position in this list. An empty list is
    /// filled in at load time with the sorted distinct values of the column.
    Categorical {
        #[serde(default)]
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numerical,
        }
    }
}

fn default_missing_marker() -> String {
    "NA".to_string()
}

/// Column layout of a survival CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub time_column: String,
    pub event_column: String,
    #[serde(default = "default_missing_marker")]
    pub missing_marker: String,
}

impl Schema {
    /// Schema with `d` numerical features named `x0..x{d-1}`.
    pub fn numerical(d: usize) -> Self {
        Self {
            features: (0..d).map(|j| FeatureSpec::numerical(format!("x{j}"))).collect(),
            time_column: "time".into(),
            event_column: "event".into(),
            missing_marker: default_missing_marker(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.features
            .iter()
            .filter(|f| matches!(f.kind, FeatureKind::Categorical { .. }))
            .count()
    }
}

/// One `(x, δ, t)` observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub features: Vec<f64>,
    pub event: bool,
    pub time: f64,
}

impl SurvivalRecord {
    pub fn new(features: Vec<f64>, event: bool, time: f64) -> Self {
        Self {
            features,
            event,
            time,
        }
    }

    /// Equality that treats two missing markers as equal.
    pub fn same_as(&self, other: &SurvivalRecord) -> bool {
        self.event == other.event
            && self.time == other.time
            && self.features.len() == other.features.len()
            && self
                .features
                .iter()
                .zip(&other.features)
                .all(|(a, b)| a == b || (is_missing(*a) && is_missing(*b)))
    }
}

#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    schema: Arc<Schema>,
    records: Vec<SurvivalRecord>,
}

impl SurvivalDataset {
    pub fn new(schema: Schema, records: Vec<SurvivalRecord>) -> Result<Self> {
        Self::with_shared_schema(Arc::new(schema), records)
    }

    pub fn with_shared_schema(schema: Arc<Schema>, records: Vec<SurvivalRecord>) -> Result<Self> {
        let d = schema.n_features();
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != d {
                return Err(Error::Invariant(format!(
                    "record {i} has {} features, schema declares {d}",
                    r.features.len()
                )));
            }
            if !(r.time.is_finite() && r.time >= 0.0) {
                return Err(Error::Invariant(format!(
                    "record {i} has invalid time {}",
                    r.time
                )));
            }
            if r.features.iter().any(|v| v.is_infinite()) {
                return Err(Error::Invariant(format!("record {i} has an infinite feature")));
            }
        }
        Ok(Self { schema, records })
    }

    /// Numerical-schema dataset from parallel `times`/`events` with no features.
    pub fn from_times(times: &[f64], events: &[bool]) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::argument("times and events differ in length"));
        }
        let records = times
            .iter()
            .zip(events)
            .map(|(&t, &e)| SurvivalRecord::new(Vec::new(), e, t))
            .collect();
        Self::new(Schema::numerical(0), records)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<Schema> {
        Arc::clone(&self.schema)
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SurvivalRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.n_features()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        1.0 - self.n_events() as f64 / self.len() as f64
    }

    /// Sorted distinct times at which at least one event occurs.
    pub fn event_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.event)
            .map(|r| r.time)
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Dataset with the same schema holding `records`.
    pub fn with_records(&self, records: Vec<SurvivalRecord>) -> Self {
        Self {
            schema: Arc::clone(&self.schema),
            records,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        self.with_records(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Same records with `event` negated; censorings become events.
    pub fn flipped(&self) -> Self {
        self.with_records(
            self.records
                .iter()
                .map(|r| SurvivalRecord {
                    event: !r.event,
                    ..r.clone()
                })
                .collect(),
        )
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a SurvivalDataset>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::argument("cannot concatenate zero datasets"))?;
        let mut records = first.records.clone();
        for part in iter {
            if part.schema.n_features() != first.schema.n_features() {
                return Err(Error::argument("datasets have different feature counts"));
            }
            records.extend(part.records.iter().cloned());
        }
        Ok(first.with_records(records))
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, schema)
    }

    /// Parses CSV text with a header row. Row numbers in errors count data
    /// rows from 1.
    pub fn from_csv_reader<R: Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column_of = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Load {
                    row: 0,
                    column: name.to_string(),
                    message: "unknown column".into(),
                })
        };
        let time_col = column_of(&schema.time_column)?;
        let event_col = column_of(&schema.event_column)?;
        let feature_cols = schema
            .features
            .iter()
            .map(|f| column_of(&f.name))
            .collect::<Result<Vec<_>>>()?;

        let rows = rdr
            .records()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| Error::Load {
                    row: i + 1,
                    column: String::new(),
                    message: format!("malformed row: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut schema = schema.clone();
        for (spec, &col) in schema.features.iter_mut().zip(&feature_cols) {
            if let FeatureKind::Categorical { levels } = &mut spec.kind {
                if levels.is_empty() {
                    let mut seen: Vec<String> = rows
                        .iter()
                        .filter_map(|r| r.get(col).map(str::trim))
                        .filter(|v| *v != schema.missing_marker && !v.is_empty())
                        .map(str::to_string)
                        .collect();
                    seen.sort();
                    seen.dedup();
                    *levels = seen;
                }
            }
        }

        let codes: Vec<Option<HashMap<&str, usize>>> = schema
            .features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Numerical => None,
                FeatureKind::Categorical { levels } => Some(
                    levels
                        .iter()
                        .enumerate()
                        .map(|(i, l)| (l.as_str(), i))
                        .collect(),
                ),
            })
            .collect();

        let mut records = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row_no = i + 1;
            let err = |column: &str, message: String| Error::Load {
                row: row_no,
                column: column.to_string(),
                message,
            };
            let cell = |col: usize, name: &str| -> Result<&str> {
                row.get(col)
                    .map(str::trim)
                    .ok_or_else(|| err(name, "malformed row: missing cell".into()))
            };

            let raw_time = cell(time_col, &schema.time_column)?;
            let time: f64 = raw_time.parse().map_err(|_| {
                err(&schema.time_column, format!("non-numeric time {raw_time:?}"))
            })?;
            if !time.is_finite() {
                return Err(err(&schema.time_column, "non-finite time".into()));
            }
            if time < 0.0 {
                return Err(err(&schema.time_column, "negative time".into()));
            }

            let raw_event = cell(event_col, &schema.event_column)?;
            let event = match raw_event {
                "1" => true,
                "0" => false,
                other => {
                    return Err(err(
                        &schema.event_column,
                        format!("non-boolean event {other:?}"),
                    ))
                }
            };

            let mut features = Vec::with_capacity(feature_cols.len());
            for ((spec, &col), code) in schema.features.iter().zip(&feature_cols).zip(&codes) {
                let raw = cell(col, &spec.name)?;
                if raw == schema.missing_marker || raw.is_empty() {
                    features.push(MISSING);
                    continue;
                }
                let value = match code {
                    None => raw
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(&spec.name, format!("non-numeric value {raw:?}")))?,
                    Some(map) => *map
                        .get(raw)
                        .ok_or_else(|| err(&spec.name, format!("unknown level {raw:?}")))?
                        as f64,
                };
                features.push(value);
            }
            records.push(SurvivalRecord::new(features, event, time));
        }
        Self::new(schema, records)
    }

    /// Writes the dataset in the same CSV dialect `load_csv` reads: feature
    /// columns, then the event column (0/1), then the time column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.event_column);
        header.push(&self.schema.time_column);
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = Vec::with_capacity(header.len());
            for (spec, &v) in self.schema.features.iter().zip(&r.features) {
                row.push(if is_missing(v) {
                    self.schema.missing_marker.clone()
                } else {
                    match &spec.kind {
                        FeatureKind::Numerical => v.to_string(),
                        FeatureKind::Categorical { levels } => levels
                            .get(v as usize)
                            .cloned()
                            .unwrap_or_else(|| v.to_string()),
                    }
                });
            }
            row.push(if r.event { "1" } else { "0" }.to_string());
            row.push(r.time.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Shuffles with `rng` and moves `round(fraction * N)` records into the second
/// partition. Both partitions keep the original relative record order.
pub fn split_fraction(
    data: &SurvivalDataset,
    fraction: f64,
    rng: &mut rng::Rng,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::argument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    if data.is_empty() {
        return Err(Error::argument("cannot split an empty dataset"));
    }
    let n = data.len();
    let n_second = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (second, first) = idx.split_at_mut(n_second);
    first.sort_unstable();
    second.sort_unstable();
    Ok((data.subset(first), data.subset(second)))
}

/// Returns `(train, test)` with `|test| = round(test_fraction * N)`.
pub fn train_test_split(
    data: &SurvivalDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    split_fraction(data, test_fraction, &mut rng::stream(seed, streams::TRAIN_TEST))
}
