//! Dictionary-encoded columnar relations and the exact selectivity oracle.
//!
//! A [`Relation`] is ingested once from CSV and is immutable afterwards.
//! Categorical attributes are dictionary-encoded in first-appearance order;
//! numeric attributes are encoded as the rank of their value among the sorted
//! distinct values, and can optionally be discretized into equi-depth buckets
//! (the rank codes are then replaced by bucket codes, while raw values are
//! kept for oracle scans over raw ranges).

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    Numeric,
}

/// Bijection between raw values and dense codes `0..domain_size`.
///
/// For bucketized numeric attributes the *storage* codes of a column are
/// bucket indices, but the dictionary keeps the underlying value-to-rank
/// bijection so raw values stay resolvable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "values")]
pub enum Dictionary {
    /// Code = first-appearance index of the string value.
    Categorical(Vec<String>),
    /// Code = rank of the value among sorted distinct values.
    Numeric(Vec<f64>),
}

impl Dictionary {
    pub fn len(&self) -> usize {
        match self {
            Dictionary::Categorical(v) => v.len(),
            Dictionary::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One equi-depth histogram bucket over raw numeric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    /// Number of distinct values that fall in `[lo, hi]`.
    pub distinct_count: u32,
    /// Number of rows that fall in `[lo, hi]`.
    pub row_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMeta {
    pub name: String,
    pub kind: AttributeKind,
    /// Size of the encoded domain: dictionary length, or bucket count once a
    /// bucketization is applied.
    pub domain_size: u32,
    pub dictionary: Dictionary,
    pub bucketization: Option<Vec<Bucket>>,
}

impl AttributeMeta {
    /// Code of a categorical raw value.
    pub fn categorical_code(&self, value: &str) -> Option<u32> {
        match &self.dictionary {
            Dictionary::Categorical(values) => {
                values.iter().position(|v| v == value).map(|i| i as u32)
            }
            Dictionary::Numeric(_) => None,
        }
    }

    /// Rank of a numeric raw value among the sorted distinct values.
    pub fn value_rank(&self, value: f64) -> Option<u32> {
        match &self.dictionary {
            Dictionary::Numeric(values) => values
                .binary_search_by(|v| v.total_cmp(&value))
                .ok()
                .map(|i| i as u32),
            Dictionary::Categorical(_) => None,
        }
    }

    /// Raw value behind a dictionary code (rank code for numerics).
    pub fn decode(&self, code: u32) -> Option<String> {
        match &self.dictionary {
            Dictionary::Categorical(values) => values.get(code as usize).cloned(),
            Dictionary::Numeric(values) => values.get(code as usize).map(|v| format_raw(*v)),
        }
    }

    /// Storage code for a raw value: bucket index when bucketized, value rank
    /// or categorical code otherwise.
    pub fn storage_code(&self, raw: &RawValue) -> Option<u32> {
        match (raw, &self.dictionary) {
            (RawValue::Text(s), Dictionary::Categorical(_)) => self.categorical_code(s),
            (RawValue::Number(x), Dictionary::Numeric(_)) => match &self.bucketization {
                Some(buckets) => bucket_of(buckets, *x),
                None => self.value_rank(*x),
            },
            _ => None,
        }
    }

    /// Smallest and largest raw numeric value, if numeric.
    pub fn numeric_bounds(&self) -> Option<(f64, f64)> {
        match &self.dictionary {
            Dictionary::Numeric(values) if !values.is_empty() => {
                Some((values[0], values[values.len() - 1]))
            }
            _ => None,
        }
    }
}

/// A raw (un-encoded) value as it appears in a CSV cell or query file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Text(String),
}

fn format_raw(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Index of the bucket containing `x`, if any.
pub fn bucket_of(buckets: &[Bucket], x: f64) -> Option<u32> {
    buckets
        .iter()
        .position(|b| x >= b.lo && x <= b.hi)
        .map(|i| i as u32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Column {
    /// Per-row codes, always dense in `[0, domain_size)`.
    pub codes: Vec<u32>,
    /// Original numeric values per row; kept for raw-range oracle scans.
    pub raw: Option<Vec<f64>>,
}

/// Conjunctive equality query; unlisted attributes are wildcards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointQuery {
    /// `(attribute index, code)` pairs with distinct attribute indices.
    pub predicates: Vec<(usize, u32)>,
}

impl PointQuery {
    pub fn new(predicates: Vec<(usize, u32)>) -> Self {
        Self { predicates }
    }

    pub fn attributes(&self) -> impl Iterator<Item = usize> + '_ {
        self.predicates.iter().map(|(a, _)| *a)
    }
}

/// Conjunctive range query over codes; bounds are inclusive. A wildcard is
/// representable as the full range `[0, domain_size - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeQuery {
    /// `(attribute index, lo code, hi code)` with distinct attribute indices.
    pub predicates: Vec<(usize, u32, u32)>,
}

impl RangeQuery {
    pub fn new(predicates: Vec<(usize, u32, u32)>) -> Self {
        Self { predicates }
    }
}

/// Range query over raw numeric values, for bucketized estimation and raw
/// oracle scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRangeQuery {
    pub predicates: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Query {
    Point(PointQuery),
    Range(RangeQuery),
}

impl From<PointQuery> for Query {
    fn from(q: PointQuery) -> Self {
        Query::Point(q)
    }
}

impl From<RangeQuery> for Query {
    fn from(q: RangeQuery) -> Self {
        Query::Range(q)
    }
}

/// Per-column ingestion hint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColumnHint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AttributeKind>,
    /// Equi-depth bucket count to apply after ingestion (numeric only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<u32>,
}

pub type SchemaHints = HashMap<String, ColumnHint>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Relation {
    schema: Vec<AttributeMeta>,
    columns: Vec<Column>,
    n: usize,
}

impl Relation {
    /// Assemble a relation from already-encoded parts, validating invariants.
    pub fn from_parts(schema: Vec<AttributeMeta>, columns: Vec<Column>) -> Result<Self> {
        if schema.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} attributes but {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, |c| c.codes.len());
        if n == 0 {
            return Err(Error::EmptyRelation("no rows".into()));
        }
        for (meta, col) in schema.iter().zip(&columns) {
            if col.codes.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "column {:?} has {} rows, expected {}",
                    meta.name,
                    col.codes.len(),
                    n
                )));
            }
            if let Some(bad) = col.codes.iter().find(|&&c| c >= meta.domain_size) {
                return Err(Error::InvalidArgument(format!(
                    "code {} out of range for attribute {:?} (domain size {})",
                    bad, meta.name, meta.domain_size
                )));
            }
        }
        Ok(Self { schema, columns, n })
    }

    /// Ingest a CSV file with a header row.
    pub fn ingest_csv(path: &Path, hints: &SchemaHints) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::ingest_csv_reader(file, hints)
    }

    /// Ingest CSV from any reader. Categorical columns are dictionary-encoded
    /// in first-appearance order; numeric columns get rank codes.
    pub fn ingest_csv_reader<R: Read>(reader: R, hints: &SchemaHints) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(|h| h.to_string())
            .collect();
        if headers.is_empty() {
            return Err(Error::EmptyRelation("no header".into()));
        }

        let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        let mut line_of_row: Vec<u64> = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != headers.len() {
                return Err(Error::Csv {
                    row: line,
                    message: format!(
                        "ragged row: {} fields, expected {}",
                        record.len(),
                        headers.len()
                    ),
                });
            }
            for (i, field) in record.iter().enumerate() {
                cells[i].push(field.to_string());
            }
            line_of_row.push(line);
        }
        let n = line_of_row.len();
        if n == 0 {
            return Err(Error::EmptyRelation("header-only csv".into()));
        }

        let mut schema = Vec::with_capacity(headers.len());
        let mut columns = Vec::with_capacity(headers.len());
        for (i, name) in headers.iter().enumerate() {
            let hint = hints.get(name).cloned().unwrap_or_default();
            let kind = hint.kind.unwrap_or_else(|| infer_kind(&cells[i]));
            let (meta, column) = encode_column(name, kind, &cells[i], &line_of_row)?;
            schema.push(meta);
            columns.push(column);
        }

        let mut relation = Self { schema, columns, n };
        for (i, name) in headers.iter().enumerate() {
            if let Some(k) = hints.get(name).and_then(|h| h.buckets) {
                let meta = discretize_equidepth(&relation, i, k)?;
                relation = relation.with_bucketization(i, meta)?;
            }
        }
        Ok(relation)
    }

    /// Re-encode a CSV of new rows against this relation's existing schema.
    /// Values absent from the dictionaries are rejected.
    pub fn ingest_rows_with_schema<R: Read>(&self, reader: R) -> Result<Relation> {
        Self::ingest_csv_against(&self.schema, reader)
    }

    /// Re-encode a CSV of new rows against an existing schema, rejecting
    /// values absent from its dictionaries.
    pub fn ingest_csv_against<R: Read>(schema: &[AttributeMeta], reader: R) -> Result<Relation> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let names: Vec<&str> = schema.iter().map(|m| m.name.as_str()).collect();
        if headers != names {
            return Err(Error::SchemaMismatch(format!(
                "csv header {headers:?} does not match schema {names:?}"
            )));
        }

        let mut columns: Vec<Column> = schema
            .iter()
            .map(|m| Column {
                codes: Vec::new(),
                raw: matches!(m.kind, AttributeKind::Numeric).then(Vec::new),
            })
            .collect();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != schema.len() {
                return Err(Error::Csv {
                    row: line,
                    message: format!(
                        "ragged row: {} fields, expected {}",
                        record.len(),
                        schema.len()
                    ),
                });
            }
            for (i, field) in record.iter().enumerate() {
                let meta = &schema[i];
                let raw = match meta.kind {
                    AttributeKind::Categorical => RawValue::Text(field.to_string()),
                    AttributeKind::Numeric => {
                        let x: f64 = field.parse().map_err(|_| Error::Csv {
                            row: line,
                            message: format!(
                                "unparseable numeric cell in column {:?}",
                                meta.name
                            ),
                        })?;
                        columns[i].raw.as_mut().expect("numeric raw store").push(x);
                        RawValue::Number(x)
                    }
                };
                let code = meta.storage_code(&raw).ok_or_else(|| Error::UnknownValue {
                    attribute: meta.name.clone(),
                    value: field.to_string(),
                })?;
                columns[i].codes.push(code);
            }
        }
        Relation::from_parts(schema.to_vec(), columns)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_attributes(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[AttributeMeta] {
        &self.schema
    }

    pub fn attribute(&self, i: usize) -> &AttributeMeta {
        &self.schema[i]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|m| m.name == name)
    }

    pub fn code(&self, row: usize, attr: usize) -> u32 {
        self.columns[attr].codes[row]
    }

    pub fn column(&self, attr: usize) -> &Column {
        &self.columns[attr]
    }

    pub fn raw_value(&self, row: usize, attr: usize) -> Option<f64> {
        self.columns[attr].raw.as_ref().map(|r| r[row])
    }

    /// Row codes of one tuple in schema order.
    pub fn tuple(&self, row: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c.codes[row]).collect()
    }

    /// A view of a contiguous row range with the same schema and dictionaries.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Relation> {
        if range.end > self.n || range.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "row range {range:?} invalid for relation with {} rows",
                self.n
            )));
        }
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                codes: c.codes[range.clone()].to_vec(),
                raw: c.raw.as_ref().map(|r| r[range.clone()].to_vec()),
            })
            .collect();
        Relation::from_parts(self.schema.clone(), columns)
    }

    /// Apply a bucketization produced by [`discretize_equidepth`]: the
    /// column's codes become bucket indices.
    pub fn with_bucketization(&self, attr: usize, meta: AttributeMeta) -> Result<Relation> {
        let buckets = meta
            .bucketization
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("meta has no bucketization".into()))?;
        let raw = self.columns[attr]
            .raw
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("attribute has no raw values".into()))?;
        let codes = raw
            .iter()
            .map(|&x| {
                bucket_of(buckets, x).ok_or_else(|| {
                    Error::InvalidArgument(format!("value {x} not covered by any bucket"))
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        let mut schema = self.schema.clone();
        schema[attr] = meta;
        let mut columns = self.columns.clone();
        columns[attr] = Column { codes, raw: Some(raw.clone()) };
        Relation::from_parts(schema, columns)
    }

    pub fn validate_point(&self, q: &PointQuery) -> Result<()> {
        let mut seen = vec![false; self.schema.len()];
        for &(attr, code) in &q.predicates {
            if attr >= self.schema.len() {
                return Err(Error::InvalidQuery(format!("attribute index {attr} out of range")));
            }
            if seen[attr] {
                return Err(Error::InvalidQuery(format!(
                    "duplicate predicate on attribute {:?}",
                    self.schema[attr].name
                )));
            }
            seen[attr] = true;
            if code >= self.schema[attr].domain_size {
                return Err(Error::InvalidQuery(format!(
                    "code {code} out of range for attribute {:?} (domain size {})",
                    self.schema[attr].name, self.schema[attr].domain_size
                )));
            }
        }
        Ok(())
    }

    pub fn validate_range(&self, q: &RangeQuery) -> Result<()> {
        let mut seen = vec![false; self.schema.len()];
        for &(attr, lo, hi) in &q.predicates {
            if attr >= self.schema.len() {
                return Err(Error::InvalidQuery(format!("attribute index {attr} out of range")));
            }
            if seen[attr] {
                return Err(Error::InvalidQuery(format!(
                    "duplicate predicate on attribute {:?}",
                    self.schema[attr].name
                )));
            }
            seen[attr] = true;
            if lo > hi {
                return Err(Error::InvalidQuery(format!("lo {lo} > hi {hi}")));
            }
            if hi >= self.schema[attr].domain_size {
                return Err(Error::InvalidQuery(format!(
                    "bound {hi} out of range for attribute {:?} (domain size {})",
                    self.schema[attr].name, self.schema[attr].domain_size
                )));
            }
        }
        Ok(())
    }

    /// Exact normalized selectivity by full scan; the oracle all estimators
    /// are measured against.
    pub fn true_selectivity(&self, q: &Query) -> Result<f64> {
        match q {
            Query::Point(p) => {
                self.validate_point(p)?;
                Ok(self.count_point(p) as f64 / self.n as f64)
            }
            Query::Range(r) => {
                self.validate_range(r)?;
                let count = (0..self.n)
                    .filter(|&row| {
                        r.predicates.iter().all(|&(attr, lo, hi)| {
                            let c = self.columns[attr].codes[row];
                            c >= lo && c <= hi
                        })
                    })
                    .count();
                Ok(count as f64 / self.n as f64)
            }
        }
    }

    pub fn count_point(&self, q: &PointQuery) -> usize {
        (0..self.n)
            .filter(|&row| {
                q.predicates
                    .iter()
                    .all(|&(attr, code)| self.columns[attr].codes[row] == code)
            })
            .count()
    }

    /// Exact selectivity of a raw-value range query (scan over raw numerics).
    pub fn true_selectivity_raw(&self, q: &RawRangeQuery) -> Result<f64> {
        for &(attr, lo, hi) in &q.predicates {
            if attr >= self.schema.len() {
                return Err(Error::InvalidQuery(format!("attribute index {attr} out of range")));
            }
            if self.columns[attr].raw.is_none() {
                return Err(Error::InvalidQuery(format!(
                    "attribute {:?} has no raw numeric values",
                    self.schema[attr].name
                )));
            }
            if lo > hi {
                return Err(Error::InvalidQuery(format!("lo {lo} > hi {hi}")));
            }
        }
        let count = (0..self.n)
            .filter(|&row| {
                q.predicates.iter().all(|&(attr, lo, hi)| {
                    let x = self.columns[attr].raw.as_ref().unwrap()[row];
                    x >= lo && x <= hi
                })
            })
            .count();
        Ok(count as f64 / self.n as f64)
    }
}

fn infer_kind(cells: &[String]) -> AttributeKind {
    let all_numeric = cells.iter().all(|c| !c.is_empty() && c.parse::<f64>().is_ok());
    if all_numeric {
        AttributeKind::Numeric
    } else {
        AttributeKind::Categorical
    }
}

fn encode_column(
    name: &str,
    kind: AttributeKind,
    cells: &[String],
    line_of_row: &[u64],
) -> Result<(AttributeMeta, Column)> {
    match kind {
        AttributeKind::Categorical => {
            let mut values: Vec<String> = Vec::new();
            let mut index: HashMap<String, u32> = HashMap::new();
            let mut codes = Vec::with_capacity(cells.len());
            for cell in cells {
                let code = match index.get(cell.as_str()) {
                    Some(&c) => c,
                    None => {
                        let c = values.len() as u32;
                        values.push(cell.clone());
                        index.insert(cell.clone(), c);
                        c
                    }
                };
                codes.push(code);
            }
            let meta = AttributeMeta {
                name: name.to_string(),
                kind,
                domain_size: values.len() as u32,
                dictionary: Dictionary::Categorical(values),
                bucketization: None,
            };
            Ok((meta, Column { codes, raw: None }))
        }
        AttributeKind::Numeric => {
            let mut raw = Vec::with_capacity(cells.len());
            for (i, cell) in cells.iter().enumerate() {
                let x: f64 = cell.parse().map_err(|_| Error::Csv {
                    row: line_of_row[i],
                    message: format!("unparseable numeric cell {cell:?} in column {name:?}"),
                })?;
                raw.push(x);
            }
            let mut distinct = raw.clone();
            distinct.sort_by(|a, b| a.total_cmp(b));
            distinct.dedup();
            let codes = raw
                .iter()
                .map(|x| distinct.binary_search_by(|v| v.total_cmp(x)).unwrap() as u32)
                .collect();
            let meta = AttributeMeta {
                name: name.to_string(),
                kind,
                domain_size: distinct.len() as u32,
                dictionary: Dictionary::Numeric(distinct),
                bucketization: None,
            };
            Ok((meta, Column { codes, raw: Some(raw) }))
        }
    }
}

fn csv_error(err: csv::Error) -> Error {
    let row = err.position().map_or(0, |p| p.line());
    Error::Csv { row, message: err.to_string() }
}

/// Equal-frequency bucketization of a numeric attribute into `k` buckets.
/// Runs of equal values are never split across buckets.
pub fn discretize_equidepth(relation: &Relation, attr: usize, k: u32) -> Result<AttributeMeta> {
    let meta = relation.attribute(attr);
    if meta.kind != AttributeKind::Numeric {
        return Err(Error::InvalidArgument(format!(
            "attribute {:?} is not numeric",
            meta.name
        )));
    }
    let raw = relation.column(attr).raw.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!("attribute {:?} has no raw values", meta.name))
    })?;
    if k == 0 {
        return Err(Error::InvalidArgument("bucket count must be at least 1".into()));
    }

    // Runs of (value, row count) in ascending value order.
    let mut sorted = raw.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut runs: Vec<(f64, u64)> = Vec::new();
    for &x in &sorted {
        match runs.last_mut() {
            Some((v, c)) if *v == x => *c += 1,
            _ => runs.push((x, 1)),
        }
    }
    if (k as usize) > runs.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {k} buckets but attribute {:?} has only {} distinct values",
            meta.name,
            runs.len()
        )));
    }

    let mut buckets = Vec::with_capacity(k as usize);
    let mut remaining_rows = raw.len() as u64;
    let mut i = 0;
    for bucket_idx in 0..k {
        let buckets_left = (k - bucket_idx - 1) as usize;
        let target = remaining_rows.div_ceil((k - bucket_idx) as u64);
        let lo = runs[i].0;
        let mut row_count = 0u64;
        let mut distinct_count = 0u32;
        let hi = loop {
            row_count += runs[i].1;
            distinct_count += 1;
            let value = runs[i].0;
            i += 1;
            let runs_after = runs.len() - i;
            if row_count >= target || runs_after == buckets_left {
                break value;
            }
        };
        remaining_rows -= row_count;
        buckets.push(Bucket { lo, hi, distinct_count, row_count });
    }
    debug_assert_eq!(i, runs.len());

    let mut meta = meta.clone();
    meta.domain_size = k;
    meta.bucketization = Some(buckets);
    Ok(meta)
}

/// Product of domain sizes over an attribute set.
pub fn jpd_size(schema: &[AttributeMeta], attrs: &[usize]) -> Result<u128> {
    if attrs.is_empty() {
        return Err(Error::InvalidArgument("attribute set is empty".into()));
    }
    let mut out: u128 = 1;
    for &a in attrs {
        if a >= schema.len() {
            return Err(Error::InvalidArgument(format!("attribute index {a} out of range")));
        }
        out *= schema[a].domain_size as u128;
    }
    Ok(out)
}

/// Shannon entropy in bits of the empirical joint distribution over `attrs`.
pub fn joint_entropy(relation: &Relation, attrs: &[usize]) -> Result<f64> {
    if attrs.is_empty() {
        return Err(Error::InvalidArgument("attribute set is empty".into()));
    }
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    for row in 0..relation.n() {
        let key: Vec<u32> = attrs.iter().map(|&a| relation.code(row, a)).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    let n = relation.n() as f64;
    let mut h = 0.0;
    for &c in counts.values() {
        let p = c as f64 / n;
        h -= p * p.log2();
    }
    Ok(h)
}
