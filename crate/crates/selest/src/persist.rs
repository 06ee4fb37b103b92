//! Versioned on-disk artifacts: relation files, model files, and
//! JSON-lines workload files with queries addressed by attribute name.
//!
//! Model files are JSON with explicit numeric arrays. Loading verifies the
//! format version and, where a relation is in play, the schema fingerprint,
//! before any estimation happens. A save → load → save round trip is
//! byte-identical.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabeledQuery;
use crate::made::MadeEnsemble;
use crate::relation::{
    AttributeKind, AttributeMeta, PointQuery, Query, RangeQuery, RawRangeQuery, RawValue, Relation,
};
use crate::supervised::{QueryOrigin, SupervisedModel, TrainingQuery, TrainingSet};

pub const FORMAT_VERSION: u32 = 1;

/// FNV-1a over the canonical serialization of attribute names, domain sizes
/// and dictionaries.
pub fn schema_fingerprint(schema: &[AttributeMeta]) -> String {
    let canonical = serde_json::to_string(
        &schema
            .iter()
            .map(|m| (&m.name, m.domain_size, &m.dictionary))
            .collect::<Vec<_>>(),
    )
    .expect("schema serializes");
    format!("{:016x}", crate::rng::fnv1a(&canonical))
}

/// Seconds since the epoch, honoring `SOURCE_DATE_EPOCH` so identical
/// commands can produce identical files.
pub fn build_timestamp() -> u64 {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(t) = v.parse() {
            return t;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationFile {
    pub format_version: u32,
    pub schema_fingerprint: String,
    pub relation: Relation,
}

impl RelationFile {
    pub fn new(relation: Relation) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            schema_fingerprint: schema_fingerprint(relation.schema()),
            relation,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        check_version(file.format_version)?;
        Ok(file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Made,
    Supervised,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub created_unix: u64,
    pub loss_curves: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub schema_fingerprint: String,
    pub kind: ModelKind,
    pub schema: Vec<AttributeMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub made: Option<MadeEnsemble>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervised: Option<SupervisedModel>,
    pub training: TrainMeta,
}

impl ModelFile {
    pub fn for_made(schema: &[AttributeMeta], ensemble: MadeEnsemble, training: TrainMeta) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            schema_fingerprint: schema_fingerprint(schema),
            kind: ModelKind::Made,
            schema: schema.to_vec(),
            made: Some(ensemble),
            supervised: None,
            training,
        }
    }

    pub fn for_supervised(
        schema: &[AttributeMeta],
        model: SupervisedModel,
        training: TrainMeta,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            schema_fingerprint: schema_fingerprint(schema),
            kind: ModelKind::Supervised,
            schema: schema.to_vec(),
            made: None,
            supervised: Some(model),
            training,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        check_version(file.format_version)?;
        match file.kind {
            ModelKind::Made if file.made.is_none() => {
                return Err(Error::SchemaMismatch("model file lacks its density payload".into()))
            }
            ModelKind::Supervised if file.supervised.is_none() => {
                return Err(Error::SchemaMismatch("model file lacks its regressor payload".into()))
            }
            _ => {}
        }
        Ok(file)
    }

    /// Refuse to pair this model with data it was not trained on.
    pub fn check_schema(&self, schema: &[AttributeMeta]) -> Result<()> {
        let fp = schema_fingerprint(schema);
        if fp != self.schema_fingerprint {
            return Err(Error::SchemaMismatch(format!(
                "model fingerprint {} does not match relation fingerprint {fp}",
                self.schema_fingerprint
            )));
        }
        Ok(())
    }
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found, expected: FORMAT_VERSION });
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let json = serde_json::to_string_pretty(value)?;
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let data = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&data)?)
}

// ---------------------------------------------------------------------------
// Workload files: one query per JSON line, attributes by name
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBounds {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NamedQuery {
    Point { predicates: BTreeMap<String, RawValue> },
    Range { predicates: BTreeMap<String, RawBounds> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadLine {
    #[serde(flatten)]
    pub query: NamedQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

/// Resolve a named point query against a schema; raw values must exist in
/// the dictionaries.
pub fn resolve_point(
    predicates: &BTreeMap<String, RawValue>,
    schema: &[AttributeMeta],
) -> Result<PointQuery> {
    let mut out = Vec::with_capacity(predicates.len());
    for (name, raw) in predicates {
        let attr = schema.iter().position(|m| &m.name == name).ok_or_else(|| {
            Error::InvalidQuery(format!("unknown attribute {name:?}"))
        })?;
        // numeric dictionaries accept numbers serialized as strings too
        let raw = match (raw, schema[attr].kind) {
            (RawValue::Text(s), AttributeKind::Numeric) => {
                let x: f64 = s.parse().map_err(|_| Error::UnknownValue {
                    attribute: name.clone(),
                    value: s.clone(),
                })?;
                RawValue::Number(x)
            }
            _ => raw.clone(),
        };
        let code = schema[attr].storage_code(&raw).ok_or_else(|| Error::UnknownValue {
            attribute: name.clone(),
            value: match &raw {
                RawValue::Text(s) => s.clone(),
                RawValue::Number(x) => x.to_string(),
            },
        })?;
        out.push((attr, code));
    }
    out.sort_by_key(|&(a, _)| a);
    Ok(PointQuery::new(out))
}

/// Resolve a named range query into raw numeric bounds.
pub fn resolve_raw_range(
    predicates: &BTreeMap<String, RawBounds>,
    schema: &[AttributeMeta],
) -> Result<RawRangeQuery> {
    let mut out = Vec::with_capacity(predicates.len());
    for (name, bounds) in predicates {
        let attr = schema.iter().position(|m| &m.name == name).ok_or_else(|| {
            Error::InvalidQuery(format!("unknown attribute {name:?}"))
        })?;
        if schema[attr].kind != AttributeKind::Numeric {
            return Err(Error::InvalidQuery(format!(
                "range predicate on non-numeric attribute {name:?}"
            )));
        }
        if bounds.lo > bounds.hi {
            return Err(Error::InvalidQuery(format!(
                "lo {} > hi {} on attribute {name:?}",
                bounds.lo, bounds.hi
            )));
        }
        out.push((attr, bounds.lo, bounds.hi));
    }
    out.sort_by_key(|&(a, _, _)| a);
    Ok(RawRangeQuery { predicates: out })
}

/// Render a coded point query back to names and raw values.
pub fn point_to_named(q: &PointQuery, schema: &[AttributeMeta]) -> NamedQuery {
    let predicates = q
        .predicates
        .iter()
        .map(|&(attr, code)| {
            let meta = &schema[attr];
            let value = match (&meta.dictionary, meta.bucketization.is_some()) {
                (crate::relation::Dictionary::Categorical(values), _) => {
                    RawValue::Text(values[code as usize].clone())
                }
                (crate::relation::Dictionary::Numeric(_), true) => {
                    // bucket codes render as a representative raw value
                    let b = &meta.bucketization.as_ref().unwrap()[code as usize];
                    RawValue::Number(b.lo)
                }
                (crate::relation::Dictionary::Numeric(values), false) => {
                    RawValue::Number(values[code as usize])
                }
            };
            (meta.name.clone(), value)
        })
        .collect();
    NamedQuery::Point { predicates }
}

pub fn write_workload(path: &Path, lines: &[WorkloadLine]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut file, line)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Read a JSONL workload; malformed lines are reported with their number.
pub fn read_workload(path: &Path) -> Result<Vec<WorkloadLine>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: WorkloadLine = serde_json::from_str(&line).map_err(|e| Error::Csv {
            row: (i + 1) as u64,
            message: format!("malformed query line: {e}"),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

/// Labeled test queries to workload lines.
pub fn labeled_to_lines(labeled: &[LabeledQuery], schema: &[AttributeMeta]) -> Vec<WorkloadLine> {
    labeled
        .iter()
        .map(|lq| WorkloadLine {
            query: point_to_named(&lq.query, schema),
            selectivity: Some(lq.selectivity),
            weight: None,
            origin: None,
        })
        .collect()
}

/// Training set to workload lines (selectivity, weight and origin retained).
pub fn training_set_to_lines(set: &TrainingSet, schema: &[AttributeMeta]) -> Vec<WorkloadLine> {
    set.queries
        .iter()
        .map(|t| {
            let query = match &t.query {
                Query::Point(p) => point_to_named(p, schema),
                Query::Range(r) => range_to_named(r, schema),
            };
            WorkloadLine {
                query,
                selectivity: Some(t.selectivity),
                weight: Some(t.weight),
                origin: Some(origin_str(t.origin).to_string()),
            }
        })
        .collect()
}

fn range_to_named(q: &RangeQuery, schema: &[AttributeMeta]) -> NamedQuery {
    let predicates = q
        .predicates
        .iter()
        .map(|&(attr, lo, hi)| {
            (schema[attr].name.clone(), RawBounds { lo: lo as f64, hi: hi as f64 })
        })
        .collect();
    NamedQuery::Range { predicates }
}

fn origin_str(o: QueryOrigin) -> &'static str {
    match o {
        QueryOrigin::Workload => "workload",
        QueryOrigin::Augmented => "augmented",
        QueryOrigin::Generated => "generated",
    }
}

fn origin_from(s: &str) -> QueryOrigin {
    match s {
        "workload" => QueryOrigin::Workload,
        "augmented" => QueryOrigin::Augmented,
        _ => QueryOrigin::Generated,
    }
}

/// Workload lines back into a labeled training set. Lines without labels are
/// rejected; range lines carry code bounds for range-mode featurization.
pub fn lines_to_training_set(
    lines: &[WorkloadLine],
    schema: &[AttributeMeta],
    relation_rows: u64,
) -> Result<TrainingSet> {
    let mut queries = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let selectivity = line.selectivity.ok_or_else(|| Error::Csv {
            row: (i + 1) as u64,
            message: "training line lacks a selectivity label".into(),
        })?;
        if selectivity <= 0.0 {
            continue; // flagged zero-selectivity queries stay out of training
        }
        let query = match &line.query {
            NamedQuery::Point { predicates } => Query::Point(resolve_point(predicates, schema)?),
            NamedQuery::Range { predicates } => {
                let mut out = Vec::with_capacity(predicates.len());
                for (name, b) in predicates {
                    let attr = schema.iter().position(|m| &m.name == name).ok_or_else(|| {
                        Error::InvalidQuery(format!("unknown attribute {name:?}"))
                    })?;
                    out.push((attr, b.lo as u32, b.hi as u32));
                }
                out.sort_by_key(|&(a, _, _)| a);
                Query::Range(RangeQuery::new(out))
            }
        };
        queries.push(TrainingQuery {
            query,
            selectivity,
            weight: line.weight.unwrap_or(1.0),
            origin: origin_from(line.origin.as_deref().unwrap_or("generated")),
        });
    }
    Ok(TrainingSet { queries, relation_rows })
}

/// Training sets also serialize as CSV: one column per attribute
/// (`*` wildcard, a raw value, or `lo..hi`), then selectivity, weight and
/// origin columns.
pub fn write_training_csv(path: &Path, set: &TrainingSet, schema: &[AttributeMeta]) -> Result<()> {
    let mut out = String::new();
    let names: Vec<&str> = schema.iter().map(|m| m.name.as_str()).collect();
    out.push_str(&names.join(","));
    out.push_str(",selectivity,weight,origin\n");
    for t in &set.queries {
        let mut cells = vec!["*".to_string(); schema.len()];
        match &t.query {
            Query::Point(p) => {
                for &(attr, code) in &p.predicates {
                    cells[attr] =
                        schema[attr].decode(code).unwrap_or_else(|| code.to_string());
                }
            }
            Query::Range(r) => {
                for &(attr, lo, hi) in &r.predicates {
                    cells[attr] = format!("{lo}..{hi}");
                }
            }
        }
        out.push_str(&cells.join(","));
        out.push_str(&format!(",{},{},{}\n", t.selectivity, t.weight, origin_str(t.origin)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{EncodingMode, TupleCodec};
    use crate::made::{train, MadeTrainConfig};
    use crate::relation::SchemaHints;

    fn small_relation() -> Relation {
        Relation::ingest_csv_reader(
            "city,visits\nrome,3\nparis,5\nrome,9\n".as_bytes(),
            &SchemaHints::new(),
        )
        .unwrap()
    }

    #[test]
    fn relation_file_round_trips() {
        let rel = small_relation();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rel.json");
        RelationFile::new(rel.clone()).save(&path).unwrap();
        let loaded = RelationFile::load(&path).unwrap();
        assert_eq!(loaded.relation.n(), rel.n());
        assert_eq!(loaded.schema_fingerprint, schema_fingerprint(rel.schema()));
    }

    #[test]
    fn model_file_save_load_save_is_byte_identical() {
        let rel = small_relation();
        let codec = TupleCodec::new(rel.schema(), EncodingMode::Binary);
        let config = MadeTrainConfig {
            kappa: 1,
            hidden: vec![4],
            epochs: 2,
            seed: 5,
            ..MadeTrainConfig::default()
        };
        let ens = train(&rel, &codec, &config, None).unwrap();
        let meta =
            TrainMeta { seed: 5, epochs: 2, created_unix: 1234, loss_curves: ens.loss_curves.clone() };
        let file = ModelFile::for_made(rel.schema(), ens, meta);

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.json");
        let p2 = dir.path().join("m2.json");
        file.save(&p1).unwrap();
        let loaded = ModelFile::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn unknown_versions_fail_closed() {
        let rel = small_relation();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rel.json");
        let mut file = RelationFile::new(rel);
        file.format_version = 99;
        file.save(&path).unwrap();
        let err = RelationFile::load(&path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 99, .. }));
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let rel = small_relation();
        let other = Relation::ingest_csv_reader(
            "city,visits\nrome,3\nparis,5\nmilan,9\n".as_bytes(),
            &SchemaHints::new(),
        )
        .unwrap();
        let codec = TupleCodec::new(rel.schema(), EncodingMode::Binary);
        let config =
            MadeTrainConfig { kappa: 1, hidden: vec![4], epochs: 0, ..MadeTrainConfig::default() };
        let ens = train(&rel, &codec, &config, None).unwrap();
        let meta = TrainMeta { seed: 0, epochs: 0, created_unix: 0, loss_curves: vec![] };
        let file = ModelFile::for_made(rel.schema(), ens, meta);
        assert!(file.check_schema(rel.schema()).is_ok());
        assert!(file.check_schema(other.schema()).is_err());
    }

    #[test]
    fn workload_lines_round_trip_with_names() {
        let rel = small_relation();
        let q = PointQuery::new(vec![(0, 0), (1, 1)]);
        let lines = vec![WorkloadLine {
            query: point_to_named(&q, rel.schema()),
            selectivity: Some(1.0 / 3.0),
            weight: None,
            origin: None,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wl.jsonl");
        write_workload(&path, &lines).unwrap();
        let read = read_workload(&path).unwrap();
        assert_eq!(read, lines);
        match &read[0].query {
            NamedQuery::Point { predicates } => {
                let back = resolve_point(predicates, rel.schema()).unwrap();
                assert_eq!(back, q);
            }
            _ => panic!("expected point query"),
        }
    }

    #[test]
    fn malformed_workload_line_cites_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wl.jsonl");
        std::fs::write(
            &path,
            "{\"type\":\"point\",\"predicates\":{\"city\":\"rome\"}}\nnot json\n",
        )
        .unwrap();
        let err = read_workload(&path).unwrap_err();
        match err {
            Error::Csv { row, .. } => assert_eq!(row, 2),
            other => panic!("expected line-cited error, got {other}"),
        }
    }

    #[test]
    fn unknown_values_are_rejected_at_resolution() {
        let rel = small_relation();
        let mut predicates = BTreeMap::new();
        predicates.insert("city".to_string(), RawValue::Text("atlantis".into()));
        let err = resolve_point(&predicates, rel.schema()).unwrap_err();
        assert!(matches!(err, Error::UnknownValue { .. }));
    }

    #[test]
    fn training_csv_lists_queries_with_labels() {
        let rel = small_relation();
        let set = TrainingSet {
            queries: vec![TrainingQuery {
                query: Query::Point(PointQuery::new(vec![(0, 0)])),
                selectivity: 2.0 / 3.0,
                weight: 1.0,
                origin: QueryOrigin::Generated,
            }],
            relation_rows: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        write_training_csv(&path, &set, rel.schema()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("city,visits,selectivity,weight,origin\n"));
        assert!(text.contains("rome,*,"));
    }
}
