//! One function per subcommand; each is a thin, logged composition of
//! library operations. No command mutates its inputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::json;

use selest::encoding::{QueryFeaturizer, TupleCodec};
use selest::eval::{build_report, AviEstimator, BandConfig, LabeledQuery, SampleEstimator};
use selest::made::{self, MadeEnsemble, MadeTrainConfig};
use selest::persist::{
    self, labeled_to_lines, lines_to_training_set, read_workload, resolve_point,
    resolve_raw_range, training_set_to_lines, write_workload, ModelFile, ModelKind, NamedQuery,
    RelationFile, TrainMeta, WorkloadLine,
};
use selest::range::estimate_bucketed;
use selest::relation::{AttributeKind, AttributeMeta, Relation, SchemaHints};
use selest::supervised::{
    augment_workload, generate_range_training_set, generate_training_set,
    incremental_train_supervised, train_supervised, SupervisedConfig, SupervisedModel,
};
use selest::synth::{synthetic_csv, synthetic_hints, SynthConfig};

use crate::config::RunConfig;

pub fn cmd_synth(rows: usize, seed: u64, output: &Path, hints_out: Option<&Path>) -> anyhow::Result<()> {
    let csv = synthetic_csv(&SynthConfig { rows, seed });
    std::fs::write(output, csv).with_context(|| format!("writing {}", output.display()))?;
    if let Some(hints_path) = hints_out {
        let hints = synthetic_hints();
        std::fs::write(hints_path, serde_json::to_string_pretty(&hints)?)?;
    }
    println!("{}", json!({"wrote": output, "rows": rows, "seed": seed}));
    Ok(())
}

pub fn cmd_ingest(csv: &Path, hints: Option<&Path>, output: &Path) -> anyhow::Result<()> {
    let hints: SchemaHints = match hints {
        None => SchemaHints::new(),
        Some(p) => serde_json::from_str(
            &std::fs::read_to_string(p).with_context(|| format!("reading hints {}", p.display()))?,
        )
        .with_context(|| format!("parsing hints {}", p.display()))?,
    };
    let relation = Relation::ingest_csv(csv, &hints)?;
    let file = RelationFile::new(relation);
    file.save(output)?;
    println!(
        "{}",
        json!({
            "wrote": output,
            "rows": file.relation.n(),
            "attributes": file.relation.num_attributes(),
            "fingerprint": file.schema_fingerprint,
        })
    );
    Ok(())
}

pub fn cmd_gen_workload(
    relation_path: &Path,
    kind: &str,
    budget: usize,
    base_workload: Option<&Path>,
    csv_out: Option<&Path>,
    output: &Path,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let relation = RelationFile::load(relation_path)?.relation;
    let mut rng = selest::rng::stream(config.seed, "gen-workload", 0);
    let lines: Vec<WorkloadLine> = match kind {
        "test" => {
            let labeled = selest::eval::generate_test_workload(&relation, budget, &mut rng)?;
            labeled_to_lines(&labeled, relation.schema())
        }
        "train" => {
            let set = generate_training_set(&relation, budget, &mut rng)?;
            if let Some(p) = csv_out {
                persist::write_training_csv(p, &set, relation.schema())?;
            }
            training_set_to_lines(&set, relation.schema())
        }
        "range-train" => {
            let set = generate_range_training_set(&relation, budget, &mut rng)?;
            if let Some(p) = csv_out {
                persist::write_training_csv(p, &set, relation.schema())?;
            }
            training_set_to_lines(&set, relation.schema())
        }
        "augment" => {
            let base = base_workload
                .ok_or_else(|| anyhow::anyhow!("--workload is required for kind=augment"))?;
            let queries = point_queries_from_lines(&read_workload(base)?, relation.schema())?;
            let set = augment_workload(&relation, &queries, budget, &mut rng)?;
            if let Some(p) = csv_out {
                persist::write_training_csv(p, &set, relation.schema())?;
            }
            training_set_to_lines(&set, relation.schema())
        }
        other => bail!("unknown workload kind {other:?} (expected train|test|augment|range-train)"),
    };
    write_workload(output, &lines)?;
    println!("{}", json!({"wrote": output, "kind": kind, "queries": lines.len()}));
    Ok(())
}

fn point_queries_from_lines(
    lines: &[WorkloadLine],
    schema: &[AttributeMeta],
) -> anyhow::Result<Vec<selest::PointQuery>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| match &line.query {
            NamedQuery::Point { predicates } => Ok(resolve_point(predicates, schema)?),
            NamedQuery::Range { .. } => {
                bail!("line {}: range queries are not usable here", i + 1)
            }
        })
        .collect()
}

pub fn cmd_train(
    kind: &str,
    relation_path: &Path,
    workload: Option<&Path>,
    output: &Path,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let relation = RelationFile::load(relation_path)?.relation;
    let model_file = match kind {
        "made" => {
            for meta in relation.schema() {
                if meta.kind == AttributeKind::Numeric && meta.bucketization.is_none() {
                    bail!(
                        "numeric attribute {:?} is not discretized; re-ingest with a bucket hint",
                        meta.name
                    );
                }
            }
            let codec = TupleCodec::new(relation.schema(), config.encoding);
            let constraints = resolve_constraints(&relation, &config.order_constraints)?;
            let train_config = MadeTrainConfig {
                kappa: config.kappa,
                hidden: config.hidden(),
                epochs: config.epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                dropout: 0.0,
                seed: config.seed,
                constraints,
                resample_masks_each_epoch: config.resample_masks_each_epoch,
            };
            let weights = match workload {
                None => None,
                Some(p) => {
                    let queries =
                        point_queries_from_lines(&read_workload(p)?, relation.schema())?;
                    Some(made::tuple_weights_from_workload(&relation, &queries)?)
                }
            };
            let ensemble = made::train(&relation, &codec, &train_config, weights.as_deref())?;
            let meta = TrainMeta {
                seed: config.seed,
                epochs: config.epochs,
                created_unix: persist::build_timestamp(),
                loss_curves: ensemble.loss_curves.clone(),
            };
            ModelFile::for_made(relation.schema(), ensemble, meta)
        }
        "supervised" => {
            let workload = workload
                .ok_or_else(|| anyhow::anyhow!("--workload with labeled queries is required"))?;
            let lines = read_workload(workload)?;
            let set = lines_to_training_set(&lines, relation.schema(), relation.n() as u64)?;
            let featurizer = QueryFeaturizer::new(relation.schema());
            let sup_config = SupervisedConfig {
                epochs: config.epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                hidden: config.hidden(),
                loss: config.loss,
                qerror_form: config.qerror_form,
                dropout: 0.0,
                validation_fraction: config.validation_fraction,
                seed: config.seed,
            };
            let model = train_supervised(&set, &featurizer, &sup_config)?;
            let meta = TrainMeta {
                seed: config.seed,
                epochs: config.epochs,
                created_unix: persist::build_timestamp(),
                loss_curves: vec![model.train_curve.clone(), model.validation_curve.clone()],
            };
            ModelFile::for_supervised(relation.schema(), model, meta)
        }
        other => bail!("unknown model kind {other:?} (expected made|supervised)"),
    };
    model_file.save(output)?;
    println!(
        "{}",
        json!({"wrote": output, "kind": kind, "fingerprint": model_file.schema_fingerprint})
    );
    Ok(())
}

fn resolve_constraints(
    relation: &Relation,
    pairs: &[(String, String)],
) -> anyhow::Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|(a, b)| {
            let ai = relation
                .attribute_index(a)
                .ok_or_else(|| anyhow::anyhow!("unknown attribute {a:?} in order constraint"))?;
            let bi = relation
                .attribute_index(b)
                .ok_or_else(|| anyhow::anyhow!("unknown attribute {b:?} in order constraint"))?;
            Ok((ai, bi))
        })
        .collect()
}

/// Estimate one named query with whichever model is loaded.
fn estimate_line(
    line: &WorkloadLine,
    index: usize,
    model: &ModelFile,
    config: &RunConfig,
) -> anyhow::Result<f64> {
    match (&model.kind, &line.query) {
        (ModelKind::Made, NamedQuery::Point { predicates }) => {
            let q = resolve_point(predicates, &model.schema)?;
            let ensemble = model.made.as_ref().expect("validated at load");
            let mut rng = selest::rng::stream(config.seed, "estimate", index as u64);
            Ok(ensemble.point_selectivity(&q, config.sample_budget, &mut rng)?)
        }
        (ModelKind::Made, NamedQuery::Range { predicates }) => {
            let q = resolve_raw_range(predicates, &model.schema)?;
            let ensemble = model.made.as_ref().expect("validated at load");
            let mut rng = selest::rng::stream(config.seed, "estimate", index as u64);
            let budget = config.sample_budget;
            let est = estimate_bucketed(
                |cell| ensemble.point_selectivity(cell, budget, &mut rng),
                &q,
                &model.schema,
                config.enum_cap,
            )?;
            Ok(est)
        }
        (ModelKind::Supervised, NamedQuery::Point { predicates }) => {
            let q = resolve_point(predicates, &model.schema)?;
            let sup = model.supervised.as_ref().expect("validated at load");
            Ok(sup.estimate(&selest::Query::Point(q))?)
        }
        (ModelKind::Supervised, NamedQuery::Range { predicates }) => {
            let q = resolve_raw_range(predicates, &model.schema)?;
            let coded = raw_range_to_codes(&q, &model.schema)?;
            let sup = model.supervised.as_ref().expect("validated at load");
            Ok(sup.estimate(&selest::Query::Range(coded))?)
        }
    }
}

/// Map raw numeric bounds onto bucket codes for featurization.
fn raw_range_to_codes(
    q: &selest::RawRangeQuery,
    schema: &[AttributeMeta],
) -> anyhow::Result<selest::RangeQuery> {
    let mut out = Vec::with_capacity(q.predicates.len());
    for &(attr, lb, ub) in &q.predicates {
        let meta = &schema[attr];
        let buckets = meta
            .bucketization
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("attribute {:?} is not bucketized", meta.name))?;
        let lo = buckets.iter().position(|b| b.hi >= lb);
        let hi = buckets.iter().rposition(|b| b.lo <= ub);
        match (lo, hi) {
            (Some(lo), Some(hi)) if lo <= hi => out.push((attr, lo as u32, hi as u32)),
            _ => out.push((attr, 0, 0)),
        }
    }
    Ok(selest::RangeQuery::new(out))
}

pub fn cmd_estimate(
    model_path: &Path,
    queries: &Path,
    output: &Path,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let model = ModelFile::load(model_path)?;
    let lines = read_workload(queries)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(output)?);
    for (i, line) in lines.iter().enumerate() {
        let estimate = estimate_line(line, i, &model, config)
            .with_context(|| format!("query line {}", i + 1))?;
        let record = json!({"query": line.query, "estimate": estimate});
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    println!("{}", json!({"wrote": output, "queries": lines.len()}));
    Ok(())
}

pub fn cmd_evaluate(
    relation_path: &Path,
    workload: &Path,
    models: &[PathBuf],
    avi: bool,
    sample_rate: Option<f64>,
    output_dir: &Path,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let relation = RelationFile::load(relation_path)?.relation;
    let lines = read_workload(workload)?;
    let mut labeled = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let NamedQuery::Point { predicates } = &line.query else {
            bail!("line {}: evaluation workloads are point queries", i + 1);
        };
        let query = resolve_point(predicates, relation.schema())?;
        let selectivity = match line.selectivity {
            Some(s) => s,
            None => relation.true_selectivity(&selest::Query::Point(query.clone()))?,
        };
        labeled.push(LabeledQuery { query, selectivity });
    }
    std::fs::create_dir_all(output_dir)?;
    let bands = BandConfig::default();
    let mut summaries = Vec::new();

    for model_path in models {
        let model = ModelFile::load(model_path)?;
        model.check_schema(relation.schema())?;
        let name = model_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        let estimates: Vec<f64> = match model.kind {
            ModelKind::Made => {
                let ensemble: &MadeEnsemble = model.made.as_ref().expect("validated");
                let queries: Vec<selest::PointQuery> =
                    labeled.iter().map(|l| l.query.clone()).collect();
                ensemble.estimate_workload(&queries, config.sample_budget, config.seed)?
            }
            ModelKind::Supervised => {
                let sup: &SupervisedModel = model.supervised.as_ref().expect("validated");
                labeled
                    .iter()
                    .map(|l| sup.estimate(&selest::Query::Point(l.query.clone())))
                    .collect::<selest::Result<_>>()?
            }
        };
        summaries.push(write_report(&name, &relation, &labeled, &estimates, &bands, output_dir)?);
    }

    if avi {
        let est = AviEstimator::new(&relation);
        let estimates: Vec<f64> = labeled
            .iter()
            .map(|l| est.estimate(&l.query))
            .collect::<selest::Result<_>>()?;
        summaries.push(write_report("avi", &relation, &labeled, &estimates, &bands, output_dir)?);
    }
    if let Some(rate) = sample_rate {
        let est = SampleEstimator::new(&relation, rate, config.seed)?;
        let estimates: Vec<f64> = labeled.iter().map(|l| est.estimate(&l.query).0).collect();
        summaries.push(write_report("sample", &relation, &labeled, &estimates, &bands, output_dir)?);
    }
    if summaries.is_empty() {
        bail!("nothing to evaluate: pass --model, --avi or --sample-rate");
    }
    for line in &summaries {
        println!("{line}");
    }
    Ok(())
}

fn write_report(
    name: &str,
    relation: &Relation,
    labeled: &[LabeledQuery],
    estimates: &[f64],
    bands: &BandConfig,
    output_dir: &Path,
) -> anyhow::Result<String> {
    let report = build_report(name, relation, labeled, estimates, bands)?;
    let json_path = output_dir.join(format!("{name}.report.json"));
    let csv_path = output_dir.join(format!("{name}.summary.csv"));
    std::fs::write(&json_path, report.to_json_string()?)?;
    std::fs::write(&csv_path, report.summary_csv())?;
    let median = report.overall_median().unwrap_or(f64::NAN);
    Ok(json!({
        "estimator": name,
        "queries": report.total_queries,
        "zero_selectivity": report.zero_selectivity_queries,
        "median_qerror": median,
        "report": json_path,
    })
    .to_string())
}

pub fn cmd_incremental(
    model_path: &Path,
    new_rows: Option<&Path>,
    new_queries: Option<&Path>,
    output: &Path,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let model = ModelFile::load(model_path)?;
    let updated = match (model.kind, new_rows, new_queries) {
        (ModelKind::Made, Some(rows_path), None) => {
            let file = std::fs::File::open(rows_path)
                .with_context(|| format!("opening {}", rows_path.display()))?;
            let batch = Relation::ingest_csv_against(&model.schema, file)?;
            let rows: Vec<Vec<u32>> = (0..batch.n()).map(|r| batch.tuple(r)).collect();
            let ensemble = model.made.as_ref().expect("validated");
            let train_config = MadeTrainConfig {
                kappa: ensemble.members.len(),
                hidden: config.hidden(),
                epochs: config.incremental_epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate * config.incremental_rate_scale,
                dropout: config.dropout,
                seed: config.seed,
                constraints: Vec::new(),
                resample_masks_each_epoch: false,
            };
            let tuned = made::incremental_train(ensemble, &rows, &train_config)?;
            let meta = TrainMeta {
                seed: config.seed,
                epochs: config.incremental_epochs,
                created_unix: persist::build_timestamp(),
                loss_curves: tuned.loss_curves.clone(),
            };
            ModelFile::for_made(&model.schema, tuned, meta)
        }
        (ModelKind::Supervised, None, Some(queries_path)) => {
            let lines = read_workload(queries_path)?;
            let set = lines_to_training_set(&lines, &model.schema, 0)?;
            let sup = model.supervised.as_ref().expect("validated");
            let sup_config = SupervisedConfig {
                epochs: config.incremental_epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate * config.incremental_rate_scale,
                hidden: config.hidden(),
                loss: sup.loss,
                qerror_form: sup.qerror_form,
                dropout: config.dropout,
                validation_fraction: 0.0,
                seed: config.seed,
            };
            let tuned = incremental_train_supervised(sup, &set, &sup_config)?;
            let meta = TrainMeta {
                seed: config.seed,
                epochs: config.incremental_epochs,
                created_unix: persist::build_timestamp(),
                loss_curves: vec![tuned.train_curve.clone()],
            };
            ModelFile::for_supervised(&model.schema, tuned, meta)
        }
        (ModelKind::Made, _, _) => bail!("a density model takes --new-rows (a CSV)"),
        (ModelKind::Supervised, _, _) => {
            bail!("a supervised model takes --new-queries (labeled JSONL)")
        }
    };
    updated.save(output)?;
    println!("{}", json!({"wrote": output}));
    Ok(())
}
