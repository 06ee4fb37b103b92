//! The supervised estimator: a 2-layer regressor from query features to
//! transformed selectivity, the training-set generators, and both
//! incremental scenarios.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{FeaturizationMode, QueryFeaturizer};
use crate::error::{Error, Result};
use crate::neural::{
    mse_loss, qerror_loss, Activation, AdamConfig, AdamState, DropoutPlan, Gradients, Network,
    QErrorForm,
};
pub use crate::neural::SelTransform;
use crate::relation::{PointQuery, Query, RangeQuery, Relation};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryOrigin {
    Workload,
    Augmented,
    Generated,
}

/// One labeled training query. Zero-selectivity queries are excluded from
/// training because the log transform cannot represent them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingQuery {
    pub query: Query,
    pub selectivity: f64,
    pub weight: f64,
    pub origin: QueryOrigin,
}

/// A labeled training set plus the row count its labels were computed on
/// (which pins the estimate clamp floor).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSet {
    pub queries: Vec<TrainingQuery>,
    pub relation_rows: u64,
}

/// Fit the log + min-max transform and return the transformed values.
pub fn fit_transform(selectivities: &[f64]) -> Result<(SelTransform, Vec<f64>)> {
    let t = SelTransform::fit(selectivities)?;
    let transformed = selectivities.iter().map(|&s| t.transform(s)).collect();
    Ok((t, transformed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisedLoss {
    Mse,
    QError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub loss: SupervisedLoss,
    pub qerror_form: QErrorForm,
    pub dropout: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            hidden: vec![100, 100],
            loss: SupervisedLoss::QError,
            qerror_form: QErrorForm::Max,
            dropout: 0.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    /// Fine-tuning defaults: a tenth of the learning rate, 20 epochs,
    /// dropout 0.1.
    pub fn incremental_from(&self) -> Self {
        Self {
            learning_rate: self.learning_rate * 0.1,
            epochs: 20,
            dropout: 0.1,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupervisedModel {
    pub featurizer: QueryFeaturizer,
    pub mode: FeaturizationMode,
    pub network: Network,
    pub transform: SelTransform,
    pub loss: SupervisedLoss,
    pub qerror_form: QErrorForm,
    /// Estimate clamp floor, `1 / (10 n)` of the labeling relation.
    pub eps_sel: f64,
    pub train_curve: Vec<f64>,
    pub validation_curve: Vec<f64>,
}

impl SupervisedModel {
    /// Featurize → forward → inverse transform, clamped into `[eps_sel, 1]`.
    pub fn estimate(&self, q: &Query) -> Result<f64> {
        let features = self.featurize(q)?;
        let out = self.network.forward(&features)?;
        Ok(self.transform.inverse(out[0]).clamp(self.eps_sel, 1.0))
    }

    fn featurize(&self, q: &Query) -> Result<Vec<f64>> {
        match (self.mode, q) {
            (FeaturizationMode::Point, Query::Point(p)) => self.featurizer.featurize_point_query(p),
            (FeaturizationMode::Point, Query::Range(_)) => Err(Error::InvalidQuery(
                "model was trained on point features and cannot estimate range queries".into(),
            )),
            (FeaturizationMode::Range, q) => {
                self.featurizer.featurize_range_query(&as_range(q))
            }
        }
    }
}

fn as_range(q: &Query) -> RangeQuery {
    match q {
        Query::Range(r) => r.clone(),
        Query::Point(p) => {
            RangeQuery::new(p.predicates.iter().map(|&(a, c)| (a, c, c)).collect())
        }
    }
}

/// Generate a labeled training set without a workload: every 1-predicate
/// query first, then random multi-predicate queries whose values come from
/// uniformly drawn rows (so queries arrive proportional to their
/// selectivity), de-duplicated and labeled by the oracle.
pub fn generate_training_set(
    relation: &Relation,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<TrainingSet> {
    let m = relation.num_attributes();
    let n = relation.n();
    let mut queries = Vec::new();
    let mut seen: std::collections::HashSet<Vec<(usize, u32)>> = std::collections::HashSet::new();

    let one_pred_total: usize =
        relation.schema().iter().map(|a| a.domain_size as usize).sum();
    if budget < one_pred_total {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} below the {one_pred_total} one-predicate queries; raise it to at least {one_pred_total}"
        )));
    }
    for attr in 0..m {
        for code in 0..relation.attribute(attr).domain_size {
            let q = PointQuery::new(vec![(attr, code)]);
            let s = relation.count_point(&q) as f64 / n as f64;
            if s > 0.0 {
                seen.insert(q.predicates.clone());
                queries.push(TrainingQuery {
                    query: Query::Point(q),
                    selectivity: s,
                    weight: 1.0,
                    origin: QueryOrigin::Generated,
                });
            }
        }
    }

    if queries.len() < budget && m < 2 {
        return Err(Error::InvalidArgument(
            "cannot generate multi-predicate queries on a single-attribute relation".into(),
        ));
    }
    let mut attempts = 0usize;
    let max_attempts = 200 * budget.max(1);
    while queries.len() < budget {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "query space exhausted after {attempts} draws ({} of {budget} generated)",
                queries.len()
            )));
        }
        let k = rng.random_range(2..=m);
        let attrs = rand::seq::index::sample(rng, m, k);
        let row = rng.random_range(0..n);
        let mut predicates: Vec<(usize, u32)> =
            attrs.iter().map(|a| (a, relation.code(row, a))).collect();
        predicates.sort_by_key(|&(a, _)| a);
        if !seen.insert(predicates.clone()) {
            continue;
        }
        let q = PointQuery::new(predicates);
        let s = relation.count_point(&q) as f64 / n as f64;
        debug_assert!(s > 0.0, "values copied from a real row always match it");
        queries.push(TrainingQuery {
            query: Query::Point(q),
            selectivity: s,
            weight: 1.0,
            origin: QueryOrigin::Generated,
        });
    }
    Ok(TrainingSet { queries, relation_rows: n as u64 })
}

/// Attribute, value and predicate-count distributions measured from a
/// workload. Values never seen get a token count of 1.
#[derive(Debug, Clone)]
pub struct WorkloadStats {
    /// Normalized over attributes that occur at least once.
    pub attr_weights: Vec<f64>,
    /// Per attribute, normalized over the whole domain with the token count.
    pub value_weights: Vec<Vec<f64>>,
    /// Normalized histogram over observed predicate counts (index = count).
    pub predicate_count_weights: Vec<f64>,
}

pub fn workload_stats(relation: &Relation, workload: &[PointQuery]) -> Result<WorkloadStats> {
    let m = relation.num_attributes();
    let mut attr_counts = vec![0u64; m];
    let mut value_counts: Vec<Vec<u64>> = relation
        .schema()
        .iter()
        .map(|a| vec![0u64; a.domain_size as usize])
        .collect();
    let mut pred_counts = vec![0u64; m + 1];
    for q in workload {
        relation.validate_point(q)?;
        pred_counts[q.predicates.len()] += 1;
        for &(attr, code) in &q.predicates {
            attr_counts[attr] += 1;
            value_counts[attr][code as usize] += 1;
        }
    }
    let attr_total: u64 = attr_counts.iter().sum();
    let attr_weights = attr_counts
        .iter()
        .map(|&c| if attr_total > 0 { c as f64 / attr_total as f64 } else { 0.0 })
        .collect();
    let value_weights = value_counts
        .iter()
        .map(|counts| {
            let with_token: Vec<f64> =
                counts.iter().map(|&c| if c == 0 { 1.0 } else { c as f64 }).collect();
            let total: f64 = with_token.iter().sum();
            with_token.iter().map(|&c| c / total).collect()
        })
        .collect();
    let pred_total: u64 = pred_counts.iter().sum();
    let predicate_count_weights = pred_counts
        .iter()
        .map(|&c| if pred_total > 0 { c as f64 / pred_total as f64 } else { 0.0 })
        .collect();
    Ok(WorkloadStats { attr_weights, value_weights, predicate_count_weights })
}

/// Augment a workload up to `budget` total queries by sampling new distinct
/// queries from the distributions the workload induces. Workload queries
/// keep weight 1; augmented queries get `|Q| / |Q'|` (capped at 1). Queries
/// whose oracle selectivity is zero are skipped.
pub fn augment_workload(
    relation: &Relation,
    workload: &[PointQuery],
    budget: usize,
    rng: &mut impl Rng,
) -> Result<TrainingSet> {
    if workload.is_empty() {
        return Err(Error::InvalidArgument("workload is empty".into()));
    }
    if budget < workload.len() {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} smaller than the workload ({} queries)",
            workload.len()
        )));
    }
    let stats = workload_stats(relation, workload)?;
    let n = relation.n();

    let mut seen: std::collections::HashSet<Vec<(usize, u32)>> = std::collections::HashSet::new();
    let mut queries = Vec::with_capacity(budget);
    for q in workload {
        let mut canonical = q.predicates.clone();
        canonical.sort_by_key(|&(a, _)| a);
        seen.insert(canonical);
        let s = relation.count_point(q) as f64 / n as f64;
        if s > 0.0 {
            queries.push(TrainingQuery {
                query: Query::Point(q.clone()),
                selectivity: s,
                weight: 1.0,
                origin: QueryOrigin::Workload,
            });
        }
    }

    let target_new = budget - workload.len();
    let mut fresh: Vec<TrainingQuery> = Vec::with_capacity(target_new);
    let mut attempts = 0usize;
    let max_attempts = 500 * budget.max(1);
    while fresh.len() < target_new {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "workload augmentation exhausted after {attempts} draws ({} of {target_new})",
                fresh.len()
            )));
        }
        let k = draw_categorical(&stats.predicate_count_weights, rng);
        if k == 0 {
            continue;
        }
        let Some(attrs) = weighted_sample_without_replacement(&stats.attr_weights, k, rng) else {
            continue;
        };
        let mut predicates: Vec<(usize, u32)> = attrs
            .iter()
            .map(|&attr| (attr, draw_categorical(&stats.value_weights[attr], rng) as u32))
            .collect();
        predicates.sort_by_key(|&(a, _)| a);
        if !seen.insert(predicates.clone()) {
            continue;
        }
        let q = PointQuery::new(predicates);
        let s = relation.count_point(&q) as f64 / n as f64;
        if s == 0.0 {
            continue;
        }
        fresh.push(TrainingQuery {
            query: Query::Point(q),
            selectivity: s,
            weight: 1.0, // rewritten below once |Q'| is known
            origin: QueryOrigin::Augmented,
        });
    }
    let aug_weight = if fresh.is_empty() {
        1.0
    } else {
        (workload.len() as f64 / fresh.len() as f64).min(1.0)
    };
    for t in &mut fresh {
        t.weight = aug_weight;
    }
    queries.extend(fresh);
    Ok(TrainingSet { queries, relation_rows: n as u64 })
}

fn draw_categorical(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        cum += w;
        if u < cum {
            return i;
        }
    }
    last_positive
}

fn weighted_sample_without_replacement(
    weights: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Option<Vec<usize>> {
    if weights.iter().filter(|&&w| w > 0.0).count() < k {
        return None;
    }
    let mut remaining = weights.to_vec();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut cum = 0.0;
        let mut chosen = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            cum += w;
            if u < cum {
                chosen = Some(i);
                break;
            }
            chosen = Some(i);
        }
        let i = chosen?;
        picked.push(i);
        remaining[i] = 0.0;
    }
    Some(picked)
}

/// Range-query training set built from equi-depth cut-points: every
/// 1-predicate code range between bucket boundaries, then cartesian products
/// for 2 predicates and random intervals beyond.
pub fn generate_range_training_set(
    relation: &Relation,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<TrainingSet> {
    let bucketized: Vec<usize> = (0..relation.num_attributes())
        .filter(|&a| relation.attribute(a).bucketization.is_some())
        .collect();
    if bucketized.is_empty() {
        return Err(Error::InvalidArgument(
            "no bucketized attributes to derive range cut-points from".into(),
        ));
    }
    let n = relation.n();
    let mut seen: std::collections::HashSet<Vec<(usize, u32, u32)>> =
        std::collections::HashSet::new();
    let mut queries = Vec::new();
    let push = |preds: Vec<(usize, u32, u32)>,
                    queries: &mut Vec<TrainingQuery>,
                    seen: &mut std::collections::HashSet<Vec<(usize, u32, u32)>>|
     -> Result<bool> {
        if !seen.insert(preds.clone()) {
            return Ok(false);
        }
        let q = RangeQuery::new(preds);
        let s = relation.true_selectivity(&Query::Range(q.clone()))?;
        if s == 0.0 {
            return Ok(false);
        }
        queries.push(TrainingQuery {
            query: Query::Range(q),
            selectivity: s,
            weight: 1.0,
            origin: QueryOrigin::Generated,
        });
        Ok(true)
    };

    // all single-attribute bucket-code intervals
    let mut single: Vec<(usize, u32, u32)> = Vec::new();
    for &attr in &bucketized {
        let ds = relation.attribute(attr).domain_size;
        for lo in 0..ds {
            for hi in lo..ds {
                single.push((attr, lo, hi));
            }
        }
    }
    for &(attr, lo, hi) in &single {
        push(vec![(attr, lo, hi)], &mut queries, &mut seen)?;
        if queries.len() >= budget {
            return Ok(TrainingSet { queries, relation_rows: n as u64 });
        }
    }

    let mut attempts = 0usize;
    let max_attempts = 500 * budget.max(1);
    while queries.len() < budget {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "range query space exhausted after {attempts} draws ({} of {budget})",
                queries.len()
            )));
        }
        let k = rng.random_range(2..=bucketized.len().max(2)).min(bucketized.len());
        let pick = rand::seq::index::sample(rng, bucketized.len(), k);
        let mut preds: Vec<(usize, u32, u32)> = Vec::with_capacity(k);
        for idx in pick.iter() {
            let attr = bucketized[idx];
            let ds = relation.attribute(attr).domain_size;
            let a = rng.random_range(0..ds);
            let b = rng.random_range(0..ds);
            preds.push((attr, a.min(b), a.max(b)));
        }
        preds.sort_by_key(|&(a, _, _)| a);
        push(preds, &mut queries, &mut seen)?;
    }
    Ok(TrainingSet { queries, relation_rows: n as u64 })
}

/// Train the regressor with minibatch Adam on the per-query weighted loss.
pub fn train_supervised(
    set: &TrainingSet,
    featurizer: &QueryFeaturizer,
    config: &SupervisedConfig,
) -> Result<SupervisedModel> {
    if set.queries.len() < 2 {
        return Err(Error::InvalidArgument("training set needs at least 2 queries".into()));
    }
    let sels: Vec<f64> = set.queries.iter().map(|t| t.selectivity).collect();
    let (transform, _) = fit_transform(&sels)?;
    let eps_sel = 1.0 / (10.0 * set.relation_rows as f64);
    let mode = if set.queries.iter().any(|t| matches!(t.query, Query::Range(_))) {
        FeaturizationMode::Range
    } else {
        FeaturizationMode::Point
    };
    let features: Vec<Vec<f64>> = set
        .queries
        .iter()
        .map(|t| match mode {
            FeaturizationMode::Point => match &t.query {
                Query::Point(p) => featurizer.featurize_point_query(p),
                Query::Range(_) => unreachable!("mode selection covers ranges"),
            },
            FeaturizationMode::Range => featurizer.featurize_range_query(&as_range(&t.query)),
        })
        .collect::<Result<_>>()?;

    let mut sizes = vec![featurizer.width(mode)];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(1);
    let mut init_rng = rng::stream(config.seed, "supervised/init", 0);
    let mut network = Network::init(&sizes, Activation::Relu, Activation::Sigmoid, &mut init_rng);
    let (model_core, train_curve, validation_curve) = fit_network(
        &mut network,
        &features,
        set,
        &transform,
        eps_sel,
        config,
        rng::stream(config.seed, "supervised/train", 0),
    )?;
    Ok(SupervisedModel {
        featurizer: featurizer.clone(),
        mode,
        network: model_core,
        transform,
        loss: config.loss,
        qerror_form: config.qerror_form,
        eps_sel,
        train_curve,
        validation_curve,
    })
}

/// Fine-tune an existing model on new queries only, at the reduced rate with
/// dropout. New labels go through the existing transform; abs-logs outside
/// its fitted range clamp to the boundary.
pub fn incremental_train_supervised(
    model: &SupervisedModel,
    new_set: &TrainingSet,
    config: &SupervisedConfig,
) -> Result<SupervisedModel> {
    if new_set.queries.is_empty() {
        return Ok(model.clone());
    }
    let features: Vec<Vec<f64>> = new_set
        .queries
        .iter()
        .map(|t| model.featurize(&t.query))
        .collect::<Result<_>>()?;
    let expected = model.network.input_dim();
    if features.iter().any(|f| f.len() != expected) {
        return Err(Error::SchemaMismatch("featurizer mismatch with the model".into()));
    }
    let mut network = model.network.clone();
    let (network, train_curve, validation_curve) = fit_network(
        &mut network,
        &features,
        new_set,
        &model.transform,
        model.eps_sel,
        config,
        rng::stream(config.seed, "supervised/incremental", 0),
    )?;
    let mut out = model.clone();
    out.network = network;
    out.train_curve.extend(train_curve);
    out.validation_curve.extend(validation_curve);
    Ok(out)
}

fn fit_network(
    network: &mut Network,
    features: &[Vec<f64>],
    set: &TrainingSet,
    transform: &SelTransform,
    eps_sel: f64,
    config: &SupervisedConfig,
    mut train_rng: rand_chacha::ChaCha12Rng,
) -> Result<(Network, Vec<f64>, Vec<f64>)> {
    use rand::seq::SliceRandom;
    let n = features.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut train_rng);
    let val_len = if n >= 20 {
        ((n as f64 * config.validation_fraction) as usize).min(n / 2)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(val_len);

    // clamped targets for the MSE path; the q-error path consumes raw labels
    let mse_targets: Vec<f64> =
        set.queries.iter().map(|t| transform.transform_clamped(t.selectivity)).collect();
    let raw_targets: Vec<f64> = set
        .queries
        .iter()
        .map(|t| {
            let a = t.selectivity.log10().abs().clamp(transform.min_abslog, transform.max_abslog);
            10f64.powf(-a)
        })
        .collect();
    let weights: Vec<f64> = set.queries.iter().map(|t| t.weight).collect();

    let dropout_plan = (config.dropout > 0.0).then(|| DropoutPlan::all_units(network, config.dropout));
    let mut adam = AdamState::new(network, AdamConfig {
        alpha: config.learning_rate,
        ..AdamConfig::default()
    });

    let sample_loss_grad = |pred: f64, i: usize| -> Result<(f64, f64)> {
        match config.loss {
            SupervisedLoss::Mse => {
                let (l, g) = mse_loss(&[pred], &[mse_targets[i]]);
                Ok((l, g[0]))
            }
            SupervisedLoss::QError => {
                qerror_loss(pred, raw_targets[i], transform, eps_sel, config.qerror_form)
            }
        }
    };

    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut validation_curve = Vec::with_capacity(config.epochs);
    for _epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in crate::neural::minibatches(train_idx.len(), config.batch_size, &mut train_rng)
        {
            let mut grads = Gradients::zeros(network);
            for &bi in &batch {
                let i = train_idx[bi];
                let cache =
                    network.forward_cached(&features[i], dropout_plan.as_ref(), &mut train_rng)?;
                let (loss, grad) = sample_loss_grad(cache.output()[0], i)?;
                epoch_loss += weights[i] * loss;
                grads.add(&network.backward(&cache, &[weights[i] * grad])?);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(network, &grads)?;
        }
        train_curve.push(epoch_loss / train_idx.len().max(1) as f64);

        if !val_idx.is_empty() {
            let mut val_loss = 0.0;
            for &i in val_idx {
                let out = network.forward(&features[i])?;
                let (loss, _) = sample_loss_grad(out[0], i)?;
                val_loss += weights[i] * loss;
            }
            validation_curve.push(val_loss / val_idx.len() as f64);
        }
    }
    Ok((network.clone(), train_curve, validation_curve))
}

/// Recompute labels against an updated relation; queries whose selectivity
/// became zero are dropped and counted.
pub fn refresh_selectivities(
    set: &TrainingSet,
    relation: &Relation,
) -> Result<(TrainingSet, usize)> {
    let mut queries = Vec::with_capacity(set.queries.len());
    let mut dropped = 0usize;
    for t in &set.queries {
        let s = relation.true_selectivity(&t.query)?;
        if s == 0.0 {
            dropped += 1;
            continue;
        }
        queries.push(TrainingQuery { selectivity: s, ..t.clone() });
    }
    Ok((TrainingSet { queries, relation_rows: relation.n() as u64 }, dropped))
}
