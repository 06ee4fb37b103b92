//! Evaluation: the q-error metric, test-workload construction, classical
//! baselines, and grouped percentile reports.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{joint_entropy, jpd_size, PointQuery, Relation};

/// `max(s/ŝ, ŝ/s)`. Both sides must be positive; estimators are responsible
/// for flooring their outputs (see the report builder's clamp policy).
pub fn qerror(true_sel: f64, estimate: f64) -> Result<f64> {
    if true_sel <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "q-error undefined for true selectivity {true_sel}"
        )));
    }
    if estimate <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "q-error undefined for estimate {estimate}; clamp it first"
        )));
    }
    Ok((true_sel / estimate).max(estimate / true_sel))
}

/// A test query with its oracle label. Zero-selectivity queries are kept and
/// flagged by their label; they stress estimators but stay out of q-error
/// aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: PointQuery,
    pub selectivity: f64,
}

/// Build a test workload split equally over predicate counts `1..=m`, then
/// equally over the attribute combinations of each size (remainders
/// round-robin), with distinct value tuples per combination. Combinations
/// whose domain cannot fill their quota contribute their whole space and the
/// leftover spreads to combinations with room.
pub fn generate_test_workload(
    relation: &Relation,
    total: usize,
    rng: &mut impl Rng,
) -> Result<Vec<LabeledQuery>> {
    let m = relation.num_attributes();
    if total < m {
        return Err(Error::InvalidArgument(format!(
            "workload size {total} below the number of attributes {m}"
        )));
    }
    let base = total / m;
    let rem = total % m;
    let mut out = Vec::with_capacity(total);
    for k in 1..=m {
        let quota_k = base + if k <= rem { 1 } else { 0 };
        let combos = combinations(m, k);
        let mut assigned = allocate_quota(quota_k, &combos, relation);
        for (combo, want) in combos.iter().zip(assigned.iter_mut()) {
            if *want == 0 {
                continue;
            }
            for values in distinct_value_tuples(relation, combo, *want, rng) {
                let q = PointQuery::new(combo.iter().cloned().zip(values).collect());
                let s = relation.count_point(&q) as f64 / relation.n() as f64;
                out.push(LabeledQuery { query: q, selectivity: s });
            }
        }
    }
    Ok(out)
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn recur(start: usize, m: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..m {
            current.push(i);
            recur(i + 1, m, k, current, out);
            current.pop();
        }
    }
    recur(0, m, k, &mut current, &mut out);
    out
}

/// Equal split with round-robin remainder, then capacity capping with the
/// leftover redistributed to combinations that still have room.
fn allocate_quota(quota: usize, combos: &[Vec<usize>], relation: &Relation) -> Vec<usize> {
    let caps: Vec<u128> = combos
        .iter()
        .map(|c| jpd_size(relation.schema(), c).unwrap_or(u128::MAX))
        .collect();
    let n = combos.len();
    let base = quota / n;
    let rem = quota % n;
    let mut assigned: Vec<usize> = (0..n)
        .map(|i| {
            let want = base + if i < rem { 1 } else { 0 };
            (want as u128).min(caps[i]) as usize
        })
        .collect();
    let mut leftover = quota - assigned.iter().sum::<usize>();
    while leftover > 0 {
        let mut progressed = false;
        for i in 0..n {
            if leftover == 0 {
                break;
            }
            if (assigned[i] as u128) < caps[i] {
                assigned[i] += 1;
                leftover -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break; // every combination is saturated
        }
    }
    assigned
}

/// `count` distinct value tuples over the given attributes, drawn without
/// replacement from the observed domains.
fn distinct_value_tuples(
    relation: &Relation,
    attrs: &[usize],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<u32>> {
    let sizes: Vec<u32> = attrs.iter().map(|&a| relation.attribute(a).domain_size).collect();
    let space: u128 = sizes.iter().map(|&s| s as u128).product();
    let count = count.min(space.min(usize::MAX as u128) as usize);
    // dense quotas enumerate and shuffle; sparse quotas rejection-sample
    if (count as u128) * 3 >= space {
        let mut all = Vec::with_capacity(space as usize);
        let mut tuple = vec![0u32; sizes.len()];
        loop {
            all.push(tuple.clone());
            let mut i = 0;
            loop {
                if i == tuple.len() {
                    use rand::seq::SliceRandom;
                    all.shuffle(rng);
                    all.truncate(count);
                    return all;
                }
                tuple[i] += 1;
                if tuple[i] < sizes[i] {
                    break;
                }
                tuple[i] = 0;
                i += 1;
            }
        }
    }
    let mut seen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let tuple: Vec<u32> = sizes.iter().map(|&s| rng.random_range(0..s)).collect();
        if seen.insert(tuple.clone()) {
            out.push(tuple);
        }
    }
    out
}

/// Attribute-value-independence baseline: the product of per-attribute
/// marginal frequencies; wildcards contribute factor 1.
#[derive(Debug, Clone)]
pub struct AviEstimator {
    marginals: Vec<Vec<f64>>,
}

impl AviEstimator {
    pub fn new(relation: &Relation) -> Self {
        let n = relation.n() as f64;
        let marginals = (0..relation.num_attributes())
            .map(|attr| {
                let mut counts = vec![0u64; relation.attribute(attr).domain_size as usize];
                for row in 0..relation.n() {
                    counts[relation.code(row, attr) as usize] += 1;
                }
                counts.iter().map(|&c| c as f64 / n).collect()
            })
            .collect();
        Self { marginals }
    }

    pub fn estimate(&self, q: &PointQuery) -> Result<f64> {
        let mut p = 1.0;
        for &(attr, code) in &q.predicates {
            let table = self.marginals.get(attr).ok_or_else(|| {
                Error::InvalidQuery(format!("attribute index {attr} out of range"))
            })?;
            let f = table.get(code as usize).ok_or_else(|| {
                Error::InvalidQuery(format!("code {code} out of range for attribute {attr}"))
            })?;
            p *= f;
        }
        Ok(p)
    }
}

/// Bernoulli row-sample baseline with a floor for zero-match queries.
#[derive(Debug, Clone)]
pub struct SampleEstimator {
    rows: Vec<Vec<u32>>,
    pub floor: f64,
}

impl SampleEstimator {
    /// Draw each row independently with probability `rate`, seeded. The
    /// default floor for zero-match queries is `1 / (2 |S|)`.
    pub fn new(relation: &Relation, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("sample rate {rate} outside [0, 1]")));
        }
        let mut rng = crate::rng::stream(seed, "sample-estimator", 0);
        let rows: Vec<Vec<u32>> = (0..relation.n())
            .filter(|_| rng.random::<f64>() < rate)
            .map(|row| relation.tuple(row))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyRelation("sample came out empty; raise the rate".into()));
        }
        let floor = 1.0 / (2.0 * rows.len() as f64);
        Ok(Self { rows, floor })
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn sample_size(&self) -> usize {
        self.rows.len()
    }

    /// Matching fraction within the sample; returns the estimate and whether
    /// the floor kicked in.
    pub fn estimate(&self, q: &PointQuery) -> (f64, bool) {
        let matches = self
            .rows
            .iter()
            .filter(|row| q.predicates.iter().all(|&(attr, code)| row[attr] == code))
            .count();
        if matches == 0 {
            (self.floor, true)
        } else {
            (matches as f64 / self.rows.len() as f64, false)
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Band edges; selectivity defaults follow the narrative thresholds
/// (< 0.1%, 0.1-1%, 1-5%, >= 5%).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandConfig {
    pub selectivity_edges: Vec<f64>,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { selectivity_edges: vec![0.001, 0.01, 0.05] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRecord {
    pub predicates: Vec<(String, String)>,
    pub predicate_count: usize,
    pub true_selectivity: f64,
    pub estimate: f64,
    /// Absent for zero-selectivity queries, which stay out of aggregation.
    pub qerror: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSummary {
    pub dimension: String,
    pub key: String,
    pub count: usize,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QErrorReport {
    pub estimator: String,
    pub total_queries: usize,
    pub zero_selectivity_queries: usize,
    /// Estimates were clamped to at least this before q-error.
    pub eps_sel: f64,
    pub groups: Vec<GroupSummary>,
    pub records: Vec<ReportRecord>,
}

impl QErrorReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Box-plot-ready summary rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("dimension,group,count,p5,p25,p50,p75,p95\n");
        for g in &self.groups {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                g.dimension, g.key, g.count, g.p5, g.p25, g.p50, g.p75, g.p95
            ));
        }
        out
    }

    /// Median q-error of one group, if present.
    pub fn group_median(&self, dimension: &str, key: &str) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.dimension == dimension && g.key == key)
            .map(|g| g.p50)
    }

    /// Median over all aggregated records.
    pub fn overall_median(&self) -> Option<f64> {
        let mut qs: Vec<f64> = self.records.iter().filter_map(|r| r.qerror).collect();
        if qs.is_empty() {
            return None;
        }
        qs.sort_by(|a, b| a.total_cmp(b));
        Some(percentile_nearest_rank(&qs, 50.0))
    }
}

/// Nearest-rank percentile of an ascending-sorted slice.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn percentile_set(values: &mut [f64]) -> (f64, f64, f64, f64, f64) {
    values.sort_by(|a, b| a.total_cmp(b));
    (
        percentile_nearest_rank(values, 5.0),
        percentile_nearest_rank(values, 25.0),
        percentile_nearest_rank(values, 50.0),
        percentile_nearest_rank(values, 75.0),
        percentile_nearest_rank(values, 95.0),
    )
}

fn selectivity_band(s: f64, edges: &[f64]) -> String {
    for (i, &e) in edges.iter().enumerate() {
        if s < e {
            return if i == 0 {
                format!("<{}", fmt_pct(e))
            } else {
                format!("{}-{}", fmt_pct(edges[i - 1]), fmt_pct(e))
            };
        }
    }
    format!(">={}", fmt_pct(*edges.last().unwrap()))
}

fn fmt_pct(x: f64) -> String {
    format!("{}%", x * 100.0)
}

fn jpd_band(size: u128) -> String {
    let mut lo: u128 = 1;
    while lo.saturating_mul(10) <= size {
        lo *= 10;
    }
    format!("{}-{}", lo, lo.saturating_mul(10))
}

fn entropy_band(bits: f64) -> String {
    // log-spaced at powers of two, with everything below one bit pooled
    if bits < 1.0 {
        return "<1".into();
    }
    let mut lo = 1.0;
    while lo * 2.0 <= bits {
        lo *= 2.0;
    }
    format!("{}-{}", lo, lo * 2.0)
}

/// Assemble the grouped report. Estimates are clamped to `1/(10 n)` before
/// q-error; zero-selectivity queries are flagged and counted but excluded
/// from every group.
pub fn build_report(
    estimator: &str,
    relation: &Relation,
    labeled: &[LabeledQuery],
    estimates: &[f64],
    bands: &BandConfig,
) -> Result<QErrorReport> {
    if labeled.len() != estimates.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labeled queries but {} estimates",
            labeled.len(),
            estimates.len()
        )));
    }
    let eps_sel = 1.0 / (10.0 * relation.n() as f64);
    let mut records = Vec::with_capacity(labeled.len());
    let mut zero = 0usize;
    let mut groups: HashMap<(String, String), Vec<f64>> = HashMap::new();
    let mut entropy_cache: HashMap<Vec<usize>, f64> = HashMap::new();

    for (lq, &est) in labeled.iter().zip(estimates) {
        let predicates: Vec<(String, String)> = lq
            .query
            .predicates
            .iter()
            .map(|&(attr, code)| {
                let meta = relation.attribute(attr);
                (meta.name.clone(), meta.decode(code).unwrap_or_else(|| code.to_string()))
            })
            .collect();
        let q = if lq.selectivity > 0.0 {
            Some(qerror(lq.selectivity, est.max(eps_sel))?)
        } else {
            zero += 1;
            None
        };
        if let Some(qe) = q {
            let mut attrs: Vec<usize> = lq.query.attributes().collect();
            attrs.sort_unstable();
            groups
                .entry(("predicates".into(), lq.query.predicates.len().to_string()))
                .or_default()
                .push(qe);
            groups
                .entry((
                    "selectivity".into(),
                    selectivity_band(lq.selectivity, &bands.selectivity_edges),
                ))
                .or_default()
                .push(qe);
            if !attrs.is_empty() {
                let size = jpd_size(relation.schema(), &attrs)?;
                groups.entry(("jpd_size".into(), jpd_band(size))).or_default().push(qe);
                let h = match entropy_cache.get(&attrs) {
                    Some(&h) => h,
                    None => {
                        let h = joint_entropy(relation, &attrs)?;
                        entropy_cache.insert(attrs.clone(), h);
                        h
                    }
                };
                groups.entry(("entropy".into(), entropy_band(h))).or_default().push(qe);
            }
        }
        records.push(ReportRecord {
            predicates,
            predicate_count: lq.query.predicates.len(),
            true_selectivity: lq.selectivity,
            estimate: est,
            qerror: q,
        });
    }

    let mut group_rows: Vec<GroupSummary> = groups
        .into_iter()
        .map(|((dimension, key), mut values)| {
            let count = values.len();
            let (p5, p25, p50, p75, p95) = percentile_set(&mut values);
            GroupSummary { dimension, key, count, p5, p25, p50, p75, p95 }
        })
        .collect();
    group_rows.sort_by(|a, b| (&a.dimension, &a.key).cmp(&(&b.dimension, &b.key)));

    Ok(QErrorReport {
        estimator: estimator.to_string(),
        total_queries: labeled.len(),
        zero_selectivity_queries: zero,
        eps_sel,
        groups: group_rows,
        records,
    })
}
