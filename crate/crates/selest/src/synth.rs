//! Seeded synthetic relation used by the bundled experiments: six attributes
//! with Zipf-skewed marginals, one functional dependency (region determines
//! zone), and two numeric columns for bucketized range estimation.

use rand::Rng;

use crate::error::Result;
use crate::relation::{ColumnHint, Relation, SchemaHints};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { rows: 5000, seed: 7 }
    }
}

const REGIONS: usize = 48;
const CHANNELS: usize = 24;
const ZONES: usize = 8;
const TIERS: usize = 6;

/// Cumulative distribution of a Zipf law over `n` ranks.
fn zipf_cdf(n: usize, exponent: f64) -> Vec<f64> {
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    let mut cum = 0.0;
    weights
        .iter()
        .map(|w| {
            cum += w / total;
            cum
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Standard normal via Box-Muller.
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The synthetic table as CSV text; the single source for both the library
/// fixture and the CLI artifact.
pub fn synthetic_csv(config: &SynthConfig) -> String {
    let mut rng = rng::stream(config.seed, "synth", 0);
    let region_cdf = zipf_cdf(REGIONS, 1.05);
    let channel_cdf = zipf_cdf(CHANNELS, 1.2);
    let tier_cdf = zipf_cdf(TIERS, 1.3);

    let mut out = String::with_capacity(config.rows * 32);
    out.push_str("region,channel,zone,tier,load,score\n");
    for _ in 0..config.rows {
        let region = draw(&region_cdf, &mut rng);
        let channel = draw(&channel_cdf, &mut rng);
        // functional dependency: region determines zone
        let zone = region % ZONES;
        let tier = draw(&tier_cdf, &mut rng);
        let load = (3.0 + 0.7 * normal(&mut rng)).exp().round().clamp(1.0, 400.0) as i64;
        let score = zone as i64 * 4 + rng.random_range(0..16) as i64;
        out.push_str(&format!("r{region:02},c{channel:02},z{zone},t{tier},{load},{score}\n"));
    }
    out
}

/// Ingestion hints for the synthetic table: both numeric columns get eight
/// equi-depth buckets.
pub fn synthetic_hints() -> SchemaHints {
    let mut hints = SchemaHints::new();
    hints.insert("load".into(), ColumnHint { kind: None, buckets: Some(8) });
    hints.insert("score".into(), ColumnHint { kind: None, buckets: Some(8) });
    hints
}

/// Ingested synthetic relation with the default hints applied.
pub fn synthetic_relation(config: &SynthConfig) -> Result<Relation> {
    Relation::ingest_csv_reader(synthetic_csv(config).as_bytes(), &synthetic_hints())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{AttributeKind, Query};

    #[test]
    fn synthetic_relation_has_expected_shape() {
        let rel = synthetic_relation(&SynthConfig { rows: 2000, seed: 7 }).unwrap();
        assert_eq!(rel.n(), 2000);
        assert_eq!(rel.num_attributes(), 6);
        let zone = rel.attribute_index("zone").unwrap();
        assert_eq!(rel.attribute(zone).domain_size, ZONES as u32);
        for name in ["load", "score"] {
            let idx = rel.attribute_index(name).unwrap();
            assert_eq!(rel.attribute(idx).kind, AttributeKind::Numeric);
            assert_eq!(rel.attribute(idx).domain_size, 8);
            assert!(rel.attribute(idx).bucketization.is_some());
        }
    }

    #[test]
    fn functional_dependency_holds() {
        let rel = synthetic_relation(&SynthConfig { rows: 1000, seed: 9 }).unwrap();
        let region = rel.attribute_index("region").unwrap();
        let zone = rel.attribute_index("zone").unwrap();
        let mut map = std::collections::HashMap::new();
        for row in 0..rel.n() {
            let r = rel.code(row, region);
            let z = rel.code(row, zone);
            let prev = map.insert(r, z);
            assert!(prev.is_none() || prev == Some(z), "functional dependency violated");
        }
    }

    #[test]
    fn marginals_are_skewed() {
        let rel = synthetic_relation(&SynthConfig::default()).unwrap();
        let region = rel.attribute_index("region").unwrap();
        let top = (0..rel.attribute(region).domain_size)
            .map(|code| {
                rel.true_selectivity(&Query::Point(crate::relation::PointQuery::new(vec![(
                    region, code,
                )])))
                .unwrap()
            })
            .fold(0.0f64, f64::max);
        // the top Zipf rank should dwarf the uniform share
        assert!(top > 3.0 / REGIONS as f64, "top region share {top}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synthetic_csv(&SynthConfig::default());
        let b = synthetic_csv(&SynthConfig::default());
        assert_eq!(a, b);
        let c = synthetic_csv(&SynthConfig { seed: 8, ..SynthConfig::default() });
        assert_ne!(a, c);
    }
}
