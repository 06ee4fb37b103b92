//! Workload-weighted density training: with a broad query log (the same
//! shape the evaluation workloads have), upweighting matched tuples must not
//! make the model worse on the log's queries.
//!
//! The check uses a broad workload: per-tuple weights reweight the fitted
//! distribution itself, so a workload hammering one narrow slice inflates
//! that slice's marginals and the comparison would measure the reweighted
//! target, not training quality.

use rand::Rng;
use selest::encoding::{EncodingMode, TupleCodec};
use selest::eval::generate_test_workload;
use selest::made::{self, tuple_weights_from_workload, MadeTrainConfig};
use selest::relation::{PointQuery, Query, Relation, SchemaHints};

/// 3 attributes with a skewed, correlated joint; small enough that every
/// point query is answered by exact enumeration (no sampling noise).
fn fixture() -> Relation {
    let mut csv = String::from("a,b,c\n");
    let mut r = selest::rng::seeded(40);
    for _ in 0..800 {
        let a = (r.random::<f64>().powf(2.2) * 8.0) as u32;
        let b = if r.random::<f64>() < 0.6 { (a + 1) % 8 } else { r.random_range(0..8u32) };
        let c = r.random_range(0..6u32);
        csv.push_str(&format!("a{a},b{b},c{c}\n"));
    }
    Relation::ingest_csv_reader(csv.as_bytes(), &SchemaHints::new()).unwrap()
}

#[test]
fn workload_weights_do_not_hurt_workload_queries() {
    let rel = fixture();
    let codec = TupleCodec::new(rel.schema(), EncodingMode::Binary);

    let mut wl_rng = selest::rng::seeded(44);
    let labeled = generate_test_workload(&rel, 150, &mut wl_rng).unwrap();
    let workload: Vec<PointQuery> = labeled.iter().map(|l| l.query.clone()).collect();
    let weights = tuple_weights_from_workload(&rel, &workload).unwrap();
    assert!(weights.iter().any(|&w| w > 0.0));

    let config = MadeTrainConfig {
        kappa: 2,
        hidden: vec![32, 32],
        epochs: 60,
        seed: 77,
        ..MadeTrainConfig::default()
    };
    let unweighted = made::train(&rel, &codec, &config, None).unwrap();
    let weighted = made::train(&rel, &codec, &config, Some(&weights)).unwrap();

    // the whole domain box fits the budget, so estimates are exhaustive and
    // deterministic
    let mean_qerror = |ens: &selest::made::MadeEnsemble| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, q) in workload.iter().enumerate() {
            let truth = rel.true_selectivity(&Query::Point(q.clone())).unwrap();
            if truth == 0.0 {
                continue;
            }
            let mut rng = selest::rng::stream(78, "wq", i as u64);
            let est = ens.point_selectivity(q, 600, &mut rng).unwrap().max(1e-5);
            sum += (truth / est).max(est / truth);
            count += 1;
        }
        sum / count as f64
    };
    let base = mean_qerror(&unweighted);
    let tuned = mean_qerror(&weighted);
    assert!(
        tuned <= base * 1.05,
        "weighted training hurt the workload: {tuned} vs unweighted {base}"
    );
    println!("workload mean q-error: unweighted {base:.4}, weighted {tuned:.4}");
}
