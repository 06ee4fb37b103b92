//! Masked autoregressive density estimation over encoded tuples.
//!
//! Each ensemble member owns a random attribute ordering and a set of
//! connectivity masks that make one forward pass emit every conditional
//! `p(x_d | x before d)` of the bit-level chain. Point probabilities come
//! straight out of the chain; queries over a non-prefix attribute subset
//! marginalize the gap attributes exactly (small boxes) or by adaptive
//! importance sampling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::TupleCodec;
use crate::error::{Error, Result};
use crate::neural::{
    bce_loss, weighted_bce_loss, Activation, AdamConfig, AdamState, DropoutPlan, Gradients,
    Network,
};
use crate::range::{self, RangeBudget};
use crate::relation::{PointQuery, RangeQuery, Relation};
use crate::rng;

/// A bit-level ordering derived from an attribute permutation. Bits of one
/// attribute stay contiguous, which keeps prefix marginalization well-defined
/// at attribute granularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitOrdering {
    /// Attribute indices in chain order.
    pub attr_order: Vec<usize>,
    /// `position[d]` = index of bit `d` in the product of conditionals.
    pub position: Vec<usize>,
}

impl BitOrdering {
    pub fn from_attr_order(attr_order: Vec<usize>, codec: &TupleCodec) -> Self {
        let mut position = vec![0usize; codec.total_bits];
        let mut next = 0;
        for &attr in &attr_order {
            let slice = codec.slices[attr];
            for j in 0..slice.width {
                position[slice.offset + j] = next;
                next += 1;
            }
        }
        debug_assert_eq!(next, codec.total_bits);
        Self { attr_order, position }
    }

    /// Rank of each attribute in the chain (inverse of `attr_order`).
    pub fn attr_positions(&self) -> Vec<usize> {
        let mut pos = vec![0usize; self.attr_order.len()];
        for (rank, &attr) in self.attr_order.iter().enumerate() {
            pos[attr] = rank;
        }
        pos
    }
}

/// Uniformly random attribute ordering consistent with `(before, after)`
/// constraints. Constraints must form a DAG.
pub fn sample_ordering(
    rng: &mut impl Rng,
    codec: &TupleCodec,
    constraints: &[(usize, usize)],
) -> Result<BitOrdering> {
    let m = codec.num_attributes();
    for &(a, b) in constraints {
        if a >= m || b >= m {
            return Err(Error::InvalidArgument(format!(
                "constraint ({a}, {b}) references an attribute out of range"
            )));
        }
    }
    if has_cycle(m, constraints) {
        return Err(Error::CyclicConstraints);
    }
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..m).collect();
    // rejection keeps the distribution uniform over valid permutations
    loop {
        order.shuffle(rng);
        let mut rank = vec![0usize; m];
        for (r, &a) in order.iter().enumerate() {
            rank[a] = r;
        }
        if constraints.iter().all(|&(before, after)| rank[before] < rank[after]) {
            return Ok(BitOrdering::from_attr_order(order, codec));
        }
    }
}

fn has_cycle(m: usize, edges: &[(usize, usize)]) -> bool {
    let mut indegree = vec![0usize; m];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &(a, b) in edges {
        adj[a].push(b);
        indegree[b] += 1;
    }
    let mut queue: Vec<usize> = (0..m).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop() {
        seen += 1;
        for &w in &adj[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                queue.push(w);
            }
        }
    }
    seen != m
}

/// Connectivity masks for layer sizes `[D, h1, ..., hk, D]`.
///
/// Hidden unit degrees are drawn uniformly from `[min degree of previous
/// layer, D-2]`; a hidden connection requires the unit degree to be at least
/// its input's degree, and an output for ordering index `k` connects only to
/// hidden units of strictly smaller degree. Returns one mask per layer plus
/// the per-hidden-layer degrees.
pub fn build_masks(
    layer_sizes: &[usize],
    ordering: &BitOrdering,
    rng: &mut impl Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let d = layer_sizes[0];
    assert!(layer_sizes.len() >= 3, "need at least one hidden layer");
    assert_eq!(*layer_sizes.last().unwrap(), d, "output width must equal input width");
    assert_eq!(ordering.position.len(), d);

    let max_degree = d.saturating_sub(2);
    let mut prev_degrees: Vec<usize> = ordering.position.clone();
    let mut masks = Vec::with_capacity(layer_sizes.len() - 1);
    let mut hidden_degrees = Vec::with_capacity(layer_sizes.len() - 2);

    for &width in &layer_sizes[1..layer_sizes.len() - 1] {
        let min_prev = prev_degrees.iter().copied().min().unwrap_or(0);
        let degrees: Vec<usize> =
            (0..width).map(|_| rng.random_range(min_prev..=max_degree.max(min_prev))).collect();
        let mut mask = vec![0.0; width * prev_degrees.len()];
        for (k, &deg) in degrees.iter().enumerate() {
            for (kp, &pdeg) in prev_degrees.iter().enumerate() {
                if deg >= pdeg {
                    mask[k * prev_degrees.len() + kp] = 1.0;
                }
            }
        }
        masks.push(mask);
        hidden_degrees.push(degrees.clone());
        prev_degrees = degrees;
    }

    // output mask uses strict inequality
    let mut out_mask = vec![0.0; d * prev_degrees.len()];
    for bit in 0..d {
        for (k, &deg) in prev_degrees.iter().enumerate() {
            if ordering.position[bit] > deg {
                out_mask[bit * prev_degrees.len() + k] = 1.0;
            }
        }
    }
    masks.push(out_mask);
    (masks, hidden_degrees)
}

/// One masked autoregressive member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MadeModel {
    pub ordering: BitOrdering,
    pub hidden_degrees: Vec<Vec<usize>>,
    pub network: Network,
}

impl MadeModel {
    /// Freshly initialized member for the given codec and hidden sizes.
    pub fn init(
        codec: &TupleCodec,
        hidden: &[usize],
        ordering: BitOrdering,
        mask_rng: &mut impl Rng,
        init_rng: &mut impl Rng,
    ) -> Self {
        let d = codec.total_bits;
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(d);
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        let (masks, degrees) = build_masks(&sizes, &ordering, mask_rng);
        let mut network = Network::init(&sizes, Activation::Relu, Activation::Sigmoid, init_rng);
        for (layer, mask) in network.layers.iter_mut().zip(masks) {
            layer.mask = Some(mask);
        }
        Self { ordering, hidden_degrees: degrees, network }
    }

    fn resample_masks(&mut self, rng: &mut impl Rng) {
        let mut sizes = vec![self.network.input_dim()];
        sizes.extend(self.network.layers[..self.network.layers.len() - 1].iter().map(|l| l.out_dim));
        sizes.push(self.network.output_dim());
        let (masks, degrees) = build_masks(&sizes, &self.ordering, rng);
        for (layer, mask) in self.network.layers.iter_mut().zip(masks) {
            layer.mask = Some(mask);
        }
        self.hidden_degrees = degrees;
    }

    /// Log probability of an arbitrary bit vector under the Bernoulli chain.
    pub fn bits_logprob(&self, bits: &[f64]) -> Result<f64> {
        let out = self.network.forward(bits)?;
        let mut lp = 0.0;
        for (i, &x) in bits.iter().enumerate() {
            let p = out[i];
            lp += if x > 0.5 { p.ln() } else { (1.0 - p).ln() };
        }
        Ok(lp)
    }

    /// Log probability of a tuple of codes.
    pub fn tuple_logprob(&self, codec: &TupleCodec, codes: &[u32]) -> Result<f64> {
        self.bits_logprob(&codec.encode_tuple(codes)?)
    }

    /// Probability of an assignment to the first `j` attributes of this
    /// member's attribute order: the product of exactly those attributes'
    /// conditionals, with zeros fed for later positions (which cannot affect
    /// earlier conditionals by the connectivity constraint).
    pub fn prefix_prob(&self, codec: &TupleCodec, assignments: &[(usize, u32)]) -> Result<f64> {
        if assignments.is_empty() {
            return Ok(1.0);
        }
        let positions = self.ordering.attr_positions();
        let mut max_rank = 0;
        let mut seen = std::collections::HashSet::new();
        for &(attr, _) in assignments {
            if attr >= codec.num_attributes() {
                return Err(Error::InvalidQuery(format!("attribute index {attr} out of range")));
            }
            if !seen.insert(attr) {
                return Err(Error::InvalidQuery(format!("duplicate assignment to attribute {attr}")));
            }
            max_rank = max_rank.max(positions[attr]);
        }
        if assignments.len() != max_rank + 1 {
            return Err(Error::NonPrefixAssignment(format!(
                "assigned attributes {:?} are not the first {} of order {:?}",
                assignments.iter().map(|&(a, _)| a).collect::<Vec<_>>(),
                assignments.len(),
                self.ordering.attr_order
            )));
        }
        let mut bits = vec![0.0; codec.total_bits];
        for &(attr, code) in assignments {
            codec.write_attr(&mut bits, attr, code)?;
        }
        let out = self.network.forward(&bits)?;
        let mut prob = 1.0;
        for &(attr, _) in assignments {
            let slice = codec.slices[attr];
            for j in 0..slice.width {
                let idx = slice.offset + j;
                let p = out[idx];
                prob *= if bits[idx] > 0.5 { p } else { 1.0 - p };
            }
        }
        Ok(prob)
    }

    /// Point selectivity for one member: exact prefix marginalization when the
    /// queried attributes form an order prefix, otherwise enumeration or
    /// adaptive sampling over the gap attributes before the last queried one
    /// (later attributes marginalize out of the chain for free).
    pub fn point_selectivity(
        &self,
        codec: &TupleCodec,
        q: &PointQuery,
        budget: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if q.predicates.is_empty() {
            return Ok(1.0);
        }
        let mut seen = std::collections::HashSet::new();
        for &(attr, code) in &q.predicates {
            if attr >= codec.num_attributes() {
                return Err(Error::InvalidQuery(format!("attribute index {attr} out of range")));
            }
            if !seen.insert(attr) {
                return Err(Error::InvalidQuery(format!("duplicate predicate on attribute {attr}")));
            }
            if code >= codec.domain_sizes[attr] {
                return Err(Error::InvalidQuery(format!(
                    "code {code} out of range for attribute {attr}"
                )));
            }
        }
        let positions = self.ordering.attr_positions();
        let max_rank = q.predicates.iter().map(|&(a, _)| positions[a]).max().unwrap();
        if q.predicates.len() == max_rank + 1 {
            return self.prefix_prob(codec, &q.predicates);
        }

        // ranges over the covered prefix: queried attributes pinned, gap
        // attributes spanning their full domain
        let mut predicates = Vec::with_capacity(max_rank + 1);
        let mut box_cells: u128 = 1;
        for &attr in &self.ordering.attr_order[..=max_rank] {
            match q.predicates.iter().find(|&&(a, _)| a == attr) {
                Some(&(_, code)) => predicates.push((attr, code, code)),
                None => {
                    let ds = codec.domain_sizes[attr];
                    predicates.push((attr, 0, ds - 1));
                    box_cells = box_cells.saturating_mul(ds as u128);
                }
            }
        }
        let rq = RangeQuery::new(predicates);
        let est = |cell: &PointQuery| self.prefix_prob(codec, &cell.predicates);
        if box_cells <= budget.max(1) as u128 {
            return range::estimate_exhaustive(est, &rq, budget.max(1) as u64);
        }
        match budget {
            0 => Err(Error::InvalidArgument(
                "sampling budget is zero and the query does not prefix this ordering".into(),
            )),
            1 => range::estimate_uniform(est, &rq, 1, rng),
            _ => range::estimate_adaptive_is(
                est,
                &rq,
                &RangeBudget { total: budget, ..RangeBudget::default() },
                rng,
                false,
            ),
        }
    }
}

/// κ members sharing one codec; estimates average across members.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MadeEnsemble {
    pub codec: TupleCodec,
    pub members: Vec<MadeModel>,
    /// Mean training loss per epoch, per member.
    pub loss_curves: Vec<Vec<f64>>,
}

impl MadeEnsemble {
    /// Log of the arithmetic mean of member probabilities.
    pub fn tuple_logprob(&self, codes: &[u32]) -> Result<f64> {
        let lps: Vec<f64> =
            self.members.iter().map(|m| m.tuple_logprob(&self.codec, codes)).collect::<Result<_>>()?;
        Ok(log_mean_exp(&lps))
    }

    /// Ensemble point selectivity: the mean of member estimates. With a zero
    /// budget only members that can answer exactly (the queried attributes
    /// prefix their ordering, or the gap box is a single cell) contribute;
    /// it is an error if none can.
    pub fn point_selectivity(
        &self,
        q: &PointQuery,
        budget: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let mut sum = 0.0;
        let mut answered = 0usize;
        let mut last_err = None;
        for member in &self.members {
            match member.point_selectivity(&self.codec, q, budget, rng) {
                Ok(est) => {
                    sum += est;
                    answered += 1;
                }
                Err(err @ Error::InvalidArgument(_)) if budget == 0 => last_err = Some(err),
                Err(err) => return Err(err),
            }
        }
        if answered == 0 {
            return Err(last_err.unwrap_or_else(|| {
                Error::InvalidArgument("no ensemble member could answer the query".into())
            }));
        }
        Ok(sum / answered as f64)
    }

    /// Deterministic estimates for a whole workload: each query draws its own
    /// RNG stream from `seed`, so results do not depend on thread count.
    pub fn estimate_workload(
        &self,
        queries: &[PointQuery],
        budget: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        queries
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                let mut r = rng::stream(seed, "made/query", i as u64);
                self.point_selectivity(q, budget, &mut r)
            })
            .collect()
    }

    /// Total probability mass over every bit vector of a member. Exact 1 up
    /// to clamping by construction of the Bernoulli chain.
    pub fn member_total_mass(&self, member: usize) -> Result<f64> {
        let d = self.codec.total_bits;
        if d > 24 {
            return Err(Error::InvalidArgument(format!(
                "refusing to enumerate 2^{d} bit vectors"
            )));
        }
        let m = &self.members[member];
        let mut total = 0.0;
        let mut bits = vec![0.0; d];
        for v in 0..(1u64 << d) {
            for (j, b) in bits.iter_mut().enumerate() {
                *b = ((v >> j) & 1) as f64;
            }
            total += m.bits_logprob(&bits)?.exp();
        }
        Ok(total)
    }

    /// Ensemble mass over valid tuples only; the remainder sits on invalid
    /// binary codes. Reported as a diagnostic, never an error.
    pub fn valid_mass(&self, cap: u64) -> Result<f64> {
        let cells: u128 = self.codec.domain_sizes.iter().map(|&d| d as u128).product();
        if cells > cap as u128 {
            return Err(Error::EnumerationCapExceeded { cells, cap });
        }
        let mut codes: Vec<u32> = vec![0; self.codec.num_attributes()];
        let mut total = 0.0;
        loop {
            total += self.tuple_logprob(&codes)?.exp();
            let mut i = 0;
            loop {
                if i == codes.len() {
                    return Ok(total);
                }
                codes[i] += 1;
                if codes[i] < self.codec.domain_sizes[i] {
                    break;
                }
                codes[i] = 0;
                i += 1;
            }
        }
    }
}

fn log_mean_exp(lps: &[f64]) -> f64 {
    let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = lps.iter().map(|lp| (lp - max).exp()).sum();
    max + (sum / lps.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadeTrainConfig {
    pub kappa: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Dropout probability; used by incremental fine-tuning.
    pub dropout: f64,
    pub seed: u64,
    /// `(before, after)` attribute pairs every sampled ordering must honor.
    pub constraints: Vec<(usize, usize)>,
    /// Redraw degrees and masks at each epoch start instead of fixing them
    /// per member. Off by default.
    pub resample_masks_each_epoch: bool,
}

impl Default for MadeTrainConfig {
    fn default() -> Self {
        Self {
            kappa: 3,
            hidden: vec![100, 100],
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            dropout: 0.0,
            seed: 0,
            constraints: Vec::new(),
            resample_masks_each_epoch: false,
        }
    }
}

impl MadeTrainConfig {
    /// Fine-tuning defaults: a tenth of the learning rate, 20 epochs,
    /// dropout 0.1 on mask-active units.
    pub fn incremental_from(&self) -> Self {
        Self {
            learning_rate: self.learning_rate * 0.1,
            epochs: 20,
            dropout: 0.1,
            ..self.clone()
        }
    }
}

/// Train a κ-member ensemble on the relation's encoded tuples with minibatch
/// Adam on (optionally weighted) cross entropy. When workload counts are
/// given, each tuple's loss is weighted by `1 + w(t)` so unqueried rows keep
/// contributing. Members train independently and may run in parallel;
/// everything is deterministic under a fixed seed.
pub fn train(
    relation: &Relation,
    codec: &TupleCodec,
    config: &MadeTrainConfig,
    tuple_weights: Option<&[f64]>,
) -> Result<MadeEnsemble> {
    if config.kappa == 0 || config.kappa > 16 {
        return Err(Error::InvalidArgument(format!("kappa {} outside 1..=16", config.kappa)));
    }
    if let Some(w) = tuple_weights {
        if w.len() != relation.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} tuple weights for {} rows",
                w.len(),
                relation.n()
            )));
        }
        if let Some(bad) = w.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid tuple weight {bad}")));
        }
    }
    let encoded: Vec<Vec<f64>> = (0..relation.n())
        .map(|row| codec.encode_tuple(&relation.tuple(row)))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = match tuple_weights {
        Some(w) => w.iter().map(|&x| 1.0 + x).collect(),
        None => vec![1.0; relation.n()],
    };

    let results: Vec<Result<(MadeModel, Vec<f64>)>> = (0..config.kappa)
        .into_par_iter()
        .map(|mi| {
            let mut order_rng = rng::stream(config.seed, "made/order", mi as u64);
            let ordering = sample_ordering(&mut order_rng, codec, &config.constraints)?;
            train_member(codec, &encoded, &weights, config, ordering, mi as u64, None)
        })
        .collect();
    let mut members = Vec::with_capacity(config.kappa);
    let mut loss_curves = Vec::with_capacity(config.kappa);
    for r in results {
        let (m, curve) = r?;
        members.push(m);
        loss_curves.push(curve);
    }
    Ok(MadeEnsemble { codec: codec.clone(), members, loss_curves })
}

/// Continue training every member on new rows only, starting from the
/// existing weights. An empty batch returns the ensemble unchanged.
pub fn incremental_train(
    ensemble: &MadeEnsemble,
    new_rows: &[Vec<u32>],
    config: &MadeTrainConfig,
) -> Result<MadeEnsemble> {
    if new_rows.is_empty() {
        return Ok(ensemble.clone());
    }
    let codec = &ensemble.codec;
    let encoded: Vec<Vec<f64>> =
        new_rows.iter().map(|codes| codec.encode_tuple(codes)).collect::<Result<_>>()?;
    let weights = vec![1.0; new_rows.len()];

    let results: Vec<Result<(MadeModel, Vec<f64>)>> = ensemble
        .members
        .par_iter()
        .enumerate()
        .map(|(mi, member)| {
            train_member(
                codec,
                &encoded,
                &weights,
                config,
                member.ordering.clone(),
                mi as u64,
                Some(member.clone()),
            )
        })
        .collect();
    let mut members = Vec::with_capacity(ensemble.members.len());
    let mut loss_curves = ensemble.loss_curves.clone();
    if loss_curves.len() != ensemble.members.len() {
        loss_curves = vec![Vec::new(); ensemble.members.len()];
    }
    for (mi, r) in results.into_iter().enumerate() {
        let (m, curve) = r?;
        members.push(m);
        loss_curves[mi].extend(curve);
    }
    Ok(MadeEnsemble { codec: codec.clone(), members, loss_curves })
}

fn train_member(
    codec: &TupleCodec,
    encoded: &[Vec<f64>],
    weights: &[f64],
    config: &MadeTrainConfig,
    ordering: BitOrdering,
    member_index: u64,
    warm_start: Option<MadeModel>,
) -> Result<(MadeModel, Vec<f64>)> {
    let mut mask_rng = rng::stream(config.seed, "made/mask", member_index);
    let mut init_rng = rng::stream(config.seed, "made/init", member_index);
    let mut train_rng = rng::stream(config.seed, "made/train", member_index);

    let mut model = match warm_start {
        Some(m) => m,
        None => MadeModel::init(codec, &config.hidden, ordering, &mut mask_rng, &mut init_rng),
    };
    let dropout_plan =
        (config.dropout > 0.0).then(|| DropoutPlan::mask_respecting(&model.network, config.dropout));
    let mut adam = AdamState::new(&model.network, AdamConfig {
        alpha: config.learning_rate,
        ..AdamConfig::default()
    });

    let n = encoded.len();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.resample_masks_each_epoch && epoch > 0 {
            model.resample_masks(&mut mask_rng);
        }
        let mut epoch_loss = 0.0;
        for batch in crate::neural::minibatches(n, config.batch_size, &mut train_rng) {
            let mut grads = Gradients::zeros(&model.network);
            for &i in &batch {
                let cache =
                    model.network.forward_cached(&encoded[i], dropout_plan.as_ref(), &mut train_rng)?;
                let (loss, out_grad) = if weights[i] == 1.0 {
                    bce_loss(cache.output(), &encoded[i])
                } else {
                    weighted_bce_loss(cache.output(), &encoded[i], weights[i])?
                };
                epoch_loss += loss;
                grads.add(&model.network.backward(&cache, &out_grad)?);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.network, &grads)?;
        }
        curve.push(epoch_loss / n as f64);
    }
    Ok((model, curve))
}

/// Per-row workload weights: the number of workload queries matching each
/// tuple.
pub fn tuple_weights_from_workload(
    relation: &Relation,
    workload: &[PointQuery],
) -> Result<Vec<f64>> {
    for q in workload {
        relation.validate_point(q)?;
    }
    let mut weights = vec![0.0; relation.n()];
    for q in workload {
        for (row, w) in weights.iter_mut().enumerate() {
            if q.predicates.iter().all(|&(attr, code)| relation.code(row, attr) == code) {
                *w += 1.0;
            }
        }
    }
    Ok(weights)
}
