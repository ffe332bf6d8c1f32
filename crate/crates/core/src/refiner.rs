//! Adaptive knowledge refining: per-triplet Bernoulli keep gates with
//! antithetic sampling, facet-routed KG aggregation, and the DisARM
//! gradient estimator for the gate logits.
//!
//! Each triplet carries one trainable logit; its sigmoid is the triplet's
//! keep probability. A training step draws one antithetic pair of gate
//! vectors, runs the model forward once per vector, and turns the two loss
//! values into an unbiased gradient for the logits without differentiating
//! through the discrete gates.

use rand::Rng;

use crate::autodiff::{NodeId, Result, Tape, Tensor};
use crate::graph::{Facet, KnowledgeGraph};
use crate::rng::rng;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One logit per triplet; forward and inverse copies of a triplet share it.
#[derive(Debug, Clone)]
pub struct MaskBank {
    alpha: Vec<f64>,
}

impl MaskBank {
    pub fn new(alpha: Vec<f64>) -> Self {
        Self { alpha }
    }

    pub fn from_tensor(alpha: &Tensor) -> Self {
        Self { alpha: alpha.data().to_vec() }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Keep probability per triplet: sigmoid of the logit, strictly inside
    /// (0, 1).
    pub fn keep_probabilities(&self) -> Vec<f64> {
        self.alpha.iter().map(|&a| sigmoid(a)).collect()
    }
}

/// An antithetic pair of Bernoulli draws over all triplets, derived from a
/// single uniform vector: `b = 1{1-u < p}`, `b_anti = 1{u < p}` with
/// `p = sigmoid(alpha)`. Both marginals are Bern(p); the pair disagrees
/// exactly where the uniform falls between `1-p` and `p`.
#[derive(Debug, Clone)]
pub struct MaskSample {
    pub uniforms: Vec<f64>,
    pub bits: Vec<f64>,
    pub anti_bits: Vec<f64>,
}

impl MaskSample {
    /// Forces both draws to the same vector; DisARM gradients vanish.
    pub fn degenerate(bits: Vec<f64>) -> Self {
        Self { uniforms: vec![0.0; bits.len()], anti_bits: bits.clone(), bits }
    }

    pub fn agrees(&self) -> bool {
        self.bits == self.anti_bits
    }
}

/// Draw one antithetic gate pair; deterministic under `seed`.
pub fn sample_masks(bank: &MaskBank, seed: u64) -> MaskSample {
    let mut stream = rng(seed);
    let mut uniforms = Vec::with_capacity(bank.len());
    let mut bits = Vec::with_capacity(bank.len());
    let mut anti_bits = Vec::with_capacity(bank.len());
    for &a in &bank.alpha {
        let p = sigmoid(a);
        let u: f64 = stream.gen_range(0.0..1.0);
        uniforms.push(u);
        bits.push(if 1.0 - u < p { 1.0 } else { 0.0 });
        anti_bits.push(if u < p { 1.0 } else { 0.0 });
    }
    MaskSample { uniforms, bits, anti_bits }
}

/// Gradient of the expected loss with respect to the gate logits, from the
/// two forward-pass losses of an antithetic pair:
///
/// `g_i = 1/2 (f(b) - f(b_anti)) * (-1)^{anti_i} * 1{b_i != anti_i} * sigmoid(|alpha_i|)`
///
/// Exactly zero wherever the pair agrees or the losses coincide.
pub fn disarm_gradient(
    loss_bits: f64,
    loss_anti: f64,
    sample: &MaskSample,
    bank: &MaskBank,
) -> Tensor {
    let half_delta = 0.5 * (loss_bits - loss_anti);
    let grad = bank
        .alpha
        .iter()
        .zip(sample.bits.iter().zip(&sample.anti_bits))
        .map(|(&a, (&b, &anti))| {
            if b == anti {
                0.0
            } else {
                let sign = if anti == 1.0 { -1.0 } else { 1.0 };
                half_delta * sign * sigmoid(a.abs())
            }
        })
        .collect();
    Tensor::vector(grad)
}

/// Flattened directed KG edges partitioned by aggregation route.
///
/// Same-level facts (item-item, attribute-attribute) gather through an
/// elementwise tail*relation composition under one transform; cross-level
/// facts (item-attribute) go through tail+relation under the other. Inverse
/// edges sit in the same group as their forward triplet.
#[derive(Debug, Clone)]
pub struct AggregationIndex {
    product_route: EdgeGroup,
    sum_route: EdgeGroup,
    /// 1/|N_h| per entity, 0 for isolated entities. The count includes
    /// gated-out neighbors.
    inverse_counts: Vec<f64>,
    num_entities: usize,
}

#[derive(Debug, Clone, Default)]
struct EdgeGroup {
    heads: Vec<usize>,
    tails: Vec<usize>,
    relations: Vec<usize>,
    triplets: Vec<usize>,
}

impl EdgeGroup {
    fn push(&mut self, head: usize, tail: usize, relation: usize, triplet: usize) {
        self.heads.push(head);
        self.tails.push(tail);
        self.relations.push(relation);
        self.triplets.push(triplet);
    }
}

impl AggregationIndex {
    /// Build from the KG adjacency. With `single_route` every edge uses the
    /// product composition regardless of facet (the knowledge-refining
    /// ablation).
    pub fn new(kg: &KnowledgeGraph, single_route: bool) -> Self {
        let mut product_route = EdgeGroup::default();
        let mut sum_route = EdgeGroup::default();
        let mut counts = vec![0usize; kg.num_entities()];
        for head in 0..kg.num_entities() {
            for n in kg.neighbors(head) {
                counts[head] += 1;
                let cross_level = !single_route && kg.facets[n.triplet_id] == Facet::ItemAttribute;
                let group = if cross_level { &mut sum_route } else { &mut product_route };
                group.push(head, n.tail, n.relation, n.triplet_id);
            }
        }
        let inverse_counts =
            counts.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
        Self { product_route, sum_route, inverse_counts, num_entities: kg.num_entities() }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }
}

/// Per-forward tape state for KG propagation: relation rows, gate weights,
/// and normalization constants are fixed across layers, so they are
/// recorded once.
pub struct KgPropagation {
    product_rels: NodeId,
    sum_rels: NodeId,
    product_gates: NodeId,
    sum_gates: NodeId,
    inv_counts: NodeId,
    product_heads: Vec<usize>,
    sum_heads: Vec<usize>,
    product_tails: Vec<usize>,
    sum_tails: Vec<usize>,
    transform_product: NodeId,
    transform_sum: NodeId,
    num_entities: usize,
}

fn expand_rows(weights: &[f64], dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(weights.len() * dim);
    for &w in weights {
        data.extend(std::iter::repeat(w).take(dim));
    }
    Tensor::matrix(weights.len(), dim, data)
}

impl KgPropagation {
    /// `gates` holds one weight per triplet: hard 0/1 bits during training,
    /// expected keep probabilities at evaluation time.
    pub fn new(
        tape: &mut Tape,
        index: &AggregationIndex,
        relation_table: NodeId,
        transform_product: NodeId,
        transform_sum: NodeId,
        gates: &[f64],
        dim: usize,
    ) -> Result<Self> {
        let product_rels = tape.gather(relation_table, &index.product_route.relations)?;
        let sum_rels = tape.gather(relation_table, &index.sum_route.relations)?;
        let pick = |group: &EdgeGroup| -> Vec<f64> {
            group.triplets.iter().map(|&t| gates[t]).collect()
        };
        let product_gates = tape.constant(expand_rows(&pick(&index.product_route), dim));
        let sum_gates = tape.constant(expand_rows(&pick(&index.sum_route), dim));
        let inv_counts = tape.constant(expand_rows(&index.inverse_counts, dim));
        Ok(Self {
            product_rels,
            sum_rels,
            product_gates,
            sum_gates,
            inv_counts,
            product_heads: index.product_route.heads.clone(),
            sum_heads: index.sum_route.heads.clone(),
            product_tails: index.product_route.tails.clone(),
            sum_tails: index.sum_route.tails.clone(),
            transform_product,
            transform_sum,
            num_entities: index.num_entities,
        })
    }

    /// One aggregation layer: every entity averages the gated, activated,
    /// facet-routed messages of its full neighborhood. Entities without
    /// neighbors output the zero vector.
    pub fn layer(&self, tape: &mut Tape, entity_reprs: NodeId) -> Result<NodeId> {
        let mut pooled: Option<NodeId> = None;
        for (tails, heads, rels, gates, transform, combine_product) in [
            (
                &self.product_tails,
                &self.product_heads,
                self.product_rels,
                self.product_gates,
                self.transform_product,
                true,
            ),
            (&self.sum_tails, &self.sum_heads, self.sum_rels, self.sum_gates, self.transform_sum, false),
        ] {
            if tails.is_empty() {
                continue;
            }
            let tail_rows = tape.gather(entity_reprs, tails)?;
            let composed = if combine_product {
                tape.mul(tail_rows, rels)?
            } else {
                tape.add(tail_rows, rels)?
            };
            let transformed = tape.linear(composed, transform)?;
            let activated = tape.relu(transformed);
            let gated = tape.mul(activated, gates)?;
            let summed = tape.scatter_add(gated, heads, self.num_entities)?;
            pooled = Some(match pooled {
                Some(prev) => tape.add(prev, summed)?,
                None => summed,
            });
        }
        match pooled {
            Some(node) => tape.mul(node, self.inv_counts),
            None => {
                let dim = tape.value(entity_reprs).cols();
                Ok(tape.constant(Tensor::zeros(vec![self.num_entities, dim])))
            }
        }
    }
}

/// Stacked KG aggregation outputs.
pub struct KgForward {
    /// Layer 0 is the entity embedding table itself.
    pub per_layer: Vec<NodeId>,
    /// Sum over layers 0..=L: the final knowledge representation.
    pub summed: NodeId,
}

/// Run `layers` aggregation layers from the entity embedding table and sum
/// all layer outputs (including layer 0).
pub fn kg_forward(
    tape: &mut Tape,
    propagation: &KgPropagation,
    entity_embeddings: NodeId,
    layers: usize,
) -> Result<KgForward> {
    let mut per_layer = vec![entity_embeddings];
    let mut summed = entity_embeddings;
    let mut current = entity_embeddings;
    for _ in 0..layers {
        current = propagation.layer(tape, current)?;
        per_layer.push(current);
        summed = tape.add(summed, current)?;
    }
    Ok(KgForward { per_layer, summed })
}

/// Exact gradient of `E[f(gates)] ` with respect to the logits by full
/// enumeration of all `2^K` gate states. Verification oracle for small `K`.
pub fn enumerate_expected_gradient(alpha: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let k = alpha.len();
    assert!(k <= 20, "enumeration over 2^{k} states is not what you want");
    let probs: Vec<f64> = alpha.iter().map(|&a| sigmoid(a)).collect();
    let mut grad = vec![0.0; k];
    let mut gates = vec![0.0; k];
    for state in 0u32..(1 << k) {
        for (i, g) in gates.iter_mut().enumerate() {
            *g = if state & (1 << i) != 0 { 1.0 } else { 0.0 };
        }
        let value = f(&gates);
        let mut mass = 1.0;
        for (i, &g) in gates.iter().enumerate() {
            mass *= if g == 1.0 { probs[i] } else { 1.0 - probs[i] };
        }
        for i in 0..k {
            // d/d alpha_i of Bern mass: +/- sigma'(alpha_i) times the mass of
            // the other coordinates.
            let pi = probs[i];
            let dsig = pi * (1.0 - pi);
            let others = mass / if gates[i] == 1.0 { pi } else { 1.0 - pi };
            grad[i] += value * others * if gates[i] == 1.0 { dsig } else { -dsig };
        }
    }
    grad
}

/// Monte Carlo mean and standard error of the DisARM estimator over
/// `samples` antithetic draws on an arbitrary objective.
pub fn disarm_monte_carlo(
    bank: &MaskBank,
    f: impl Fn(&[f64]) -> f64,
    samples: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let k = bank.len();
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    for s in 0..samples {
        let draw = sample_masks(bank, crate::rng::derive_seed(seed, s as u64));
        let grad = disarm_gradient(f(&draw.bits), f(&draw.anti_bits), &draw, bank);
        for i in 0..k {
            let g = grad.data()[i];
            sum[i] += g;
            sum_sq[i] += g * g;
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = sum_sq
        .iter()
        .zip(&mean)
        .map(|(&sq, &m)| ((sq / n - m * m).max(0.0) / n).sqrt())
        .collect();
    (mean, stderr)
}
