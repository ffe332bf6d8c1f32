//! Contrastive denoising: collaborative and knowledge similarity
//! distributions over a user's interacted items, divergence-based hard
//! pruning, soft-weighted aggregation, and the iterated relation-aware
//! self-enhancement that pulls a user representation toward its preference
//! prototype.
//!
//! Both views run the same machinery; the knowledge view modulates the user
//! vector with each item's mean relation embedding before the inner
//! product, the collaborative view uses the plain inner product.

use serde::Serialize;

use crate::autodiff::{NodeId, Result, Tape, Tensor};
use crate::graph::KnowledgeGraph;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pruning threshold and self-enhancement depth.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DenoiseConfig {
    /// Divergence threshold; an edge survives while
    /// `|sigmoid(p_collab) - sigmoid(p_know)| < gamma`. The sigmoid
    /// compresses divergences into roughly (0, 0.25), so useful thresholds
    /// sit low on that scale.
    pub gamma: f64,
    /// Self-enhancement rounds per propagation layer (n >= 1).
    pub rounds: usize,
    /// When false, hard pruning is disabled and a single soft-weighted
    /// round runs (the denoising ablation).
    pub hard_prune: bool,
}

impl DenoiseConfig {
    pub fn new(gamma: f64, rounds: usize) -> Self {
        Self { gamma, rounds, hard_prune: true }
    }

    /// Ablation variant: no hard pruning, a single plain weighted round.
    pub fn ablated(self) -> Self {
        Self { rounds: 1, hard_prune: false, ..self }
    }

    fn effective_rounds(&self) -> usize {
        if self.hard_prune {
            self.rounds.max(1)
        } else {
            1
        }
    }
}

/// Numerically shifted softmax over a logit vector. The shift is a detached
/// constant, which leaves both the value and the gradient of the softmax
/// unchanged.
pub fn softmax(tape: &mut Tape, logits: NodeId) -> Result<NodeId> {
    let max = tape.value(logits).iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shift = tape.scalar_const(max);
    let shifted = tape.sub(logits, shift)?;
    let exps = tape.exp(shifted);
    let total = tape.sum(exps);
    tape.div(exps, total)
}

/// Collaborative similarity: softmax over inner products between the user
/// vector and each neighbor item row. `items` is `[deg, d]` with `deg >= 1`.
pub fn collab_similarity(tape: &mut Tape, user: NodeId, items: NodeId) -> Result<NodeId> {
    let logits = tape.matvec(items, user)?;
    softmax(tape, logits)
}

/// Knowledge similarity: per neighbor `i`, the logit is the inner product
/// of the relation-modulated user vector with the item vector, averaged
/// over the item's relation set. With `m_i` the mean relation embedding of
/// item `i` (zero when the relation set is empty, making the logit 0):
///
/// `logit_i = (m_i ⊙ user) · item_i = Σ_d m_id · u_d · i_d`
///
/// `rel_means` carries the `m_i` rows aligned with `items`.
pub fn knowledge_similarity(
    tape: &mut Tape,
    user: NodeId,
    items: NodeId,
    rel_means: NodeId,
) -> Result<NodeId> {
    let modulated = tape.mul(rel_means, items)?;
    let logits = tape.matvec(modulated, user)?;
    softmax(tape, logits)
}

/// Hard-pruning indicator: 1 while the sigmoid-compressed divergence stays
/// strictly below `gamma`, 0 once it reaches it.
pub fn prune_indicator(p_collab: f64, p_know: f64, gamma: f64) -> f64 {
    if (sigmoid(p_collab) - sigmoid(p_know)).abs() < gamma {
        1.0
    } else {
        0.0
    }
}

/// Mean relation embedding per item (`[num_items, d]`), zero rows for items
/// that head no triplet. Gradients flow back into the relation table.
pub fn relation_mean_matrix(
    tape: &mut Tape,
    kg: &KnowledgeGraph,
    relation_table: NodeId,
) -> Result<NodeId> {
    let dim = tape.value(relation_table).cols();
    let num_items = kg.num_items();
    let mut flat_relations = Vec::new();
    let mut flat_items = Vec::new();
    let mut inv_counts = vec![0.0; num_items];
    for item in 0..num_items {
        let rels = kg.relations_of_item(item);
        if rels.is_empty() {
            continue;
        }
        inv_counts[item] = 1.0 / rels.len() as f64;
        for &r in rels {
            flat_relations.push(r);
            flat_items.push(item);
        }
    }
    if flat_relations.is_empty() {
        return Ok(tape.constant(Tensor::zeros(vec![num_items, dim])));
    }
    let rows = tape.gather(relation_table, &flat_relations)?;
    let sums = tape.scatter_add(rows, &flat_items, num_items)?;
    let mut inv_expanded = Vec::with_capacity(num_items * dim);
    for &c in &inv_counts {
        inv_expanded.extend(std::iter::repeat(c).take(dim));
    }
    let inv = tape.constant(Tensor::matrix(num_items, dim, inv_expanded));
    tape.mul(sums, inv)
}

/// Final-round similarities of one training edge, for bank refresh and the
/// explainability export.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EdgeSimilarity {
    pub edge: usize,
    pub user: usize,
    pub item: usize,
    pub p_collab: f64,
    pub p_know: f64,
}

impl EdgeSimilarity {
    pub fn divergence(&self) -> f64 {
        (sigmoid(self.p_collab) - sigmoid(self.p_know)).abs()
    }

    pub fn bit(&self, gamma: f64) -> f64 {
        prune_indicator(self.p_collab, self.p_know, gamma)
    }
}

/// Per-training-edge keep bits that gate positive loss terms. Replaced
/// wholesale at designated refresh points (end of epoch), never mutated in
/// place.
#[derive(Debug, Clone)]
pub struct SimilarityBank {
    bits: Vec<f64>,
}

impl SimilarityBank {
    pub fn all_ones(num_edges: usize) -> Self {
        Self { bits: vec![1.0; num_edges] }
    }

    /// Bank from the final-round similarity report of a full forward pass.
    /// Edges missing from the report keep bit 1.
    pub fn from_report(num_edges: usize, report: &[EdgeSimilarity], gamma: f64) -> Self {
        let mut bits = vec![1.0; num_edges];
        for sim in report {
            bits[sim.edge] = sim.bit(gamma);
        }
        Self { bits }
    }

    pub fn bit(&self, edge: usize) -> f64 {
        self.bits[edge]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn pruned_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0.0).count()
    }

    pub fn pruned_edges(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 0.0).then_some(i))
            .collect()
    }
}

/// Result of running self-enhancement for one user at one layer.
pub struct EnhanceOutcome {
    pub collab_user: NodeId,
    pub know_user: NodeId,
    /// Last-round `(p_collab, p_know)` per neighbor, aligned with the
    /// neighbor order of the item rows.
    pub last_round: Vec<(f64, f64)>,
}

/// Iterated relation-aware self-enhancement for one user, running both
/// views in lockstep. Per round, with the current user vectors:
/// recompute both similarity distributions, derive the shared per-edge
/// keep bit from their divergence, then move each view's user vector toward
/// the bit-gated, probability-weighted sum of its neighbor items and
/// renormalize:
///
/// `u^(n) = normalize(u^(n-1) + Σ_i bit_i · p_i · item_i)`
///
/// Item rows stay fixed for all rounds. With no neighbors the user vector
/// is only renormalized. Outputs always have unit norm (the inputs are
/// nonzero by construction upstream).
pub fn enhance_user(
    tape: &mut Tape,
    config: &DenoiseConfig,
    collab_user: NodeId,
    know_user: NodeId,
    collab_items: Option<NodeId>,
    know_items: Option<NodeId>,
    rel_mean_rows: Option<NodeId>,
) -> Result<EnhanceOutcome> {
    let mut collab = collab_user;
    let mut know = know_user;
    let mut last_round = Vec::new();
    for _ in 0..config.effective_rounds() {
        let (c_items, k_items, r_rows) = match (collab_items, know_items, rel_mean_rows) {
            (Some(c), Some(k), Some(r)) => (c, k, r),
            _ => {
                collab = tape.l2_normalize(collab)?;
                know = tape.l2_normalize(know)?;
                continue;
            }
        };
        let p_collab = collab_similarity(tape, collab, c_items)?;
        let p_know = knowledge_similarity(tape, know, k_items, r_rows)?;

        let pc = tape.value(p_collab).data().to_vec();
        let pk = tape.value(p_know).data().to_vec();
        last_round = pc.iter().zip(&pk).map(|(&c, &k)| (c, k)).collect();

        let bits: Vec<f64> = if config.hard_prune {
            last_round.iter().map(|&(c, k)| prune_indicator(c, k, config.gamma)).collect()
        } else {
            vec![1.0; last_round.len()]
        };
        let bits_node = tape.constant(Tensor::vector(bits));

        let collab_masked = tape.mul(p_collab, bits_node)?;
        let collab_pull = tape.vecmat(collab_masked, c_items)?;
        let collab_sum = tape.add(collab, collab_pull)?;
        collab = tape.l2_normalize(collab_sum)?;

        let know_masked = tape.mul(p_know, bits_node)?;
        let know_pull = tape.vecmat(know_masked, k_items)?;
        let know_sum = tape.add(know, know_pull)?;
        know = tape.l2_normalize(know_sum)?;
    }
    Ok(EnhanceOutcome { collab_user: collab, know_user: know, last_round })
}
