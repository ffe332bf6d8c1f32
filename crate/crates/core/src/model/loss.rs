//! Prediction, negative sampling, and the gated hinge loss.
//!
//! The score of a pair is the sum of the two views' cosine similarities,
//! so it always lies in [-2, 2]. The loss sums, over batch pairs, a
//! bank-gated positive hinge `m * max(1 - score, 0)` plus the mean hinge
//! `max(score - margin, 0)` over the user's sampled negatives.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::graph::InteractionGraph;

use super::forward::ForwardPass;
use super::{Model, ModelError, ModelResult};

/// Final representations as plain matrices, detached from any tape.
#[derive(Debug, Clone)]
pub struct Representations {
    pub user_collab: Vec<Vec<f64>>,
    pub user_know: Vec<Vec<f64>>,
    pub item_collab: Vec<Vec<f64>>,
    pub item_know: Vec<Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// Two-view cosine score; zero-norm vectors contribute 0.
pub fn predict_score(reps: &Representations, user: usize, item: usize) -> f64 {
    cosine(&reps.user_collab[user], &reps.item_collab[item])
        + cosine(&reps.user_know[user], &reps.item_know[item])
}

/// Draw `count` items uniformly with replacement from the items `user` has
/// not interacted with in the training graph.
pub fn sample_negatives(
    graph: &InteractionGraph,
    user: usize,
    count: usize,
    rng: &mut impl Rng,
) -> ModelResult<Vec<usize>> {
    let train_items = graph.items_of(user);
    let num_items = graph.num_items();
    if train_items.len() >= num_items {
        return Err(ModelError::NoNegativeCandidates { user, num_items });
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let candidate = rng.gen_range(0..num_items);
        if train_items.binary_search(&candidate).is_err() {
            out.push(candidate);
        }
    }
    Ok(out)
}

impl Model {
    /// Record the loss for `batch` on the tape of a finished forward pass.
    ///
    /// `negatives` maps each batch user to its sampled negative items; a
    /// user appearing in several pairs contributes its negative term once
    /// per pair (the term is built once and scaled by the pair count).
    pub(crate) fn loss_node(
        &self,
        tape: &mut Tape,
        fwd: &ForwardPass,
        batch: &[(usize, usize)],
        negatives: &BTreeMap<usize, Vec<usize>>,
    ) -> ModelResult<NodeId> {
        let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(u, i) in batch {
            by_user.entry(u).or_default().push(i);
        }

        let mut total: Option<NodeId> = None;
        let mut accumulate = |tape: &mut Tape, term: NodeId| -> ModelResult<()> {
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
            Ok(())
        };
        let one = tape.scalar_const(1.0);
        let margin = tape.scalar_const(self.config.margin);

        for (&user, items) in &by_user {
            let user_collab = fwd.user_collab[user].expect("batch user was forwarded");
            let user_know = fwd.user_know[user].expect("batch user was forwarded");

            for &item in items {
                let edge = self.graph.edge_id(user, item).expect("batch pairs are train edges");
                if self.bank.bit(edge) == 0.0 {
                    // Gated-out positive: exactly zero contribution.
                    continue;
                }
                let item_collab = tape.row(fwd.item_collab, item)?;
                let item_know = tape.row(fwd.entity_know, item)?;
                let score_c = tape.cosine(user_collab, item_collab)?;
                let score_k = tape.cosine(user_know, item_know)?;
                let score = tape.add(score_c, score_k)?;
                let gap = tape.sub(one, score)?;
                let hinge = tape.max_with_zero(gap);
                accumulate(tape, hinge)?;
            }

            let negs = match negatives.get(&user) {
                Some(n) if !n.is_empty() => n,
                _ => continue,
            };
            let collab_rows = tape.gather(fwd.item_collab_unit, negs)?;
            let know_raw = tape.gather(fwd.entity_know, negs)?;
            let know_rows = tape.l2_normalize_rows(know_raw)?;
            let unit_collab = tape.l2_normalize(user_collab)?;
            let unit_know = tape.l2_normalize(user_know)?;
            let cos_c = tape.matvec(collab_rows, unit_collab)?;
            let cos_k = tape.matvec(know_rows, unit_know)?;
            let scores = tape.add(cos_c, cos_k)?;
            let over = tape.sub(scores, margin)?;
            let hinges = tape.relu(over);
            let summed = tape.sum(hinges);
            let scaled = tape.scale(summed, items.len() as f64 / negs.len() as f64);
            accumulate(tape, scaled)?;
        }

        Ok(total.unwrap_or_else(|| tape.scalar_const(0.0)))
    }

    /// Extract plain representation matrices from a forward pass built over
    /// all users.
    pub(crate) fn extract_representations(&self, tape: &Tape, fwd: &ForwardPass) -> Representations {
        let take_users = |nodes: &[Option<NodeId>]| -> Vec<Vec<f64>> {
            nodes
                .iter()
                .map(|n| {
                    let id = n.expect("representations need a full forward");
                    tape.value(id).data().to_vec()
                })
                .collect()
        };
        let items = self.graph.num_items();
        let item_matrix = |node: NodeId| -> Vec<Vec<f64>> {
            let t = tape.value(node);
            (0..items).map(|i| t.row(i).to_vec()).collect()
        };
        Representations {
            user_collab: take_users(&fwd.user_collab),
            user_know: take_users(&fwd.user_know),
            item_collab: item_matrix(fwd.item_collab),
            item_know: item_matrix(fwd.entity_know),
        }
    }
}
