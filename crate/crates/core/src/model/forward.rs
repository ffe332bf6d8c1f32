//! The dual-view forward pass.
//!
//! Knowledge view: entities (items are the prefix) propagate over the KG
//! through the gated facet-routed aggregation; users aggregate their
//! interacted items' previous-layer knowledge representations through the
//! denoising self-enhancement. Collaborative view: a separate item
//! embedding table, row-normalized and held fixed across layers, with users
//! aggregating it through the mirrored (unmodulated) self-enhancement.
//! Every node's final representation is the sum of its layer outputs, layer
//! 0 included; user and collaborative-item layer-0 entries are unit
//! normalized, entities enter raw.

use crate::autodiff::{NodeId, ParameterStore, Tape};
use crate::denoiser::{enhance_user, relation_mean_matrix, EdgeSimilarity};
use crate::refiner::{kg_forward, KgPropagation};

use super::{param, Model, ModelResult};

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    /// Final per-user representations, indexed by user id; only users
    /// requested at build time are present.
    pub user_collab: Vec<Option<NodeId>>,
    pub user_know: Vec<Option<NodeId>>,
    /// Final collaborative item matrix `[num_items, d]`.
    pub item_collab: NodeId,
    /// Unit-normalized collaborative item table (layer representation).
    pub item_collab_unit: NodeId,
    /// Final knowledge entity matrix `[num_entities, d]`; item rows are the
    /// knowledge item representations.
    pub entity_know: NodeId,
    /// Final-layer, final-round similarity pairs per computed training
    /// edge.
    pub edge_report: Vec<EdgeSimilarity>,
    /// Parameter leaves recorded on the tape, for gradient collection.
    pub leaves: Vec<(&'static str, NodeId)>,
}

impl Model {
    /// Record the full forward pass on `tape` for the given `users`.
    ///
    /// `store` usually is `self.store`; finite-difference probes pass a
    /// perturbed copy. `gates` carries one weight per triplet: sampled
    /// bits during training, expected keep probabilities at evaluation.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        gates: &[f64],
        users: &[usize],
    ) -> ModelResult<ForwardPass> {
        let d = self.config.embed_dim;
        let layers = self.config.layers;
        let denoise = self.config.denoise_config();

        let mut leaves = Vec::new();
        let mut leaf = |tape: &mut Tape, name: &'static str| -> ModelResult<NodeId> {
            let node = tape.leaf(store.get(name)?.clone());
            leaves.push((name, node));
            Ok(node)
        };
        let user_collab_table = leaf(tape, param::USER_COLLAB)?;
        let user_know_table = leaf(tape, param::USER_KNOW)?;
        let item_collab_table = leaf(tape, param::ITEM_COLLAB)?;
        let entity_table = leaf(tape, param::ENTITY)?;
        let relation_table = leaf(tape, param::RELATION)?;
        let transform_same = leaf(tape, param::TRANSFORM_SAME)?;
        let transform_cross = leaf(tape, param::TRANSFORM_CROSS)?;

        // Knowledge side: stacked gated aggregation over the KG.
        let propagation = KgPropagation::new(
            tape,
            &self.agg_index,
            relation_table,
            transform_same,
            transform_cross,
            gates,
            d,
        )?;
        let kg_out = kg_forward(tape, &propagation, entity_table, layers)?;

        // Relation-set means for the knowledge similarity, fixed per pass.
        let rel_means = relation_mean_matrix(tape, &self.kg, relation_table)?;

        // Collaborative items enter similarities and aggregation raw, like
        // the knowledge-side entity rows; scoring normalizes through the
        // cosine. The table is constant across layers.
        let item_collab_unit = tape.l2_normalize_rows(item_collab_table)?;
        let item_collab = tape.scale(item_collab_table, (layers + 1) as f64);

        let mut user_collab: Vec<Option<NodeId>> = vec![None; self.graph.num_users()];
        let mut user_know: Vec<Option<NodeId>> = vec![None; self.graph.num_users()];
        let mut edge_report = Vec::new();

        for &u in users {
            let items = self.graph.items_of(u);
            let (collab_rows, rel_rows) = if items.is_empty() {
                (None, None)
            } else {
                (
                    Some(tape.gather(item_collab_table, items)?),
                    Some(tape.gather(rel_means, items)?),
                )
            };

            let raw_collab = tape.row(user_collab_table, u)?;
            let mut cur_collab = tape.l2_normalize(raw_collab)?;
            let raw_know = tape.row(user_know_table, u)?;
            let mut cur_know = tape.l2_normalize(raw_know)?;
            let mut sum_collab = cur_collab;
            let mut sum_know = cur_know;

            for layer in 1..=layers {
                let know_rows = if items.is_empty() {
                    None
                } else {
                    Some(tape.gather(kg_out.per_layer[layer - 1], items)?)
                };
                let outcome = enhance_user(
                    tape,
                    &denoise,
                    cur_collab,
                    cur_know,
                    collab_rows,
                    know_rows,
                    rel_rows,
                )?;
                cur_collab = outcome.collab_user;
                cur_know = outcome.know_user;
                sum_collab = tape.add(sum_collab, cur_collab)?;
                sum_know = tape.add(sum_know, cur_know)?;
                if layer == layers {
                    for (pos, &(p_collab, p_know)) in outcome.last_round.iter().enumerate() {
                        let item = items[pos];
                        let edge = self
                            .graph
                            .edge_id(u, item)
                            .expect("neighbor lists and edge index are built together");
                        edge_report.push(EdgeSimilarity { edge, user: u, item, p_collab, p_know });
                    }
                }
            }
            user_collab[u] = Some(sum_collab);
            user_know[u] = Some(sum_know);
        }

        Ok(ForwardPass {
            user_collab,
            user_know,
            item_collab,
            item_collab_unit,
            entity_know: kg_out.summed,
            edge_report,
            leaves,
        })
    }
}
