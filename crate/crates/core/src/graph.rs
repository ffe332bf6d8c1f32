//! Immutable adjacency indices over the bipartite interaction graph and the
//! KG, facet classification of triplets, and per-item relation sets.
//!
//! All structures are built once and shared read-only afterwards.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::data::{Counts, InteractionRecord, TripletRecord};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("interaction ({user}, {item}) out of bounds for {num_users} users / {num_items} items")]
    InteractionOutOfBounds { user: usize, item: usize, num_users: usize, num_items: usize },
    #[error("triplet ({head}, {relation}, {tail}) out of bounds for {num_entities} entities / {num_relations} relations")]
    TripletOutOfBounds {
        head: usize,
        relation: usize,
        tail: usize,
        num_entities: usize,
        num_relations: usize,
    },
}

/// Triplet category by endpoint type. Item indices are the prefix
/// `[0, num_items)` of the entity space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Facet {
    /// Both endpoints are items ("item-item" facts).
    ItemItem,
    /// Exactly one endpoint is an item ("item-attribute" facts).
    ItemAttribute,
    /// Neither endpoint is an item ("attribute-attribute" facts).
    AttributeAttribute,
}

impl Facet {
    pub fn label(self) -> &'static str {
        match self {
            Facet::ItemItem => "item-item",
            Facet::ItemAttribute => "item-attribute",
            Facet::AttributeAttribute => "attribute-attribute",
        }
    }
}

/// Classify every triplet by whether its endpoints fall in the item prefix.
/// Total function: the three facets partition any triplet set.
pub fn classify_facets(triplets: &[TripletRecord], num_items: usize) -> Vec<Facet> {
    triplets
        .iter()
        .map(|t| match (t.head < num_items, t.tail < num_items) {
            (true, true) => Facet::ItemItem,
            (false, false) => Facet::AttributeAttribute,
            _ => Facet::ItemAttribute,
        })
        .collect()
}

/// Bipartite user-item adjacency with dense edge ids.
///
/// Edge ids enumerate `(user, item)` pairs in ascending user order, items
/// sorted ascending within a user: a bijection onto `[0, |edges|)`.
#[derive(Debug, Clone)]
pub struct InteractionGraph {
    user_neighbors: Vec<Vec<usize>>,
    item_neighbors: Vec<Vec<usize>>,
    /// Edges of user `u` are `user_offsets[u] .. user_offsets[u + 1]`.
    user_offsets: Vec<usize>,
    edge_index: BTreeMap<(usize, usize), usize>,
}

impl InteractionGraph {
    pub fn num_users(&self) -> usize {
        self.user_neighbors.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_neighbors.len()
    }

    pub fn num_edges(&self) -> usize {
        *self.user_offsets.last().unwrap_or(&0)
    }

    /// Items interacted by `user`, ascending.
    pub fn items_of(&self, user: usize) -> &[usize] {
        &self.user_neighbors[user]
    }

    /// Users who interacted with `item`, ascending.
    pub fn users_of(&self, item: usize) -> &[usize] {
        &self.item_neighbors[item]
    }

    /// Dense edge id for `(user, item)`, if the edge exists.
    pub fn edge_id(&self, user: usize, item: usize) -> Option<usize> {
        self.edge_index.get(&(user, item)).copied()
    }

    /// Edge ids of `user`'s edges, aligned with `items_of(user)`.
    pub fn edge_range(&self, user: usize) -> std::ops::Range<usize> {
        self.user_offsets[user]..self.user_offsets[user + 1]
    }

    /// `(user, item)` for a dense edge id.
    pub fn edge_endpoints(&self, edge: usize) -> (usize, usize) {
        debug_assert!(edge < self.num_edges());
        let user = self.user_offsets.partition_point(|&o| o <= edge) - 1;
        let item = self.user_neighbors[user][edge - self.user_offsets[user]];
        (user, item)
    }
}

/// One directed KG adjacency entry: a relation/tail context of some head
/// entity, remembering which undirected triplet it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KgNeighbor {
    pub relation: usize,
    pub tail: usize,
    pub triplet_id: usize,
}

/// KG triplets with facet labels, directed adjacency (forward plus inverse
/// edges so tail-only entities still receive context), and per-item
/// relation sets.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub triplets: Vec<TripletRecord>,
    pub facets: Vec<Facet>,
    entity_neighbors: Vec<Vec<KgNeighbor>>,
    item_relation_sets: Vec<Vec<usize>>,
    num_items: usize,
}

impl KnowledgeGraph {
    pub fn num_triplets(&self) -> usize {
        self.triplets.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_neighbors.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Neighborhood of entity `h`: forward `(r, t)` contexts of triplets
    /// headed at `h` plus inverse `(r, h')` contexts of triplets with tail
    /// `h`. Inverse entries reuse the forward triplet's id, so they share
    /// its mask and facet.
    pub fn neighbors(&self, entity: usize) -> &[KgNeighbor] {
        &self.entity_neighbors[entity]
    }

    /// Deduplicated, ascending relations over triplets headed at item `i`.
    /// Empty when the item heads no triplet; downstream treats the mean over
    /// an empty relation set as 0.
    pub fn relations_of_item(&self, item: usize) -> &[usize] {
        &self.item_relation_sets[item]
    }

    pub fn facet_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for f in &self.facets {
            match f {
                Facet::ItemItem => counts[0] += 1,
                Facet::ItemAttribute => counts[1] += 1,
                Facet::AttributeAttribute => counts[2] += 1,
            }
        }
        counts
    }
}

/// Build both indices from validated records.
pub fn build_indices(
    interactions: &[InteractionRecord],
    triplets: &[TripletRecord],
    counts: &Counts,
) -> Result<(InteractionGraph, KnowledgeGraph), GraphError> {
    let interaction_graph = build_interaction_graph(interactions, counts)?;
    let kg = build_knowledge_graph(triplets, counts)?;
    Ok((interaction_graph, kg))
}

pub fn build_interaction_graph(
    interactions: &[InteractionRecord],
    counts: &Counts,
) -> Result<InteractionGraph, GraphError> {
    let mut user_neighbors: Vec<Vec<usize>> = vec![Vec::new(); counts.num_users];
    let mut item_neighbors: Vec<Vec<usize>> = vec![Vec::new(); counts.num_items];
    for rec in interactions {
        if rec.user >= counts.num_users || rec.item >= counts.num_items {
            return Err(GraphError::InteractionOutOfBounds {
                user: rec.user,
                item: rec.item,
                num_users: counts.num_users,
                num_items: counts.num_items,
            });
        }
        user_neighbors[rec.user].push(rec.item);
        item_neighbors[rec.item].push(rec.user);
    }
    for list in user_neighbors.iter_mut().chain(item_neighbors.iter_mut()) {
        list.sort_unstable();
        list.dedup();
    }
    let mut user_offsets = Vec::with_capacity(counts.num_users + 1);
    let mut edge_index = BTreeMap::new();
    let mut next = 0usize;
    user_offsets.push(0);
    for (user, items) in user_neighbors.iter().enumerate() {
        for &item in items {
            edge_index.insert((user, item), next);
            next += 1;
        }
        user_offsets.push(next);
    }
    Ok(InteractionGraph { user_neighbors, item_neighbors, user_offsets, edge_index })
}

pub fn build_knowledge_graph(
    triplets: &[TripletRecord],
    counts: &Counts,
) -> Result<KnowledgeGraph, GraphError> {
    for t in triplets {
        if t.head >= counts.num_entities
            || t.tail >= counts.num_entities
            || t.relation >= counts.num_relations
        {
            return Err(GraphError::TripletOutOfBounds {
                head: t.head,
                relation: t.relation,
                tail: t.tail,
                num_entities: counts.num_entities,
                num_relations: counts.num_relations,
            });
        }
    }
    let facets = classify_facets(triplets, counts.num_items);
    let mut entity_neighbors: Vec<Vec<KgNeighbor>> = vec![Vec::new(); counts.num_entities];
    for (id, t) in triplets.iter().enumerate() {
        entity_neighbors[t.head].push(KgNeighbor { relation: t.relation, tail: t.tail, triplet_id: id });
        // Inverse edge; self-loops get no duplicate.
        if t.tail != t.head {
            entity_neighbors[t.tail].push(KgNeighbor { relation: t.relation, tail: t.head, triplet_id: id });
        }
    }
    let mut item_relation_sets: Vec<Vec<usize>> = vec![Vec::new(); counts.num_items];
    for t in triplets {
        if t.head < counts.num_items {
            item_relation_sets[t.head].push(t.relation);
        }
    }
    for set in &mut item_relation_sets {
        set.sort_unstable();
        set.dedup();
    }
    Ok(KnowledgeGraph {
        triplets: triplets.to_vec(),
        facets,
        entity_neighbors,
        item_relation_sets,
        num_items: counts.num_items,
    })
}

/// Degree histograms and facet counts, for the optional debug dump.
#[derive(Debug, Serialize)]
pub struct GraphSummary {
    pub num_users: usize,
    pub num_items: usize,
    pub num_edges: usize,
    pub num_triplets: usize,
    pub facet_counts: BTreeMap<String, usize>,
    pub user_degree_histogram: BTreeMap<usize, usize>,
    pub item_degree_histogram: BTreeMap<usize, usize>,
}

pub fn summarize(graph: &InteractionGraph, kg: &KnowledgeGraph) -> GraphSummary {
    let mut user_hist = BTreeMap::new();
    for u in 0..graph.num_users() {
        *user_hist.entry(graph.items_of(u).len()).or_insert(0) += 1;
    }
    let mut item_hist = BTreeMap::new();
    for i in 0..graph.num_items() {
        *item_hist.entry(graph.users_of(i).len()).or_insert(0) += 1;
    }
    let [t1, t2, t3] = kg.facet_counts();
    let mut facet_counts = BTreeMap::new();
    facet_counts.insert(Facet::ItemItem.label().to_string(), t1);
    facet_counts.insert(Facet::ItemAttribute.label().to_string(), t2);
    facet_counts.insert(Facet::AttributeAttribute.label().to_string(), t3);
    GraphSummary {
        num_users: graph.num_users(),
        num_items: graph.num_items(),
        num_edges: graph.num_edges(),
        num_triplets: kg.num_triplets(),
        facet_counts,
        user_degree_histogram: user_hist,
        item_degree_histogram: item_hist,
    }
}
