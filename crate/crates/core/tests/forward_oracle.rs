//! Independent straight-line evaluation of the full forward pass on a tiny
//! two-facet instance, compared against the layered implementation to
//! 1e-10 absolute.
//!
//! The oracle below is deliberately written as plain nested loops over
//! `Vec<Vec<f64>>`, sharing no code with the tape-based path it checks.

use refrec_core::data::{Counts, InteractionRecord, SplitDataset, TripletRecord};
use refrec_core::model::{param, predict_score, Ablation, Model, ModelConfig};

type Mat = Vec<Vec<f64>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    logits.iter().map(|v| v.exp() / z).collect()
}

struct ToyWorld {
    split: SplitDataset,
    /// facet per triplet: true = cross-level (item-attribute).
    cross: Vec<bool>,
    /// directed adjacency per entity: (relation, tail, triplet)
    adjacency: Vec<Vec<(usize, usize, usize)>>,
    /// relation set per item
    item_relations: Vec<Vec<usize>>,
    /// train neighborhoods per user
    neighborhoods: Vec<Vec<usize>>,
}

fn toy_world() -> ToyWorld {
    // Entities: item 0, attributes 1 and 2. Two facets: one cross-level
    // fact (0 -r0-> 1), one attribute-level fact (1 -r1-> 2).
    let triplets = vec![
        TripletRecord { head: 0, relation: 0, tail: 1 },
        TripletRecord { head: 1, relation: 1, tail: 2 },
    ];
    let train = vec![
        InteractionRecord { user: 0, item: 0 },
        InteractionRecord { user: 1, item: 0 },
    ];
    let split = SplitDataset {
        train: train.clone(),
        validation: vec![],
        test: vec![],
        kg: triplets.clone(),
        counts: Counts { num_users: 2, num_items: 1, num_entities: 3, num_relations: 2 },
    };
    // Adjacency with inverse edges, as documented for the implementation.
    let adjacency = vec![
        vec![(0, 1, 0)],
        vec![(0, 0, 0), (1, 2, 1)],
        vec![(1, 1, 1)],
    ];
    ToyWorld {
        split,
        cross: vec![true, false],
        adjacency,
        item_relations: vec![vec![0]],
        neighborhoods: vec![vec![0], vec![0]],
    }
}

struct OracleParams {
    user_collab: Mat,
    user_know: Mat,
    item_collab: Mat,
    entity: Mat,
    relation: Mat,
    w_same: Mat,
    w_cross: Mat,
}

fn matvec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// One KG aggregation layer, straight from the definition.
fn oracle_kg_layer(world: &ToyWorld, params: &OracleParams, entity: &Mat, gates: &[f64]) -> Mat {
    let dim = entity[0].len();
    let mut out = vec![vec![0.0; dim]; entity.len()];
    for (h, neigh) in world.adjacency.iter().enumerate() {
        if neigh.is_empty() {
            continue;
        }
        for &(rel, tail, triplet) in neigh {
            let composed: Vec<f64> = (0..dim)
                .map(|d| {
                    if world.cross[triplet] {
                        entity[tail][d] + params.relation[rel][d]
                    } else {
                        entity[tail][d] * params.relation[rel][d]
                    }
                })
                .collect();
            let w = if world.cross[triplet] { &params.w_cross } else { &params.w_same };
            let transformed = matvec(w, &composed);
            for d in 0..dim {
                out[h][d] += transformed[d].max(0.0) * gates[triplet];
            }
        }
        for v in &mut out[h] {
            *v /= neigh.len() as f64;
        }
    }
    out
}

/// The complete forward pass as straight-line loops: KG layers, per-layer
/// n-round dual-view self-enhancement with shared divergence bits, layer
/// sums, and the final cosine scores.
#[allow(clippy::needless_range_loop)]
fn oracle_forward(
    world: &ToyWorld,
    params: &OracleParams,
    gates: &[f64],
    layers: usize,
    rounds: usize,
    gamma: f64,
) -> (Mat, Mat, Mat, Mat) {
    let num_users = params.user_collab.len();
    let num_items = world.split.counts.num_items;

    // Entity stack.
    let mut entity_layers = vec![params.entity.clone()];
    for _ in 0..layers {
        let next = oracle_kg_layer(world, params, entity_layers.last().unwrap(), gates);
        entity_layers.push(next);
    }
    let entity_final: Mat = (0..params.entity.len())
        .map(|e| {
            let mut acc = vec![0.0; params.entity[0].len()];
            for layer in &entity_layers {
                acc = add(&acc, &layer[e]);
            }
            acc
        })
        .collect();

    // Mean relation embedding per item.
    let rel_mean: Mat = (0..num_items)
        .map(|i| {
            let set = &world.item_relations[i];
            if set.is_empty() {
                return vec![0.0; params.relation[0].len()];
            }
            let mut acc = vec![0.0; params.relation[0].len()];
            for &r in set {
                acc = add(&acc, &params.relation[r]);
            }
            acc.iter().map(|v| v / set.len() as f64).collect()
        })
        .collect();

    let item_collab_raw: Mat = params.item_collab.clone();

    let mut user_collab_final = Vec::new();
    let mut user_know_final = Vec::new();
    for u in 0..num_users {
        let items = &world.neighborhoods[u];
        let mut cur_c = normalize(&params.user_collab[u]);
        let mut cur_k = normalize(&params.user_know[u]);
        let mut sum_c = cur_c.clone();
        let mut sum_k = cur_k.clone();
        for layer in 1..=layers {
            for _ in 0..rounds {
                let collab_logits: Vec<f64> =
                    items.iter().map(|&i| dot(&cur_c, &item_collab_raw[i])).collect();
                let p_collab = softmax(&collab_logits);
                let know_logits: Vec<f64> = items
                    .iter()
                    .map(|&i| {
                        let modulated: Vec<f64> = (0..cur_k.len())
                            .map(|d| rel_mean[i][d] * cur_k[d])
                            .collect();
                        dot(&modulated, &entity_layers[layer - 1][i])
                    })
                    .collect();
                let p_know = softmax(&know_logits);
                let bits: Vec<f64> = p_collab
                    .iter()
                    .zip(&p_know)
                    .map(|(&c, &k)| if (sigmoid(c) - sigmoid(k)).abs() < gamma { 1.0 } else { 0.0 })
                    .collect();
                let mut next_c = cur_c.clone();
                let mut next_k = cur_k.clone();
                for (pos, &i) in items.iter().enumerate() {
                    for d in 0..next_c.len() {
                        next_c[d] += bits[pos] * p_collab[pos] * item_collab_raw[i][d];
                        next_k[d] += bits[pos] * p_know[pos] * entity_layers[layer - 1][i][d];
                    }
                }
                cur_c = normalize(&next_c);
                cur_k = normalize(&next_k);
            }
            sum_c = add(&sum_c, &cur_c);
            sum_k = add(&sum_k, &cur_k);
        }
        user_collab_final.push(sum_c);
        user_know_final.push(sum_k);
    }

    let item_collab_final: Mat = item_collab_raw
        .iter()
        .map(|row| row.iter().map(|v| v * (layers + 1) as f64).collect())
        .collect();
    let item_know_final: Mat = (0..num_items).map(|i| entity_final[i].clone()).collect();

    (user_collab_final, user_know_final, item_collab_final, item_know_final)
}

fn table(t: &refrec_core::autodiff::Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[test]
fn layered_forward_equals_straight_line_oracle() {
    let world = toy_world();
    let config = ModelConfig {
        embed_dim: 4,
        layers: 2,
        rounds: 2,
        gamma: 0.2,
        negatives: 2,
        margin: 0.6,
        learning_rate: 1e-3,
        batch_size: 8,
        ablation: Ablation::Full,
        seed: 99,
    };
    let model = Model::new(config, &world.split).unwrap();
    let params = OracleParams {
        user_collab: table(model.store.get(param::USER_COLLAB).unwrap()),
        user_know: table(model.store.get(param::USER_KNOW).unwrap()),
        item_collab: table(model.store.get(param::ITEM_COLLAB).unwrap()),
        entity: table(model.store.get(param::ENTITY).unwrap()),
        relation: table(model.store.get(param::RELATION).unwrap()),
        w_same: table(model.store.get(param::TRANSFORM_SAME).unwrap()),
        w_cross: table(model.store.get(param::TRANSFORM_CROSS).unwrap()),
    };

    for gates in [vec![1.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.8]] {
        let reps = {
            let mut probe = refrec_core::autodiff::Tape::new();
            let users = vec![0, 1];
            let fwd = model.forward(&mut probe, &model.store, &gates, &users).unwrap();
            model_extract(&model, &probe, &fwd)
        };
        let (uc, uk, ic, ik) = oracle_forward(&world, &params, &gates, 2, 2, 0.2);

        for u in 0..2 {
            assert_close(&reps.user_collab[u], &uc[u], "user_collab");
            assert_close(&reps.user_know[u], &uk[u], "user_know");
        }
        assert_close(&reps.item_collab[0], &ic[0], "item_collab");
        assert_close(&reps.item_know[0], &ik[0], "item_know");

        // Predictions agree too.
        for u in 0..2 {
            let got = predict_score(&reps, u, 0);
            let want = cosine(&uc[u], &ic[0]) + cosine(&uk[u], &ik[0]);
            assert!((got - want).abs() < 1e-10, "score {got} vs {want}");
        }
    }
}

fn model_extract(
    model: &Model,
    tape: &refrec_core::autodiff::Tape,
    fwd: &refrec_core::model::ForwardPass,
) -> refrec_core::model::Representations {
    // Mirror of the production extraction, kept local to the test.
    let users = |nodes: &[Option<refrec_core::autodiff::NodeId>]| -> Mat {
        nodes.iter().map(|n| tape.value(n.unwrap()).data().to_vec()).collect()
    };
    let items = model.graph.num_items();
    let mat = |node: refrec_core::autodiff::NodeId| -> Mat {
        let t = tape.value(node);
        (0..items).map(|i| t.row(i).to_vec()).collect()
    };
    refrec_core::model::Representations {
        user_collab: users(&fwd.user_collab),
        user_know: users(&fwd.user_know),
        item_collab: mat(fwd.item_collab),
        item_know: mat(fwd.entity_know),
    }
}

fn assert_close(got: &[f64], want: &[f64], label: &str) {
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-10, "{label}: {g} vs {w}");
    }
}
