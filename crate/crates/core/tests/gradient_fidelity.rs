//! Full-model gradient verification: reverse-mode gradients of the training
//! loss against central finite differences, for every continuous parameter
//! coordinate, on a small instance.

use std::collections::BTreeMap;

use refrec_core::autodiff::{check_gradients, numeric_gradient, relative_error};
use refrec_core::data::{Counts, InteractionRecord, SplitDataset, TripletRecord};
use refrec_core::model::{param, Ablation, Model, ModelConfig};
use refrec_core::rng::rng;
use rand::Rng;

fn toy_split(seed: u64) -> SplitDataset {
    // 6 users, 6 items, 14 entities, 4 relations, 18 triplets covering all
    // three facets.
    let mut stream = rng(seed);
    let num_users = 6;
    let num_items = 6;
    let num_entities = 14;
    let num_relations = 4;
    let mut train = Vec::new();
    for u in 0..num_users {
        let mut items: Vec<usize> = (0..num_items).collect();
        for _ in 0..3 {
            let k = stream.gen_range(0..items.len());
            train.push(InteractionRecord { user: u, item: items.swap_remove(k) });
        }
    }
    let mut kg = Vec::new();
    for i in 0..num_items {
        kg.push(TripletRecord {
            head: i,
            relation: stream.gen_range(0..num_relations),
            tail: num_items + stream.gen_range(0..num_entities - num_items),
        });
    }
    // item-item facts
    kg.push(TripletRecord { head: 0, relation: 0, tail: 1 });
    kg.push(TripletRecord { head: 2, relation: 1, tail: 3 });
    // attribute-attribute facts
    for a in 0..4 {
        kg.push(TripletRecord {
            head: num_items + a,
            relation: stream.gen_range(0..num_relations),
            tail: num_items + 4 + stream.gen_range(0..4),
        });
    }
    for _ in 0..6 {
        kg.push(TripletRecord {
            head: stream.gen_range(0..num_items),
            relation: stream.gen_range(0..num_relations),
            tail: num_items + stream.gen_range(0..num_entities - num_items),
        });
    }
    SplitDataset {
        train,
        validation: vec![],
        test: vec![],
        kg,
        counts: Counts { num_users, num_items, num_entities, num_relations },
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let split = toy_split(17);
    let config = ModelConfig {
        embed_dim: 8,
        layers: 2,
        rounds: 2,
        gamma: 0.2,
        negatives: 6,
        margin: 0.6,
        learning_rate: 1e-3,
        batch_size: 64,
        ablation: Ablation::Full,
        seed: 5,
    };
    let model = Model::new(config, &split).unwrap();

    // Frozen gates with a mix of on and off, frozen batch and negatives.
    let mut gates = vec![1.0; split.kg.len()];
    gates[3] = 0.0;
    gates[7] = 0.0;
    let batch: Vec<(usize, usize)> = split.train.iter().map(|r| (r.user, r.item)).collect();
    let mut negatives = BTreeMap::new();
    let mut stream = rng(23);
    for u in 0..split.counts.num_users {
        let items = (0..6).map(|_| stream.gen_range(0..split.counts.num_items)).collect();
        negatives.insert(u, items);
    }

    let (_, analytic) =
        model.continuous_gradients(&model.store, &gates, &batch, &negatives).unwrap();
    let loss_fn = |store: &refrec_core::autodiff::ParameterStore| -> f64 {
        model.loss_value(store, &gates, &batch, &negatives).unwrap()
    };
    let report =
        check_gradients(&model.store, &analytic, &param::CONTINUOUS, 1e-6, 1e-4, loss_fn);
    for entry in &report.entries {
        assert!(
            entry.passed,
            "{}: max rel err {} at {} (analytic {}, numeric {})",
            entry.name, entry.max_rel_error, entry.worst_coordinate, entry.analytic, entry.numeric
        );
    }
}

#[test]
fn gradients_match_under_ablations() {
    let split = toy_split(29);
    for ablation in [Ablation::NoRefine, Ablation::NoDenoise, Ablation::NoRefineNoDenoise] {
        let config = ModelConfig {
            embed_dim: 6,
            layers: 2,
            rounds: 2,
            gamma: 0.2,
            negatives: 4,
            margin: 0.6,
            learning_rate: 1e-3,
            batch_size: 64,
            ablation,
            seed: 3,
        };
        let model = Model::new(config, &split).unwrap();
        let gates = vec![1.0; split.kg.len()];
        let batch: Vec<(usize, usize)> = split.train.iter().map(|r| (r.user, r.item)).collect();
        let mut negatives = BTreeMap::new();
        let mut stream = rng(31);
        for u in 0..split.counts.num_users {
            let items = (0..4).map(|_| stream.gen_range(0..split.counts.num_items)).collect();
            negatives.insert(u, items);
        }
        let (_, analytic) =
            model.continuous_gradients(&model.store, &gates, &batch, &negatives).unwrap();
        let loss_fn = |store: &refrec_core::autodiff::ParameterStore| -> f64 {
            model.loss_value(store, &gates, &batch, &negatives).unwrap()
        };
        let report =
            check_gradients(&model.store, &analytic, &param::CONTINUOUS, 1e-6, 1e-4, loss_fn);
        assert!(
            report.passed(),
            "{:?}: {:?}",
            ablation,
            report
                .entries
                .iter()
                .filter(|e| !e.passed)
                .map(|e| (e.name.clone(), e.max_rel_error))
                .collect::<Vec<_>>()
        );
    }
}

#[test]
fn unused_parameters_receive_zero_gradient() {
    // A batch touching a single user: the other users' embedding rows must
    // come back with exactly zero gradient.
    let split = toy_split(41);
    let config = ModelConfig {
        embed_dim: 4,
        layers: 1,
        rounds: 1,
        gamma: 0.2,
        negatives: 2,
        margin: 0.6,
        learning_rate: 1e-3,
        batch_size: 64,
        ablation: Ablation::Full,
        seed: 7,
    };
    let model = Model::new(config, &split).unwrap();
    let gates = vec![1.0; split.kg.len()];
    let batch = vec![(0usize, split.train[0].item)];
    let mut negatives = BTreeMap::new();
    negatives.insert(0usize, vec![1usize, 2]);
    let (_, analytic) =
        model.continuous_gradients(&model.store, &gates, &batch, &negatives).unwrap();
    let user_grad = &analytic[param::USER_COLLAB];
    let d = 4;
    for u in 1..split.counts.num_users {
        for k in 0..d {
            assert_eq!(user_grad.data()[u * d + k], 0.0, "user {u} coordinate {k}");
        }
    }
    // FD agrees on a few spot coordinates of the untouched users.
    let numeric = numeric_gradient(&model.store, param::USER_COLLAB, 1e-6, |store| {
        model.loss_value(store, &gates, &batch, &negatives).unwrap()
    });
    for u in 1..3 {
        for k in 0..d {
            assert!(relative_error(0.0, numeric.data()[u * d + k]) < 1e-4);
        }
    }
}
