//! Planted-noise denoising: train on a block-structured synthetic with
//! injected cross-block interactions and check that the edges the bank
//! prunes are enriched in planted noise well beyond the base rate.

use std::collections::HashSet;

use refrec_core::data::{inject_interaction_noise, split_dataset, NoiseSpec, ReplacedSplit};
use refrec_core::model::{Ablation, Model, ModelConfig, Trainer};
use refrec_core::synth::{generate, SyntheticSpec};

#[test]
fn pruned_edges_are_enriched_in_planted_noise() {
    let spec = SyntheticSpec {
        users: 60,
        items: 60,
        blocks: 3,
        interactions_per_user: 10,
        junk_attrs: 4,
        junk_triplets_per_item: 1,
        seed: 101,
    };
    let synth = generate(&spec);
    let split = split_dataset(&synth.interactions, &synth.kg, (0.8, 0.1, 0.1), 101).unwrap();
    let noise = NoiseSpec { interaction_noise_rate: 0.2, kg_noise_rate: 0.0, seed: 33 };
    let (polluted, replaced) = inject_interaction_noise(&split, &noise).unwrap();

    let noisy_pairs: HashSet<(usize, usize)> = replaced
        .iter()
        .filter(|r| r.split == ReplacedSplit::Train)
        .map(|r| (r.user, r.new_item))
        .collect();
    let base_rate = noisy_pairs.len() as f64 / polluted.train.len() as f64;

    let config = ModelConfig {
        embed_dim: 8,
        layers: 2,
        rounds: 2,
        gamma: 0.02,
        negatives: 32,
        margin: 0.8,
        learning_rate: 0.05,
        batch_size: 32,
        ablation: Ablation::Full,
        seed: 5,
    };
    let mut model = Model::new(config, &polluted).unwrap();
    Trainer::run(&mut model, 0, 100, |_, _| Ok(())).unwrap();

    let pruned = model.bank.pruned_edges();
    let mut hits = 0usize;
    for &edge in &pruned {
        let (u, i) = model.graph.edge_endpoints(edge);
        if noisy_pairs.contains(&(u, i)) {
            hits += 1;
        }
    }
    let precision = if pruned.is_empty() { 0.0 } else { hits as f64 / pruned.len() as f64 };
    println!(
        "pruned {} edges, {} are planted noise (precision {:.3}, base rate {:.3})",
        pruned.len(),
        hits,
        precision,
        base_rate
    );
    assert!(!pruned.is_empty(), "nothing was pruned; gamma is too permissive");
    assert!(
        precision > base_rate,
        "pruning precision {precision:.3} does not beat the base rate {base_rate:.3}"
    );
}
