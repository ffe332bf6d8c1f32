//! End-to-end model: dual-view forward pass, cosine prediction, gated
//! hinge loss with sampled negatives, and the two-forward-pass training
//! step that couples continuous gradients with the antithetic gate
//! estimator.

mod forward;
mod loss;
mod trainer;

pub use forward::ForwardPass;
pub use loss::{predict_score, sample_negatives, Representations};
pub use trainer::{EpochLog, StepReport, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{xavier_init, DiffError, ParameterStore, Tensor};
use crate::data::SplitDataset;
use crate::denoiser::{DenoiseConfig, SimilarityBank};
use crate::graph::{build_indices, GraphError, InteractionGraph, KnowledgeGraph};
use crate::refiner::{AggregationIndex, MaskBank};
use crate::rng::derive_seed;

/// Parameter names used throughout the store and checkpoints.
pub mod param {
    pub const USER_COLLAB: &str = "user.collab";
    pub const USER_KNOW: &str = "user.knowledge";
    pub const ITEM_COLLAB: &str = "item.collab";
    pub const ENTITY: &str = "entity";
    pub const RELATION: &str = "relation";
    /// Transform for same-level facts (item-item, attribute-attribute).
    pub const TRANSFORM_SAME: &str = "transform.same";
    /// Transform for cross-level facts (item-attribute).
    pub const TRANSFORM_CROSS: &str = "transform.cross";
    pub const MASK_ALPHA: &str = "mask.alpha";

    pub const ALL: [&str; 8] = [
        USER_COLLAB,
        USER_KNOW,
        ITEM_COLLAB,
        ENTITY,
        RELATION,
        TRANSFORM_SAME,
        TRANSFORM_CROSS,
        MASK_ALPHA,
    ];

    /// Every continuously differentiated parameter (the gate logits are
    /// optimized by the antithetic estimator instead).
    pub const CONTINUOUS: [&str; 7] = [
        USER_COLLAB,
        USER_KNOW,
        ITEM_COLLAB,
        ENTITY,
        RELATION,
        TRANSFORM_SAME,
        TRANSFORM_CROSS,
    ];
}

/// Which component to disable, for controlled comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// The complete model.
    Full,
    /// Knowledge refining off: every gate forced to 1 and a single
    /// aggregation route applied to every facet.
    NoRefine,
    /// Contrastive denoising off: no hard pruning, one plain weighted
    /// aggregation round, loss bank all ones.
    NoDenoise,
    /// Both components off.
    NoRefineNoDenoise,
}

impl Ablation {
    pub fn refining_enabled(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoDenoise)
    }

    pub fn denoising_enabled(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoRefine)
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRefine => "no-refine",
            Ablation::NoDenoise => "no-denoise",
            Ablation::NoRefineNoDenoise => "no-refine-no-denoise",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no-refine" => Ok(Ablation::NoRefine),
            "no-denoise" => Ok(Ablation::NoDenoise),
            "no-refine-no-denoise" => Ok(Ablation::NoRefineNoDenoise),
            other => Err(format!(
                "unknown ablation '{other}' (expected full, no-refine, no-denoise, no-refine-no-denoise)"
            )),
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Propagation layers L.
    pub layers: usize,
    /// Self-enhancement rounds n per layer.
    pub rounds: usize,
    /// Divergence pruning threshold.
    pub gamma: f64,
    /// Negative samples per user per step.
    pub negatives: usize,
    /// Margin for negative hinge terms.
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            layers: 3,
            rounds: 2,
            gamma: 0.2,
            negatives: 400,
            margin: 0.7,
            learning_rate: 1e-3,
            batch_size: 4096,
            ablation: Ablation::Full,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn denoise_config(&self) -> DenoiseConfig {
        let base = DenoiseConfig::new(self.gamma, self.rounds);
        if self.ablation.denoising_enabled() {
            base
        } else {
            base.ablated()
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("model config invalid: {0}")]
    BadConfig(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: f(b) = {loss}, f(b~) = {loss_anti}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64, loss_anti: f64 },
    #[error("user {user} interacts with all {num_items} items; cannot sample negatives")]
    NoNegativeCandidates { user: usize, num_items: usize },
}

pub type ModelResult<T> = std::result::Result<T, ModelError>;

/// The trained system: immutable graph indices, trainable parameters, the
/// loss-gating bank, and the configuration.
pub struct Model {
    pub config: ModelConfig,
    pub graph: InteractionGraph,
    pub kg: KnowledgeGraph,
    pub agg_index: AggregationIndex,
    pub store: ParameterStore,
    pub bank: SimilarityBank,
}

impl Model {
    /// Build graphs from the training split and initialize parameters (a
    /// deterministic function of `config.seed`). Gate logits start at 0:
    /// keep probability 0.5, the maximum-entropy prior over gates.
    pub fn new(config: ModelConfig, split: &SplitDataset) -> ModelResult<Model> {
        if config.layers == 0 {
            return Err(ModelError::BadConfig("layers must be >= 1".into()));
        }
        if config.rounds == 0 {
            return Err(ModelError::BadConfig("rounds must be >= 1".into()));
        }
        if config.embed_dim == 0 {
            return Err(ModelError::BadConfig("embed_dim must be >= 1".into()));
        }
        let (graph, kg) = build_indices(&split.train, &split.kg, &split.counts)?;
        let store = init_parameters(&config, split)?;
        let agg_index = AggregationIndex::new(&kg, !config.ablation.refining_enabled());
        let bank = SimilarityBank::all_ones(graph.num_edges());
        Ok(Model { config, graph, kg, agg_index, store, bank })
    }

    /// Swap in parameters restored from a checkpoint.
    pub fn with_store(mut self, store: ParameterStore) -> Self {
        self.store = store;
        self
    }

    /// Gate weights for evaluation: expected keep probabilities (or all
    /// ones under the refining ablation).
    pub fn expected_gates(&self) -> Vec<f64> {
        if self.config.ablation.refining_enabled() {
            MaskBank::from_tensor(
                self.store.get(param::MASK_ALPHA).expect("alpha registered"),
            )
            .keep_probabilities()
        } else {
            vec![1.0; self.kg.num_triplets()]
        }
    }

    pub fn mask_bank(&self) -> MaskBank {
        MaskBank::from_tensor(self.store.get(param::MASK_ALPHA).expect("alpha registered"))
    }
}

fn init_parameters(config: &ModelConfig, split: &SplitDataset) -> ModelResult<ParameterStore> {
    let c = &split.counts;
    let d = config.embed_dim;
    let mut store = ParameterStore::new();
    let seed_of = |salt: u64| derive_seed(config.seed, salt);
    store.insert(param::USER_COLLAB, xavier_init(&[c.num_users, d], seed_of(1)))?;
    store.insert(param::USER_KNOW, xavier_init(&[c.num_users, d], seed_of(2)))?;
    store.insert(param::ITEM_COLLAB, xavier_init(&[c.num_items, d], seed_of(3)))?;
    store.insert(param::ENTITY, xavier_init(&[c.num_entities, d], seed_of(4)))?;
    store.insert(param::RELATION, xavier_init(&[c.num_relations.max(1), d], seed_of(5)))?;
    store.insert(param::TRANSFORM_SAME, xavier_init(&[d, d], seed_of(6)))?;
    store.insert(param::TRANSFORM_CROSS, xavier_init(&[d, d], seed_of(7)))?;
    store.insert(param::MASK_ALPHA, Tensor::vector(vec![0.0; split.kg.len()]))?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Counts, InteractionRecord, TripletRecord};

    pub(crate) fn toy_split() -> SplitDataset {
        // 3 users, 3 items, entities 0..=5 (items 0-2, attributes 3-5).
        let train = vec![
            InteractionRecord { user: 0, item: 0 },
            InteractionRecord { user: 0, item: 1 },
            InteractionRecord { user: 1, item: 1 },
            InteractionRecord { user: 1, item: 2 },
            InteractionRecord { user: 2, item: 0 },
        ];
        let test = vec![
            InteractionRecord { user: 0, item: 2 },
            InteractionRecord { user: 1, item: 0 },
        ];
        let kg = vec![
            TripletRecord { head: 0, relation: 0, tail: 3 },
            TripletRecord { head: 1, relation: 0, tail: 3 },
            TripletRecord { head: 2, relation: 1, tail: 4 },
            TripletRecord { head: 3, relation: 2, tail: 5 },
            TripletRecord { head: 0, relation: 1, tail: 1 },
        ];
        SplitDataset {
            train,
            validation: vec![],
            test,
            kg,
            counts: Counts { num_users: 3, num_items: 3, num_entities: 6, num_relations: 3 },
        }
    }

    #[test]
    fn parameters_registered_with_expected_shapes() {
        let split = toy_split();
        let config = ModelConfig { embed_dim: 8, ..Default::default() };
        let model = Model::new(config, &split).unwrap();
        assert_eq!(model.store.get(param::USER_COLLAB).unwrap().shape(), &[3, 8]);
        assert_eq!(model.store.get(param::ENTITY).unwrap().shape(), &[6, 8]);
        assert_eq!(model.store.get(param::MASK_ALPHA).unwrap().shape(), &[5]);
        assert_eq!(model.store.get(param::TRANSFORM_CROSS).unwrap().shape(), &[8, 8]);
    }

    #[test]
    fn expected_gates_are_half_at_init_and_ones_when_ablated() {
        let split = toy_split();
        let model = Model::new(ModelConfig { embed_dim: 4, ..Default::default() }, &split).unwrap();
        assert!(model.expected_gates().iter().all(|&g| g == 0.5));
        let ablated = Model::new(
            ModelConfig { embed_dim: 4, ablation: Ablation::NoRefine, ..Default::default() },
            &split,
        )
        .unwrap();
        assert!(ablated.expected_gates().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let split = toy_split();
        assert!(Model::new(ModelConfig { layers: 0, ..Default::default() }, &split).is_err());
        assert!(Model::new(ModelConfig { rounds: 0, ..Default::default() }, &split).is_err());
    }
}
