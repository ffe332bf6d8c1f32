//! Training loop: antithetic two-pass steps, per-epoch bank refresh, and
//! the finite-difference entry points used by gradient verification.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autodiff::{ParameterStore, Tape, Tensor};
use crate::denoiser::{EdgeSimilarity, SimilarityBank};
use crate::model::loss::sample_negatives;
use crate::refiner::{disarm_gradient, sample_masks, MaskSample};
use crate::rng::{derive_seed, rng};

use super::{param, Model, ModelError, ModelResult, Representations};

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub loss: f64,
    pub loss_antithetic: f64,
    /// Gates where the antithetic pair disagreed (the only ones whose
    /// logits received gradient).
    pub gate_disagreements: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sum of step losses over the epoch.
    pub loss: f64,
    /// Training edges gated out of the loss by the refreshed bank.
    pub pruned_edges: usize,
    /// Mean keep probability over all triplet gates.
    pub mean_keep_probability: f64,
}

fn step_seed(base: u64, epoch: usize, step: usize, salt: u64) -> u64 {
    derive_seed(derive_seed(base, ((epoch as u64) << 24) ^ step as u64), salt)
}

impl Model {
    /// Negatives for every user of a batch, deterministic under the step
    /// seeds.
    fn batch_negatives(
        &self,
        users: &[usize],
        epoch: usize,
        step: usize,
    ) -> ModelResult<BTreeMap<usize, Vec<usize>>> {
        let mut stream = rng(step_seed(self.config.seed, epoch, step, 0x6e65_6773));
        let mut map = BTreeMap::new();
        for &u in users {
            map.insert(u, sample_negatives(&self.graph, u, self.config.negatives, &mut stream)?);
        }
        Ok(map)
    }

    /// Loss of one forward pass with everything frozen: gate weights,
    /// batch, and negatives. Shared by training, the antithetic second
    /// pass, and finite-difference probes.
    pub fn loss_value(
        &self,
        store: &ParameterStore,
        gates: &[f64],
        batch: &[(usize, usize)],
        negatives: &BTreeMap<usize, Vec<usize>>,
    ) -> ModelResult<f64> {
        let users = batch_users(batch);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, gates, &users)?;
        let loss = self.loss_node(&mut tape, &fwd, batch, negatives)?;
        Ok(tape.value(loss).item())
    }

    /// Loss and analytic gradients for every continuous parameter, with
    /// gates, batch, and negatives frozen.
    pub fn continuous_gradients(
        &self,
        store: &ParameterStore,
        gates: &[f64],
        batch: &[(usize, usize)],
        negatives: &BTreeMap<usize, Vec<usize>>,
    ) -> ModelResult<(f64, BTreeMap<String, Tensor>)> {
        let users = batch_users(batch);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, gates, &users)?;
        let loss = self.loss_node(&mut tape, &fwd, batch, negatives)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, node) in &fwd.leaves {
            let g = grads
                .take(*node)
                .unwrap_or_else(|| Tensor::zeros(tape.value(*node).shape().to_vec()));
            out.insert(name.to_string(), g);
        }
        Ok((value, out))
    }

    /// One optimizer step over `batch`: draw an antithetic gate pair, run
    /// the two forward passes, estimate gate gradients from the loss pair,
    /// differentiate the first pass for the continuous parameters, and
    /// apply one adaptive-moment update to everything.
    pub fn train_step(
        &mut self,
        epoch: usize,
        step: usize,
        batch: &[(usize, usize)],
    ) -> ModelResult<StepReport> {
        let refining = self.config.ablation.refining_enabled();
        let sample = if refining {
            sample_masks(&self.mask_bank(), step_seed(self.config.seed, epoch, step, 0x6d61_736b))
        } else {
            MaskSample::degenerate(vec![1.0; self.kg.num_triplets()])
        };
        let users = batch_users(batch);
        let negatives = self.batch_negatives(&users, epoch, step)?;

        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &self.store, &sample.bits, &users)?;
        let loss_node = self.loss_node(&mut tape, &fwd, batch, &negatives)?;
        let loss = tape.value(loss_node).item();

        // The antithetic pass shares batch, negatives, and parameters; only
        // the gate bits differ. When the pair agrees the pass would be
        // bit-identical, so its loss is reused.
        let loss_anti = if sample.agrees() {
            loss
        } else {
            self.loss_value(&self.store, &sample.anti_bits, batch, &negatives)?
        };
        if !loss.is_finite() || !loss_anti.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch, step, loss, loss_anti });
        }

        let mut grads = tape.backward(loss_node)?;
        let mut grad_map = BTreeMap::new();
        for (name, node) in &fwd.leaves {
            if let Some(g) = grads.take(*node) {
                grad_map.insert(name.to_string(), g);
            }
        }
        let mut disagreements = 0;
        if refining {
            let bank = self.mask_bank();
            let alpha_grad = disarm_gradient(loss, loss_anti, &sample, &bank);
            disagreements = sample
                .bits
                .iter()
                .zip(&sample.anti_bits)
                .filter(|(b, anti)| b != anti)
                .count();
            grad_map.insert(param::MASK_ALPHA.to_string(), alpha_grad);
        }

        let adam = crate::autodiff::AdamConfig::with_lr(self.config.learning_rate);
        self.store.adam_step(&grad_map, &adam)?;
        Ok(StepReport { loss, loss_antithetic: loss_anti, gate_disagreements: disagreements })
    }

    /// One full epoch: shuffled batches over all training edges, then the
    /// end-of-epoch bank refresh from an evaluation-mode forward pass.
    pub fn train_epoch(&mut self, epoch: usize) -> ModelResult<EpochLog> {
        let mut order: Vec<usize> = (0..self.graph.num_edges()).collect();
        order.shuffle(&mut rng(derive_seed(self.config.seed, 0x7368_0000 ^ epoch as u64)));
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(self.config.batch_size.max(1)).enumerate() {
            let batch: Vec<(usize, usize)> =
                chunk.iter().map(|&e| self.graph.edge_endpoints(e)).collect();
            let report = self.train_step(epoch, step, &batch)?;
            loss_sum += report.loss;
        }

        if self.config.ablation.denoising_enabled() {
            let (_, report) = self.eval_forward()?;
            self.bank = SimilarityBank::from_report(
                self.graph.num_edges(),
                &report,
                self.config.gamma,
            );
        }

        let mean_keep = if self.config.ablation.refining_enabled() {
            let probs = self.mask_bank().keep_probabilities();
            if probs.is_empty() {
                1.0
            } else {
                probs.iter().sum::<f64>() / probs.len() as f64
            }
        } else {
            1.0
        };
        Ok(EpochLog {
            epoch,
            loss: loss_sum,
            pruned_edges: self.bank.pruned_count(),
            mean_keep_probability: mean_keep,
        })
    }

    /// Evaluation-mode forward over every user: gates at their expected
    /// values, representations detached into plain matrices, plus the
    /// final-round similarity report for every training edge.
    pub fn eval_forward(&self) -> ModelResult<(Representations, Vec<EdgeSimilarity>)> {
        let users: Vec<usize> = (0..self.graph.num_users()).collect();
        let gates = self.expected_gates();
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &self.store, &gates, &users)?;
        let reps = self.extract_representations(&tape, &fwd);
        Ok((reps, fwd.edge_report))
    }
}

fn batch_users(batch: &[(usize, usize)]) -> Vec<usize> {
    let mut users: Vec<usize> = batch.iter().map(|&(u, _)| u).collect();
    users.sort_unstable();
    users.dedup();
    users
}

/// Convenience driver: train for `epochs` epochs, calling `on_epoch` after
/// each one. Returns the collected logs.
pub struct Trainer;

impl Trainer {
    pub fn run(
        model: &mut Model,
        start_epoch: usize,
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochLog, &Model) -> ModelResult<()>,
    ) -> ModelResult<Vec<EpochLog>> {
        Self::run_until(model, start_epoch, epochs, |log, model| {
            on_epoch(log, model)?;
            Ok(true)
        })
    }

    /// Like [`Trainer::run`], but the callback may stop training early by
    /// returning `Ok(false)` (patience on a validation metric, for
    /// instance).
    pub fn run_until(
        model: &mut Model,
        start_epoch: usize,
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochLog, &Model) -> ModelResult<bool>,
    ) -> ModelResult<Vec<EpochLog>> {
        let mut logs = Vec::with_capacity(epochs);
        for epoch in start_epoch..start_epoch + epochs {
            let log = model.train_epoch(epoch)?;
            let keep_going = on_epoch(&log, model)?;
            logs.push(log);
            if !keep_going {
                break;
            }
        }
        Ok(logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy_split;
    use crate::model::{Ablation, ModelConfig};

    fn toy_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 6,
            layers: 2,
            rounds: 2,
            gamma: 0.2,
            negatives: 8,
            margin: 0.6,
            learning_rate: 1e-2,
            batch_size: 64,
            ablation: Ablation::Full,
            seed: 11,
        }
    }

    #[test]
    fn two_pass_identity_with_forced_equal_gates() {
        let split = toy_split();
        let model = Model::new(toy_config(), &split).unwrap();
        let gates = vec![1.0; split.kg.len()];
        let batch: Vec<(usize, usize)> = split.train.iter().map(|r| (r.user, r.item)).collect();
        let negatives = model.batch_negatives(&batch_users(&batch), 0, 0).unwrap();
        let a = model.loss_value(&model.store, &gates, &batch, &negatives).unwrap();
        let b = model.loss_value(&model.store, &gates, &batch, &negatives).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn score_bounds_and_loss_nonnegativity() {
        let split = toy_split();
        let mut model = Model::new(toy_config(), &split).unwrap();
        let batch: Vec<(usize, usize)> = split.train.iter().map(|r| (r.user, r.item)).collect();
        for epoch in 0..3 {
            let report = model.train_step(epoch, 0, &batch).unwrap();
            assert!(report.loss >= 0.0);
            assert!(report.loss_antithetic >= 0.0);
        }
        let (reps, _) = model.eval_forward().unwrap();
        for u in 0..3 {
            for i in 0..3 {
                let score = crate::model::predict_score(&reps, u, i);
                assert!((-2.0..=2.0).contains(&score), "score {score}");
            }
        }
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let split = toy_split();
        let run = || {
            let mut model = Model::new(toy_config(), &split).unwrap();
            let mut last = 0.0;
            for epoch in 0..3 {
                last = model.train_epoch(epoch).unwrap().loss;
            }
            let (reps, _) = model.eval_forward().unwrap();
            (last, reps.user_collab, reps.item_know)
        };
        let (loss_a, users_a, items_a) = run();
        let (loss_b, users_b, items_b) = run();
        assert_eq!(loss_a.to_bits(), loss_b.to_bits());
        assert_eq!(users_a, users_b);
        assert_eq!(items_a, items_b);
    }

    #[test]
    fn degenerate_sample_leaves_gate_logits_unchanged() {
        let split = toy_split();
        let mut model = Model::new(
            ModelConfig { ablation: Ablation::NoRefine, ..toy_config() },
            &split,
        )
        .unwrap();
        let before = model.store.get(param::MASK_ALPHA).unwrap().clone();
        let batch: Vec<(usize, usize)> = split.train.iter().map(|r| (r.user, r.item)).collect();
        let report = model.train_step(0, 0, &batch).unwrap();
        assert_eq!(report.gate_disagreements, 0);
        assert_eq!(report.loss.to_bits(), report.loss_antithetic.to_bits());
        let after = model.store.get(param::MASK_ALPHA).unwrap();
        assert_eq!(before.data(), after.data());
        // Optimizer state still advanced.
        assert_eq!(model.store.step_count(), 1);
    }

    #[test]
    fn loss_decreases_over_short_training() {
        let split = toy_split();
        let mut model = Model::new(toy_config(), &split).unwrap();
        let mut first = None;
        let mut last = 0.0;
        for epoch in 0..30 {
            let log = model.train_epoch(epoch).unwrap();
            first.get_or_insert(log.loss);
            last = log.loss;
        }
        assert!(
            last < first.unwrap(),
            "loss did not trend down: {} -> {last}",
            first.unwrap()
        );
    }

    #[test]
    fn ranking_is_invariant_to_user_scale() {
        let split = toy_split();
        let model = Model::new(toy_config(), &split).unwrap();
        let (mut reps, _) = model.eval_forward().unwrap();
        let rank = |reps: &Representations, u: usize| -> Vec<usize> {
            let mut items: Vec<usize> = (0..3).collect();
            let mut scored: Vec<(f64, usize)> =
                items.drain(..).map(|i| (crate::model::predict_score(reps, u, i), i)).collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            scored.into_iter().map(|(_, i)| i).collect()
        };
        let before = rank(&reps, 0);
        for v in reps.user_collab[0].iter_mut() {
            *v *= 7.5;
        }
        for v in reps.user_know[0].iter_mut() {
            *v *= 7.5;
        }
        assert_eq!(before, rank(&reps, 0));
    }
}
