//! All-ranking top-K evaluation (Recall@N, NDCG@N) and noise-robustness
//! sweeps.
//!
//! For every test user, all items except the user's training items are
//! scored and the top N taken with ties broken by ascending item id.
//! Reported numbers are means over users with at least one test item.
//! Evaluation never mutates model state.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{inject_interaction_noise, NoiseSpec, SplitDataset};
use crate::graph::InteractionGraph;
use crate::model::{predict_score, Model, ModelConfig, ModelResult, Representations, Trainer};

/// Per-run ranking metrics at a fixed cutoff.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricRow {
    pub cutoff: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// Ranking outcome over one evaluation split.
#[derive(Debug, Clone, Serialize)]
pub struct RankingResult {
    /// Users that had at least one relevant item and entered the averages.
    pub evaluated_users: usize,
    pub metrics: Vec<MetricRow>,
    /// Per evaluated user: (user, top-N list at the largest cutoff).
    #[serde(skip)]
    pub top_items: Vec<(usize, Vec<usize>)>,
}

impl RankingResult {
    pub fn metric(&self, cutoff: usize) -> Option<MetricRow> {
        self.metrics.iter().copied().find(|m| m.cutoff == cutoff)
    }
}

/// Relevant (held-out) items per user from an evaluation split.
pub fn relevance_lists(
    split_edges: &[crate::data::InteractionRecord],
    num_users: usize,
) -> Vec<Vec<usize>> {
    let mut relevant: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for rec in split_edges {
        relevant[rec.user].push(rec.item);
    }
    for list in &mut relevant {
        list.sort_unstable();
        list.dedup();
    }
    relevant
}

/// Score all non-train items for each user with at least one relevant item
/// and aggregate Recall@N / NDCG@N at every cutoff in `cutoffs`.
pub fn full_ranking(
    reps: &Representations,
    graph: &InteractionGraph,
    relevant: &[Vec<usize>],
    cutoffs: &[usize],
) -> RankingResult {
    let max_n = cutoffs.iter().copied().max().unwrap_or(20);
    let num_items = graph.num_items();

    let users: Vec<usize> =
        (0..graph.num_users()).filter(|&u| !relevant[u].is_empty()).collect();
    let per_user: Vec<(usize, Vec<usize>, Vec<(usize, f64)>)> = users
        .par_iter()
        .map(|&u| {
            let train_items = graph.items_of(u);
            let mut scored: Vec<(usize, f64)> = Vec::with_capacity(num_items - train_items.len());
            for item in 0..num_items {
                if train_items.binary_search(&item).is_ok() {
                    continue;
                }
                scored.push((item, predict_score(reps, u, item)));
            }
            // Descending score, ascending item id on ties.
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(max_n);
            let top: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();
            (u, top, scored)
        })
        .collect();

    let mut metrics = Vec::new();
    for &n in cutoffs {
        let mut recall_sum = 0.0;
        let mut ndcg_sum = 0.0;
        for (u, top, _) in &per_user {
            let rel = &relevant[*u];
            let hits: Vec<usize> = top
                .iter()
                .take(n)
                .enumerate()
                .filter_map(|(rank, item)| rel.binary_search(item).is_ok().then_some(rank + 1))
                .collect();
            recall_sum += hits.len() as f64 / rel.len() as f64;
            let dcg: f64 = hits.iter().map(|&rank| 1.0 / ((rank + 1) as f64).log2()).sum();
            let ideal: f64 =
                (1..=rel.len().min(n)).map(|rank| 1.0 / ((rank + 1) as f64).log2()).sum();
            ndcg_sum += if ideal > 0.0 { dcg / ideal } else { 0.0 };
        }
        let count = per_user.len().max(1) as f64;
        metrics.push(MetricRow { cutoff: n, recall: recall_sum / count, ndcg: ndcg_sum / count });
    }

    RankingResult {
        evaluated_users: per_user.len(),
        metrics,
        top_items: per_user.into_iter().map(|(u, top, _)| (u, top)).collect(),
    }
}

/// Evaluate a model snapshot on an edge list (typically the test split).
pub fn evaluate_split(
    model: &Model,
    split_edges: &[crate::data::InteractionRecord],
    cutoffs: &[usize],
) -> ModelResult<RankingResult> {
    let (reps, _) = model.eval_forward()?;
    let relevant = relevance_lists(split_edges, model.graph.num_users());
    Ok(full_ranking(&reps, &model.graph, &relevant, cutoffs))
}

/// One row of a robustness sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub noise_rate: f64,
    pub seed: u64,
    pub recall: f64,
    pub ndcg: f64,
}

/// Aggregate over seeds at one noise ratio.
#[derive(Debug, Clone, Serialize)]
pub struct SweepAggregate {
    pub noise_rate: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("noise_rate,seed,recall,ndcg\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.noise_rate, r.seed, r.recall, r.ndcg));
        }
        out
    }
}

/// For each noise ratio and seed: pollute the training and validation
/// interactions, train from scratch, and evaluate on the untouched test
/// set at `cutoff`.
pub fn robustness_sweep(
    base: &SplitDataset,
    config: &ModelConfig,
    epochs: usize,
    noise_rates: &[f64],
    seeds: &[u64],
    cutoff: usize,
) -> ModelResult<SweepReport> {
    let mut rows = Vec::new();
    for &rate in noise_rates {
        for &seed in seeds {
            let spec =
                NoiseSpec { interaction_noise_rate: rate, kg_noise_rate: 0.0, seed };
            let (polluted, _) = inject_interaction_noise(base, &spec)
                .map_err(|e| crate::model::ModelError::BadConfig(e.to_string()))?;
            let mut run_config = config.clone();
            run_config.seed = seed;
            let mut model = Model::new(run_config, &polluted)?;
            Trainer::run(&mut model, 0, epochs, |_, _| Ok(()))?;
            let result = evaluate_split(&model, &base.test, &[cutoff])?;
            let m = result.metric(cutoff).expect("requested cutoff present");
            rows.push(SweepRow { noise_rate: rate, seed, recall: m.recall, ndcg: m.ndcg });
        }
    }

    let mut by_rate: BTreeMap<u64, Vec<&SweepRow>> = BTreeMap::new();
    for row in &rows {
        by_rate.entry(row.noise_rate.to_bits()).or_default().push(row);
    }
    let aggregates = by_rate
        .values()
        .map(|group| {
            let n = group.len() as f64;
            let recall_mean = group.iter().map(|r| r.recall).sum::<f64>() / n;
            let ndcg_mean = group.iter().map(|r| r.ndcg).sum::<f64>() / n;
            let recall_std = (group.iter().map(|r| (r.recall - recall_mean).powi(2)).sum::<f64>()
                / n)
                .sqrt();
            let ndcg_std =
                (group.iter().map(|r| (r.ndcg - ndcg_mean).powi(2)).sum::<f64>() / n).sqrt();
            SweepAggregate {
                noise_rate: group[0].noise_rate,
                recall_mean,
                recall_std,
                ndcg_mean,
                ndcg_std,
            }
        })
        .collect();
    Ok(SweepReport { rows, aggregates })
}
