//! Interaction and KG file loading, per-user stratified splitting, and
//! controlled noise injection for robustness experiments.
//!
//! File formats are plain whitespace-separated integer text:
//! - adjacency layout: one user per line, `user item item ...`
//! - pair layout: one `user item` per line
//! - KG: one `head relation tail` triplet per line

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: parse error: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("{path}:{line}: index {index} out of bounds for {axis} count {count}")]
    Bounds { path: String, line: usize, index: usize, axis: &'static str, count: usize },
    #[error("invalid split ratios {0:?}: must be nonnegative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("user {0} has no interactions")]
    EmptyUser(usize),
    #[error("noise rate {0} outside [0, 1]")]
    BadNoiseRate(f64),
    #[error("cannot replace KG tails with fewer than 2 entities")]
    TooFewEntities,
    #[error("noise injection could not place {missing} of {wanted} replacements in {split}")]
    NoiseExhausted { split: &'static str, wanted: usize, missing: usize },
}

pub type DataResult<T> = std::result::Result<T, DataError>;

/// One observed user-item interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
}

/// One KG triplet (head entity, relation, tail entity). Item indices form a
/// prefix of the entity index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletRecord {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Interaction file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TextFormat {
    /// One user per line: `user item item ...`.
    Adjacency,
    /// One `user item` pair per line.
    Pairs,
}

impl fmt::Display for TextFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextFormat::Adjacency => write!(f, "adjacency"),
            TextFormat::Pairs => write!(f, "pairs"),
        }
    }
}

/// Interactions plus inferred axis counts.
#[derive(Debug, Clone)]
pub struct InteractionData {
    pub records: Vec<InteractionRecord>,
    pub num_users: usize,
    pub num_items: usize,
}

/// KG triplets plus inferred counts.
#[derive(Debug, Clone)]
pub struct KgData {
    pub triplets: Vec<TripletRecord>,
    pub num_entities: usize,
    pub num_relations: usize,
}

/// Axis counts shared by every stage downstream of loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub num_users: usize,
    pub num_items: usize,
    pub num_entities: usize,
    pub num_relations: usize,
}

/// Train/validation/test interactions plus the KG they share.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<InteractionRecord>,
    pub validation: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub kg: Vec<TripletRecord>,
    pub counts: Counts,
}

/// Noise injection parameters; the same seed always produces bit-identical
/// polluted output.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub interaction_noise_rate: f64,
    pub kg_noise_rate: f64,
    pub seed: u64,
}

/// One replaced interaction, for the pollution manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacedEdge {
    pub split: ReplacedSplit,
    pub position: usize,
    pub user: usize,
    pub old_item: usize,
    pub new_item: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacedSplit {
    Train,
    Validation,
}

/// One replaced KG tail, for the pollution manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacedTriplet {
    pub position: usize,
    pub head: usize,
    pub relation: usize,
    pub old_tail: usize,
    pub new_tail: usize,
}

fn parse_index(token: &str, path: &str, line: usize) -> DataResult<usize> {
    token.parse::<usize>().map_err(|_| DataError::Parse {
        path: path.to_string(),
        line,
        detail: format!("expected a nonnegative integer, got '{token}'"),
    })
}

/// Load interactions from `path` in the given layout. Records come back in
/// file order; counts are one past the maximum observed index per axis.
pub fn load_interactions(path: &Path, format: TextFormat) -> DataResult<InteractionData> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
    let mut records = Vec::new();
    let mut num_users = 0usize;
    let mut num_items = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let user = parse_index(tokens.next().unwrap(), &display, lineno + 1)?;
        num_users = num_users.max(user + 1);
        match format {
            TextFormat::Adjacency => {
                for token in tokens {
                    let item = parse_index(token, &display, lineno + 1)?;
                    num_items = num_items.max(item + 1);
                    records.push(InteractionRecord { user, item });
                }
            }
            TextFormat::Pairs => {
                let token = tokens.next().ok_or_else(|| DataError::Parse {
                    path: display.clone(),
                    line: lineno + 1,
                    detail: "expected 'user item'".into(),
                })?;
                if let Some(extra) = tokens.next() {
                    return Err(DataError::Parse {
                        path: display.clone(),
                        line: lineno + 1,
                        detail: format!("unexpected trailing token '{extra}'"),
                    });
                }
                let item = parse_index(token, &display, lineno + 1)?;
                num_items = num_items.max(item + 1);
                records.push(InteractionRecord { user, item });
            }
        }
    }
    Ok(InteractionData { records, num_users, num_items })
}

/// Validate records against externally configured counts.
pub fn check_interaction_bounds(
    data: &InteractionData,
    num_users: usize,
    num_items: usize,
    path: &str,
) -> DataResult<()> {
    for (i, r) in data.records.iter().enumerate() {
        if r.user >= num_users {
            return Err(DataError::Bounds {
                path: path.into(),
                line: i + 1,
                index: r.user,
                axis: "user",
                count: num_users,
            });
        }
        if r.item >= num_items {
            return Err(DataError::Bounds {
                path: path.into(),
                line: i + 1,
                index: r.item,
                axis: "item",
                count: num_items,
            });
        }
    }
    Ok(())
}

/// Load KG triplets: one `head relation tail` per line, in file order.
pub fn load_kg(path: &Path) -> DataResult<KgData> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
    let mut triplets = Vec::new();
    let mut num_entities = 0usize;
    let mut num_relations = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(DataError::Parse {
                path: display.clone(),
                line: lineno + 1,
                detail: format!("expected 'head relation tail', got {} tokens", tokens.len()),
            });
        }
        let head = parse_index(tokens[0], &display, lineno + 1)?;
        let relation = parse_index(tokens[1], &display, lineno + 1)?;
        let tail = parse_index(tokens[2], &display, lineno + 1)?;
        num_entities = num_entities.max(head + 1).max(tail + 1);
        num_relations = num_relations.max(relation + 1);
        triplets.push(TripletRecord { head, relation, tail });
    }
    Ok(KgData { triplets, num_entities, num_relations })
}

/// Per-user stratified random split. Every user keeps at least one training
/// interaction (a user's only interaction always goes to train); validation
/// and test sizes per user are `round(ratio * degree)`, train takes the
/// remainder. Deterministic under `seed`.
pub fn split_dataset(
    interactions: &InteractionData,
    kg: &KgData,
    ratios: (f64, f64, f64),
    seed: u64,
) -> DataResult<SplitDataset> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(r));
    }
    let num_users = interactions.num_users;
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for rec in &interactions.records {
        per_user[rec.user].push(rec.item);
    }
    if let Some(user) = per_user.iter().position(|items| items.is_empty()) {
        return Err(DataError::EmptyUser(user));
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut stream = rng(derive_seed(seed, 0x5171));
    for (user, items) in per_user.iter().enumerate() {
        let mut items = items.clone();
        items.shuffle(&mut stream);
        let k = items.len();
        let mut n_val = (ratios.1 * k as f64).round() as usize;
        let mut n_test = (ratios.2 * k as f64).round() as usize;
        // Keep >= 1 training interaction: shrink test first, then validation.
        while k.saturating_sub(n_val + n_test) < 1 {
            if n_test > 0 {
                n_test -= 1;
            } else if n_val > 0 {
                n_val -= 1;
            } else {
                break;
            }
        }
        let n_train = k - n_val - n_test;
        for (pos, &item) in items.iter().enumerate() {
            let rec = InteractionRecord { user, item };
            if pos < n_train {
                train.push(rec);
            } else if pos < n_train + n_val {
                validation.push(rec);
            } else {
                test.push(rec);
            }
        }
    }

    Ok(SplitDataset {
        train,
        validation,
        test,
        kg: kg.triplets.clone(),
        counts: Counts {
            num_users,
            num_items: interactions.num_items,
            num_entities: kg.num_entities.max(interactions.num_items),
            num_relations: kg.num_relations,
        },
    })
}

fn seen_items_per_user(split: &SplitDataset) -> Vec<HashSet<usize>> {
    let mut seen: Vec<HashSet<usize>> = vec![HashSet::new(); split.counts.num_users];
    for rec in split.all_interactions() {
        seen[rec.user].insert(rec.item);
    }
    seen
}

/// Replace `round(rate * |train|)` train edges and `round(rate * |val|)`
/// validation edges. A replacement keeps the user and swaps the item for a
/// uniformly sampled item the user has never interacted with in any split,
/// so injected noise is never a hidden positive. The test split is returned
/// untouched and the total interaction count is unchanged.
///
/// Returns the polluted dataset and the replacement list for the manifest.
pub fn inject_interaction_noise(
    split: &SplitDataset,
    spec: &NoiseSpec,
) -> DataResult<(SplitDataset, Vec<ReplacedEdge>)> {
    let rate = spec.interaction_noise_rate;
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::BadNoiseRate(rate));
    }
    let mut out = split.clone();
    let mut replaced = Vec::new();
    if rate == 0.0 {
        return Ok((out, replaced));
    }
    let seen = seen_items_per_user(split);
    let num_items = split.counts.num_items;

    let mut stream = rng(derive_seed(spec.seed, 0x1a7e));
    for (tag, edges) in
        [(ReplacedSplit::Train, &mut out.train), (ReplacedSplit::Validation, &mut out.validation)]
    {
        let wanted = (rate * edges.len() as f64).round() as usize;
        if wanted == 0 {
            continue;
        }
        let split_name = match tag {
            ReplacedSplit::Train => "train",
            ReplacedSplit::Validation => "validation",
        };
        // Visit candidate edges in random order so a user with no unseen
        // items is skipped (and logged) without biasing which other edge
        // takes its place.
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.shuffle(&mut stream);
        let mut done = 0;
        for &pos in &order {
            if done == wanted {
                break;
            }
            let user = edges[pos].user;
            let unseen = num_items - seen[user].len();
            if unseen == 0 {
                eprintln!("warning: user {user} interacts with every item; skipping edge and resampling another");
                continue;
            }
            let mut pick = stream.gen_range(0..unseen);
            let mut new_item = usize::MAX;
            for item in 0..num_items {
                if !seen[user].contains(&item) {
                    if pick == 0 {
                        new_item = item;
                        break;
                    }
                    pick -= 1;
                }
            }
            let old_item = edges[pos].item;
            edges[pos].item = new_item;
            replaced.push(ReplacedEdge { split: tag, position: pos, user, old_item, new_item });
            done += 1;
        }
        if done < wanted {
            return Err(DataError::NoiseExhausted { split: split_name, wanted, missing: wanted - done });
        }
    }
    Ok((out, replaced))
}

/// Replace `round(rate * |kg|)` triplet tails with a uniformly sampled
/// entity other than the original tail; heads, relations, and the triplet
/// count are unchanged.
pub fn inject_kg_noise(
    kg: &[TripletRecord],
    num_entities: usize,
    rate: f64,
    seed: u64,
) -> DataResult<(Vec<TripletRecord>, Vec<ReplacedTriplet>)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::BadNoiseRate(rate));
    }
    let mut out = kg.to_vec();
    let mut replaced = Vec::new();
    let wanted = (rate * kg.len() as f64).round() as usize;
    if wanted == 0 {
        return Ok((out, replaced));
    }
    if num_entities < 2 {
        return Err(DataError::TooFewEntities);
    }
    let mut stream = rng(derive_seed(seed, 0x7a11));
    let mut order: Vec<usize> = (0..kg.len()).collect();
    order.shuffle(&mut stream);
    for &pos in order.iter().take(wanted) {
        let old_tail = out[pos].tail;
        let mut new_tail = stream.gen_range(0..num_entities - 1);
        if new_tail >= old_tail {
            new_tail += 1;
        }
        out[pos].tail = new_tail;
        replaced.push(ReplacedTriplet {
            position: pos,
            head: out[pos].head,
            relation: out[pos].relation,
            old_tail,
            new_tail,
        });
    }
    Ok((out, replaced))
}

/// Write interactions in adjacency layout: one user per line in ascending
/// user order, items in record order.
pub fn write_interactions_adjacency(
    path: &Path,
    records: &[InteractionRecord],
    num_users: usize,
) -> DataResult<()> {
    let display = path.display().to_string();
    let file = fs::File::create(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
    let mut w = BufWriter::new(file);
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for rec in records {
        per_user[rec.user].push(rec.item);
    }
    for (user, items) in per_user.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let mut line = user.to_string();
        for item in items {
            line.push(' ');
            line.push_str(&item.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|source| DataError::Io { path: display.clone(), source })?;
    }
    w.flush().map_err(|source| DataError::Io { path: display, source })
}

/// Write KG triplets, one `head relation tail` per line in record order.
pub fn write_kg(path: &Path, triplets: &[TripletRecord]) -> DataResult<()> {
    let display = path.display().to_string();
    let file = fs::File::create(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
    let mut w = BufWriter::new(file);
    for t in triplets {
        writeln!(w, "{} {} {}", t.head, t.relation, t.tail)
            .map_err(|source| DataError::Io { path: display.clone(), source })?;
    }
    w.flush().map_err(|source| DataError::Io { path: display, source })
}

impl SplitDataset {
    /// Interactions of all three splits in train, validation, test order.
    pub fn all_interactions(&self) -> impl Iterator<Item = &InteractionRecord> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn total_interactions(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toy_interactions(users: usize, items_per_user: usize, num_items: usize) -> InteractionData {
        let mut records = Vec::new();
        for u in 0..users {
            for k in 0..items_per_user {
                records.push(InteractionRecord { user: u, item: (u * 7 + k * 3) % num_items });
            }
        }
        let mut seen = HashSet::new();
        records.retain(|r| seen.insert((r.user, r.item)));
        InteractionData { records, num_users: users, num_items }
    }

    fn empty_kg() -> KgData {
        KgData { triplets: vec![], num_entities: 0, num_relations: 0 }
    }

    #[test]
    fn adjacency_lines_transcribe_directly() {
        let f = tmpfile("0 1 2\n1 0\n");
        let data = load_interactions(f.path(), TextFormat::Adjacency).unwrap();
        assert_eq!(
            data.records,
            vec![
                InteractionRecord { user: 0, item: 1 },
                InteractionRecord { user: 0, item: 2 },
                InteractionRecord { user: 1, item: 0 },
            ]
        );
        assert_eq!(data.num_users, 2);
        assert_eq!(data.num_items, 3);
    }

    #[test]
    fn pairs_format_parses_and_rejects_trailing() {
        let f = tmpfile("0\t1\n1\t0\n");
        let data = load_interactions(f.path(), TextFormat::Pairs).unwrap();
        assert_eq!(data.records.len(), 2);
        let bad = tmpfile("0 1 2\n");
        let err = load_interactions(bad.path(), TextFormat::Pairs).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn empty_file_gives_empty_counts() {
        let f = tmpfile("");
        let data = load_interactions(f.path(), TextFormat::Adjacency).unwrap();
        assert!(data.records.is_empty());
        assert_eq!((data.num_users, data.num_items), (0, 0));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let f = tmpfile("0 1\nx 2\n");
        let err = load_interactions(f.path(), TextFormat::Adjacency).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn kg_loads_in_file_order() {
        let f = tmpfile("0 0 5\n5 1 6\n");
        let kg = load_kg(f.path()).unwrap();
        assert_eq!(kg.triplets.len(), 2);
        assert_eq!(kg.num_entities, 7);
        assert_eq!(kg.num_relations, 2);
    }

    #[test]
    fn split_10_interactions_to_8_1_1() {
        let mut records = Vec::new();
        for item in 0..10 {
            records.push(InteractionRecord { user: 0, item });
        }
        let data = InteractionData { records, num_users: 1, num_items: 10 };
        let split = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.validation.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn single_interaction_user_goes_to_train() {
        let data = InteractionData {
            records: vec![InteractionRecord { user: 0, item: 3 }],
            num_users: 1,
            num_items: 4,
        };
        let split = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(split.train.len(), 1);
        assert!(split.validation.is_empty() && split.test.is_empty());
    }

    #[test]
    fn thousand_users_ten_items_split_counts() {
        let mut records = Vec::new();
        for u in 0..1000 {
            for k in 0..10 {
                records.push(InteractionRecord { user: u, item: (u + k * 101) % 1000 });
            }
        }
        let data = InteractionData { records, num_users: 1000, num_items: 1000 };
        let split = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(split.train.len(), 8000);
        assert_eq!(split.validation.len(), 1000);
        assert_eq!(split.test.len(), 1000);
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let data = toy_interactions(50, 8, 60);
        let a = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 9).unwrap();
        let b = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
        let train: HashSet<_> = a.train.iter().collect();
        let val: HashSet<_> = a.validation.iter().collect();
        let test: HashSet<_> = a.test.iter().collect();
        assert!(train.is_disjoint(&val));
        assert!(train.is_disjoint(&test));
        assert!(val.is_disjoint(&test));
    }

    #[test]
    fn zero_rate_noise_is_identity() {
        let data = toy_interactions(20, 6, 30);
        let split = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 3).unwrap();
        let spec = NoiseSpec { interaction_noise_rate: 0.0, kg_noise_rate: 0.0, seed: 5 };
        let (noisy, replaced) = inject_interaction_noise(&split, &spec).unwrap();
        assert!(replaced.is_empty());
        assert_eq!(noisy.train, split.train);
        assert_eq!(noisy.validation, split.validation);
        assert_eq!(noisy.test, split.test);
    }

    #[test]
    fn noise_replaces_exact_count_and_keeps_test() {
        let mut records = Vec::new();
        for u in 0..100 {
            for k in 0..12 {
                records.push(InteractionRecord { user: u, item: (u * 13 + k) % 200 });
            }
        }
        let data = InteractionData { records, num_users: 100, num_items: 200 };
        let split = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 11).unwrap();
        let spec = NoiseSpec { interaction_noise_rate: 0.05, kg_noise_rate: 0.0, seed: 13 };
        let (noisy, replaced) = inject_interaction_noise(&split, &spec).unwrap();

        let expect_train = (0.05 * split.train.len() as f64).round() as usize;
        let expect_val = (0.05 * split.validation.len() as f64).round() as usize;
        let train_changed = split.train.iter().zip(&noisy.train).filter(|(a, b)| a != b).count();
        let val_changed =
            split.validation.iter().zip(&noisy.validation).filter(|(a, b)| a != b).count();
        assert_eq!(train_changed, expect_train);
        assert_eq!(val_changed, expect_val);
        assert_eq!(replaced.len(), expect_train + expect_val);
        assert_eq!(noisy.test, split.test);
        assert_eq!(noisy.total_interactions(), split.total_interactions());

        // Replacements are never hidden positives.
        let seen = seen_items_per_user(&split);
        for r in &replaced {
            assert!(!seen[r.user].contains(&r.new_item));
            assert_ne!(r.old_item, r.new_item);
        }
    }

    #[test]
    fn full_rate_replaces_every_train_edge() {
        let mut records = Vec::new();
        for u in 0..10 {
            for k in 0..5 {
                records.push(InteractionRecord { user: u, item: u * 5 + k });
            }
        }
        let data = InteractionData { records, num_users: 10, num_items: 100 };
        let split = split_dataset(&data, &empty_kg(), (1.0, 0.0, 0.0), 2).unwrap();
        let spec = NoiseSpec { interaction_noise_rate: 1.0, kg_noise_rate: 0.0, seed: 3 };
        let (noisy, _) = inject_interaction_noise(&split, &spec).unwrap();
        for (a, b) in split.train.iter().zip(&noisy.train) {
            assert_eq!(a.user, b.user);
            assert_ne!(a.item, b.item);
        }
    }

    #[test]
    fn kg_noise_swaps_exact_tail_count() {
        let kg: Vec<TripletRecord> =
            (0..10).map(|i| TripletRecord { head: i, relation: i % 3, tail: (i + 1) % 10 }).collect();
        let (noisy, replaced) = inject_kg_noise(&kg, 10, 0.5, 17).unwrap();
        let changed = kg.iter().zip(&noisy).filter(|(a, b)| a.tail != b.tail).count();
        assert_eq!(changed, 5);
        assert_eq!(replaced.len(), 5);
        for (a, b) in kg.iter().zip(&noisy) {
            assert_eq!(a.head, b.head);
            assert_eq!(a.relation, b.relation);
        }
    }

    #[test]
    fn kg_noise_on_two_entities_is_forced() {
        let kg = vec![TripletRecord { head: 1, relation: 0, tail: 0 }];
        let (noisy, _) = inject_kg_noise(&kg, 2, 1.0, 5).unwrap();
        assert_eq!(noisy[0].tail, 1);
    }

    #[test]
    fn kg_noise_needs_two_entities() {
        let kg = vec![TripletRecord { head: 0, relation: 0, tail: 0 }];
        assert!(matches!(inject_kg_noise(&kg, 1, 1.0, 5), Err(DataError::TooFewEntities)));
    }

    #[test]
    fn write_then_load_roundtrips() {
        let data = toy_interactions(30, 7, 40);
        let split = split_dataset(&data, &empty_kg(), (0.8, 0.1, 0.1), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        write_interactions_adjacency(&path, &split.train, split.counts.num_users).unwrap();
        let loaded = load_interactions(&path, TextFormat::Adjacency).unwrap();
        assert_eq!(loaded.records, split.train);

        let kg: Vec<TripletRecord> =
            (0..20).map(|i| TripletRecord { head: i % 5, relation: i % 4, tail: 5 + i % 7 }).collect();
        let kg_path = dir.path().join("kg_final.txt");
        write_kg(&kg_path, &kg).unwrap();
        let loaded_kg = load_kg(&kg_path).unwrap();
        assert_eq!(loaded_kg.triplets, kg);
    }
}
