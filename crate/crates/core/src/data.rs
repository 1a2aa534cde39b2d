//! Ingestion: binarization, dense indexing, splitting, negative sampling,
//! and user activity groups.
//!
//! The dense index space covers every user and item seen in the raw log,
//! including rows whose binarized label is zero, so catalog statistics match
//! the raw data. Only label-one rows enter the positive pool.

pub mod io;
pub mod synthetic;

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// One raw interaction row as read from the log.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user_key: String,
    pub item_key: String,
    /// Explicit rating (1-5) or 1.0 for an implicit event.
    pub value: f64,
    pub timestamp: Option<i64>,
}

/// How to interpret the `value` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    /// Ratings; positive iff the rating exceeds 3.
    Explicit,
    /// Click-style events; every recorded row is positive.
    Implicit,
}

/// A row that survived binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInteraction {
    pub user_key: String,
    pub item_key: String,
    pub label: u8,
}

/// A row rejected during binarization, with a diagnostic.
#[derive(Debug, Clone)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

/// Map raw feedback to binary labels.
///
/// Explicit ratings become 1 iff r > 3 (strict); implicit events are
/// always positive. Rows with a non-finite value are rejected with a
/// diagnostic instead of aborting the ingest.
pub fn binarize(
    raw: &[RawInteraction],
    feedback: Feedback,
) -> (Vec<LabeledInteraction>, Vec<RejectedRow>) {
    let mut labeled = Vec::with_capacity(raw.len());
    let mut rejected = Vec::new();
    for (row, r) in raw.iter().enumerate() {
        if !r.value.is_finite() {
            rejected.push(RejectedRow {
                row,
                reason: format!(
                    "non-finite value {} for ({}, {})",
                    r.value, r.user_key, r.item_key
                ),
            });
            continue;
        }
        if r.user_key.is_empty() || r.item_key.is_empty() {
            rejected.push(RejectedRow {
                row,
                reason: "empty user or item key".to_string(),
            });
            continue;
        }
        let label = match feedback {
            Feedback::Explicit => u8::from(r.value > 3.0),
            Feedback::Implicit => 1,
        };
        labeled.push(LabeledInteraction {
            user_key: r.user_key.clone(),
            item_key: r.item_key.clone(),
            label,
        });
    }
    (labeled, rejected)
}

/// The assembled dataset: dense index space, positive pool split three ways,
/// and one static negative per training positive.
///
/// `negatives[i]` pairs `train[i]`: same user, an item that user never
/// interacted with in training. Serialization is field-ordered and
/// `Vec`-based, so re-running ingestion with the same seed produces a
/// byte-identical bundle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    /// Dense user index -> original key, in first-appearance order.
    pub user_keys: Vec<String>,
    /// Dense item index -> original key, in first-appearance order.
    pub item_keys: Vec<String>,
    /// Raw interaction rows that passed binarization (labels 0 and 1 both
    /// count; this is what catalog sparsity is measured against).
    pub interactions_total: usize,
    /// Training positives H.
    pub train: Vec<(u32, u32)>,
    /// Sampled negatives, one per training positive, same user.
    pub negatives: Vec<(u32, u32)>,
    pub val: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    /// Master seed the split and negative sampling were derived from.
    pub seed: u64,
    #[serde(skip)]
    train_by_user: Vec<Vec<u32>>,
}

/// Users partitioned by engagement: the top 20% by training interaction
/// count form the active group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserGroups {
    pub active: HashSet<u32>,
    pub inactive: HashSet<u32>,
}

/// Catalog statistics: user count, item count, raw interactions, sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub interactions: usize,
    /// Fraction of the user-item matrix with no interaction, as a percentage.
    pub sparsity_pct: f64,
}

impl Dataset {
    /// Build a dataset from binarized rows: dense-index every key, dedup the
    /// positives in first-appearance order, split 8:1:1, and sample one
    /// negative per training positive. Deterministic given the seed.
    pub fn assemble(labeled: &[LabeledInteraction], seed: u64) -> Result<Self> {
        let mut user_index: HashMap<&str, u32> = HashMap::new();
        let mut item_index: HashMap<&str, u32> = HashMap::new();
        let mut user_keys = Vec::new();
        let mut item_keys = Vec::new();
        let mut positives = Vec::new();
        let mut seen_pos = HashSet::new();

        for row in labeled {
            let u = *user_index.entry(&row.user_key).or_insert_with(|| {
                user_keys.push(row.user_key.clone());
                (user_keys.len() - 1) as u32
            });
            let v = *item_index.entry(&row.item_key).or_insert_with(|| {
                item_keys.push(row.item_key.clone());
                (item_keys.len() - 1) as u32
            });
            if row.label == 1 && seen_pos.insert((u, v)) {
                positives.push((u, v));
            }
        }

        let (train, val, test) = split(&positives, seed)?;
        let mut ds = Dataset {
            n_users: user_keys.len(),
            n_items: item_keys.len(),
            user_keys,
            item_keys,
            interactions_total: labeled.len(),
            train,
            negatives: Vec::new(),
            val,
            test,
            seed,
            train_by_user: Vec::new(),
        };
        ds.rebuild_index();
        ds.negatives = sample_negatives(&ds, seed)?;
        Ok(ds)
    }

    /// Assemble a dataset directly from already-indexed splits. Keys are
    /// generated from the indices. Intended for synthetic and test setups;
    /// `negatives` must pair `train` user-for-user.
    pub fn from_parts(
        n_users: usize,
        n_items: usize,
        train: Vec<(u32, u32)>,
        negatives: Vec<(u32, u32)>,
        val: Vec<(u32, u32)>,
        test: Vec<(u32, u32)>,
        seed: u64,
    ) -> Self {
        let interactions_total = train.len() + val.len() + test.len();
        let mut ds = Dataset {
            n_users,
            n_items,
            user_keys: (0..n_users).map(|u| format!("u{u}")).collect(),
            item_keys: (0..n_items).map(|v| format!("i{v}")).collect(),
            interactions_total,
            train,
            negatives,
            val,
            test,
            seed,
            train_by_user: Vec::new(),
        };
        ds.rebuild_index();
        ds
    }

    /// Recompute the per-user sorted training item index. Called after
    /// construction and after deserialization.
    pub fn rebuild_index(&mut self) {
        let mut by_user = vec![Vec::new(); self.n_users];
        for &(u, v) in &self.train {
            by_user[u as usize].push(v);
        }
        for items in &mut by_user {
            items.sort_unstable();
        }
        self.train_by_user = by_user;
    }

    /// Sorted training items of one user (H_u).
    pub fn train_items(&self, user: u32) -> &[u32] {
        &self.train_by_user[user as usize]
    }

    /// Number of training positives n = |H|.
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    /// Default privacy failure probability delta = n^(-exponent) bound to
    /// this dataset's training size.
    pub fn delta(&self, exponent: f64) -> f64 {
        (self.n_train() as f64).powf(-exponent)
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }
}

/// The (train, validation, test) parts of a split.
pub type SplitParts = (Vec<(u32, u32)>, Vec<(u32, u32)>, Vec<(u32, u32)>);

/// Uniformly random 8:1:1 partition of the positive pool.
///
/// Validation and test each get floor(n/10); the rounding remainder stays in
/// train. Deterministic given the seed. Refuses fewer than 10 positives.
pub fn split(positives: &[(u32, u32)], seed: u64) -> Result<SplitParts> {
    let n = positives.len();
    if n < 10 {
        return Err(Error::DegenerateSplit(n));
    }
    let mut rng = stream_rng(seed, Stream::Split);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_val = n / 10;
    let n_test = n / 10;
    let n_train = n - n_val - n_test;
    let pick = |range: std::ops::Range<usize>| -> Vec<(u32, u32)> {
        range.map(|i| positives[order[i]]).collect()
    };
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    ))
}

/// Draw one negative item per training positive, uniformly from the items
/// the user never interacted with in training. Deterministic given the seed.
pub fn sample_negatives(dataset: &Dataset, seed: u64) -> Result<Vec<(u32, u32)>> {
    let mut rng = stream_rng(seed, Stream::Negatives);
    let n_items = dataset.n_items as u32;
    let mut negatives = Vec::with_capacity(dataset.train.len());
    for &(u, _) in &dataset.train {
        let held = dataset.train_items(u);
        let eligible = n_items as usize - held.len();
        if eligible == 0 {
            return Err(Error::NoNegativeAvailable(u));
        }
        // j-th item of the complement of the sorted held list
        let j = rng.gen_range(0..eligible) as u32;
        let mut candidate = j;
        for &p in held {
            if p <= candidate {
                candidate += 1;
            } else {
                break;
            }
        }
        debug_assert!(held.binary_search(&candidate).is_err());
        negatives.push((u, candidate));
    }
    Ok(negatives)
}

/// Partition users into active/inactive by the 80/20 rule: sort by training
/// interaction count descending (ties broken by ascending user index) and
/// take the first ceil(0.2 * n_users) as active.
pub fn group_users(dataset: &Dataset) -> UserGroups {
    let mut counts: Vec<(u32, usize)> = (0..dataset.n_users as u32)
        .map(|u| (u, dataset.train_items(u).len()))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n_active = dataset.n_users.div_ceil(5);
    let active: HashSet<u32> = counts[..n_active].iter().map(|&(u, _)| u).collect();
    let inactive: HashSet<u32> = counts[n_active..].iter().map(|&(u, _)| u).collect();
    UserGroups { active, inactive }
}

/// Catalog statistics over the raw interaction log.
pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let cells = dataset.n_users as f64 * dataset.n_items as f64;
    let sparsity = if cells > 0.0 {
        (1.0 - dataset.interactions_total as f64 / cells) * 100.0
    } else {
        0.0
    };
    DatasetStats {
        n_users: dataset.n_users,
        n_items: dataset.n_items,
        interactions: dataset.interactions_total,
        sparsity_pct: sparsity,
    }
}
