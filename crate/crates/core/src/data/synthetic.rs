//! Synthetic implicit-feedback logs with a controlled activity skew.
//!
//! Items are grouped into genres with a popularity decay inside each genre;
//! every user has a preferred genre and draws most clicks from it. A fixed
//! fraction of users (the intended "active" tier) gets a multiple of the
//! base interaction count, reproducing the engagement imbalance that drives
//! the fairness gap.

use rand::Rng;

use super::RawInteraction;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_genres: usize,
    /// Clicks per inactive user.
    pub base_interactions: usize,
    /// Multiplier on `base_interactions` for the active tier.
    pub active_boost: f64,
    /// Fraction of users in the active tier (lowest indexes).
    pub active_fraction: f64,
    /// Probability that a click lands in the user's preferred genre.
    pub affinity: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 300,
            n_items: 500,
            n_genres: 8,
            base_interactions: 12,
            active_boost: 5.0,
            active_fraction: 0.2,
            affinity: 0.8,
            seed: 0,
        }
    }
}

/// Generate the click log. Deterministic given the config. Every configured
/// user and item appears at least once.
pub fn generate(config: &SyntheticConfig) -> Vec<RawInteraction> {
    let mut rng = stream_rng(config.seed, Stream::Synthetic);
    let n_items = config.n_items;
    let n_genres = config.n_genres.max(1);

    // Genre of an item: contiguous blocks. Within a genre, earlier items are
    // more popular (zipf-like weight 1/(1+j)).
    let genre_of = |item: usize| item * n_genres / n_items;
    let mut genre_items: Vec<Vec<usize>> = vec![Vec::new(); n_genres];
    for v in 0..n_items {
        genre_items[genre_of(v)].push(v);
    }
    let genre_cdfs: Vec<Vec<f64>> = genre_items
        .iter()
        .map(|items| {
            let mut acc = 0.0;
            let mut cdf = Vec::with_capacity(items.len());
            for j in 0..items.len() {
                acc += 1.0 / (1.0 + j as f64);
                cdf.push(acc);
            }
            cdf
        })
        .collect();

    let n_active = ((config.n_users as f64) * config.active_fraction).ceil() as usize;
    let mut clicks: Vec<(usize, usize)> = Vec::new();

    for u in 0..config.n_users {
        let count = if u < n_active {
            (config.base_interactions as f64 * config.active_boost).round() as usize
        } else {
            config.base_interactions
        };
        let preferred = u % n_genres;
        let mut seen = std::collections::HashSet::new();
        let mut attempts = 0usize;
        while seen.len() < count.min(n_items) && attempts < count * 50 {
            attempts += 1;
            let item = if rng.gen::<f64>() < config.affinity {
                // popularity-weighted draw inside the preferred genre
                let cdf = &genre_cdfs[preferred];
                let total = *cdf.last().unwrap();
                let x = rng.gen::<f64>() * total;
                let pos = cdf.partition_point(|&c| c < x);
                genre_items[preferred][pos.min(cdf.len() - 1)]
            } else {
                rng.gen_range(0..n_items)
            };
            if seen.insert(item) {
                clicks.push((u, item));
            }
        }
    }

    // Coverage pass: any item never drawn gets one click from a round-robin
    // user so the realized catalog matches the configured size.
    let mut item_seen = vec![false; n_items];
    for &(_, v) in &clicks {
        item_seen[v] = true;
    }
    let mut next_user = 0usize;
    for (v, seen) in item_seen.iter().enumerate() {
        if !seen {
            clicks.push((next_user % config.n_users, v));
            next_user += 1;
        }
    }

    clicks
        .into_iter()
        .map(|(u, v)| RawInteraction {
            user_key: format!("u{u:04}"),
            item_key: format!("i{v:04}"),
            value: 1.0,
            timestamp: None,
        })
        .collect()
}
