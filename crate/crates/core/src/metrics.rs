//! Ranking metrics and the user-group fairness gap.
//!
//! NDCG@k and F1@k are computed per user against a set of relevant items
//! from a named evaluation split. Users with an empty relevant set are
//! excluded from every average rather than counted as zeros, since a global
//! split leaves some users without held-out items.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::UserGroups;
use crate::{Error, Result};

/// Per-user relevant item sets, tagged with the split they came from.
#[derive(Debug, Clone)]
pub struct RelevanceLabels {
    /// For each user index, the set of relevant item indices.
    pub per_user: Vec<HashSet<u32>>,
    /// Which split produced the labels ("validation" or "test").
    pub split: &'static str,
}

impl RelevanceLabels {
    pub fn from_pairs(n_users: usize, pairs: &[(u32, u32)], split: &'static str) -> Self {
        let mut per_user = vec![HashSet::new(); n_users];
        for &(u, v) in pairs {
            per_user[u as usize].insert(v);
        }
        RelevanceLabels { per_user, split }
    }
}

/// One row of the evaluation report: a metric over all users and per group.
/// Values are fractions in [0,1]; `as_percentages` formats them for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    pub total: f64,
    pub active: f64,
    pub inactive: f64,
    pub gap: f64,
}

/// NDCG@k of a ranked list against the relevant set.
///
/// Returns `None` when the relevant set is empty (the caller skips the user).
/// DCG uses binary gains 1/log2(i+1) for ranks i = 1..k; the ideal DCG places
/// min(k, |relevant|) hits at the top.
pub fn ndcg_at_k(list: &[u32], relevant: &HashSet<u32>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = list
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(relevant.len()))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Some(dcg / ideal)
}

/// F1@k of a ranked list against the relevant set.
///
/// With h hits in the top k, precision is h/k and recall h/|relevant|, so
/// F1 = 2h/(k + |relevant|). Returns `None` when the relevant set is empty.
pub fn f1_at_k(list: &[u32], relevant: &HashSet<u32>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = list
        .iter()
        .take(k)
        .filter(|item| relevant.contains(item))
        .count();
    Some(2.0 * hits as f64 / (k + relevant.len()) as f64)
}

/// Absolute difference of the group means of a per-user metric.
///
/// `per_user_metric[u]` is `None` for users excluded from evaluation; means
/// are over the defined entries only. Errors when a group has no evaluable
/// users.
pub fn ugf(per_user_metric: &[Option<f64>], groups: &UserGroups) -> Result<f64> {
    let a = group_mean(per_user_metric, &groups.active).ok_or(Error::EmptyGroup("active"))?;
    let b = group_mean(per_user_metric, &groups.inactive).ok_or(Error::EmptyGroup("inactive"))?;
    Ok((a - b).abs())
}

/// Mean of the defined entries of a per-user metric.
pub fn mean_defined(per_user_metric: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_user_metric.iter().filter_map(|m| *m).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Group mean of the defined entries restricted to `members`. Summation
/// runs in ascending user order so results are reproducible regardless of
/// the set's internal layout.
pub fn group_mean(per_user_metric: &[Option<f64>], members: &HashSet<u32>) -> Option<f64> {
    let defined: Vec<f64> = per_user_metric
        .iter()
        .enumerate()
        .filter(|(u, _)| members.contains(&(*u as u32)))
        .filter_map(|(_, m)| *m)
        .collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Evaluate one metric over per-user ranked lists and summarize per group.
pub fn evaluate_metric<F>(
    lists: &[Vec<u32>],
    labels: &RelevanceLabels,
    groups: &UserGroups,
    k: usize,
    name: &str,
    metric: F,
) -> Result<MetricsReport>
where
    F: Fn(&[u32], &HashSet<u32>, usize) -> Option<f64>,
{
    let per_user: Vec<Option<f64>> = lists
        .iter()
        .enumerate()
        .map(|(u, list)| metric(list, &labels.per_user[u], k))
        .collect();
    let total = mean_defined(&per_user).ok_or(Error::EmptyGroup("all users"))?;
    let active = group_mean(&per_user, &groups.active).ok_or(Error::EmptyGroup("active"))?;
    let inactive = group_mean(&per_user, &groups.inactive).ok_or(Error::EmptyGroup("inactive"))?;
    Ok(MetricsReport {
        metric: name.to_string(),
        total,
        active,
        inactive,
        gap: (active - inactive).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[u32]) -> HashSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn ndcg_perfect_single_hit() {
        // Single relevant item ranked first.
        assert_eq!(ndcg_at_k(&[3, 1, 2], &set(&[3]), 3), Some(1.0));
    }

    #[test]
    fn ndcg_single_hit_rank_two() {
        // 1/log2(3) when the only relevant item sits at rank 2.
        let got = ndcg_at_k(&[1, 3, 2], &set(&[3]), 3).unwrap();
        assert!((got - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((got - 0.63093).abs() < 1e-5);
    }

    #[test]
    fn ndcg_no_hit_is_zero() {
        assert_eq!(ndcg_at_k(&[1, 2], &set(&[9]), 2), Some(0.0));
    }

    #[test]
    fn ndcg_empty_relevant_skips_user() {
        assert_eq!(ndcg_at_k(&[1, 2], &set(&[]), 2), None);
    }

    #[test]
    fn ndcg_ignores_order_beyond_k() {
        let a = ndcg_at_k(&[1, 2, 3, 4, 5], &set(&[1, 5]), 3);
        let b = ndcg_at_k(&[1, 2, 3, 5, 4], &set(&[1, 5]), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn f1_all_relevant_full_overlap() {
        // |T_u| = k and every slot a hit: precision = recall = 1.
        assert_eq!(f1_at_k(&[1, 2], &set(&[1, 2]), 2), Some(1.0));
    }

    #[test]
    fn f1_no_hits_is_zero() {
        assert_eq!(f1_at_k(&[1, 2], &set(&[9]), 2), Some(0.0));
    }

    #[test]
    fn f1_three_hits_k10_t5() {
        // 2h/(k+|T_u|) = 6/15 = 0.4
        let list: Vec<u32> = (0..10).collect();
        let relevant = set(&[0, 1, 2, 100, 101]);
        assert_eq!(f1_at_k(&list, &relevant, 10), Some(0.4));
    }

    #[test]
    fn ugf_direct_average() {
        let groups = UserGroups {
            active: set(&[0, 1]),
            inactive: set(&[2, 3]),
        };
        let per_user = vec![Some(0.4), Some(0.6), Some(0.1), Some(0.3)];
        let got = ugf(&per_user, &groups).unwrap();
        assert!((got - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ugf_parity_and_symmetry() {
        let groups = UserGroups {
            active: set(&[0]),
            inactive: set(&[1]),
        };
        let per_user = vec![Some(0.5), Some(0.5)];
        assert_eq!(ugf(&per_user, &groups).unwrap(), 0.0);

        let swapped = UserGroups {
            active: set(&[1]),
            inactive: set(&[0]),
        };
        let per_user = vec![Some(0.2), Some(0.7)];
        let g1 = ugf(&per_user, &groups).unwrap();
        let g2 = ugf(&per_user, &swapped).unwrap();
        assert!((g1 - g2).abs() < 1e-15);
    }

    #[test]
    fn ugf_errors_on_empty_group() {
        let groups = UserGroups {
            active: set(&[0]),
            inactive: set(&[1]),
        };
        let per_user = vec![Some(0.5), None];
        assert!(matches!(
            ugf(&per_user, &groups),
            Err(Error::EmptyGroup("inactive"))
        ));
    }

    #[test]
    fn ugf_shift_invariance() {
        let groups = UserGroups {
            active: set(&[0, 1]),
            inactive: set(&[2]),
        };
        let base = vec![Some(0.2), Some(0.4), Some(0.1)];
        let shifted: Vec<Option<f64>> = base.iter().map(|m| m.map(|x| x + 0.17)).collect();
        let g1 = ugf(&base, &groups).unwrap();
        let g2 = ugf(&shifted, &groups).unwrap();
        assert!((g1 - g2).abs() < 1e-12);
    }

    #[test]
    fn all_relevant_top_k_perfect_scores() {
        // |T_u| >= k with every slot a hit: NDCG = 1 and precision = 1.
        let list: Vec<u32> = (0..4).collect();
        let relevant = set(&[0, 1, 2, 3, 9, 10]);
        assert_eq!(ndcg_at_k(&list, &relevant, 4), Some(1.0));
        let hits = list.iter().take(4).filter(|v| relevant.contains(v)).count();
        assert_eq!(hits, 4); // precision = hits/k = 1
                             // F1 equals 2k/(k+|T_u|) here, below 1 because recall is partial.
        assert_eq!(f1_at_k(&list, &relevant, 4), Some(0.8));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn list_and_relevant() -> impl Strategy<Value = (Vec<u32>, HashSet<u32>, usize)> {
            (
                proptest::collection::vec(0u32..12, 1..8),
                proptest::collection::hash_set(0u32..12, 0..6),
                1usize..8,
            )
                .prop_map(|(mut list, relevant, k)| {
                    list.dedup();
                    let mut seen = HashSet::new();
                    list.retain(|v| seen.insert(*v));
                    (list, relevant, k)
                })
        }

        proptest! {
            #[test]
            fn metrics_stay_in_unit_interval((list, relevant, k) in list_and_relevant()) {
                if let Some(v) = ndcg_at_k(&list, &relevant, k) {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if let Some(v) = f1_at_k(&list, &relevant, k) {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }

            #[test]
            fn f1_is_position_free((list, relevant, k) in list_and_relevant()) {
                prop_assume!(!relevant.is_empty());
                let base = f1_at_k(&list, &relevant, k);
                let mut shuffled = list.clone();
                shuffled[..k.min(list.len())].reverse();
                prop_assert_eq!(base, f1_at_k(&shuffled, &relevant, k));
            }

            #[test]
            fn ndcg_ignores_tail_order((list, relevant, k) in list_and_relevant()) {
                prop_assume!(!relevant.is_empty());
                prop_assume!(list.len() > k);
                let base = ndcg_at_k(&list, &relevant, k);
                let mut tail_flipped = list.clone();
                tail_flipped[k..].reverse();
                prop_assert_eq!(base, ndcg_at_k(&tail_flipped, &relevant, k));
            }
        }
    }
}
