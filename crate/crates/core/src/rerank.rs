//! Stage two: fairness-constrained re-ranking as an exact 0-1 integer
//! program.
//!
//! Each user's top-K candidate list is cut down to k items, maximizing the
//! summed prediction scores subject to an upper bound alpha on the F1-based
//! gap between the active and inactive group means. Because F1@k with fixed
//! k is 2h/(k + |T_u|) — linear in the hit count h — the program over K*n
//! binaries collapses to one integer per user plus a per-user subset
//! recovery, which a best-first branch-and-bound solves exactly. The gap
//! constraint is evaluated in exact rational arithmetic throughout.
//!
//! The solver sees only candidate lists, scores, relevance flags, and group
//! labels; model parameters never enter this module.

pub mod io;
pub mod solver;

use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::data::UserGroups;
use crate::metrics::RelevanceLabels;
use crate::train::RecLists;
use crate::{Error, Result};

pub use solver::{brute_force_solve, solve};

/// Group tag of one user in a re-rank instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Active,
    Inactive,
}

/// One user's slice of the instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserCandidates {
    pub user: u32,
    pub group: Group,
    /// Unique candidate items with their prediction scores, strongest list
    /// first as produced by the pre-ranker.
    pub candidates: Vec<(u32, f64)>,
    /// Parallel to `candidates`: whether the item is in the reference
    /// relevant set.
    pub relevant: Vec<bool>,
    /// Size of the full reference relevant set |T_u| (not just the part
    /// present among candidates); the F1 denominator is k + |T_u|.
    pub t_u: usize,
}

/// The full re-ranking problem: candidates, reference labels, groups, and
/// the fairness budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RerankInstance {
    pub users: Vec<UserCandidates>,
    /// Gap budget; `f64::INFINITY` disables the constraint.
    pub alpha: f64,
    /// Final list length.
    pub k: usize,
}

impl RerankInstance {
    /// Assemble an instance from pipeline artifacts. Reference labels come
    /// from the validation split so the evaluation target stays unseen.
    pub fn from_candidates(
        lists: &RecLists,
        labels: &RelevanceLabels,
        groups: &UserGroups,
        alpha: f64,
        k: usize,
    ) -> Self {
        let users = lists
            .lists
            .iter()
            .enumerate()
            .map(|(u, list)| {
                let u = u as u32;
                let reference = &labels.per_user[u as usize];
                UserCandidates {
                    user: u,
                    group: if groups.active.contains(&u) {
                        Group::Active
                    } else {
                        Group::Inactive
                    },
                    candidates: list.items.clone(),
                    relevant: list
                        .items
                        .iter()
                        .map(|(v, _)| reference.contains(v))
                        .collect(),
                    t_u: reference.len(),
                }
            })
            .collect();
        RerankInstance { users, alpha, k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        for uc in &self.users {
            if uc.candidates.len() < self.k {
                return Err(Error::TooFewCandidates {
                    user: uc.user,
                    got: uc.candidates.len(),
                    need: self.k,
                });
            }
            if uc.candidates.len() != uc.relevant.len() {
                return Err(Error::Config(format!(
                    "user {}: {} candidates but {} relevance flags",
                    uc.user,
                    uc.candidates.len(),
                    uc.relevant.len()
                )));
            }
            let rel_count = uc.relevant.iter().filter(|&&r| r).count();
            if rel_count > uc.t_u {
                return Err(Error::Config(format!(
                    "user {}: {rel_count} relevant candidates exceed |T_u| = {}",
                    uc.user, uc.t_u
                )));
            }
            let mut seen = HashSet::new();
            if !uc.candidates.iter().all(|&(v, _)| seen.insert(v)) {
                return Err(Error::Config(format!(
                    "user {}: duplicate candidate items",
                    uc.user
                )));
            }
        }
        Ok(())
    }

    /// Group sizes (|A|, |B|) over all instance users.
    pub fn group_sizes(&self) -> (usize, usize) {
        let a = self
            .users
            .iter()
            .filter(|u| u.group == Group::Active)
            .count();
        (a, self.users.len() - a)
    }

    /// Whether the gap constraint binds at all: both groups must be
    /// non-empty and alpha finite.
    pub fn constraint_active(&self) -> bool {
        let (a, b) = self.group_sizes();
        a > 0 && b > 0 && self.alpha.is_finite()
    }
}

/// Per-user table of the best achievable score sum for each feasible hit
/// count, with the realizing subsets.
#[derive(Debug, Clone)]
pub struct UserProfile {
    /// Smallest feasible hit count: max(0, k - #irrelevant candidates).
    pub h_min: usize,
    /// Largest feasible hit count: min(k, #relevant candidates).
    pub h_max: usize,
    /// `score[h - h_min]` = best score sum selecting exactly k items with h
    /// of them relevant.
    pub score: Vec<f64>,
    /// Realizing item subsets, candidate-position order.
    pub subsets: Vec<Vec<u32>>,
    /// Hit count realized by plain top-k truncation; the per-user optimum.
    pub h_unconstrained: usize,
}

/// Profiles for every instance user, in instance order.
#[derive(Debug, Clone)]
pub struct HitProfile {
    pub users: Vec<UserProfile>,
}

/// Candidate positions sorted by (score desc, position asc): the same
/// comparator the pre-ranker uses, so truncation is reproduced exactly.
fn ranked_positions(candidates: &[(u32, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].1.total_cmp(&candidates[a].1).then(a.cmp(&b)));
    order
}

/// Canonical score of a subset of candidate positions: summed in ascending
/// position order so equal sets always produce the identical float.
pub(crate) fn canonical_score(candidates: &[(u32, f64)], positions: &[usize]) -> f64 {
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&p| candidates[p].1).sum()
}

fn profile_one(uc: &UserCandidates, k: usize) -> Result<UserProfile> {
    if uc.candidates.len() < k {
        return Err(Error::TooFewCandidates {
            user: uc.user,
            got: uc.candidates.len(),
            need: k,
        });
    }
    let order = ranked_positions(&uc.candidates);
    let rel_sorted: Vec<usize> = order.iter().copied().filter(|&p| uc.relevant[p]).collect();
    let irr_sorted: Vec<usize> = order.iter().copied().filter(|&p| !uc.relevant[p]).collect();

    let h_max = k.min(rel_sorted.len());
    let h_min = k.saturating_sub(irr_sorted.len());
    let h_unconstrained = order[..k].iter().filter(|&&p| uc.relevant[p]).count();
    debug_assert!((h_min..=h_max).contains(&h_unconstrained));

    let mut score = Vec::with_capacity(h_max - h_min + 1);
    let mut subsets = Vec::with_capacity(h_max - h_min + 1);
    for h in h_min..=h_max {
        let mut positions: Vec<usize> = rel_sorted[..h].to_vec();
        positions.extend_from_slice(&irr_sorted[..k - h]);
        positions.sort_unstable();
        score.push(canonical_score(&uc.candidates, &positions));
        subsets.push(positions.iter().map(|&p| uc.candidates[p].0).collect());
    }
    Ok(UserProfile {
        h_min,
        h_max,
        score,
        subsets,
        h_unconstrained,
    })
}

/// Build the hit profile of every user: for each feasible hit count h, the
/// best k-subset is the h strongest relevant candidates plus the k-h
/// strongest irrelevant ones (exchange argument).
pub fn build_profiles(instance: &RerankInstance) -> Result<HitProfile> {
    instance.validate()?;
    let users = instance
        .users
        .iter()
        .map(|uc| profile_one(uc, instance.k))
        .collect::<Result<Vec<_>>>()?;
    Ok(HitProfile { users })
}

/// The solved re-ranking: chosen items per user plus the solver's report.
#[derive(Debug, Clone)]
pub struct RerankSolution {
    /// Chosen item ids per user, instance order, |set| = k.
    pub chosen: Vec<Vec<u32>>,
    /// Total prediction score of the chosen items.
    pub objective: f64,
    /// Achieved constraint gap, exact.
    pub gap: BigRational,
    /// Whether the gap constraint was met (vacuous constraints count as
    /// feasible).
    pub feasible: bool,
    /// Branch-and-bound nodes expanded (0 when the unconstrained solution
    /// was already feasible).
    pub nodes_expanded: u64,
}

impl RerankSolution {
    pub fn gap_f64(&self) -> f64 {
        rational_to_f64(&self.gap)
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact per-user constraint weight: +2/(|A|(k+|T_u|)) for active users,
/// -2/(|B|(k+|T_u|)) for inactive. The gap is |sum_u w_u h_u|.
pub(crate) fn user_weight(
    group: Group,
    t_u: usize,
    k: usize,
    n_active: usize,
    n_inactive: usize,
) -> BigRational {
    let (sign, group_size) = match group {
        Group::Active => (1, n_active),
        Group::Inactive => (-1, n_inactive),
    };
    BigRational::new(BigInt::from(2 * sign), BigInt::from(group_size * (k + t_u)))
}

/// Recompute the constraint gap from realized item choices, in exact
/// rational arithmetic: the independent audit of a solution.
pub fn audit_gap(instance: &RerankInstance, chosen: &[Vec<u32>]) -> Result<BigRational> {
    let (n_a, n_b) = instance.group_sizes();
    if n_a == 0 || n_b == 0 {
        return Ok(BigRational::zero());
    }
    let mut total = BigRational::zero();
    for (uc, items) in instance.users.iter().zip(chosen) {
        let relevant: HashSet<u32> = uc
            .candidates
            .iter()
            .zip(&uc.relevant)
            .filter(|(_, &r)| r)
            .map(|(&(v, _), _)| v)
            .collect();
        let hits = items.iter().filter(|v| relevant.contains(v)).count();
        let w = user_weight(uc.group, uc.t_u, instance.k, n_a, n_b);
        total += w * BigInt::from(hits);
    }
    Ok(total.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn user(
        id: u32,
        group: Group,
        scores: &[f64],
        relevant: &[bool],
        t_u: usize,
    ) -> UserCandidates {
        UserCandidates {
            user: id,
            group,
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (100 + id * 10 + i as u32, s))
                .collect(),
            relevant: relevant.to_vec(),
            t_u,
        }
    }

    #[test]
    fn profile_all_irrelevant_has_single_entry() {
        let uc = user(0, Group::Active, &[3.0, 2.0, 1.0], &[false; 3], 2);
        let instance = RerankInstance {
            users: vec![uc],
            alpha: 0.5,
            k: 2,
        };
        let profiles = build_profiles(&instance).unwrap();
        let p = &profiles.users[0];
        assert_eq!((p.h_min, p.h_max), (0, 0));
        assert_eq!(p.score, vec![5.0]);
    }

    #[test]
    fn profile_matches_subset_enumeration() {
        // K=3, k=2, scores (5,4,3), relevance (1,0,0):
        // s(0) = 4+3 = 7, s(1) = 5+4 = 9, checked against all C(3,2) subsets.
        let uc = user(0, Group::Active, &[5.0, 4.0, 3.0], &[true, false, false], 1);
        let instance = RerankInstance {
            users: vec![uc],
            alpha: 1.0,
            k: 2,
        };
        let profiles = build_profiles(&instance).unwrap();
        let p = &profiles.users[0];
        assert_eq!((p.h_min, p.h_max), (0, 1));
        assert_eq!(p.score, vec![7.0, 9.0]);
        // h = 2 is absent from the table: only one relevant candidate.
        assert_eq!(p.score.len(), 2);
        assert_eq!(p.h_unconstrained, 1);
    }

    #[test]
    fn profile_exchange_optimality_by_enumeration() {
        // For every feasible h, no k-subset with exactly h hits beats s(h).
        let scores = [0.9, 0.8, 0.55, 0.4, 0.3, 0.1];
        let relevant = [false, true, false, true, false, true];
        let uc = user(1, Group::Inactive, &scores, &relevant, 4);
        let instance = RerankInstance {
            users: vec![uc.clone()],
            alpha: 1.0,
            k: 3,
        };
        let profiles = build_profiles(&instance).unwrap();
        let p = &profiles.users[0];

        let n = scores.len();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let subset = [a, b, c];
                    let h = subset.iter().filter(|&&i| relevant[i]).count();
                    let s: f64 = subset.iter().map(|&i| scores[i]).sum();
                    if (p.h_min..=p.h_max).contains(&h) {
                        assert!(
                            s <= p.score[h - p.h_min] + 1e-12,
                            "subset {subset:?} with {h} hits beats the profile"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn profile_rejects_short_candidate_lists() {
        let uc = user(0, Group::Active, &[1.0], &[true], 1);
        let instance = RerankInstance {
            users: vec![uc],
            alpha: 0.1,
            k: 2,
        };
        assert!(matches!(
            build_profiles(&instance),
            Err(Error::TooFewCandidates { .. })
        ));
    }

    #[test]
    fn audit_matches_hand_computation() {
        // One active user with 1 hit of |T_u|=1, one inactive with 0 hits:
        // gap = |2*1/(1*(2+1)) - 0| = 2/3.
        let a = user(0, Group::Active, &[3.0, 2.0, 1.0], &[true, false, false], 1);
        let b = user(1, Group::Inactive, &[3.0, 2.0, 1.0], &[false; 3], 0);
        let instance = RerankInstance {
            users: vec![a.clone(), b.clone()],
            alpha: 1.0,
            k: 2,
        };
        let chosen = vec![
            vec![a.candidates[0].0, a.candidates[1].0],
            vec![b.candidates[0].0, b.candidates[1].0],
        ];
        let gap = audit_gap(&instance, &chosen).unwrap();
        assert_eq!(gap, BigRational::new(BigInt::from(2), BigInt::from(3)));
    }
}
