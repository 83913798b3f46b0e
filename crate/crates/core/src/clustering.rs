//! Static cluster construction from long-term signal strengths.
//!
//! Strength tables are indexed `[l][k]` in dBm. Ties in strength are broken
//! by ascending BS id (for a user's ranking of BSs) and ascending user id (for
//! a BS's ranking of requests).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{NetworkLayout, Tier};
pub use crate::wmmse::ClusterAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterPolicy {
    StrongestS {
        s: usize,
    },
    DisjointCell,
    MaxLoading {
        eta1_db: f64,
        k_max_macro: usize,
        k_max_pico: usize,
    },
    Biased {
        eta2_db: f64,
        bias_macro_db: f64,
        bias_pico_db: f64,
    },
}

impl ClusterPolicy {
    pub fn validate(&self, num_bs: usize) -> Result<()> {
        match *self {
            ClusterPolicy::StrongestS { s } if s == 0 || s > num_bs => Err(Error::InvalidArgument(format!(
                "S must be in 1..={num_bs}, got {s}"
            ))),
            ClusterPolicy::MaxLoading { eta1_db, .. } if !(eta1_db >= 0.0) => {
                Err(Error::InvalidArgument(format!("eta1 must be >= 0 dB, got {eta1_db}")))
            }
            ClusterPolicy::Biased { eta2_db, .. } if !(eta2_db >= 0.0) => {
                Err(Error::InvalidArgument(format!("eta2 must be >= 0 dB, got {eta2_db}")))
            }
            _ => Ok(()),
        }
    }

    /// Short identifier used in file names and manifests.
    pub fn label(&self) -> String {
        match self {
            ClusterPolicy::StrongestS { s } => format!("strongest_{s}"),
            ClusterPolicy::DisjointCell => "disjoint".into(),
            ClusterPolicy::MaxLoading { .. } => "max_loading".into(),
            ClusterPolicy::Biased { .. } => "biased".into(),
        }
    }
}

/// Strengths of one user toward every BS.
fn user_column(strengths: &[Vec<f64>], k: usize) -> Vec<f64> {
    strengths.iter().map(|row| row[k]).collect()
}

fn num_users(strengths: &[Vec<f64>]) -> usize {
    strengths.first().map_or(0, Vec::len)
}

/// BS ids ordered strongest first, ties by id.
pub fn ranked(column: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..column.len()).collect();
    ids.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
    ids
}

/// BSs within `gap_db` of the strongest one, in ascending id order.
pub fn within_gap(column: &[f64], gap_db: f64) -> Vec<usize> {
    let best = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..column.len())
        .filter(|&l| best - column[l] <= gap_db)
        .collect()
}

/// Candidate serving cluster of one user: BSs within `eta1_db` of its strongest.
pub fn candidate_cluster(column: &[f64], eta1_db: f64) -> Vec<usize> {
    within_gap(column, eta1_db)
}

/// The `s` strongest BSs of one user.
pub fn strongest_s(column: &[f64], s: usize) -> Vec<usize> {
    let mut top: Vec<usize> = ranked(column).into_iter().take(s).collect();
    top.sort_unstable();
    top
}

pub fn strongest_s_clusters(strengths: &[Vec<f64>], s: usize) -> ClusterAssignment {
    let serving = (0..num_users(strengths))
        .map(|k| strongest_s(&user_column(strengths, k), s))
        .collect();
    ClusterAssignment::from_serving(serving, strengths.len())
}

/// Multi-round request/accept negotiation with per-BS user quotas.
pub fn max_loading_clusters(strengths: &[Vec<f64>], eta1_db: f64, k_max: &[usize]) -> ClusterAssignment {
    let num_bs = strengths.len();
    let k_total = num_users(strengths);
    // each user's candidate list, strongest first
    let lists: Vec<Vec<usize>> = (0..k_total)
        .map(|k| {
            let column = user_column(strengths, k);
            let cand = candidate_cluster(&column, eta1_db);
            ranked(&column).into_iter().filter(|l| cand.contains(l)).collect()
        })
        .collect();
    let mut open: Vec<bool> = vec![true; num_bs];
    let mut remaining: Vec<usize> = k_max.to_vec();
    let mut pending: Vec<bool> = lists.iter().map(|c| !c.is_empty()).collect();
    let mut serving = vec![Vec::new(); k_total];

    let mut round = 0;
    while pending.iter().any(|p| *p) && open.iter().any(|o| *o) {
        let mut requests: Vec<Vec<usize>> = vec![Vec::new(); num_bs];
        for k in (0..k_total).filter(|&k| pending[k]) {
            requests[lists[k][round]].push(k);
        }
        for (l, reqs) in requests.iter_mut().enumerate() {
            if !open[l] || reqs.is_empty() {
                continue;
            }
            if remaining[l] >= reqs.len() {
                for &k in reqs.iter() {
                    serving[k].push(l);
                }
                remaining[l] -= reqs.len();
            } else {
                reqs.sort_by(|&a, &b| {
                    strengths[l][b]
                        .partial_cmp(&strengths[l][a])
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                for &k in reqs.iter().take(remaining[l]) {
                    serving[k].push(l);
                }
                remaining[l] = 0;
                open[l] = false;
            }
        }
        round += 1;
        for k in 0..k_total {
            if pending[k] && round >= lists[k].len() {
                pending[k] = false;
            }
        }
    }
    ClusterAssignment::from_serving(serving, num_bs)
}

/// Clusters from bias-adjusted strengths within `eta2_db` of the best.
pub fn biased_clusters(strengths: &[Vec<f64>], eta2_db: f64, bias_db: &[f64]) -> ClusterAssignment {
    let serving = (0..num_users(strengths))
        .map(|k| {
            let column: Vec<f64> = (0..strengths.len()).map(|l| strengths[l][k] + bias_db[l]).collect();
            within_gap(&column, eta2_db)
        })
        .collect();
    ClusterAssignment::from_serving(serving, strengths.len())
}

/// Each user served by every BS of its own cell.
pub fn disjoint_cell_clusters(layout: &NetworkLayout) -> ClusterAssignment {
    let serving = layout
        .users
        .iter()
        .map(|u| {
            layout
                .base_stations
                .iter()
                .filter(|b| b.cell == u.cell)
                .map(|b| b.id)
                .collect()
        })
        .collect();
    ClusterAssignment::from_serving(serving, layout.num_bs())
}

fn per_tier<T: Copy>(layout: &NetworkLayout, macro_value: T, pico_value: T) -> Vec<T> {
    layout
        .base_stations
        .iter()
        .map(|b| match b.tier {
            Tier::Macro => macro_value,
            Tier::Pico => pico_value,
        })
        .collect()
}

pub fn build_clusters(policy: &ClusterPolicy, strengths: &[Vec<f64>], layout: &NetworkLayout) -> ClusterAssignment {
    match *policy {
        ClusterPolicy::StrongestS { s } => strongest_s_clusters(strengths, s),
        ClusterPolicy::DisjointCell => disjoint_cell_clusters(layout),
        ClusterPolicy::MaxLoading {
            eta1_db,
            k_max_macro,
            k_max_pico,
        } => max_loading_clusters(strengths, eta1_db, &per_tier(layout, k_max_macro, k_max_pico)),
        ClusterPolicy::Biased {
            eta2_db,
            bias_macro_db,
            bias_pico_db,
        } => biased_clusters(strengths, eta2_db, &per_tier(layout, bias_macro_db, bias_pico_db)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_gap() {
        assert_eq!(candidate_cluster(&[-80.0, -90.0, -100.0], 14.0), vec![0, 1]);
        assert_eq!(candidate_cluster(&[-80.0, -90.0, -80.0], 0.0), vec![0, 2]);
    }

    #[test]
    fn strongest_nested() {
        let col = [-90.0, -70.0, -85.0, -70.0];
        assert_eq!(strongest_s(&col, 1), vec![1]);
        assert_eq!(strongest_s(&col, 2), vec![1, 3]);
        assert_eq!(strongest_s(&col, 3), vec![1, 2, 3]);
    }

    #[test]
    fn negotiation_hand_example() {
        // both users prefer BS0; user 0 stronger at BS0, user 1 stronger at BS1
        let s = vec![vec![-70.0, -72.0], vec![-75.0, -74.0]];
        let c = max_loading_clusters(&s, 14.0, &[1, 1]);
        assert_eq!(c.serving, vec![vec![0], vec![1]]);
        assert!(c.is_consistent());
    }

    #[test]
    fn zero_quota_empty_clusters() {
        let s = vec![vec![-70.0, -72.0], vec![-75.0, -74.0]];
        let c = max_loading_clusters(&s, 14.0, &[0, 0]);
        assert!(c.serving.iter().all(Vec::is_empty));
    }

    #[test]
    fn quota_and_candidate_invariants() {
        let s = vec![
            vec![-60.0, -65.0, -70.0, -62.0, -90.0],
            vec![-80.0, -66.0, -71.0, -75.0, -70.0],
            vec![-70.0, -90.0, -60.0, -64.0, -72.0],
        ];
        let quota = [2, 1, 3];
        let c = max_loading_clusters(&s, 10.0, &quota);
        for l in 0..3 {
            assert!(c.served[l].len() <= quota[l]);
        }
        for k in 0..5 {
            let col = user_column(&s, k);
            let cand = candidate_cluster(&col, 10.0);
            assert!(c.serving[k].iter().all(|l| cand.contains(l)));
        }
    }

    #[test]
    fn zero_bias_matches_candidate() {
        let s = vec![vec![-60.0, -80.0], vec![-70.0, -75.0], vec![-90.0, -79.0]];
        let b = biased_clusters(&s, 12.0, &[0.0; 3]);
        for k in 0..2 {
            assert_eq!(b.serving[k], candidate_cluster(&user_column(&s, k), 12.0));
        }
    }

    #[test]
    fn pico_bias_example() {
        let s = vec![vec![-80.0], vec![-85.0]];
        let b = biased_clusters(&s, 12.0, &[0.0, 6.0]);
        assert_eq!(b.serving[0], vec![0, 1]);
        let b = biased_clusters(&s, 0.0, &[0.0, 6.0]);
        assert_eq!(b.serving[0], vec![1]);
    }

    #[test]
    fn policy_validation() {
        assert!(ClusterPolicy::StrongestS { s: 0 }.validate(4).is_err());
        assert!(ClusterPolicy::StrongestS { s: 5 }.validate(4).is_err());
        assert!(ClusterPolicy::StrongestS { s: 2 }.validate(4).is_ok());
        assert!(ClusterPolicy::Biased {
            eta2_db: -1.0,
            bias_macro_db: 0.0,
            bias_pico_db: 0.0
        }
        .validate(4)
        .is_err());
    }
}
