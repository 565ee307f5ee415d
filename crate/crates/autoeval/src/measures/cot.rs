//! Confidence optimal transport under the bottleneck (L-infinity)
//! Wasserstein distance.
//!
//! The target's softmax predictions are matched one-to-one against an
//! empirical source sample of one-hot vectors whose class counts follow
//! the source label marginal (largest-remainder rounding). The reported
//! value is the smallest achievable maximum per-pair L-infinity cost.
//! Up to `EXACT_LIMIT` samples the optimum is found by binary search
//! over candidate costs with a bipartite-matching feasibility check;
//! above it a greedy sorted-cost matching is used and the result is
//! flagged approximate.

use crate::data_model::LogitStore;
use crate::measures::softmax_rows;
use crate::{Error, Result};

const EXACT_LIMIT: usize = 512;

/// Bottleneck transport value; `exact` is false for the greedy fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CotScore {
    pub value: f64,
    pub exact: bool,
}

/// Class counts summing to `n` that follow `marginal` as closely as
/// possible (largest remainder; remainder ties go to the lower class).
fn marginal_counts(marginal: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = marginal.iter().map(|&m| (m * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut rema: Vec<(f64, usize)> = marginal
        .iter()
        .enumerate()
        .map(|(k, &m)| (m * n as f64 - counts[k] as f64, k))
        .collect();
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for i in 0..n.saturating_sub(assigned) {
        counts[rema[i % rema.len()].1] += 1;
    }
    counts
}

/// L-infinity distance from probability vector `p` to the one-hot of
/// class `k`: max(1 - p_k, max_{j != k} p_j).
fn one_hot_distance(p: &[f64], k: usize) -> f64 {
    let mut other_max = 0.0f64;
    for (j, &v) in p.iter().enumerate() {
        if j != k && v > other_max {
            other_max = v;
        }
    }
    (1.0 - p[k]).max(other_max)
}

/// Kuhn augmenting-path matching: can every target be assigned a class
/// slot using only edges with cost <= limit?
fn matching_feasible(costs: &[Vec<f64>], slot_class: &[usize], limit: f64) -> bool {
    let n = costs.len();
    let mut slot_of_target = vec![usize::MAX; n];
    let mut target_of_slot = vec![usize::MAX; n];

    fn try_assign(
        i: usize,
        costs: &[Vec<f64>],
        slot_class: &[usize],
        limit: f64,
        visited: &mut [bool],
        slot_of_target: &mut [usize],
        target_of_slot: &mut [usize],
    ) -> bool {
        for s in 0..slot_class.len() {
            if visited[s] || costs[i][slot_class[s]] > limit {
                continue;
            }
            visited[s] = true;
            let occupant = target_of_slot[s];
            if occupant == usize::MAX
                || try_assign(
                    occupant,
                    costs,
                    slot_class,
                    limit,
                    visited,
                    slot_of_target,
                    target_of_slot,
                )
            {
                slot_of_target[i] = s;
                target_of_slot[s] = i;
                return true;
            }
        }
        false
    }

    for i in 0..n {
        let mut visited = vec![false; n];
        if !try_assign(
            i,
            costs,
            slot_class,
            limit,
            &mut visited,
            &mut slot_of_target,
            &mut target_of_slot,
        ) {
            return false;
        }
    }
    true
}

fn bottleneck_exact(costs: &[Vec<f64>], slot_class: &[usize]) -> f64 {
    let mut candidates: Vec<f64> = costs.iter().flat_map(|r| r.iter().copied()).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    // smallest candidate cost admitting a perfect matching
    let mut lo = 0usize;
    let mut hi = candidates.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if matching_feasible(costs, slot_class, candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

fn bottleneck_greedy(costs: &[Vec<f64>], class_counts: &[usize]) -> f64 {
    let n = costs.len();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * class_counts.len());
    for (i, row) in costs.iter().enumerate() {
        for (k, &c) in row.iter().enumerate() {
            if class_counts[k] > 0 {
                edges.push((c, i, k));
            }
        }
    }
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut remaining = class_counts.to_vec();
    let mut assigned = vec![false; n];
    let mut left = n;
    let mut worst = 0.0f64;
    for (c, i, k) in edges {
        if left == 0 {
            break;
        }
        if !assigned[i] && remaining[k] > 0 {
            assigned[i] = true;
            remaining[k] -= 1;
            left -= 1;
            worst = worst.max(c);
        }
    }
    worst
}

/// Bottleneck transport between target softmax predictions and a source
/// one-hot sample drawn from `source_label_marginal`.
pub fn cot_score(target: &LogitStore, source_label_marginal: &[f64]) -> Result<CotScore> {
    let k = target.n_classes();
    if source_label_marginal.len() != k {
        return Err(Error::InvalidMarginal(format!(
            "marginal has {} entries, store has {} classes",
            source_label_marginal.len(),
            k
        )));
    }
    if source_label_marginal.iter().any(|&m| !(m.is_finite() && m >= 0.0)) {
        return Err(Error::InvalidMarginal(
            "marginal entries must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = source_label_marginal.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMarginal(format!("marginal sums to {sum}, not 1")));
    }

    let n = target.n_samples();
    let counts = marginal_counts(source_label_marginal, n);
    let probs = softmax_rows(target);
    let costs: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| (0..k).map(|c| one_hot_distance(p, c)).collect())
        .collect();

    if n <= EXACT_LIMIT {
        let mut slot_class = Vec::with_capacity(n);
        for (class, &cnt) in counts.iter().enumerate() {
            slot_class.extend(std::iter::repeat_n(class, cnt));
        }
        Ok(CotScore {
            value: bottleneck_exact(&costs, &slot_class),
            exact: true,
        })
    } else {
        Ok(CotScore {
            value: bottleneck_greedy(&costs, &counts),
            exact: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::LogitStore;

    fn store(logits: &[&[f64]]) -> LogitStore {
        let k = logits[0].len();
        let flat: Vec<f64> = logits.iter().flat_map(|r| r.iter().copied()).collect();
        LogitStore::new(logits.len(), k, flat, None, "t").unwrap()
    }

    #[test]
    fn counts_follow_marginal() {
        assert_eq!(marginal_counts(&[0.5, 0.5], 2), vec![1, 1]);
        assert_eq!(marginal_counts(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(marginal_counts(&[0.7, 0.3], 10), vec![7, 3]);
        assert_eq!(marginal_counts(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
    }

    #[test]
    fn near_one_hot_matching_marginal_is_near_zero() {
        let s = store(&[&[50.0, 0.0], &[0.0, 50.0]]);
        let c = cot_score(&s, &[0.5, 0.5]).unwrap();
        assert!(c.exact);
        assert!(c.value <= 1e-9, "{}", c.value);
    }

    #[test]
    fn symmetric_predictions_hand_value() {
        // both predictions [0.6, 0.4]; distances are 0.4 to [1,0] and
        // 0.6 to [0,1], and the marginal forces one of each, so either
        // matching bottoms out at 0.6
        let s = store(&[
            &[(0.6f64).ln(), (0.4f64).ln()],
            &[(0.6f64).ln(), (0.4f64).ln()],
        ]);
        let c = cot_score(&s, &[0.5, 0.5]).unwrap();
        assert!((c.value - 0.6).abs() <= 1e-12, "{}", c.value);
    }

    #[test]
    fn value_within_unit_interval() {
        let s = store(&[&[1.0, -2.0, 0.3], &[0.0, 0.0, 0.0], &[-5.0, 5.0, 1.0]]);
        let c = cot_score(&s, &[0.2, 0.3, 0.5]).unwrap();
        assert!((0.0..=1.0).contains(&c.value));
    }

    #[test]
    fn invalid_marginal_rejected() {
        let s = store(&[&[0.0, 0.0]]);
        assert!(cot_score(&s, &[0.5, 0.6]).is_err());
        assert!(cot_score(&s, &[0.5]).is_err());
        assert!(cot_score(&s, &[-0.1, 1.1]).is_err());
    }

    #[test]
    fn exact_matches_exhaustive_small() {
        // brute force over all slot permutations
        fn exhaustive(costs: &[Vec<f64>], slot_class: &[usize]) -> f64 {
            fn rec(
                costs: &[Vec<f64>],
                slot_class: &[usize],
                used: &mut Vec<bool>,
                i: usize,
                cur: f64,
                best: &mut f64,
            ) {
                if cur >= *best {
                    return;
                }
                if i == costs.len() {
                    *best = cur;
                    return;
                }
                for s in 0..slot_class.len() {
                    if !used[s] {
                        used[s] = true;
                        rec(costs, slot_class, used, i + 1, cur.max(costs[i][slot_class[s]]), best);
                        used[s] = false;
                    }
                }
            }
            let mut best = f64::INFINITY;
            let mut used = vec![false; slot_class.len()];
            rec(costs, slot_class, &mut used, 0, 0.0, &mut best);
            best
        }

        let s = store(&[
            &[1.0, 0.2, -0.3],
            &[0.0, 0.0, 0.0],
            &[2.0, -1.0, 0.5],
            &[-0.4, 1.4, 0.1],
            &[0.3, 0.3, -2.0],
        ]);
        let marginal = [0.4, 0.4, 0.2];
        let counts = marginal_counts(&marginal, 5);
        let mut slot_class = Vec::new();
        for (class, &cnt) in counts.iter().enumerate() {
            slot_class.extend(std::iter::repeat_n(class, cnt));
        }
        let probs = softmax_rows(&s);
        let costs: Vec<Vec<f64>> = probs
            .iter()
            .map(|p| (0..3).map(|c| one_hot_distance(p, c)).collect())
            .collect();
        let exact = bottleneck_exact(&costs, &slot_class);
        let brute = exhaustive(&costs, &slot_class);
        assert_eq!(exact, brute);
        let api = cot_score(&s, &marginal).unwrap();
        assert_eq!(api.value, exact);
    }
}
