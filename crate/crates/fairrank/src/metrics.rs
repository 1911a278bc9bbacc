//! Evaluation metrics for a (true, fair) ranking pair: group representation
//! in a rank window, underranking at a cutoff, nDCG, and precision@K.

use std::collections::HashMap;

use num_rational::Ratio;
use num_traits::One;
use serde::Serialize;
use thiserror::Error;

use crate::model::{FairRanking, Rational, TrueRanking};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("window [{a}, {b}] is out of range for a ranking of length {len}")]
    WindowOutOfRange { a: usize, b: usize, len: usize },
    #[error("item {id:?} (true rank {true_rank}) does not appear in the fair ranking")]
    ItemMissing { id: String, true_rank: usize },
}

/// Fraction of ranks in the window `[a, b]` (1-based, inclusive) held by
/// items of `group`.
pub fn representation(
    fair: &FairRanking,
    group: usize,
    window: (usize, usize),
) -> Result<Rational, MetricError> {
    let (a, b) = window;
    if a == 0 || b < a || b > fair.len() {
        return Err(MetricError::WindowOutOfRange { a, b, len: fair.len() });
    }
    let count = fair.items()[a - 1..b].iter().filter(|i| i.group == group).count();
    Ok(Ratio::new(count as i64, (b - a + 1) as i64))
}

fn rank_index(fair: &FairRanking) -> HashMap<&str, usize> {
    fair.items()
        .iter()
        .enumerate()
        .map(|(idx, item)| (item.id.as_str(), idx + 1))
        .collect()
}

/// `max_{j <= k'} r_j / j` where `r_j` is the rank in `fair` of the item
/// with true rank `j`. The whole fair ranking is searched, so a top-`k'`
/// item pushed past `k'` still counts. Errors if any true top-`k'` item is
/// absent from `fair`.
pub fn underranking_at(
    fair: &FairRanking,
    truth: &TrueRanking,
    k_prime: usize,
) -> Result<Rational, MetricError> {
    let ranks = rank_index(fair);
    let mut worst = Rational::one();
    for (idx, item) in truth.items().iter().take(k_prime).enumerate() {
        let j = idx + 1;
        let r = *ranks.get(item.id.as_str()).ok_or_else(|| MetricError::ItemMissing {
            id: item.id.clone(),
            true_rank: j,
        })?;
        worst = worst.max(Ratio::new(r as i64, j as i64));
    }
    Ok(worst)
}

/// Like [`underranking_at`] but skips true top-`k'` items that are absent
/// from `fair` (the natural reading for top-k outputs of the baselines).
pub fn underranking_observed(fair: &FairRanking, truth: &TrueRanking, k_prime: usize) -> Rational {
    let ranks = rank_index(fair);
    let mut worst = Rational::one();
    for (idx, item) in truth.items().iter().take(k_prime).enumerate() {
        if let Some(&r) = ranks.get(item.id.as_str()) {
            worst = worst.max(Ratio::new(r as i64, (idx + 1) as i64));
        }
    }
    worst
}

/// nDCG with exponential gain `2^score` and discount `log2(rank + 1)`,
/// normalised by the true ranking's DCG over the same cutoff.
pub fn ndcg_at(fair: &FairRanking, truth: &TrueRanking, k_prime: usize) -> f64 {
    let dcg = |scores: &mut dyn Iterator<Item = f64>| -> f64 {
        scores
            .enumerate()
            .map(|(idx, y)| 2f64.powf(y) / ((idx + 2) as f64).log2())
            .sum()
    };
    let num = dcg(&mut fair.items().iter().take(k_prime).map(|i| i.score));
    let den = dcg(&mut truth.items().iter().take(k_prime).map(|i| i.score));
    num / den
}

/// Number of true top-K items still present in the fair top-K.
pub fn precision_at(fair: &FairRanking, truth: &TrueRanking, k: usize) -> usize {
    let top: std::collections::HashSet<&str> =
        fair.items().iter().take(k).map(|i| i.id.as_str()).collect();
    truth.items().iter().take(k).filter(|i| top.contains(i.id.as_str())).count()
}

/// Everything the experiment harness reports for one ranking pair.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    /// (group, window, representation)
    pub per_window_representation: Vec<(usize, (usize, usize), f64)>,
    /// (k', underranking) with underranking as an exact string
    pub underranking: Vec<(usize, String)>,
    pub ndcg: Vec<(usize, f64)>,
    pub precision: Vec<(usize, usize)>,
}

impl MetricsReport {
    pub fn compute(
        fair: &FairRanking,
        truth: &TrueRanking,
        windows: &[(usize, usize)],
        eval_points: &[usize],
    ) -> Result<Self, MetricError> {
        let mut per_window_representation = Vec::new();
        for &w in windows {
            for g in 0..truth.group_count() {
                let rep = representation(fair, g, w)?;
                per_window_representation.push((g, w, *rep.numer() as f64 / *rep.denom() as f64));
            }
        }
        let mut underranking = Vec::new();
        let mut ndcg = Vec::new();
        let mut precision = Vec::new();
        for &kp in eval_points {
            let u = underranking_observed(fair, truth, kp);
            underranking.push((kp, crate::model::rational_string(u)));
            ndcg.push((kp, ndcg_at(fair, truth, kp)));
            precision.push((kp, precision_at(fair, truth, kp)));
        }
        Ok(Self { per_window_representation, underranking, ndcg, precision })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Item;

    fn ranking_of(groups: &[usize], group_count: usize) -> TrueRanking {
        let n = groups.len();
        let items = groups
            .iter()
            .enumerate()
            .map(|(j, &g)| Item { id: format!("i{}", j + 1), score: (n - j) as f64, group: g })
            .collect();
        TrueRanking::new(items, group_count).unwrap()
    }

    fn as_fair(truth: &TrueRanking) -> FairRanking {
        FairRanking::new(truth.items().to_vec()).unwrap()
    }

    fn permuted(truth: &TrueRanking, order: &[usize]) -> FairRanking {
        FairRanking::new(order.iter().map(|&j| truth.items()[j - 1].clone()).collect()).unwrap()
    }

    #[test]
    fn representation_counts_directly() {
        let truth = ranking_of(&[0, 1, 0, 1], 2);
        let fair = as_fair(&truth);
        assert_eq!(representation(&fair, 0, (1, 2)).unwrap(), Rational::new(1, 2));
        assert!(matches!(
            representation(&fair, 0, (1, 5)),
            Err(MetricError::WindowOutOfRange { .. })
        ));
        let all_a = as_fair(&ranking_of(&[0, 0, 0, 0], 1));
        assert_eq!(representation(&all_a, 0, (1, 4)).unwrap(), Rational::one());
    }

    #[test]
    fn representation_sums_to_one_across_groups() {
        let truth = ranking_of(&[0, 1, 2, 1, 0, 2], 3);
        let fair = as_fair(&truth);
        let total: Rational =
            (0..3).map(|g| representation(&fair, g, (2, 5)).unwrap()).sum();
        assert_eq!(total, Rational::one());
    }

    #[test]
    fn underranking_identity_is_one() {
        let truth = ranking_of(&[0, 1, 0, 1], 2);
        let fair = as_fair(&truth);
        assert_eq!(underranking_at(&fair, &truth, 4).unwrap(), Rational::one());
    }

    #[test]
    fn underranking_simple_swap() {
        let truth = ranking_of(&[0, 1], 2);
        let fair = permuted(&truth, &[2, 1]);
        assert_eq!(underranking_at(&fair, &truth, 2).unwrap(), Rational::from_integer(2));
    }

    #[test]
    fn underranking_missing_item_errors_and_observed_skips() {
        let truth = ranking_of(&[0, 1, 0], 2);
        let fair = FairRanking::new(vec![truth.items()[2].clone(), truth.items()[1].clone()]).unwrap();
        assert!(matches!(
            underranking_at(&fair, &truth, 2),
            Err(MetricError::ItemMissing { true_rank: 1, .. })
        ));
        assert_eq!(underranking_observed(&fair, &truth, 2), Rational::one());
    }

    #[test]
    fn ndcg_identity_is_one() {
        let truth = ranking_of(&[0, 1, 0, 1], 2);
        let fair = as_fair(&truth);
        for kp in 1..=4 {
            assert!((ndcg_at(&fair, &truth, kp) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ndcg_reversed_top_two_matches_direct_arithmetic() {
        let items = vec![
            Item { id: "a".into(), score: 1.0, group: 0 },
            Item { id: "b".into(), score: 0.0, group: 1 },
        ];
        let truth = TrueRanking::new(items, 2).unwrap();
        let fair = permuted(&truth, &[2, 1]);
        // (2^0/1 + 2^1/log2 3) / (2^1/1 + 2^0/log2 3), computed independently
        let log2_3 = 3f64.log2();
        let expected = (1.0 + 2.0 / log2_3) / (2.0 + 1.0 / log2_3);
        assert!((ndcg_at(&fair, &truth, 2) - expected).abs() < 1e-12);
        assert!((expected - 0.8597188).abs() < 1e-6);
    }

    #[test]
    fn ndcg_equal_scores_is_one_for_any_permutation() {
        let items: Vec<Item> = (0..4)
            .map(|j| Item { id: format!("i{j}"), score: 0.5, group: 0 })
            .collect();
        let truth = TrueRanking::new(items, 1).unwrap();
        let fair = permuted(&truth, &[3, 1, 4, 2]);
        assert!((ndcg_at(&fair, &truth, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precision_identity_and_disjoint() {
        let truth = ranking_of(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2);
        let fair = as_fair(&truth);
        assert_eq!(precision_at(&fair, &truth, 5), 5);
        let reversed = permuted(&truth, &[10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(precision_at(&reversed, &truth, 5), 0);
    }

    #[test]
    fn precision_respects_underranking_floor() {
        // gamma-underranked ranking with gamma = 1.25 must keep >= floor(10/1.25) = 8
        let truth = ranking_of(&[0; 10], 1);
        // shift each item down by at most a quarter of its rank
        let fair = permuted(&truth, &[1, 2, 3, 5, 4, 7, 6, 9, 8, 10]);
        let gamma = underranking_at(&fair, &truth, 10).unwrap();
        assert!(gamma <= Rational::new(5, 4));
        assert!(precision_at(&fair, &truth, 10) >= 8);
    }
}
