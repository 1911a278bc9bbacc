//! The re-ranker: spread the true ranking over a longer slot array, greedily
//! pull items forward into empty ranks under block-local fairness counts,
//! then compact. Runs in two regimes: consecutive-window guarantees with a
//! tunable slack, or exact per-block guarantees (slack fixed at 2).

use num_rational::Ratio;
use num_traits::One;
use thiserror::Error;

use crate::model::{
    ceil_usize, floor_usize, validate_spec, DerivedParams, FairRanking, FairnessSpec, Mode,
    Rational, SlotRanking, SpecError, TrueRanking,
};

#[derive(Debug, Error)]
pub enum AlgError {
    #[error(transparent)]
    InvalidSpec(#[from] SpecError),
    #[error("requested epsilon {requested} is below the minimum {minimum} required for the guarantees")]
    EpsilonBelowMinimum { requested: Rational, minimum: Rational },
    #[error("derived degenerate parameters (B={block_size}, b={quota}); guarantees do not apply")]
    DegenerateParams { block_size: usize, quota: usize },
    #[error("internal invariant violated: {0}")]
    InternalInvariantViolation(String),
}

/// How to reconcile a user-supplied epsilon with the proof's minimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpsilonPolicy {
    /// Use max(requested, minimum); guarantees always hold.
    ClampToMin,
    /// Error out when the request is below the minimum.
    Strict,
    /// Run with the requested value as-is; guarantees are reported void.
    ForceRequested,
}

/// The smallest slack for which every step of the proof goes through:
/// `(2/k) * max{1 + l/(sum_a - 1), 1 + l/(1 - sum_b), max_l 1 + 2/(a_l - b_l)}`.
pub fn epsilon_min(spec: &FairnessSpec) -> Rational {
    let ell = Rational::from_integer(spec.group_count() as i64);
    let one = Rational::one();
    let two = Rational::from_integer(2);
    let t1 = one + ell / (spec.sum_alpha() - one);
    let t2 = one + ell / (one - spec.sum_beta());
    let t3 = spec
        .alphas
        .iter()
        .zip(&spec.betas)
        .map(|(a, b)| one + two / (*a - *b))
        .max()
        .expect("at least one group");
    let k = Rational::from_integer(spec.k as i64);
    two / k * t1.max(t2).max(t3)
}

/// Mode-appropriate closed-form underranking bound, given the block size B.
pub fn underranking_bound(spec: &FairnessSpec, block_size: usize) -> Rational {
    let one = Rational::one();
    let rest_beta = spec.sum_beta_except_star();
    match spec.mode {
        Mode::Blocks => one / (spec.alpha_min().min(one - rest_beta)),
        Mode::ConsecutiveWindows => {
            let big_b = Rational::from_integer(block_size as i64);
            let ell = Rational::from_integer(spec.group_count() as i64);
            let t1 = spec.alpha_min() - one / big_b;
            let t2 = (one - rest_beta) - (ell - one) / big_b;
            one / t1.min(t2)
        }
    }
}

/// Computes every derived quantity the re-ranker needs.
///
/// `n_items` is N, `min_group` the size n of the smallest group. In windows
/// mode the effective epsilon is `max(requested, epsilon_min)` under
/// [`EpsilonPolicy::ClampToMin`]; Blocks mode always runs with epsilon = 2.
pub fn derive_params(
    spec: &FairnessSpec,
    n_items: usize,
    min_group: usize,
    policy: EpsilonPolicy,
) -> Result<DerivedParams, AlgError> {
    let two = Rational::from_integer(2);
    let (eps_min, epsilon, guarantees_void) = match spec.mode {
        Mode::Blocks => (two, two, false),
        Mode::ConsecutiveWindows => {
            let eps_min = epsilon_min(spec);
            match spec.epsilon {
                None => (eps_min, eps_min, false),
                Some(req) if req >= eps_min => (eps_min, req, false),
                Some(req) => match policy {
                    EpsilonPolicy::ClampToMin => (eps_min, eps_min, false),
                    EpsilonPolicy::Strict => {
                        return Err(AlgError::EpsilonBelowMinimum { requested: req, minimum: eps_min })
                    }
                    EpsilonPolicy::ForceRequested => (eps_min, req, true),
                },
            }
        }
    };

    let k = Rational::from_integer(spec.k as i64);
    let block_size = floor_usize(epsilon * k / two);
    let big_b = Rational::from_integer(block_size as i64);
    let star = spec.l_star();
    let rest_ceil: usize = spec
        .betas
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != star)
        .map(|(_, b)| ceil_usize(*b * big_b))
        .sum();
    let quota = floor_usize(spec.alpha_min() * big_b).min(block_size.saturating_sub(rest_ceil));
    if block_size == 0 || quota == 0 {
        return Err(AlgError::DegenerateParams { block_size, quota });
    }
    let slot_count = ceil_usize(Ratio::new((n_items * block_size) as i64, quota as i64));

    let alpha_max = spec.alpha_max();
    let (guaranteed_prefix, guaranteed_blocks) = match spec.mode {
        Mode::Blocks => {
            let blocks = floor_usize(Rational::from_integer(min_group as i64) / (alpha_max * k));
            (blocks * spec.k, blocks)
        }
        Mode::ConsecutiveWindows => {
            let prefix = floor_usize(Rational::from_integer(min_group as i64) / alpha_max)
                .saturating_sub(block_size)
                .min(n_items);
            (prefix, 0)
        }
    };

    Ok(DerivedParams {
        epsilon,
        epsilon_min: eps_min,
        block_size,
        quota,
        slot_count,
        underranking_bound: underranking_bound(spec, block_size),
        guaranteed_prefix,
        guaranteed_blocks,
        alpha_min: spec.alpha_min(),
        alpha_max,
        l_star: star,
        guarantees_void,
    })
}

/// Spread phase: the item with true rank `(i-1)b + j` moves to slot
/// `(i-1)B + j`, so each block of B slots holds at most b items, all in its
/// first b positions.
pub fn spread_down(ranking: &TrueRanking, params: &DerivedParams) -> SlotRanking {
    let n = ranking.len();
    let (b, big_b) = (params.quota, params.block_size);
    let mut out = SlotRanking::empty(params.slot_count);
    let blocks = n.div_ceil(b);
    for i in 1..=blocks {
        let in_block = b.min(n - (i - 1) * b);
        for j in 1..=in_block {
            let true_rank = (i - 1) * b + j;
            let slot = (i - 1) * big_b + j;
            out.slots[slot - 1] = Some(ranking.items()[true_rank - 1].clone());
        }
    }
    out
}

/// Per-block integral thresholds: at most `floor(alpha_l * B)`, at least
/// `ceil(beta_l * B)` items of group l per block.
fn block_thresholds(spec: &FairnessSpec, block_size: usize) -> (Vec<usize>, Vec<usize>) {
    let big_b = Rational::from_integer(block_size as i64);
    let uppers = spec.alphas.iter().map(|a| floor_usize(*a * big_b)).collect();
    let lowers = spec.betas.iter().map(|b| ceil_usize(*b * big_b)).collect();
    (uppers, lowers)
}

/// Greedy fill phase: scan ranks left to right; each empty rank takes the
/// lowest-ranked later item whose group either still misses its lower bound
/// in this block, or (once all lower bounds are met) stays under its upper
/// bound.
pub fn greedy_fill(slots: &SlotRanking, spec: &FairnessSpec, params: &DerivedParams) -> SlotRanking {
    let big_b = params.block_size;
    let m = slots.slots.len();
    let ell = spec.group_count();
    let (uppers, lowers) = block_thresholds(spec, big_b);
    let num_blocks = m.div_ceil(big_b);

    let mut out = slots.clone();
    // counts[block][group]
    let mut counts = vec![vec![0usize; ell]; num_blocks];
    // pending[group]: slot indices (ascending) of unplaced items of that group
    let mut pending: Vec<std::collections::VecDeque<usize>> = vec![Default::default(); ell];
    for (idx, slot) in out.slots.iter().enumerate() {
        if let Some(item) = slot {
            counts[idx / big_b][item.group] += 1;
            pending[item.group].push_back(idx);
        }
    }

    for j in 0..m {
        if let Some(item) = &out.slots[j] {
            let g = item.group;
            debug_assert_eq!(pending[g].front(), Some(&j));
            pending[g].pop_front();
            continue;
        }
        let block = j / big_b;
        let all_lowers_met = (0..ell).all(|l| counts[block][l] >= lowers[l]);
        // candidate = lowest later slot whose group passes the gate
        let mut chosen: Option<(usize, usize)> = None; // (slot, group)
        for (g, queue) in pending.iter().enumerate() {
            let Some(&slot) = queue.front() else { continue };
            let admissible = counts[block][g] < lowers[g]
                || (all_lowers_met && counts[block][g] < uppers[g]);
            if admissible && chosen.map_or(true, |(s, _)| slot < s) {
                chosen = Some((slot, g));
            }
        }
        if let Some((src, g)) = chosen {
            let item = out.slots[src].take().expect("queued slot is occupied");
            counts[src / big_b][g] -= 1;
            counts[block][g] += 1;
            pending[g].pop_front();
            out.slots[j] = Some(item);
        }
    }
    out
}

/// Tail phase: pure left compaction of the occupied slots; returns the first
/// `n` ranks as the final ranking.
pub fn fill_tail(slots: &SlotRanking, n: usize) -> Result<FairRanking, AlgError> {
    let items: Vec<_> = slots.slots.iter().flatten().cloned().collect();
    if items.len() < n {
        return Err(AlgError::InternalInvariantViolation(format!(
            "{} items left in slots, need {n}",
            items.len()
        )));
    }
    FairRanking::new(items.into_iter().take(n).collect())
        .map_err(|e| AlgError::InternalInvariantViolation(e.to_string()))
}

/// Snapshots of the pipeline, kept for auditing and debugging.
#[derive(Clone, Debug)]
pub struct AlgTrace {
    pub params: DerivedParams,
    pub after_spread: SlotRanking,
    pub after_fill: SlotRanking,
}

/// Full pipeline: validate, derive, spread, fill, compact.
pub fn rerank(ranking: &TrueRanking, spec: &FairnessSpec) -> Result<(FairRanking, AlgTrace), AlgError> {
    rerank_with_policy(ranking, spec, EpsilonPolicy::ClampToMin)
}

pub fn rerank_with_policy(
    ranking: &TrueRanking,
    spec: &FairnessSpec,
    policy: EpsilonPolicy,
) -> Result<(FairRanking, AlgTrace), AlgError> {
    let min_group = validate_spec(spec, &ranking.group_sizes())?;
    let params = derive_params(spec, ranking.len(), min_group, policy)?;
    let after_spread = spread_down(ranking, &params);
    let after_fill = greedy_fill(&after_spread, spec, &params);
    let final_ranking = fill_tail(&after_fill, ranking.len())?;
    debug_assert!(final_ranking.is_permutation_of(ranking));
    Ok((final_ranking, AlgTrace { params, after_spread, after_fill }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_rational, Item};

    fn r(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    fn spec(alphas: &[&str], betas: &[&str], k: usize, eps: Option<&str>, mode: Mode) -> FairnessSpec {
        FairnessSpec {
            alphas: alphas.iter().map(|s| r(s)).collect(),
            betas: betas.iter().map(|s| r(s)).collect(),
            k,
            epsilon: eps.map(|s| r(s)),
            mode,
        }
    }

    /// N items; `groups[j]` is the group of the item with true rank j+1.
    fn ranking_of(groups: &[usize], group_count: usize) -> TrueRanking {
        let n = groups.len();
        let items = groups
            .iter()
            .enumerate()
            .map(|(j, &g)| Item { id: format!("i{}", j + 1), score: (n - j) as f64, group: g })
            .collect();
        TrueRanking::new(items, group_count).unwrap()
    }

    /// Worked Blocks example: group 0 at true ranks 1..=10, group 1 at 11..=20.
    fn worked_example() -> (TrueRanking, FairnessSpec) {
        let groups: Vec<usize> = (0..20).map(|j| usize::from(j >= 10)).collect();
        (ranking_of(&groups, 2), spec(&["0.5", "1"], &["0.2", "0"], 10, None, Mode::Blocks))
    }

    #[test]
    fn derive_params_matches_hand_arithmetic_consecutive() {
        let s = spec(&["1", "1"], &["0.15", "0"], 100, Some("0.4"), Mode::ConsecutiveWindows);
        let p = derive_params(&s, 1000, 150, EpsilonPolicy::Strict).unwrap();
        assert_eq!(p.epsilon_min, Rational::new(57, 850)); // (2/100)*(1+2/0.85)
        assert_eq!(p.epsilon, r("0.4"));
        assert_eq!(p.block_size, 20);
        assert_eq!(p.l_star, 1);
        assert_eq!(p.quota, 17); // min{20, 20 - ceil(0.15*20)}
        assert_eq!(p.slot_count, 1177); // ceil(1000*20/17)
        assert_eq!(p.underranking_bound, r("1.25")); // 1/min{1-1/20, 0.85-1/20}
        assert_eq!(p.guaranteed_prefix, 130); // floor(150/1) - 20
    }

    #[test]
    fn derive_params_matches_hand_arithmetic_blocks() {
        let (ranking, s) = worked_example();
        let p = derive_params(&s, ranking.len(), 10, EpsilonPolicy::Strict).unwrap();
        assert_eq!(p.epsilon, Rational::from_integer(2));
        assert_eq!(p.block_size, 10);
        assert_eq!(p.quota, 5); // min{5, 10-2}
        assert_eq!(p.slot_count, 40); // 2N
        assert_eq!(p.underranking_bound, Rational::from_integer(2)); // 1/min{0.5, 0.8}
        assert_eq!(p.guaranteed_blocks, 1); // floor(10/(1*10))
    }

    #[test]
    fn epsilon_below_minimum_is_rejected_unless_forced() {
        let s = spec(&["1", "1"], &["0.15", "0"], 100, Some("0.01"), Mode::ConsecutiveWindows);
        assert!(matches!(
            derive_params(&s, 1000, 150, EpsilonPolicy::Strict),
            Err(AlgError::EpsilonBelowMinimum { .. })
        ));
        let clamped = derive_params(&s, 1000, 150, EpsilonPolicy::ClampToMin).unwrap();
        assert_eq!(clamped.epsilon, clamped.epsilon_min);
        assert!(!clamped.guarantees_void);
        let forced = derive_params(&s, 1000, 150, EpsilonPolicy::ForceRequested);
        // epsilon=0.01 gives B = floor(0.5) = 0: degenerate
        assert!(matches!(forced, Err(AlgError::DegenerateParams { .. })));
    }

    #[test]
    fn spread_moves_blocks_of_quota_items() {
        let (ranking, s) = worked_example();
        let p = derive_params(&s, 20, 10, EpsilonPolicy::Strict).unwrap();
        let slots = spread_down(&ranking, &p);
        // true ranks 1-5 -> slots 1-5, 6-10 -> 11-15, 11-15 -> 21-25, 16-20 -> 31-35
        for (true_rank, slot) in [(1, 1), (5, 5), (6, 11), (10, 15), (11, 21), (15, 25), (16, 31), (20, 35)] {
            assert_eq!(
                slots.slots[slot - 1].as_ref().map(|i| i.id.as_str()),
                Some(format!("i{true_rank}").as_str()),
                "true rank {true_rank} should land at slot {slot}"
            );
        }
        assert_eq!(slots.occupied(), 20);
    }

    #[test]
    fn spread_is_identity_when_quota_equals_block_size() {
        // alpha_min = 1 and beta = 0 make b = B
        let groups = [0, 1, 0, 1];
        let ranking = ranking_of(&groups, 2);
        let s = spec(&["1", "1"], &["0", "0"], 4, Some("2"), Mode::ConsecutiveWindows);
        let p = derive_params(&s, 4, 2, EpsilonPolicy::Strict).unwrap();
        assert_eq!(p.quota, p.block_size);
        let slots = spread_down(&ranking, &p);
        for j in 0..4 {
            assert_eq!(slots.slots[j].as_ref().unwrap().id, format!("i{}", j + 1));
        }
    }

    #[test]
    fn spread_single_item_stays_at_slot_one() {
        let ranking = ranking_of(&[0, 1], 2);
        let s = spec(&["1", "1"], &["0.5", "0.5"], 2, None, Mode::Blocks);
        let p = derive_params(&s, 2, 1, EpsilonPolicy::Strict).unwrap();
        let slots = spread_down(&ranking, &p);
        assert_eq!(slots.slots[0].as_ref().unwrap().id, "i1");
    }

    #[test]
    fn greedy_fill_pulls_other_group_into_empty_ranks() {
        let (ranking, s) = worked_example();
        let p = derive_params(&s, 20, 10, EpsilonPolicy::Strict).unwrap();
        let filled = greedy_fill(&spread_down(&ranking, &p), &s, &p);
        // block 1 slots 6-10 take group-1 items with true ranks 11-15
        for (slot, true_rank) in [(6, 11), (7, 12), (8, 13), (9, 14), (10, 15)] {
            assert_eq!(filled.slots[slot - 1].as_ref().unwrap().id, format!("i{true_rank}"));
        }
        // block 2 slots 16-20 take true ranks 16-20
        for (slot, true_rank) in [(16, 16), (17, 17), (18, 18), (19, 19), (20, 20)] {
            assert_eq!(filled.slots[slot - 1].as_ref().unwrap().id, format!("i{true_rank}"));
        }
    }

    #[test]
    fn greedy_fill_prefers_unmet_lower_bound_over_upper_slack() {
        // single block; group 1 lower bound unmet, a group-1 item exists later
        let ranking = ranking_of(&[0, 0, 0, 1], 2);
        let s = spec(&["1", "1"], &["0.25", "0.25"], 4, None, Mode::Blocks);
        let p = derive_params(&s, 4, 1, EpsilonPolicy::Strict).unwrap();
        let spread = spread_down(&ranking, &p);
        let filled = greedy_fill(&spread, &s, &p);
        // b = min{4, 4 - 1} = 3: slots 1-3 hold i1..i3, slot 4 empty; the
        // group-1 item i4 is pulled in ahead of nothing else
        assert_eq!(filled.slots[3].as_ref().unwrap().id, "i4");
    }

    #[test]
    fn greedy_fill_noop_when_no_empty_ranks() {
        let ranking = ranking_of(&[0, 1, 0, 1], 2);
        let s = spec(&["1", "1"], &["0", "0"], 4, Some("2"), Mode::ConsecutiveWindows);
        let p = derive_params(&s, 4, 2, EpsilonPolicy::Strict).unwrap();
        let spread = spread_down(&ranking, &p);
        let filled = greedy_fill(&spread, &s, &p);
        for j in 0..4 {
            assert_eq!(filled.slots[j], spread.slots[j]);
        }
    }

    #[test]
    fn fill_tail_compacts() {
        let mk = |id: &str| Item { id: id.into(), score: 1.0, group: 0 };
        let slots = SlotRanking {
            slots: vec![Some(mk("a")), None, Some(mk("b")), None, Some(mk("c"))],
        };
        let out = fill_tail(&slots, 3).unwrap();
        let ids: Vec<_> = out.items().iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(matches!(fill_tail(&slots, 4), Err(AlgError::InternalInvariantViolation(_))));
    }

    #[test]
    fn worked_example_full_pipeline() {
        let (ranking, s) = worked_example();
        let (fair, trace) = rerank(&ranking, &s).unwrap();
        assert!(fair.is_permutation_of(&ranking));
        let groups: Vec<usize> = fair.items().iter().map(|i| i.group).collect();
        let expected: Vec<usize> =
            [vec![0; 5], vec![1; 5], vec![0; 5], vec![1; 5]].concat();
        assert_eq!(groups, expected);
        // max underranking is 11/6 (true rank 6 lands at rank 11), within gamma = 2
        let max_ratio = crate::metrics::underranking_at(&fair, &ranking, 20).unwrap();
        assert_eq!(max_ratio, Rational::new(11, 6));
        assert!(max_ratio <= trace.params.underranking_bound);
    }

    #[test]
    fn identity_case_when_input_already_fair() {
        // alternating groups, vacuous lower bounds, b = B
        let groups: Vec<usize> = (0..8).map(|j| j % 2).collect();
        let ranking = ranking_of(&groups, 2);
        let s = spec(&["1", "1"], &["0", "0"], 4, Some("2"), Mode::ConsecutiveWindows);
        let (fair, _) = rerank(&ranking, &s).unwrap();
        for (j, item) in fair.items().iter().enumerate() {
            assert_eq!(item.id, format!("i{}", j + 1));
        }
        assert_eq!(crate::metrics::underranking_at(&fair, &ranking, 8).unwrap(), Rational::one());
    }

    #[test]
    fn underranking_bound_blocks_requires_no_block_state() {
        let s = spec(&["0.5", "1"], &["0.2", "0"], 10, None, Mode::Blocks);
        assert_eq!(underranking_bound(&s, 10), Rational::from_integer(2));
        let s2 = spec(&["1", "1"], &["0.15", "0"], 100, None, Mode::ConsecutiveWindows);
        assert_eq!(underranking_bound(&s2, 20), r("1.25"));
    }
}
