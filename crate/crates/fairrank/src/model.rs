//! Domain types shared by every module: items, rankings, fairness
//! constraints, and the parameters derived from them.
//!
//! All constraint arithmetic is done on exact rationals. Thresholds such
//! as `floor(alpha_l * B)` and `ceil(beta_l * B)` decide whether a rank may
//! be assigned to a group; a float that misrounds one of them by 1 silently
//! breaks the fairness guarantee, so floats never enter these computations.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rational used for all constraint parameters and thresholds.
pub type Rational = Ratio<i64>;

/// Parses `"3/20"`, `"0.15"`, `"2"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: i64 = num.trim().parse().map_err(|_| ParseRationalError(s.into()))?;
        let d: i64 = den.trim().parse().map_err(|_| ParseRationalError(s.into()))?;
        if d == 0 {
            return Err(ParseRationalError(s.into()));
        }
        return Ok(Rational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let sign = if int.trim_start().starts_with('-') { -1i64 } else { 1 };
        let i: i64 = if int.is_empty() || int == "-" {
            0
        } else {
            int.parse().map_err(|_| ParseRationalError(s.into()))?
        };
        if frac.is_empty() || frac.len() > 15 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseRationalError(s.into()));
        }
        let f: i64 = frac.parse().map_err(|_| ParseRationalError(s.into()))?;
        let den = 10i64.pow(frac.len() as u32);
        return Ok(Rational::from_integer(i) + Rational::new(sign * f, den));
    }
    let n: i64 = s.parse().map_err(|_| ParseRationalError(s.into()))?;
    Ok(Rational::from_integer(n))
}

#[derive(Debug, Error)]
#[error("not a rational number: {0:?}")]
pub struct ParseRationalError(String);

/// Formats a rational as `num/den` (or just `num` for integers).
pub fn rational_string(r: Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// The unit being ranked: an opaque id, a merit score, and a group label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub score: f64,
    /// Group index in `0..group_count`.
    pub group: usize,
}

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("item {id:?} has group {group} but only {group_count} groups are declared")]
    GroupOutOfRange { id: String, group: usize, group_count: usize },
    #[error("scores are not non-increasing at position {0}")]
    ScoresNotSorted(usize),
    #[error("ranking is empty")]
    Empty,
}

/// A merit-ordered ranking: position `j` (1-based) is the true rank.
#[derive(Clone, Debug)]
pub struct TrueRanking {
    items: Vec<Item>,
    group_count: usize,
}

impl TrueRanking {
    /// Wraps an already score-sorted list. Scores must be non-increasing.
    pub fn new(items: Vec<Item>, group_count: usize) -> Result<Self, RankingError> {
        if items.is_empty() {
            return Err(RankingError::Empty);
        }
        let mut seen = HashSet::new();
        for (pos, item) in items.iter().enumerate() {
            if item.group >= group_count {
                return Err(RankingError::GroupOutOfRange {
                    id: item.id.clone(),
                    group: item.group,
                    group_count,
                });
            }
            if !seen.insert(item.id.clone()) {
                return Err(RankingError::DuplicateId(item.id.clone()));
            }
            if pos > 0 && items[pos - 1].score < item.score {
                return Err(RankingError::ScoresNotSorted(pos + 1));
            }
        }
        Ok(Self { items, group_count })
    }

    /// Sorts by score descending and wraps. Ties keep input order.
    pub fn from_scored_items(mut items: Vec<Item>, group_count: usize) -> Result<Self, RankingError> {
        items.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("scores must be comparable"));
        Self::new(items, group_count)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.group_count];
        for item in &self.items {
            sizes[item.group] += 1;
        }
        sizes
    }

    /// Size of the smallest group (the `n` of the theorems).
    pub fn min_group_size(&self) -> usize {
        self.group_sizes().into_iter().min().unwrap_or(0)
    }
}

/// A re-ranked output: ordered items, rank 1 first, no empty ranks.
#[derive(Clone, Debug)]
pub struct FairRanking {
    items: Vec<Item>,
}

impl FairRanking {
    pub fn new(items: Vec<Item>) -> Result<Self, RankingError> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id.clone()) {
                return Err(RankingError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// True iff this ranking holds exactly the items of `truth`, once each.
    pub fn is_permutation_of(&self, truth: &TrueRanking) -> bool {
        if self.items.len() != truth.len() {
            return false;
        }
        let mut ids: Vec<&str> = self.items.iter().map(|i| i.id.as_str()).collect();
        let mut truth_ids: Vec<&str> = truth.items().iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        truth_ids.sort_unstable();
        ids == truth_ids
    }
}

/// Intermediate state of the re-ranker: `slot_count` ranks, some empty.
#[derive(Clone, Debug)]
pub struct SlotRanking {
    pub slots: Vec<Option<Item>>,
}

impl SlotRanking {
    pub fn empty(len: usize) -> Self {
        Self { slots: vec![None; len] }
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

/// Which guarantee regime the re-ranker runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Fairness in every k consecutive ranks of the guaranteed prefix.
    ConsecutiveWindows,
    /// Exact fairness in each of the top blocks of size k (epsilon forced to 2).
    Blocks,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::ConsecutiveWindows => write!(f, "windows"),
            Mode::Blocks => write!(f, "blocks"),
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "windows" | "consecutive" => Ok(Mode::ConsecutiveWindows),
            "blocks" => Ok(Mode::Blocks),
            other => Err(format!("unknown mode {other:?} (expected windows|blocks)")),
        }
    }
}

/// Per-group fairness constraints: upper proportions `alphas`, lower
/// proportions `betas`, window size `k`, an optional slack `epsilon`, and
/// the guarantee mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub alphas: Vec<Rational>,
    pub betas: Vec<Rational>,
    pub k: usize,
    pub epsilon: Option<Rational>,
    pub mode: Mode,
}

impl FairnessSpec {
    pub fn group_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn sum_alpha(&self) -> Rational {
        self.alphas.iter().sum()
    }

    pub fn sum_beta(&self) -> Rational {
        self.betas.iter().sum()
    }

    pub fn alpha_min(&self) -> Rational {
        *self.alphas.iter().min().expect("at least one group")
    }

    pub fn alpha_max(&self) -> Rational {
        *self.alphas.iter().max().expect("at least one group")
    }

    /// Index of the group with the smallest beta; ties go to the lowest index.
    pub fn l_star(&self) -> usize {
        let mut best = 0;
        for (l, beta) in self.betas.iter().enumerate() {
            if *beta < self.betas[best] {
                best = l;
            }
        }
        best
    }

    /// Sum of betas over all groups except `l_star`.
    pub fn sum_beta_except_star(&self) -> Rational {
        let star = self.l_star();
        self.betas
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != star)
            .map(|(_, b)| *b)
            .sum()
    }
}

/// One reason a `FairnessSpec` fails its theorem's preconditions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum SpecViolation {
    /// sum of alphas must exceed 1 (windows mode) or reach 1 (blocks mode)
    SumAlphaNotAboveOne,
    /// sum of betas must be strictly below 1
    SumBetaNotBelowOne,
    /// beta_l must not exceed alpha_l
    BetaExceedsAlpha { group: usize },
    /// alpha must lie in (0, 1], beta in [0, 1]
    ProportionOutOfRange { group: usize },
    /// Blocks mode needs alpha_l * k to be a positive integer and
    /// beta_l * k a non-negative integer
    NonIntegralBlockThreshold { group: usize },
    /// every group must contain at least one item
    EmptyGroup { group: usize },
    /// windows mode needs beta_l strictly below alpha_l (the epsilon formula
    /// divides by alpha_l - beta_l)
    DegenerateBand { group: usize },
    /// number of alphas, betas, and observed groups must agree
    GroupCountMismatch,
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::SumAlphaNotAboveOne => write!(f, "sum of alphas is too small"),
            SpecViolation::SumBetaNotBelowOne => write!(f, "sum of betas is not below 1"),
            SpecViolation::BetaExceedsAlpha { group } => {
                write!(f, "beta exceeds alpha for group {group}")
            }
            SpecViolation::ProportionOutOfRange { group } => {
                write!(f, "alpha/beta out of range for group {group}")
            }
            SpecViolation::NonIntegralBlockThreshold { group } => {
                write!(f, "alpha*k or beta*k is not an admissible integer for group {group}")
            }
            SpecViolation::EmptyGroup { group } => write!(f, "group {group} has no items"),
            SpecViolation::DegenerateBand { group } => {
                write!(f, "alpha equals beta for group {group} (windows mode needs slack)")
            }
            SpecViolation::GroupCountMismatch => write!(f, "group count mismatch"),
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid fairness spec: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct SpecError {
    pub violations: Vec<SpecViolation>,
}

/// Checks a spec against the preconditions of the theorem matching its mode.
///
/// `group_sizes[l]` is the number of items in group `l`. Returns the size of
/// the smallest group (the `n` in the guarantees).
pub fn validate_spec(spec: &FairnessSpec, group_sizes: &[usize]) -> Result<usize, SpecError> {
    let mut violations = Vec::new();
    let ell = spec.group_count();
    if spec.betas.len() != ell || group_sizes.len() != ell || ell == 0 || spec.k == 0 {
        return Err(SpecError { violations: vec![SpecViolation::GroupCountMismatch] });
    }
    let one = Rational::one();
    for l in 0..ell {
        let (a, b) = (spec.alphas[l], spec.betas[l]);
        if a <= Rational::zero() || a > one || b.is_negative() || b > one {
            violations.push(SpecViolation::ProportionOutOfRange { group: l });
        }
        if b > a {
            violations.push(SpecViolation::BetaExceedsAlpha { group: l });
        } else if spec.mode == Mode::ConsecutiveWindows && b == a {
            violations.push(SpecViolation::DegenerateBand { group: l });
        }
        if group_sizes[l] == 0 {
            violations.push(SpecViolation::EmptyGroup { group: l });
        }
        if spec.mode == Mode::Blocks {
            let k = Rational::from_integer(spec.k as i64);
            let ak = a * k;
            let bk = b * k;
            if !ak.is_integer() || !bk.is_integer() || ak <= Rational::zero() {
                violations.push(SpecViolation::NonIntegralBlockThreshold { group: l });
            }
        }
    }
    // Windows mode needs the strict inequality (the minimal-slack formula
    // divides by sum(alpha) - 1); blocks mode only needs each window to be
    // fillable, so sum(alpha) = 1 is admissible there.
    let alpha_ok = match spec.mode {
        Mode::ConsecutiveWindows => spec.sum_alpha() > one,
        Mode::Blocks => spec.sum_alpha() >= one,
    };
    if !alpha_ok {
        violations.push(SpecViolation::SumAlphaNotAboveOne);
    }
    if spec.sum_beta() >= one {
        violations.push(SpecViolation::SumBetaNotBelowOne);
    }
    if violations.is_empty() {
        Ok(*group_sizes.iter().min().expect("nonempty"))
    } else {
        Err(SpecError { violations })
    }
}

/// Quantities Algorithm computes from a validated spec, all exact.
#[derive(Clone, Debug)]
pub struct DerivedParams {
    /// Effective slack actually used by the run.
    pub epsilon: Rational,
    /// The smallest slack for which the guarantees are proved.
    pub epsilon_min: Rational,
    /// Block size B = floor(epsilon * k / 2).
    pub block_size: usize,
    /// Items placed per block by the spread phase (the `b` of the algorithm).
    pub quota: usize,
    /// Length M = ceil(N * B / b) of the intermediate slot array.
    pub slot_count: usize,
    /// Closed-form underranking bound gamma for this mode.
    pub underranking_bound: Rational,
    /// Rank horizon within which the fairness guarantee holds.
    pub guaranteed_prefix: usize,
    /// Number of guaranteed blocks (Blocks mode; block size k there).
    pub guaranteed_blocks: usize,
    pub alpha_min: Rational,
    pub alpha_max: Rational,
    pub l_star: usize,
    /// True when the caller forced an epsilon below epsilon_min; all
    /// guarantee fields are then void.
    pub guarantees_void: bool,
}

/// Exact floor of a non-negative rational as usize.
pub fn floor_usize(r: Rational) -> usize {
    debug_assert!(!r.is_negative());
    r.floor().to_integer() as usize
}

/// Exact ceiling of a non-negative rational as usize.
pub fn ceil_usize(r: Rational) -> usize {
    debug_assert!(!r.is_negative());
    r.ceil().to_integer() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    fn spec(alphas: &[&str], betas: &[&str], k: usize, mode: Mode) -> FairnessSpec {
        FairnessSpec {
            alphas: alphas.iter().map(|s| r(s)).collect(),
            betas: betas.iter().map(|s| r(s)).collect(),
            k,
            epsilon: None,
            mode,
        }
    }

    #[test]
    fn rational_parsing_is_exact() {
        assert_eq!(r("0.15"), Rational::new(3, 20));
        assert_eq!(r("3/20"), Rational::new(3, 20));
        assert_eq!(r("-0.4"), Rational::new(-2, 5));
        assert_eq!(r("2"), Rational::from_integer(2));
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/0").is_err());
        // floor/ceil of an integral product never drifts
        let v = r("0.15") * Rational::from_integer(20);
        assert_eq!(floor_usize(v), 3);
        assert_eq!(ceil_usize(v), 3);
    }

    #[test]
    fn validate_accepts_the_paper_parameters() {
        let s = spec(&["1", "1"], &["0.15", "0"], 100, Mode::ConsecutiveWindows);
        assert_eq!(validate_spec(&s, &[150, 850]).unwrap(), 150);
    }

    #[test]
    fn validate_rejects_small_alpha_sum() {
        let s = spec(&["0.5", "0.4"], &["0", "0"], 10, Mode::ConsecutiveWindows);
        let err = validate_spec(&s, &[5, 5]).unwrap_err();
        assert!(err.violations.contains(&SpecViolation::SumAlphaNotAboveOne));
    }

    #[test]
    fn validate_rejects_non_integral_block_threshold() {
        let s = spec(&["0.33", "1"], &["0.1", "0.1"], 10, Mode::Blocks);
        let err = validate_spec(&s, &[5, 5]).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, SpecViolation::NonIntegralBlockThreshold { group: 0 })));
    }

    #[test]
    fn blocks_mode_accepts_zero_beta_but_not_fractional_thresholds() {
        let s = spec(&["1", "1"], &["0.5", "0"], 10, Mode::Blocks);
        assert!(validate_spec(&s, &[5, 5]).is_ok());
        let s = spec(&["1", "1"], &["0.25", "0"], 10, Mode::Blocks);
        let err = validate_spec(&s, &[5, 5]).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, SpecViolation::NonIntegralBlockThreshold { group: 0 })));
    }

    #[test]
    fn single_group_cannot_satisfy_alpha_sum() {
        let s = spec(&["1"], &["0.5"], 10, Mode::ConsecutiveWindows);
        let err = validate_spec(&s, &[10]).unwrap_err();
        assert!(err.violations.contains(&SpecViolation::SumAlphaNotAboveOne));
    }

    #[test]
    fn beta_above_alpha_is_rejected() {
        let s = spec(&["0.6", "0.9"], &["0.7", "0"], 10, Mode::ConsecutiveWindows);
        let err = validate_spec(&s, &[5, 5]).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, SpecViolation::BetaExceedsAlpha { group: 0 })));
    }

    #[test]
    fn empty_group_is_rejected() {
        let s = spec(&["1", "1"], &["0.2", "0"], 10, Mode::ConsecutiveWindows);
        let err = validate_spec(&s, &[0, 10]).unwrap_err();
        assert!(err.violations.iter().any(|v| matches!(v, SpecViolation::EmptyGroup { group: 0 })));
    }

    #[test]
    fn true_ranking_rejects_unsorted_scores_and_duplicates() {
        let items = vec![
            Item { id: "a".into(), score: 0.5, group: 0 },
            Item { id: "b".into(), score: 0.9, group: 1 },
        ];
        assert!(matches!(TrueRanking::new(items.clone(), 2), Err(RankingError::ScoresNotSorted(2))));
        let sorted = TrueRanking::from_scored_items(items, 2).unwrap();
        assert_eq!(sorted.items()[0].id, "b");

        let dup = vec![
            Item { id: "a".into(), score: 0.9, group: 0 },
            Item { id: "a".into(), score: 0.5, group: 1 },
        ];
        assert!(matches!(TrueRanking::new(dup, 2), Err(RankingError::DuplicateId(_))));
    }

    #[test]
    fn tie_break_is_stable_by_input_order() {
        let items = vec![
            Item { id: "first".into(), score: 0.5, group: 0 },
            Item { id: "second".into(), score: 0.5, group: 1 },
        ];
        let ranking = TrueRanking::from_scored_items(items, 2).unwrap();
        assert_eq!(ranking.items()[0].id, "first");
        assert_eq!(ranking.items()[1].id, "second");
    }

    #[test]
    fn l_star_ties_break_to_lowest_index() {
        let s = spec(&["0.5", "0.5"], &["0.4", "0.4"], 10, Mode::Blocks);
        assert_eq!(s.l_star(), 0);
    }
}
