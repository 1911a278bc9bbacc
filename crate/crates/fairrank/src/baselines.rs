//! Comparison algorithms: an exact dynamic program that maximizes discounted
//! utility under per-prefix group count bounds, and a greedy top-k selector
//! that keeps every prefix's protected count above a minimum.

use num_traits::ToPrimitive;
use thiserror::Error;

use crate::model::{ceil_usize, floor_usize, FairRanking, Item, Rational, TrueRanking};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no ranking satisfies the prefix constraints")]
    Infeasible,
    #[error("constraint matrices are malformed: {0}")]
    InvalidConstraints(String),
    #[error("count-vector state space too large ({groups} groups, horizon {k})")]
    StateSpaceTooLarge { groups: usize, k: usize },
    #[error("not enough protected items to satisfy the minimum at rank {rank}")]
    InsufficientProtectedItems { rank: usize },
    #[error("ranking has {have} items but {need} are required")]
    NotEnoughItems { have: usize, need: usize },
    #[error("proportion {0} is outside [0, 1]")]
    OutOfRangeProportion(String),
    #[error("expected exactly two groups, got {0}")]
    NotTwoGroups(usize),
}

/// Per-prefix count bounds: for every cutoff `k'` in `1..=k` and group `l`,
/// the top `k'` of the output must contain between `lower(l, k')` and
/// `upper(l, k')` items of group `l`.
#[derive(Clone, Debug)]
pub struct PrefixConstraints {
    k: usize,
    /// `lower[l][k' - 1]`
    lower: Vec<Vec<usize>>,
    upper: Vec<Vec<usize>>,
}

impl PrefixConstraints {
    pub fn new(
        k: usize,
        lower: Vec<Vec<usize>>,
        upper: Vec<Vec<usize>>,
    ) -> Result<Self, BaselineError> {
        if k == 0 {
            return Err(BaselineError::InvalidConstraints("horizon is zero".into()));
        }
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(BaselineError::InvalidConstraints(
                "lower/upper group counts differ or are empty".into(),
            ));
        }
        for (l, (lo, up)) in lower.iter().zip(&upper).enumerate() {
            if lo.len() != k || up.len() != k {
                return Err(BaselineError::InvalidConstraints(format!(
                    "group {l} rows must have length {k}"
                )));
            }
            for kp in 1..=k {
                let (a, b) = (lo[kp - 1], up[kp - 1]);
                if a > b || b > kp {
                    return Err(BaselineError::InvalidConstraints(format!(
                        "group {l}, prefix {kp}: need lower <= upper <= prefix, got {a}, {b}"
                    )));
                }
                if kp > 1 && (lo[kp - 1] < lo[kp - 2] || up[kp - 1] < up[kp - 2]) {
                    return Err(BaselineError::InvalidConstraints(format!(
                        "group {l}: bounds must be non-decreasing at prefix {kp}"
                    )));
                }
            }
        }
        Ok(Self { k, lower, upper })
    }

    /// All-slack constraints: every count between 0 and the prefix length.
    pub fn unconstrained(group_count: usize, k: usize) -> Self {
        let lower = vec![vec![0; k]; group_count];
        let upper = vec![(1..=k).collect::<Vec<_>>(); group_count];
        Self { k, lower, upper }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn group_count(&self) -> usize {
        self.lower.len()
    }

    /// Minimum count of `group` in the top `k_prime` (1-based prefix length).
    pub fn lower(&self, group: usize, k_prime: usize) -> usize {
        self.lower[group][k_prime - 1]
    }

    pub fn upper(&self, group: usize, k_prime: usize) -> usize {
        self.upper[group][k_prime - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintDirection {
    /// `L_{protected, k'} = ceil((p* + delta) k')`, everything else slack.
    LowerBound,
    /// `U_{protected, k'} = floor((p* + delta) k')`, everything else slack.
    UpperBound,
}

/// Two-group constraints that pin the protected group (index 0) to the
/// proportion `p_star + delta` from one side.
pub fn prefix_constraints_from_delta(
    p_star: Rational,
    delta: Rational,
    k: usize,
    direction: ConstraintDirection,
) -> Result<PrefixConstraints, BaselineError> {
    let p = p_star + delta;
    if p < Rational::from_integer(0) || p > Rational::from_integer(1) {
        return Err(BaselineError::OutOfRangeProportion(crate::model::rational_string(p)));
    }
    let mut constraints = PrefixConstraints::unconstrained(2, k);
    for kp in 1..=k {
        let pk = p * Rational::from_integer(kp as i64);
        match direction {
            ConstraintDirection::LowerBound => constraints.lower[0][kp - 1] = ceil_usize(pk),
            ConstraintDirection::UpperBound => constraints.upper[0][kp - 1] = floor_usize(pk),
        }
    }
    // re-validate so callers cannot observe a malformed matrix
    PrefixConstraints::new(k, constraints.lower, constraints.upper)
}

/// Discounted position weight `score / log2(rank + 1)` for a 1-based rank.
pub fn discounted_weight(score: f64, rank: usize) -> f64 {
    score / ((rank + 1) as f64).log2()
}

/// Total discounted utility of a ranking's top `k`.
pub fn utility(ranking: &FairRanking, k: usize) -> f64 {
    ranking
        .items()
        .iter()
        .take(k)
        .enumerate()
        .map(|(idx, item)| discounted_weight(item.score, idx + 1))
        .sum()
}

const DP_STATE_BUDGET: u64 = 200_000_000;

/// Exact top-k utility maximization under prefix constraints.
///
/// Because the discount is position-only, an optimal solution takes each
/// group's items in descending score order (swapping two same-group items
/// never helps), so the state is just the count vector of the first
/// `l - 1` groups at each position.
pub fn celis_dp(
    truth: &TrueRanking,
    constraints: &PrefixConstraints,
) -> Result<FairRanking, BaselineError> {
    let ell = truth.group_count();
    let k = constraints.k();
    if constraints.group_count() != ell {
        return Err(BaselineError::InvalidConstraints(format!(
            "constraints cover {} groups, ranking has {ell}",
            constraints.group_count()
        )));
    }
    if truth.len() < k {
        return Err(BaselineError::NotEnoughItems { have: truth.len(), need: k });
    }
    if ell > 4 || (ell == 4 && k > 50) {
        return Err(BaselineError::StateSpaceTooLarge { groups: ell, k });
    }
    let radix = (k + 1) as u64;
    let states = radix.pow((ell - 1) as u32);
    if states.saturating_mul(k as u64) > DP_STATE_BUDGET {
        return Err(BaselineError::StateSpaceTooLarge { groups: ell, k });
    }
    let states = states as usize;

    // per-group item indices into truth, already in descending score order
    let mut group_items: Vec<Vec<usize>> = vec![Vec::new(); ell];
    for (idx, item) in truth.items().iter().enumerate() {
        group_items[item.group].push(idx);
    }

    let decode = |state: usize| -> Vec<usize> {
        let mut counts = vec![0usize; ell];
        let mut s = state;
        for c in counts.iter_mut().take(ell - 1) {
            *c = s % (radix as usize);
            s /= radix as usize;
        }
        counts
    };
    let encode = |counts: &[usize]| -> usize {
        counts[..ell - 1]
            .iter()
            .rev()
            .fold(0usize, |acc, &c| acc * radix as usize + c)
    };

    let feasible = |counts: &[usize], k_prime: usize| -> bool {
        (0..ell).all(|l| {
            counts[l] >= constraints.lower(l, k_prime) && counts[l] <= constraints.upper(l, k_prime)
        })
    };

    // value[state] for the current position; parent choice per (position, state)
    let mut value = vec![f64::NEG_INFINITY; states];
    let mut next_value = vec![f64::NEG_INFINITY; states];
    let mut choice = vec![vec![u8::MAX; states]; k];
    value[0] = 0.0;

    for pos in 0..k {
        next_value.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for state in 0..states {
            let base = value[state];
            if base == f64::NEG_INFINITY {
                continue;
            }
            let mut counts = decode(state);
            counts[ell - 1] = pos - counts[..ell - 1].iter().sum::<usize>();
            for l in 0..ell {
                if counts[l] == group_items[l].len() {
                    continue;
                }
                counts[l] += 1;
                if feasible(&counts, pos + 1) {
                    let item_idx = group_items[l][counts[l] - 1];
                    let gain = discounted_weight(truth.items()[item_idx].score, pos + 1);
                    let next_state = encode(&counts);
                    if base + gain > next_value[next_state] {
                        next_value[next_state] = base + gain;
                        choice[pos][next_state] = l as u8;
                    }
                }
                counts[l] -= 1;
            }
        }
        std::mem::swap(&mut value, &mut next_value);
    }

    // counts of the last group are implicit, so states with the same encoding
    // but impossible totals never got a finite value
    let (best_state, _) = value
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(BaselineError::Infeasible)?;

    // walk the choices backwards to recover the group sequence
    let mut groups_rev = Vec::with_capacity(k);
    let mut state = best_state;
    for pos in (0..k).rev() {
        let l = choice[pos][state] as usize;
        debug_assert!(l < ell);
        groups_rev.push(l);
        let mut counts = decode(state);
        if l < ell - 1 {
            counts[l] -= 1;
        }
        state = encode(&counts);
    }
    groups_rev.reverse();

    let mut taken = vec![0usize; ell];
    let mut items: Vec<Item> = Vec::with_capacity(k);
    for l in groups_rev {
        items.push(truth.items()[group_items[l][taken[l]]].clone());
        taken[l] += 1;
    }
    Ok(FairRanking::new(items).expect("DP emits distinct items"))
}

/// Minimum-protected-count rule for the greedy selector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MinimumRule {
    /// `m(r) = floor(p * r)`.
    Floor,
    /// Smallest `m` whose binomial tail is not statistically suspicious:
    /// `m(r) = min{ m : P[Binomial(r, p) <= m] > significance }`.
    Binomial { significance: f64 },
}

impl MinimumRule {
    pub fn minimum(&self, p: Rational, rank: usize) -> usize {
        match self {
            MinimumRule::Floor => {
                crate::model::floor_usize(p * Rational::from_integer(rank as i64))
            }
            MinimumRule::Binomial { significance } => {
                let p = p.to_f64().unwrap_or(0.0);
                // iterate the pmf; r is small (<= k), f64 is plenty
                let q: f64 = (1.0 - p).powi(rank as i32);
                let mut pmf = q;
                let mut cdf = pmf;
                let mut m = 0usize;
                while cdf <= *significance && m < rank {
                    pmf *= p / (1.0 - p) * ((rank - m) as f64) / ((m + 1) as f64);
                    cdf += pmf;
                    m += 1;
                }
                m
            }
        }
    }
}

/// Greedy top-k: at each rank, emit the best remaining protected item if the
/// protected count would otherwise fall below the rule's minimum, else the
/// best remaining item overall. `protected` is the protected group's index;
/// the ranking must have exactly two groups.
pub fn fair_star(
    truth: &TrueRanking,
    protected: usize,
    p: Rational,
    k: usize,
    rule: MinimumRule,
) -> Result<FairRanking, BaselineError> {
    if truth.group_count() != 2 {
        return Err(BaselineError::NotTwoGroups(truth.group_count()));
    }
    if p < Rational::from_integer(0) || p > Rational::from_integer(1) {
        return Err(BaselineError::OutOfRangeProportion(crate::model::rational_string(p)));
    }
    if truth.len() < k {
        return Err(BaselineError::NotEnoughItems { have: truth.len(), need: k });
    }
    let mut overall = truth.items().iter();
    let mut protected_source = truth.items().iter().filter(|i| i.group == protected);
    let mut picked: std::collections::HashSet<&str> = std::collections::HashSet::new();
    let mut items = Vec::with_capacity(k);
    let mut protected_count = 0usize;
    for rank in 1..=k {
        let need_protected = protected_count < rule.minimum(p, rank);
        let next = if need_protected {
            protected_source
                .find(|i| !picked.contains(i.id.as_str()))
                .ok_or(BaselineError::InsufficientProtectedItems { rank })?
        } else {
            loop {
                let item = overall
                    .next()
                    .ok_or(BaselineError::NotEnoughItems { have: truth.len(), need: k })?;
                if !picked.contains(item.id.as_str()) {
                    break item;
                }
            }
        };
        picked.insert(next.id.as_str());
        if next.group == protected {
            protected_count += 1;
        }
        items.push(next.clone());
    }
    Ok(FairRanking::new(items).expect("greedy emits distinct items"))
}
