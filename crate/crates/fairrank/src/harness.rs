//! Experiment orchestration: delta sweeps over the three constraint
//! templates, per-window evaluation, and wall-clock benchmarks, with stable
//! CSV/JSON result tables that plotting tools can consume directly.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::alg::{rerank_with_policy, EpsilonPolicy};
use crate::baselines::{
    celis_dp, fair_star, prefix_constraints_from_delta, ConstraintDirection, MinimumRule,
};
use crate::data::LoadedDataset;
use crate::metrics::{ndcg_at, precision_at, representation, underranking_observed};
use crate::model::{rational_string, FairRanking, FairnessSpec, Mode, Rational};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown algorithm {0:?} (expected alg, celisdp, or fastar)")]
    UnknownAlgorithm(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("empty configuration: {0}")]
    EmptyConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// The window/block re-ranker (full-length output).
    Alg,
    /// Exact prefix-constrained utility maximization (top-k output).
    CelisDp,
    /// Greedy minimum-representation top-k selection.
    FaStar,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Algorithm::Alg => "alg",
            Algorithm::CelisDp => "celisdp",
            Algorithm::FaStar => "fastar",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alg" => Ok(Algorithm::Alg),
            "celisdp" | "dp" => Ok(Algorithm::CelisDp),
            "fastar" | "fair" => Ok(Algorithm::FaStar),
            other => Err(HarnessError::UnknownAlgorithm(other.into())),
        }
    }
}

/// Which alpha/beta (or L/U) pattern a delta controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTemplate {
    /// Require at least `p* + delta` of the protected group (group 0):
    /// alphas all 1, beta = (p* + delta, 0, ...); lower prefix bounds for
    /// the DP; `p = p* + delta` for the greedy selector.
    LowerProtected,
    /// Cap the protected group at `p* + delta`: alpha = (p* + delta, 1, ...),
    /// betas all 0; upper prefix bounds for the DP.
    UpperProtected,
    /// Per-group band `p*_l - delta .. p*_l + delta` (re-ranker only).
    ProportionalBand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Evaluate prefixes `[1, k']` at each eval point.
    Prefix,
    /// Evaluate the fixed windows `[1,20]`, `[21,60]`, `[61,100]`.
    Windows,
}

pub const FIXED_WINDOWS: [(usize, usize); 3] = [(1, 20), (21, 60), (61, 100)];

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub template: ConstraintTemplate,
    pub delta_grid: Vec<Rational>,
    pub k: usize,
    pub eval_points: Vec<usize>,
    pub window_mode: WindowMode,
    pub epsilon: Option<Rational>,
    pub epsilon_policy: EpsilonPolicy,
    /// Guarantee regime for the re-ranker.
    pub mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::Alg],
            template: ConstraintTemplate::LowerProtected,
            delta_grid: vec![Rational::zero()],
            k: 100,
            eval_points: vec![20, 40, 100],
            window_mode: WindowMode::Prefix,
            epsilon: None,
            epsilon_policy: EpsilonPolicy::ClampToMin,
            mode: Mode::ConsecutiveWindows,
        }
    }
}

fn clamp01(x: Rational) -> Rational {
    x.max(Rational::zero()).min(Rational::one())
}

/// Builds the re-ranker spec a template + delta describe for a dataset with
/// the given group proportions.
pub fn spec_from_template(
    template: ConstraintTemplate,
    p_star: &[Rational],
    delta: Rational,
    k: usize,
    epsilon: Option<Rational>,
    mode: Mode,
) -> FairnessSpec {
    let ell = p_star.len();
    let one = Rational::one();
    let (alphas, betas) = match template {
        ConstraintTemplate::LowerProtected => {
            let mut betas = vec![Rational::zero(); ell];
            betas[0] = clamp01(p_star[0] + delta);
            (vec![one; ell], betas)
        }
        ConstraintTemplate::UpperProtected => {
            let mut alphas = vec![one; ell];
            alphas[0] = clamp01(p_star[0] + delta);
            (alphas, vec![Rational::zero(); ell])
        }
        ConstraintTemplate::ProportionalBand => (
            p_star.iter().map(|&p| clamp01(p + delta)).collect(),
            p_star.iter().map(|&p| clamp01(p - delta)).collect(),
        ),
    };
    FairnessSpec { alphas, betas, k, epsilon, mode }
}

/// One evaluated (algorithm, delta, window) cell of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    /// Exact delta as a string, e.g. "-3/20".
    pub delta: String,
    pub window: (usize, usize),
    /// Representation of each group in the window, dataset group order.
    pub representation: Vec<f64>,
    /// Observed underranking at the window end, exact string.
    pub underranking: Option<String>,
    pub underranking_value: Option<f64>,
    pub ndcg: Option<f64>,
    pub precision: Option<usize>,
    /// The re-ranker's closed-form underranking bound, when applicable.
    pub bound: Option<String>,
    /// "ok" or the reason this point could not be evaluated.
    pub status: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub group_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Stable column layout:
    /// `algorithm,delta,window_start,window_end,rep_<g>...,underranking,underranking_value,ndcg,precision,bound,status`.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["algorithm".to_string(), "delta".into(), "window_start".into(), "window_end".into()];
        header.extend(self.group_names.iter().map(|g| format!("rep_{g}")));
        header.extend(
            ["underranking", "underranking_value", "ndcg", "precision", "bound", "status"]
                .map(String::from),
        );
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![
                row.algorithm.to_string(),
                row.delta.clone(),
                row.window.0.to_string(),
                row.window.1.to_string(),
            ];
            record.extend(row.representation.iter().map(|r| format!("{r:.6}")));
            record.push(row.underranking.clone().unwrap_or_default());
            record.push(row.underranking_value.map(|v| format!("{v:.6}")).unwrap_or_default());
            record.push(row.ndcg.map(|v| format!("{v:.6}")).unwrap_or_default());
            record.push(row.precision.map(|v| v.to_string()).unwrap_or_default());
            record.push(row.bound.clone().unwrap_or_default());
            record.push(row.status.clone());
            w.write_record(&record)?;
        }
        Ok(String::from_utf8(w.into_inner().expect("csv into vec")).expect("csv is utf-8"))
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn eval_windows(config: &ExperimentConfig, len: usize) -> Vec<(usize, usize)> {
    let windows: Vec<(usize, usize)> = match config.window_mode {
        WindowMode::Prefix => config.eval_points.iter().map(|&kp| (1, kp)).collect(),
        WindowMode::Windows => FIXED_WINDOWS.to_vec(),
    };
    windows.into_iter().filter(|&(a, _)| a <= len).map(|(a, b)| (a, b.min(len))).collect()
}

fn ratio_to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn rows_for_output(
    algorithm: Algorithm,
    delta: Rational,
    fair: &FairRanking,
    dataset: &LoadedDataset,
    windows: &[(usize, usize)],
    bound: Option<Rational>,
) -> Vec<SweepRow> {
    let truth = &dataset.ranking;
    windows
        .iter()
        .filter(|&&(a, _)| a <= fair.len())
        .map(|&(a, b)| {
            let window = (a, b.min(fair.len()));
            let reps = (0..truth.group_count())
                .map(|g| ratio_to_f64(representation(fair, g, window).expect("window in range")))
                .collect();
            let gamma = underranking_observed(fair, truth, window.1);
            SweepRow {
                algorithm,
                delta: rational_string(delta),
                window,
                representation: reps,
                underranking: Some(rational_string(gamma)),
                underranking_value: Some(ratio_to_f64(gamma)),
                ndcg: Some(ndcg_at(fair, truth, window.1)),
                precision: Some(precision_at(fair, truth, window.1)),
                bound: bound.map(rational_string),
                status: "ok".into(),
            }
        })
        .collect()
}

fn error_row(algorithm: Algorithm, delta: Rational, reason: String) -> SweepRow {
    SweepRow {
        algorithm,
        delta: rational_string(delta),
        window: (0, 0),
        representation: Vec::new(),
        underranking: None,
        underranking_value: None,
        ndcg: None,
        precision: None,
        bound: None,
        status: reason,
    }
}

/// Runs one algorithm at one delta and evaluates it over the windows.
/// Infeasible points come back as a single row with a non-"ok" status.
fn run_point(
    algorithm: Algorithm,
    delta: Rational,
    dataset: &LoadedDataset,
    config: &ExperimentConfig,
    windows: &[(usize, usize)],
) -> Vec<SweepRow> {
    let truth = &dataset.ranking;
    match algorithm {
        Algorithm::Alg => {
            let spec = spec_from_template(
                config.template,
                &dataset.p_star,
                delta,
                config.k,
                config.epsilon,
                config.mode,
            );
            match rerank_with_policy(truth, &spec, config.epsilon_policy) {
                Ok((fair, trace)) => rows_for_output(
                    algorithm,
                    delta,
                    &fair,
                    dataset,
                    windows,
                    Some(trace.params.underranking_bound),
                ),
                Err(e) => vec![error_row(algorithm, delta, e.to_string())],
            }
        }
        Algorithm::CelisDp => {
            let direction = match config.template {
                ConstraintTemplate::UpperProtected => ConstraintDirection::UpperBound,
                _ => ConstraintDirection::LowerBound,
            };
            let run = prefix_constraints_from_delta(dataset.p_star[0], delta, config.k, direction)
                .and_then(|c| celis_dp(truth, &c));
            match run {
                Ok(fair) => rows_for_output(algorithm, delta, &fair, dataset, windows, None),
                Err(e) => vec![error_row(algorithm, delta, e.to_string())],
            }
        }
        Algorithm::FaStar => {
            let p = clamp01(dataset.p_star[0] + delta);
            match fair_star(truth, 0, p, config.k, MinimumRule::Floor) {
                Ok(fair) => rows_for_output(algorithm, delta, &fair, dataset, windows, None),
                Err(e) => vec![error_row(algorithm, delta, e.to_string())],
            }
        }
    }
}

/// Full sweep: one row per (algorithm, delta, window), ordered exactly that
/// way. Deterministic for a fixed dataset and config.
pub fn run_sweep(
    dataset: &LoadedDataset,
    config: &ExperimentConfig,
) -> Result<SweepTable, HarnessError> {
    if config.algorithms.is_empty() {
        return Err(HarnessError::EmptyConfig("no algorithms"));
    }
    if config.delta_grid.is_empty() {
        return Err(HarnessError::EmptyConfig("empty delta grid"));
    }
    let windows = eval_windows(config, dataset.ranking.len());
    let mut rows = Vec::new();
    for &algorithm in &config.algorithms {
        for &delta in &config.delta_grid {
            rows.extend(run_point(algorithm, delta, dataset, config, &windows));
        }
    }
    Ok(SweepTable { group_names: dataset.group_names.clone(), rows })
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub k: usize,
    pub mean_seconds: f64,
    /// Inner repetitions each timed run averaged over.
    pub reps: usize,
    pub runs: usize,
}

pub fn bench_to_csv(rows: &[BenchRow]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["algorithm", "k", "mean_seconds", "reps", "runs"])?;
    for row in rows {
        w.write_record([
            row.algorithm.to_string(),
            row.k.to_string(),
            format!("{:.9}", row.mean_seconds),
            row.reps.to_string(),
            row.runs.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("csv into vec")).expect("csv is utf-8"))
}

const BENCH_RUNS: usize = 5;
const BENCH_TARGET_SECONDS: f64 = 0.05;

fn time_mean<F: FnMut()>(mut f: F) -> (f64, usize) {
    // calibrate inner repetitions so a run is long enough to time reliably
    let start = Instant::now();
    f();
    let once = start.elapsed().as_secs_f64().max(1e-9);
    let reps = ((BENCH_TARGET_SECONDS / once).ceil() as usize).clamp(1, 10_000);
    let mut total = 0.0;
    for _ in 0..BENCH_RUNS {
        let start = Instant::now();
        for _ in 0..reps {
            f();
        }
        total += start.elapsed().as_secs_f64() / reps as f64;
    }
    (total / BENCH_RUNS as f64, reps)
}

/// Times each algorithm at each window size on the dataset (delta = 0,
/// lower-bound template). Runs are serialized; each row is the mean
/// per-invocation wall-clock over 5 timed runs.
pub fn bench(
    dataset: &LoadedDataset,
    algorithms: &[Algorithm],
    sizes: &[usize],
    epsilon: Option<Rational>,
) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &algorithm in algorithms {
        for &k in sizes {
            if k == 0 {
                continue;
            }
            let (mean_seconds, reps) = match algorithm {
                Algorithm::Alg => {
                    let spec = spec_from_template(
                        ConstraintTemplate::LowerProtected,
                        &dataset.p_star,
                        Rational::zero(),
                        k,
                        epsilon,
                        Mode::ConsecutiveWindows,
                    );
                    time_mean(|| {
                        rerank_with_policy(&dataset.ranking, &spec, EpsilonPolicy::ClampToMin)
                            .expect("bench spec is valid");
                    })
                }
                Algorithm::CelisDp => {
                    let constraints = prefix_constraints_from_delta(
                        dataset.p_star[0],
                        Rational::zero(),
                        k,
                        ConstraintDirection::LowerBound,
                    )
                    .expect("bench constraints are valid");
                    time_mean(|| {
                        celis_dp(&dataset.ranking, &constraints).expect("bench DP is feasible");
                    })
                }
                Algorithm::FaStar => {
                    let p = dataset.p_star[0];
                    time_mean(|| {
                        fair_star(&dataset.ranking, 0, p, k, MinimumRule::Floor)
                            .expect("bench greedy is feasible");
                    })
                }
            };
            rows.push(BenchRow { algorithm, k, mean_seconds, reps, runs: BENCH_RUNS });
        }
    }
    rows
}
