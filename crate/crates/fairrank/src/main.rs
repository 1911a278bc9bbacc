//! Command-line interface: re-rank a dataset under fairness constraints,
//! audit an existing ranking, run delta sweeps and benchmarks, emit the
//! adversarial lower-bound instance, and generate synthetic datasets.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 infeasibility or a
//! failed audit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fairrank::alg::{rerank_with_policy, AlgError, EpsilonPolicy};
use fairrank::baselines::BaselineError;
use fairrank::data::{load_dataset, synthetic, DatasetSchema, LoadedDataset};
use fairrank::harness::{
    bench, bench_to_csv, run_sweep, Algorithm, ConstraintTemplate, ExperimentConfig, WindowMode,
};
use fairrank::metrics::underranking_at;
use fairrank::model::{
    parse_rational, rational_string, validate_spec, FairRanking, FairnessSpec, Item, Mode,
    Rational,
};
use fairrank::verify::{
    adversarial_instance, audit_blocks, audit_consecutive, brute_force_min_underranking,
    lower_bound_value, AuditReport, VerifyError,
};

#[derive(Parser)]
#[command(name = "fairrank", version, about = "Group-fair re-ranking with underranking bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliMode {
    /// Sliding-window guarantees, prefix evaluation windows.
    Prefix,
    /// Sliding-window guarantees, fixed evaluation windows.
    Windows,
    /// Exact per-block guarantees.
    Blocks,
}

impl CliMode {
    fn alg_mode(self) -> Mode {
        match self {
            CliMode::Blocks => Mode::Blocks,
            _ => Mode::ConsecutiveWindows,
        }
    }

    fn window_mode(self) -> WindowMode {
        match self {
            CliMode::Windows => WindowMode::Windows,
            _ => WindowMode::Prefix,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Template {
    Lower,
    Upper,
    Band,
}

impl Template {
    fn constraint_template(self) -> ConstraintTemplate {
        match self {
            Template::Lower => ConstraintTemplate::LowerProtected,
            Template::Upper => ConstraintTemplate::UpperProtected,
            Template::Band => ConstraintTemplate::ProportionalBand,
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Delimited data file.
    #[arg(long)]
    dataset: PathBuf,
    /// TOML schema describing columns and group rules.
    #[arg(long)]
    schema: PathBuf,
    /// Rank by ascending raw score instead of the schema's direction.
    #[arg(long)]
    reverse_scores: bool,
}

impl DatasetArgs {
    fn load(&self) -> Result<LoadedDataset, CliError> {
        let mut schema = DatasetSchema::from_file(&self.schema)?;
        if self.reverse_scores {
            schema.score_direction = schema.score_direction.flipped();
        }
        Ok(load_dataset(&self.dataset, &schema)?)
    }
}

#[derive(Args)]
struct SpecArgs {
    /// Per-group upper proportions, comma-separated rationals (e.g. "1,1").
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<String>,
    /// Per-group lower proportions, comma-separated rationals.
    #[arg(long, value_delimiter = ',')]
    beta: Vec<String>,
    /// Window (or block) size.
    #[arg(long)]
    k: usize,
    /// Slack parameter; derived from the minimum-slack formula when absent.
    #[arg(long)]
    epsilon: Option<String>,
    /// Run with an epsilon below the proven minimum (guarantees void).
    #[arg(long)]
    force_epsilon: bool,
    #[arg(long, value_enum, default_value_t = CliMode::Prefix)]
    mode: CliMode,
}

impl SpecArgs {
    fn spec(&self) -> Result<FairnessSpec, CliError> {
        let parse_list = |raw: &[String], what: &str| -> Result<Vec<Rational>, CliError> {
            if raw.is_empty() {
                return Err(CliError::usage(format!("--{what} is required")));
            }
            raw.iter()
                .map(|s| {
                    parse_rational(s)
                        .map_err(|e| CliError::usage(format!("bad --{what} entry {s:?}: {e}")))
                })
                .collect()
        };
        Ok(FairnessSpec {
            alphas: parse_list(&self.alpha, "alpha")?,
            betas: parse_list(&self.beta, "beta")?,
            k: self.k,
            epsilon: self
                .epsilon
                .as_deref()
                .map(|s| parse_rational(s).map_err(|e| CliError::usage(format!("bad --epsilon: {e}"))))
                .transpose()?,
            mode: self.mode.alg_mode(),
        })
    }

    fn policy(&self) -> EpsilonPolicy {
        if self.force_epsilon {
            EpsilonPolicy::ForceRequested
        } else {
            EpsilonPolicy::Strict
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Re-rank a dataset and emit the fair ranking plus an audit certificate.
    Rerank {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        spec: SpecArgs,
        /// Output path for the ranking; certificate goes to <out>.audit.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Re-check a previously produced ranking against a fairness spec.
    Audit {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        spec: SpecArgs,
        /// Ranking file: CSV whose `id` column lists items in rank order.
        #[arg(long)]
        ranking: PathBuf,
    },
    /// Sweep delta over constraint templates and tabulate metrics.
    Sweep {
        #[command(flatten)]
        data: DatasetArgs,
        /// Algorithms to run, comma-separated (alg, celisdp, fastar).
        #[arg(long, value_delimiter = ',', default_value = "alg")]
        algo: Vec<String>,
        #[arg(long, value_enum, default_value_t = Template::Lower)]
        template: Template,
        /// Comma-separated rational deltas added to the protected proportion.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        delta_grid: Vec<String>,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Prefix cutoffs to evaluate at.
        #[arg(long, value_delimiter = ',', default_value = "20,40,100")]
        eval_points: Vec<usize>,
        #[arg(long)]
        epsilon: Option<String>,
        #[arg(long)]
        force_epsilon: bool,
        #[arg(long, value_enum, default_value_t = CliMode::Prefix)]
        mode: CliMode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Emit the adversarial instance and its certified underranking bound.
    Lowerbound {
        #[command(flatten)]
        spec: SpecArgs,
        /// Items per group in the generated instance.
        #[arg(long)]
        n: usize,
        /// Output path for the instance rows; the summary goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Time the algorithms at several window sizes.
    Bench {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, value_delimiter = ',', default_value = "alg,celisdp")]
        algo: Vec<String>,
        /// Window sizes to time, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "100,300,500,1000")]
        sizes: Vec<usize>,
        #[arg(long)]
        epsilon: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write a seeded synthetic dataset and its schema.
    GenData {
        /// Which dataset shape to generate.
        #[arg(long, value_enum)]
        kind: DataKind,
        /// Output CSV path; the schema goes to <out>.schema.toml.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DataKind {
    /// 1000-row credit dataset, protected = age < 25 (15%).
    German,
    /// 1000-row credit dataset with six age x gender groups.
    GermanSix,
    /// 6907-row recidivism dataset, protected = female (19%).
    Compas,
    /// Same rows, protected = African-American (55%).
    CompasRace,
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: String) -> Self {
        Self { message, code: 1 }
    }

    fn infeasible(message: String) -> Self {
        Self { message, code: 2 }
    }
}

impl<E: IntoCliError> From<E> for CliError {
    fn from(e: E) -> Self {
        e.into_cli_error()
    }
}

trait IntoCliError {
    fn into_cli_error(self) -> CliError;
}

impl IntoCliError for fairrank::data::DataError {
    fn into_cli_error(self) -> CliError {
        CliError::usage(self.to_string())
    }
}

impl IntoCliError for std::io::Error {
    fn into_cli_error(self) -> CliError {
        CliError::usage(self.to_string())
    }
}

impl IntoCliError for fairrank::harness::HarnessError {
    fn into_cli_error(self) -> CliError {
        CliError::usage(self.to_string())
    }
}

impl IntoCliError for fairrank::model::SpecError {
    fn into_cli_error(self) -> CliError {
        CliError::usage(self.to_string())
    }
}

impl IntoCliError for AlgError {
    fn into_cli_error(self) -> CliError {
        match &self {
            AlgError::InvalidSpec(_) | AlgError::EpsilonBelowMinimum { .. } => {
                CliError::usage(self.to_string())
            }
            _ => CliError::infeasible(self.to_string()),
        }
    }
}

impl IntoCliError for BaselineError {
    fn into_cli_error(self) -> CliError {
        match &self {
            BaselineError::Infeasible | BaselineError::InsufficientProtectedItems { .. } => {
                CliError::infeasible(self.to_string())
            }
            _ => CliError::usage(self.to_string()),
        }
    }
}

impl IntoCliError for VerifyError {
    fn into_cli_error(self) -> CliError {
        match &self {
            VerifyError::NoFeasibleRanking | VerifyError::Infeasible => {
                CliError::infeasible(self.to_string())
            }
            _ => CliError::usage(self.to_string()),
        }
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn ranking_csv(fair: &FairRanking, group_names: &[String]) -> String {
    let mut out = String::from("rank,id,score,group,group_name\n");
    for (idx, item) in fair.items().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            idx + 1,
            item.id,
            item.score,
            item.group,
            group_names.get(item.group).map(String::as_str).unwrap_or("")
        ));
    }
    out
}

#[derive(Serialize)]
struct Certificate {
    mode: String,
    alphas: Vec<String>,
    betas: Vec<String>,
    k: usize,
    epsilon: String,
    epsilon_min: String,
    block_size: usize,
    quota: usize,
    underranking_bound: String,
    guaranteed_prefix: usize,
    guaranteed_blocks: usize,
    guarantees_void: bool,
    observed_underranking: String,
    audit: AuditReport,
    passed: bool,
}

/// Independent re-check of a produced ranking: the auditors share no code
/// with the re-ranker.
fn certify(
    fair: &FairRanking,
    dataset: &LoadedDataset,
    spec: &FairnessSpec,
    params: &fairrank::model::DerivedParams,
) -> Certificate {
    let audit = match spec.mode {
        Mode::Blocks => audit_blocks(fair, spec, params.guaranteed_blocks),
        Mode::ConsecutiveWindows => {
            audit_consecutive(fair, spec, params.guaranteed_prefix, params.epsilon)
        }
    };
    let observed = underranking_at(fair, &dataset.ranking, dataset.ranking.len())
        .expect("full re-ranking contains every item");
    let bound_ok = params.guarantees_void || observed <= params.underranking_bound;
    let passed = audit.passed && bound_ok;
    Certificate {
        mode: spec.mode.to_string(),
        alphas: spec.alphas.iter().map(|&a| rational_string(a)).collect(),
        betas: spec.betas.iter().map(|&b| rational_string(b)).collect(),
        k: spec.k,
        epsilon: rational_string(params.epsilon),
        epsilon_min: rational_string(params.epsilon_min),
        block_size: params.block_size,
        quota: params.quota,
        underranking_bound: rational_string(params.underranking_bound),
        guaranteed_prefix: params.guaranteed_prefix,
        guaranteed_blocks: params.guaranteed_blocks,
        guarantees_void: params.guarantees_void,
        observed_underranking: rational_string(observed),
        audit,
        passed,
    }
}

fn cmd_rerank(
    data: &DatasetArgs,
    spec_args: &SpecArgs,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let dataset = data.load()?;
    let spec = spec_args.spec()?;
    let (fair, trace) = rerank_with_policy(&dataset.ranking, &spec, spec_args.policy())?;
    let certificate = certify(&fair, &dataset, &spec, &trace.params);
    let ranking_text = match format {
        Format::Csv => ranking_csv(&fair, &dataset.group_names),
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                rank: usize,
                id: &'a str,
                score: f64,
                group: usize,
            }
            let rows: Vec<Row> = fair
                .items()
                .iter()
                .enumerate()
                .map(|(idx, i)| Row { rank: idx + 1, id: &i.id, score: i.score, group: i.group })
                .collect();
            serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n"
        }
    };
    write_or_print(out, &ranking_text)?;
    let cert_json = serde_json::to_string_pretty(&certificate).expect("certificate serializes");
    match out {
        Some(path) => {
            let mut cert_path = path.as_os_str().to_owned();
            cert_path.push(".audit.json");
            std::fs::write(&cert_path, cert_json)?;
            eprintln!("wrote {}", PathBuf::from(cert_path).display());
        }
        None => println!("{cert_json}"),
    }
    if certificate.passed {
        Ok(())
    } else {
        Err(CliError::infeasible("audit certificate failed".into()))
    }
}

fn read_ranking_file(path: &Path, dataset: &LoadedDataset) -> Result<FairRanking, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read ranking file: {e}")))?;
    let headers = reader.headers().map_err(|e| CliError::usage(e.to_string()))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| CliError::usage("ranking file needs an `id` column".into()))?;
    let by_id: std::collections::HashMap<&str, &Item> =
        dataset.ranking.items().iter().map(|i| (i.id.as_str(), i)).collect();
    let mut items = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::usage(e.to_string()))?;
        let id = record.get(id_col).unwrap_or("").trim();
        let item = by_id
            .get(id)
            .ok_or_else(|| CliError::usage(format!("ranked id {id:?} is not in the dataset")))?;
        items.push((*item).clone());
    }
    FairRanking::new(items).map_err(|e| CliError::usage(e.to_string()))
}

fn cmd_audit(data: &DatasetArgs, spec_args: &SpecArgs, ranking: &Path) -> Result<(), CliError> {
    let dataset = data.load()?;
    let spec = spec_args.spec()?;
    let min_group = validate_spec(&spec, &dataset.ranking.group_sizes())?;
    let params = fairrank::alg::derive_params(
        &spec,
        dataset.ranking.len(),
        min_group,
        spec_args.policy(),
    )?;
    let fair = read_ranking_file(ranking, &dataset)?;
    let report = match spec.mode {
        Mode::Blocks => audit_blocks(&fair, &spec, params.guaranteed_blocks.min(fair.len() / spec.k)),
        Mode::ConsecutiveWindows => {
            audit_consecutive(&fair, &spec, params.guaranteed_prefix.min(fair.len()), params.epsilon)
        }
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.passed {
        Ok(())
    } else {
        Err(CliError::infeasible(format!("{} fairness violation(s)", report.violations.len())))
    }
}

fn parse_algorithms(raw: &[String]) -> Result<Vec<Algorithm>, CliError> {
    raw.iter().map(|s| Algorithm::from_str(s).map_err(|e| CliError::usage(e.to_string()))).collect()
}

fn parse_rational_flag(raw: Option<&str>, flag: &str) -> Result<Option<Rational>, CliError> {
    raw.map(|s| parse_rational(s).map_err(|e| CliError::usage(format!("bad --{flag}: {e}"))))
        .transpose()
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    data: &DatasetArgs,
    algo: &[String],
    template: Template,
    delta_grid: &[String],
    k: usize,
    eval_points: &[usize],
    epsilon: Option<&str>,
    force_epsilon: bool,
    mode: CliMode,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let dataset = data.load()?;
    let deltas: Vec<Rational> = delta_grid
        .iter()
        .map(|s| parse_rational(s).map_err(|e| CliError::usage(format!("bad --delta-grid entry {s:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    let config = ExperimentConfig {
        algorithms: parse_algorithms(algo)?,
        template: template.constraint_template(),
        delta_grid: deltas,
        k,
        eval_points: eval_points.to_vec(),
        window_mode: mode.window_mode(),
        epsilon: parse_rational_flag(epsilon, "epsilon")?,
        epsilon_policy: if force_epsilon {
            EpsilonPolicy::ForceRequested
        } else {
            EpsilonPolicy::ClampToMin
        },
        mode: mode.alg_mode(),
    };
    let table = run_sweep(&dataset, &config)?;
    let text = match format {
        Format::Csv => table.to_csv()?,
        Format::Json => table.to_json()? + "\n",
    };
    write_or_print(out, &text)
}

fn cmd_lowerbound(
    spec_args: &SpecArgs,
    n: usize,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let spec = spec_args.spec()?;
    let instance = adversarial_instance(&spec, n)?;
    let bound = lower_bound_value(&spec);
    let total = instance.true_ranking.len();
    let brute_force = brute_force_min_underranking(
        &instance.true_ranking,
        &spec,
        total / spec.k.max(1),
    )
    .ok();
    #[derive(Serialize)]
    struct Summary {
        bound: String,
        worst_group: usize,
        items: usize,
        /// Exhaustive-search minimum over fair rankings, when tractable.
        certified_minimum: Option<String>,
    }
    let summary = Summary {
        bound: rational_string(bound),
        worst_group: instance.l_hat,
        items: total,
        certified_minimum: brute_force.map(rational_string),
    };
    let instance_text = match format {
        Format::Csv => {
            let mut text = String::from("true_rank,id,score,group\n");
            for (idx, item) in instance.true_ranking.items().iter().enumerate() {
                text.push_str(&format!("{},{},{},{}\n", idx + 1, item.id, item.score, item.group));
            }
            text
        }
        Format::Json => {
            serde_json::to_string_pretty(instance.true_ranking.items()).expect("items serialize")
                + "\n"
        }
    };
    write_or_print(out, &instance_text)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn cmd_bench(
    data: &DatasetArgs,
    algo: &[String],
    sizes: &[usize],
    epsilon: Option<&str>,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let dataset = data.load()?;
    let rows = bench(
        &dataset,
        &parse_algorithms(algo)?,
        sizes,
        parse_rational_flag(epsilon, "epsilon")?,
    );
    let text = match format {
        Format::Csv => bench_to_csv(&rows)?,
        Format::Json => serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
    };
    write_or_print(out, &text)
}

fn cmd_gen_data(kind: DataKind, out: &Path, seed: u64) -> Result<(), CliError> {
    let schema = match kind {
        DataKind::German => {
            synthetic::write_german_credit(out, seed)?;
            synthetic::german_schema()
        }
        DataKind::GermanSix => {
            synthetic::write_german_credit(out, seed)?;
            synthetic::german_six_group_schema()
        }
        DataKind::Compas => {
            synthetic::write_compas(out, seed)?;
            synthetic::compas_schema()
        }
        DataKind::CompasRace => {
            synthetic::write_compas(out, seed)?;
            synthetic::compas_race_schema()
        }
    };
    let mut schema_path = out.as_os_str().to_owned();
    schema_path.push(".schema.toml");
    std::fs::write(&schema_path, schema.to_toml())?;
    eprintln!("wrote {} and {}", out.display(), PathBuf::from(schema_path).display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Rerank { data, spec, out, format } => {
            cmd_rerank(data, spec, out.as_deref(), *format)
        }
        Command::Audit { data, spec, ranking } => cmd_audit(data, spec, ranking),
        Command::Sweep {
            data,
            algo,
            template,
            delta_grid,
            k,
            eval_points,
            epsilon,
            force_epsilon,
            mode,
            out,
            format,
        } => cmd_sweep(
            data,
            algo,
            *template,
            delta_grid,
            *k,
            eval_points,
            epsilon.as_deref(),
            *force_epsilon,
            *mode,
            out.as_deref(),
            *format,
        ),
        Command::Lowerbound { spec, n, out, format } => {
            cmd_lowerbound(spec, *n, out.as_deref(), *format)
        }
        Command::Bench { data, algo, sizes, epsilon, out, format } => {
            cmd_bench(data, algo, sizes, epsilon.as_deref(), out.as_deref(), *format)
        }
        Command::GenData { kind, out, seed } => cmd_gen_data(*kind, out, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
